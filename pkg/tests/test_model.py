from __future__ import annotations

import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lagqvi.errors import ConfigError
from lagqvi.instances import INSTANCES, instance_a, instance_b, instance_c
from lagqvi.model import (CoefficientRef, ConeSpec, ImpulseCostSpec, ProblemSpec, hamiltonian,
                          validate_hypotheses)

finite = st.floats(-10, 10, allow_nan=False)


@pytest.mark.parametrize("name", sorted(INSTANCES))
def test_reference_instances_satisfy_hypotheses(name):
    report = validate_hypotheses(INSTANCES[name]())
    assert report.passed, report.failed()
    assert {c.name for c in report.clauses} == {
        "drift_vol_bound", "drift_vol_lipschitz", "cost_bound", "cost_lipschitz",
        "coercivity", "time_monotone", "subadditivity"}


def test_zero_slope_cost_fails_coercivity():
    spec = dataclasses.replace(instance_a(), impulse_cost=ImpulseCostSpec("constant", (0.1,), 0.0), alpha=0.0)
    report = validate_hypotheses(spec)
    assert "coercivity" in report.failed()
    assert report.clause("coercivity").witness is not None


def test_cost_below_declared_coercivity_fails():
    spec = dataclasses.replace(instance_a(), impulse_cost=ImpulseCostSpec("constant", (0.1,), 0.1))
    report = validate_hypotheses(spec)
    assert report.failed() == ["coercivity"]
    assert report.clause("coercivity").worst > 1.0


def test_additive_cost_fails_strict_subadditivity():
    spec = dataclasses.replace(instance_a(), impulse_cost=ImpulseCostSpec("constant", (0.0,), 0.5), ell0=0.0)
    assert "subadditivity" in validate_hypotheses(spec).failed()


def test_increasing_base_cost_fails_time_monotonicity():
    spec = dataclasses.replace(instance_a(), impulse_cost=ImpulseCostSpec("affine", (0.1, 0.05), 0.5))
    assert validate_hypotheses(spec).failed() == ["time_monotone"]


def test_large_drift_names_bound_clause_with_witness():
    spec = dataclasses.replace(instance_a(), drift=CoefficientRef("constant", (2.0,)))
    report = validate_hypotheses(spec)
    assert report.failed() == ["drift_vol_bound"]
    assert set(report.clause("drift_vol_bound").witness) == {"t", "x"}


def test_steep_terminal_cost_fails_lipschitz():
    spec = dataclasses.replace(instance_a(), terminal=CoefficientRef("custom-table", (0.0, 0.0, 0.1, 0.5)))
    assert "cost_lipschitz" in validate_hypotheses(spec).failed()


def test_validation_is_seeded():
    a = validate_hypotheses(instance_c(), seed=3).to_dict()
    b = validate_hypotheses(instance_c(), seed=3).to_dict()
    assert a == b


def test_too_few_samples_rejected():
    with pytest.raises(ConfigError):
        validate_hypotheses(instance_a(), n_samples=10)


@pytest.mark.parametrize("delta", [0.0, 1.0, 1.5, -0.1])
def test_lag_outside_horizon_rejected(delta):
    with pytest.raises(ConfigError) as err:
        dataclasses.replace(instance_a(), delta=delta)
    assert err.value.field == "delta"


@pytest.mark.parametrize("family,params", [("cubic", (1.0,)), ("constant", (1.0, 2.0)),
                                           ("custom-table", (1.0, 0.0, 0.0, 1.0)),
                                           ("sinusoidal-bounded", (0.0, math.nan, 1.0))])
def test_bad_coefficients_rejected(family, params):
    with pytest.raises(ConfigError):
        CoefficientRef(family, params)


def test_unknown_cone_rejected():
    with pytest.raises(ConfigError):
        ConeSpec("upward")


def test_problem_document_roundtrip_and_hash():
    spec = instance_c()
    doc = json.loads(json.dumps(spec.to_dict()))
    again = ProblemSpec.from_dict(doc)
    assert again == spec
    assert again.spec_hash() == spec.spec_hash()
    assert instance_c(ell0=0.2).spec_hash() != spec.spec_hash()


def test_problem_document_with_extra_key_rejected():
    doc = instance_a().to_dict()
    doc["gamma"] = 1.0
    with pytest.raises(ConfigError, match="unexpected"):
        ProblemSpec.from_dict(doc)


def test_coefficient_families_evaluate():
    assert np.allclose(CoefficientRef("affine-clamped", (0.0, 5.0))(0.0, [-1.0, 0.1, 1.0], 1.0), [-1.0, 0.5, 1.0])
    assert CoefficientRef("sinusoidal-bounded", (1.0, 0.5, 2.0, 0.0, math.pi / 2))(0.0, 0.0, 1.0) == 1.5
    table = CoefficientRef("custom-table", (-1.0, 1.0, 1.0, 3.0))
    assert np.allclose(table(0.0, [-5.0, 0.0, 5.0], 1.0), [1.0, 2.0, 3.0])
    assert table.lipschitz_bound() == 1.0


def test_impulse_cost_and_cone():
    cost = ImpulseCostSpec("custom-table", (0.0, 0.3, 1.0, 0.1), 0.5)
    assert math.isclose(float(cost(0.5, -2.0)), 0.2 + 1.0)
    assert ConeSpec("nonnegative").allows_sign(1) and not ConeSpec("nonnegative").allows_sign(-1)
    assert not ConeSpec("nonpositive").contains(0.5)


@settings(max_examples=60, deadline=None)
@given(t=st.floats(0, 1), x=finite, p1=finite, p2=finite, q1=finite, q2=finite, a=st.floats(0, 1))
def test_hamiltonian_is_affine_in_derivatives(t, x, p1, p2, q1, q2, a):
    spec = instance_c()
    mixed = hamiltonian(spec, t, x, a * p1 + (1 - a) * p2, a * q1 + (1 - a) * q2)
    combo = a * hamiltonian(spec, t, x, p1, q1) + (1 - a) * hamiltonian(spec, t, x, p2, q2)
    assert math.isclose(float(mixed), float(combo), rel_tol=1e-9, abs_tol=1e-9)


@settings(max_examples=80, deadline=None)
@given(t=st.floats(0, 1), a=st.floats(-50, 50), b=st.floats(-50, 50))
def test_reference_costs_strictly_subadditive(t, a, b):
    for spec in (instance_a(), instance_c()):
        assert spec.ell(t, a + b) < spec.ell(t, a) + spec.ell(t, b)


@settings(max_examples=80, deadline=None)
@given(t1=st.floats(0, 1), t2=st.floats(0, 1), xi=st.floats(-50, 50))
def test_reference_costs_nonincreasing_in_time(t1, t2, xi):
    spec = instance_b()
    lo, hi = min(t1, t2), max(t1, t2)
    assert spec.ell(hi, xi) <= spec.ell(lo, xi)
    assert spec.ell(lo, xi) >= spec.ell0 + spec.alpha * abs(xi) - 1e-12
