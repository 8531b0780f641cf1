from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lagqvi.errors import SchemeError
from lagqvi.grid import Grid, build_grid, interpolate
from lagqvi.hjb import Operators, SchemeConfig, intervention, residuals, solve, terminal_slice
from lagqvi.instances import instance_c
from lagqvi.model import CoefficientRef, ConeSpec, ImpulseCostSpec, ProblemSpec, validate_hypotheses
from oracles import LatticeProblem, frozen_value, lattice_value


def lattice_spec(p: LatticeProblem, cone: str = "full-line") -> ProblemSpec:
    return ProblemSpec(
        T=p.n_steps * p.dt, delta=p.lag_steps * p.dt,
        drift=CoefficientRef("constant", (0.0,)), vol=CoefficientRef("constant", (1.0,)),
        running=CoefficientRef("sinusoidal-bounded", (p.g_level, p.g_amp, 1.0, 0.0, p.g_phase)),
        terminal=CoefficientRef("custom-table", (-p.h_cap, p.h_cap, 0.0, 0.0, p.h_cap, p.h_cap)),
        impulse_cost=ImpulseCostSpec("constant", (p.base_cost,), p.slope),
        cone=ConeSpec(cone), L=3.0, ell0=p.base_cost, alpha=p.slope,
    )


@pytest.mark.parametrize("cone", ["full-line", "nonnegative"])
def test_matches_lattice_dynamic_program(cone):
    p = LatticeProblem(cone=cone)
    oracle = lattice_value(p)
    spec = lattice_spec(p, cone)
    assert validate_hypotheses(spec).passed
    grid = build_grid(spec, p.n_steps, p.n_x, p.x_lo, p.x_lo + p.n_x * p.dx, cfl_margin=0.0)
    f = solve(spec, grid)
    want = np.array([[[oracle(k, i, j) for i in range(p.n_x + 1)] for j in range(p.lag_steps + 1)]
                     for k in range(p.n_steps + 1)])
    assert np.max(np.abs(f.stacked() - want)) <= 1e-9
    # impulses matter on this lattice, otherwise the comparison would be vacuous
    assert np.max(want[:, 0] - want[:, -1]) > 1e-3


def test_null_instance_is_zero(solved_a, spec_a):
    grid, f = solved_a
    assert np.max(np.abs(f.stacked())) == 0.0
    res = residuals(f, spec_a)
    assert (res.pde_residual_sup, res.obstacle_violation_sup, res.active_fraction) == (0.0, 0.0, 0.0)


def test_frozen_instance_matches_closed_form(solved_b):
    grid, f = solved_b
    want = np.array([frozen_value(x) for x in grid.x])
    assert np.max(np.abs(f.stacked() - want[None, None, :])) <= 1e-12
    assert interpolate(f, 0.3, 0.1, -1.0) == pytest.approx(0.6)


def test_value_bound_and_lag_monotonicity(solved_c, spec_c):
    _, f = solved_c
    v = f.stacked()
    assert np.max(np.abs(v)) <= spec_c.value_bound + 1e-8
    assert np.all(np.diff(v, axis=1) <= 0.0)


def test_residuals_vanish_and_obstacle_respected(solved_c, spec_c):
    _, f = solved_c
    res = residuals(f, spec_c)
    assert res.pde_residual_sup <= 1e-10
    assert res.obstacle_violation_sup <= SchemeConfig().tol(spec_c)
    assert 0.0 < res.active_fraction < 1.0


def test_intervention_scalar_form(solved_b, spec_b):
    grid, f = solved_b
    i = int(np.argmin(np.abs(grid.x + 1.0)))
    value, xi = intervention(f, spec_b, 10, i)
    assert value == pytest.approx(0.6) and xi == pytest.approx(1.0)
    top = grid.n_x
    value, xi = intervention(f, spec_b, 10, top)
    assert value == np.inf and xi is None


def test_terminal_slice_takes_one_jump(spec_b):
    grid = build_grid(spec_b, 40, 100, -2, 2)
    want = np.array([frozen_value(x) for x in grid.x])
    assert np.allclose(terminal_slice(spec_b, grid), want, atol=1e-12)


def test_disabling_impulses_gives_larger_value(small_c, spec_c):
    grid, f = small_c
    linear = solve(spec_c, grid, SchemeConfig(impulses=False))
    assert np.all(linear.v0 >= f.v0)
    assert np.array_equal(linear.v0, linear.v_lag[:, 0])


def test_too_large_step_breaks_monotonicity(spec_c):
    grid = Grid(spec_c.T, spec_c.delta, 4, 1, 100, -6.0, 6.0)
    with pytest.raises(SchemeError, match="not monotone"):
        Operators(spec_c, grid)


def test_weights_form_a_probability_row(spec_c):
    ops = Operators(spec_c, build_grid(spec_c, 40, 40, -4, 4))
    assert np.allclose(ops.up + ops.dn + ops.mid, 1.0)
    assert min(ops.up.min(), ops.dn.min(), ops.mid.min()) >= 0.0


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.0, 0.5))
def test_raising_terminal_data_never_lowers_the_solution(seed, scale):
    spec = instance_c()
    grid = build_grid(spec, 20, 20, -3, 3)
    base = terminal_slice(spec, grid)
    bump = scale * np.random.default_rng(seed).random(base.shape)
    lo, hi = solve(spec, grid, terminal=base), solve(spec, grid, terminal=base + bump)
    assert np.all(hi.stacked() >= lo.stacked())


@settings(max_examples=10, deadline=None)
@given(ell0=st.floats(0.02, 0.5), sigma=st.floats(0.1, 0.8))
def test_elapsed_time_monotonicity_holds_across_instances(ell0, sigma):
    spec = instance_c(ell0=ell0, sigma=sigma)
    f = solve(spec, build_grid(spec, 40, 30, -4, 4))
    assert np.all(np.diff(f.stacked(), axis=1) <= 0.0)


def test_solution_is_deterministic(spec_c):
    grid = build_grid(spec_c, 40, 40, -4, 4)
    a, b = solve(spec_c, grid), solve(spec_c, grid)
    assert np.array_equal(a.stacked(), b.stacked()) and a.meta == b.meta


def test_cheaper_impulses_lower_the_value(spec_c):
    grid = build_grid(spec_c, 40, 40, -4, 4)
    cheap = dataclasses.replace(spec_c, impulse_cost=ImpulseCostSpec("constant", (0.05,), 0.2), ell0=0.05)
    assert np.all(solve(cheap, grid).v0 <= solve(spec_c, grid).v0)
