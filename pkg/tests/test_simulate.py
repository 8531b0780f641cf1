from __future__ import annotations

import json

import numpy as np
import pytest

from lagqvi.errors import AdmissibilityError, ConfigError
from lagqvi.grid import build_grid, interpolate
from lagqvi.hjb import SchemeConfig, solve
from lagqvi.model import ConeSpec
from lagqvi.policy import ImpulseSchedule, extract_policy
from lagqvi.simulate import (McConfig, check_admissible, dpp_check, estimate_cost, normals, simulate_path,
                             stability_ratio)


def test_null_instance_trivial_cost_is_zero(spec_a):
    res = estimate_cost(spec_a, (0.0, spec_a.delta, 0.3), None, McConfig(500, 0.01))
    assert (res.mean_cost, res.stderr, res.impulse_count) == (0.0, 0.0, {0: 500})


def test_frozen_schedule_cost(spec_b):
    _, cost = simulate_path(spec_b, (0.0, spec_b.delta, -1.0), ImpulseSchedule([(0.5, 1.0)]),
                            np.random.default_rng(0), 0.01)
    assert cost == pytest.approx(0.6, abs=1e-15)


def test_schedule_violating_lag_is_rejected(spec_b):
    sched = ImpulseSchedule([(0.5, 1.0), (0.6, 1.0)])
    with pytest.raises(AdmissibilityError, match="elapsed"):
        estimate_cost(spec_b, (0.0, spec_b.delta, -1.0), sched, McConfig(10, 0.01))
    tolerant = estimate_cost(spec_b, (0.0, spec_b.delta, -1.0), sched, McConfig(10, 0.01, strict=False))
    assert tolerant.rejected == 10
    assert tolerant.mean_cost == pytest.approx(0.6)


def test_impulse_outside_cone_is_rejected(spec_b):
    with pytest.raises(AdmissibilityError):
        estimate_cost(spec_b, (0.0, spec_b.delta, 1.0), ImpulseSchedule([(0.5, -1.0)]), McConfig(4, 0.01))


def test_terminal_impulses_collapse_into_one(spec_b):
    sched = ImpulseSchedule([(1.0, 0.5), (1.0, 0.5)])
    res = estimate_cost(spec_b, (0.0, spec_b.delta, -1.0), sched, McConfig(3, 0.01))
    assert res.mean_cost == pytest.approx(0.1 + 0.5)
    assert res.impulse_count == {1: 3}


def test_terminal_impulse_ignores_lag(spec_b):
    sched = ImpulseSchedule([(0.9, 0.5), (1.0, 0.5)])
    res = estimate_cost(spec_b, (0.0, spec_b.delta, -1.0), sched, McConfig(2, 0.01))
    assert res.mean_cost == pytest.approx(0.35 + 0.35)


def test_initial_elapsed_time_delays_first_impulse(spec_b):
    with pytest.raises(AdmissibilityError):
        estimate_cost(spec_b, (0.0, 0.1, -1.0), ImpulseSchedule([(0.1, 1.0)]), McConfig(2, 0.01))
    res = estimate_cost(spec_b, (0.0, 0.1, -1.0), ImpulseSchedule([(0.15, 1.0)]), McConfig(2, 0.01))
    assert res.mean_cost == pytest.approx(0.6)


def test_costs_bounded_below_by_impulse_count(spec_a):
    sched = ImpulseSchedule([(0.0, 0.5), (0.3, -0.5), (0.7, 1.0)])
    res = estimate_cost(spec_a, (0.0, spec_a.delta, 0.0), sched, McConfig(50, 0.01))
    assert np.all(res.costs >= spec_a.ell0 * 3)


def test_estimates_are_bit_reproducible(spec_c):
    mc = McConfig(300, 0.01, seed=11, antithetic=True)
    a = estimate_cost(spec_c, (0.0, spec_c.delta, 0.5), None, mc)
    b = estimate_cost(spec_c, (0.0, spec_c.delta, 0.5), None, mc)
    assert a.to_dict() == b.to_dict() and np.array_equal(a.costs, b.costs)


def test_path_streams_do_not_depend_on_batch_size():
    big, small = normals(5, 40, 7), normals(5, 10, 7)
    assert np.array_equal(big[:10], small)
    anti = normals(5, 4, 7, antithetic=True)
    assert np.array_equal(anti[1], -anti[0]) and np.array_equal(anti[2], big[1])


def test_dt_must_divide_horizon(spec_c):
    with pytest.raises(ConfigError, match="divide"):
        estimate_cost(spec_c, (0.0, spec_c.delta, 0.0), None, McConfig(10, 0.3))


def test_trivial_control_matches_linear_equation(small_c, spec_c):
    grid, _ = small_c
    linear = solve(spec_c, grid, SchemeConfig(impulses=False))
    res = estimate_cost(spec_c, (0.0, spec_c.delta, 0.5), None, McConfig(4000, grid.dt, seed=2))
    eps = 2 * (grid.dt + grid.dx)
    assert abs(res.mean_cost - interpolate(linear, 0.0, spec_c.delta, 0.5)) <= 3 * res.stderr + eps


def test_stability_ratio_is_stable_under_refinement(spec_c):
    sched = ImpulseSchedule([(0.2, 0.5)])
    ratios = [stability_ratio(spec_c, 0.0, 0.3, 0.35, sched, McConfig(400, dt, seed=1)) for dt in (0.02, 0.01, 0.005)]
    assert max(ratios) <= 3.0
    assert max(ratios) / min(ratios) <= 1.2


def test_check_admissible_examples():
    assert check_admissible(ImpulseSchedule([]), 0.0, 0.0, 0.25).admissible
    early = check_admissible(ImpulseSchedule([(0.05, 1.0)]), 0.0, 0.1, 0.25, T=1.0)
    assert (early.admissible, early.rule, early.index) == (False, "first-lag", 0)
    terminal = check_admissible(ImpulseSchedule([(0.9, 1.0), (1.0, 1.0)]), 0.0, 0.25, 0.25, T=1.0)
    assert terminal.admissible
    gap = check_admissible(ImpulseSchedule([(0.5, 1.0), (0.6, 1.0)]), 0.0, 0.25, 0.25, T=1.0)
    assert (gap.rule, gap.index) == ("lag", 1)
    zero = check_admissible(ImpulseSchedule([(0.5, 0.0)]), 0.0, 0.25, 0.25, T=1.0)
    assert zero.rule == "cone"
    wrong_sign = check_admissible(ImpulseSchedule([(0.5, -1.0)]), 0.0, 0.25, 0.25, T=1.0, cone=ConeSpec("nonnegative"))
    assert wrong_sign.rule == "cone"
    late = check_admissible(ImpulseSchedule([(1.5, 1.0)]), 0.0, 0.25, 0.25, T=1.0)
    assert late.rule == "horizon"


def test_dpp_null_instance(solved_a, spec_a):
    _, f = solved_a
    res = dpp_check(f, spec_a, (0.1, 0.0, 0.2), 0.2, McConfig(200, 0.0025))
    assert (res.residual, res.stderr) == (0.0, 0.0)


def test_dpp_frozen_instance_is_exact(solved_b, spec_b):
    _, f = solved_b
    res = dpp_check(f, spec_b, (0.3, 0.0, -1.0), 0.3 + spec_b.delta / 2, McConfig(50, 0.0125))
    assert res.residual == 0.0 and res.regime == "lag"


def test_dpp_range_errors_name_the_case(solved_b, spec_b):
    _, f = solved_b
    with pytest.raises(ConfigError, match="r < delta"):
        dpp_check(f, spec_b, (0.3, 0.1, -1.0), 0.5, McConfig(10, 0.01))
    with pytest.raises(ConfigError, match="r >= delta"):
        dpp_check(f, spec_b, (0.3, 0.3, -1.0), 1.5, McConfig(10, 0.01))


def test_dpp_free_regime_inequality(solved_c, spec_c):
    grid, f = solved_c
    res = dpp_check(f, spec_c, (0.2, spec_c.delta, 0.7), 0.3, McConfig(4000, grid.dt, seed=3))
    assert res.regime == "free"
    assert res.residual >= -(3 * res.stderr + 5 * (grid.dt + grid.dx))
    assert res.obstacle_ok


def test_result_json_and_path_csv(tmp_path, small_c, spec_c):
    grid, f = small_c
    res = estimate_cost(spec_c, (0.0, spec_c.delta, 1.5), extract_policy(f, spec_c), McConfig(5, grid.dt), record=True)
    res.write_json(tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert set(doc) == {"mean", "stderr", "n_paths", "impulse_histogram"}
    res.paths.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "path_id,t,x,r,impulse_flag,xi" and len(lines) == 1 + 5 * (grid.n_t + 1)


def test_invalid_mc_config():
    with pytest.raises(ConfigError):
        McConfig(0, 0.01)
    with pytest.raises(ConfigError):
        McConfig.from_dict({"n_paths": 10, "dt_sim": 0.01})
