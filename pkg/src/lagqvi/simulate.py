"""Monte Carlo for the impulse-controlled diffusion.

Paths are advanced in lockstep by Euler-Maruyama. At each step time t_n
(including the start and T) the controller is consulted first, then the
running cost is charged and the diffusion step taken. Every path draws its
normals from its own stream, seeded by (seed, path index), so a path's cost
does not depend on how many other paths run beside it.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

import numpy as np

from .errors import AdmissibilityError, ConfigError
from .grid import ValueField, interpolate
from .model import ConeSpec, ProblemSpec
from .policy import ImpulseSchedule, PolicyTable

log = logging.getLogger(__name__)

_EPS = 1e-9

Controller = Union[None, str, ImpulseSchedule, PolicyTable]


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 10_000
    dt_sim: float = 1.0 / 400
    seed: int = 0
    antithetic: bool = False
    strict: bool = True

    def __post_init__(self) -> None:
        if int(self.n_paths) < 1:
            raise ConfigError("mc.n_paths must be >= 1", field="mc.n_paths")
        if not (math.isfinite(self.dt_sim) and self.dt_sim > 0):
            raise ConfigError("mc.dt_sim must be positive", field="mc.dt_sim")
        if int(self.seed) < 0:
            raise ConfigError("mc.seed must be nonnegative", field="mc.seed")

    def to_dict(self) -> dict[str, Any]:
        return {"n_paths": self.n_paths, "dt_sim": self.dt_sim, "seed": self.seed,
                "antithetic": self.antithetic}

    @classmethod
    def from_dict(cls, doc: Any, strict: bool = True) -> McConfig:
        keys = {"n_paths", "dt_sim", "seed", "antithetic"}
        if not isinstance(doc, dict) or not set(doc) <= keys or not {"n_paths", "dt_sim", "seed"} <= set(doc):
            raise ConfigError(f"mc: expected keys {sorted(keys)}", field="mc")
        try:
            return cls(int(doc["n_paths"]), float(doc["dt_sim"]), int(doc["seed"]),
                       bool(doc.get("antithetic", False)), strict)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"mc: {exc}", field="mc") from exc


@dataclass
class Paths:
    """Recorded states after any impulse at each step time; arrays are (n_paths, n_steps+1)."""

    t: np.ndarray
    x: np.ndarray
    r: np.ndarray
    impulse: np.ndarray
    xi: np.ndarray

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "t", "x", "r", "impulse_flag", "xi"])
            for p in range(self.x.shape[0]):
                for n, t in enumerate(self.t):
                    w.writerow([p, f"{t:.17g}", f"{self.x[p, n]:.17g}", f"{self.r[p, n]:.17g}",
                                int(self.impulse[p, n]), f"{self.xi[p, n]:.17g}"])


@dataclass
class SimResult:
    mean_cost: float
    stderr: float
    impulse_count: dict[int, int]
    n_paths: int
    rejected: int = 0
    max_nonterminal: int = 0
    paths: Paths | None = None
    costs: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {"mean": self.mean_cost, "stderr": self.stderr, "n_paths": self.n_paths,
                "impulse_histogram": {str(k): v for k, v in sorted(self.impulse_count.items())}}

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# controllers

class _Trivial:
    def propose(self, n, t, r, x, terminal):
        return []


class _Scheduled:
    def __init__(self, schedule: ImpulseSchedule, t0: float, dt: float, n_steps: int):
        self.at: dict[int, list[float]] = {}
        for tau, xi in schedule.impulses:
            n = round((tau - t0) / dt)
            if n < 0 or n > n_steps:
                raise AdmissibilityError(f"impulse time {tau:.6g} outside [{t0:.6g}, {t0 + n_steps * dt:.6g}]")
            if abs(n * dt - (tau - t0)) > _EPS:
                log.info("impulse time %.9g snapped to step %d", tau, n)
            self.at.setdefault(n, []).append(xi)
        if n_steps in self.at and len(self.at[n_steps]) > 1:
            # stacked terminal impulses act as one impulse of the summed size
            self.at[n_steps] = [math.fsum(self.at[n_steps])]

    def propose(self, n, t, r, x, terminal):
        return [np.full(x.shape, xi) for xi in self.at.get(n, ())]


class _Feedback:
    def __init__(self, policy: PolicyTable):
        self.policy = policy

    def propose(self, n, t, r, x, terminal):
        xi = self.policy.propose(t, r, x)
        return [np.where(xi != 0.0, xi, np.nan)]


def _controller(controller: Controller, t0: float, dt: float, n_steps: int):
    if controller is None or controller == "trivial":
        return _Trivial()
    if isinstance(controller, ImpulseSchedule):
        return _Scheduled(controller, t0, dt, n_steps)
    if isinstance(controller, PolicyTable):
        return _Feedback(controller)
    raise ConfigError(f"unknown controller {controller!r}", field="controller")


# --------------------------------------------------------------------------
# engine

def _steps(span: float, dt: float, what: str) -> tuple[int, float]:
    n = round(span / dt)
    if span < -_EPS or abs(n * dt - span) > _EPS * max(1.0, span):
        raise ConfigError(f"dt_sim={dt:.6g} does not divide the {what} {span:.6g}", field="mc.dt_sim")
    return n, (span / n if n else dt)


def normals(seed: int, n_paths: int, n_steps: int, antithetic: bool = False) -> np.ndarray:
    """Standard normals (n_paths, n_steps), row p from stream (seed, p); antithetic rows pair up as (z, -z)."""
    out = np.empty((n_paths, n_steps))
    n_streams = (n_paths + 1) // 2 if antithetic else n_paths
    for p in range(n_streams):
        z = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(p,))).standard_normal(n_steps)
        if antithetic:
            out[2 * p] = z
            if 2 * p + 1 < n_paths:
                out[2 * p + 1] = -z
        else:
            out[p] = z
    return out


@dataclass
class _Run:
    cost: np.ndarray
    count: np.ndarray
    nonterminal: np.ndarray
    rejected: int
    paths: Paths | None


def _run(spec: ProblemSpec, init, ctrl, Z: np.ndarray, dt: float, strict: bool, record: bool) -> _Run:
    t0, r0, x0 = (float(v) for v in init)
    n_paths, n_steps = Z.shape
    x = np.full(n_paths, x0)
    cost = np.zeros(n_paths)
    last = np.full(n_paths, -1)
    count = np.zeros(n_paths, dtype=int)
    nonterminal = np.zeros(n_paths, dtype=int)
    rejected = 0
    sq = math.sqrt(dt)
    if record:
        shape = (n_paths, n_steps + 1)
        rec = Paths(t0 + dt * np.arange(n_steps + 1), np.empty(shape), np.empty(shape),
                    np.zeros(shape, dtype=bool), np.zeros(shape))
    for n in range(n_steps + 1):
        terminal = n == n_steps
        t = spec.T if terminal else t0 + n * dt
        r = np.where(last >= 0, (n - last) * dt, r0 + n * dt)
        for xi in ctrl.propose(n, t, r, x, terminal):
            want = ~np.isnan(xi)
            if not want.any():
                continue
            ok = want & spec.cone.contains(xi) & (xi != 0.0)
            if not terminal:
                ok &= r >= spec.delta - _EPS
            bad = want & ~ok
            if bad.any():
                p = int(np.argmax(bad))
                msg = (f"infeasible impulse xi={xi[p]:.6g} at t={t:.6g} with elapsed r={r[p]:.6g} "
                       f"(delta={spec.delta:.6g}, path {p})")
                if strict:
                    raise AdmissibilityError(msg)
                rejected += int(bad.sum())
                log.warning("rejected %s", msg)
            x = np.where(ok, x + np.where(ok, xi, 0.0), x)
            cost = cost + np.where(ok, spec.ell(t, np.where(ok, xi, 0.0)), 0.0)
            last = np.where(ok, n, last)
            r = np.where(ok, 0.0, r)
            count += ok
            if not terminal:
                nonterminal += ok
            if record:
                rec.impulse[:, n] |= ok
                rec.xi[:, n] += np.where(ok, xi, 0.0)
        if record:
            rec.x[:, n], rec.r[:, n] = x, r
        if terminal:
            cost = cost + spec.h(x)
            break
        cost = cost + spec.g(t, x) * dt
        x = x + spec.b(t, x) * dt + spec.sigma(t, x) * sq * Z[:, n]
    return _Run(cost, count, nonterminal, rejected, rec if record else None)


def _mean_stderr(values: np.ndarray, antithetic: bool) -> tuple[float, float]:
    n = values.size
    mean = math.fsum(values.tolist()) / n
    if antithetic and n >= 2:
        k = n // 2
        pairs = 0.5 * (values[0:2 * k:2] + values[1:2 * k:2])
        if k < 2:
            return mean, 0.0
        return mean, float(np.std(pairs, ddof=1) / math.sqrt(k))
    if n < 2:
        return mean, 0.0
    return mean, float(np.std(values, ddof=1) / math.sqrt(n))


def simulate_path(spec: ProblemSpec, init, controller: Controller, rng: np.random.Generator,
                  dt: float, strict: bool = True, record: bool = True) -> tuple[Paths | None, float]:
    """One controlled path from ``init = (t, r, x)``; returns (recorded path, realized cost)."""
    n_steps, dt = _steps(spec.T - float(init[0]), dt, "horizon")
    ctrl = _controller(controller, float(init[0]), dt, n_steps)
    Z = rng.standard_normal(n_steps)[None, :]
    run = _run(spec, init, ctrl, Z, dt, strict, record)
    return run.paths, float(run.cost[0])


def estimate_cost(spec: ProblemSpec, init, controller: Controller, mc: McConfig,
                  record: bool = False) -> SimResult:
    n_steps, dt = _steps(spec.T - float(init[0]), mc.dt_sim, "horizon")
    ctrl = _controller(controller, float(init[0]), dt, n_steps)
    Z = normals(mc.seed, mc.n_paths, n_steps, mc.antithetic)
    run = _run(spec, init, ctrl, Z, dt, mc.strict, record)
    mean, stderr = _mean_stderr(run.cost, mc.antithetic)
    hist = {int(k): int(v) for k, v in zip(*np.unique(run.count, return_counts=True))}
    return SimResult(mean, stderr, hist, mc.n_paths, run.rejected, int(run.nonterminal.max(initial=0)),
                     run.paths, run.cost)


def stability_ratio(spec: ProblemSpec, t: float, x: float, x_hat: float, controller: Controller,
                    mc: McConfig) -> float:
    """E sup_s |X(s) - X_hat(s)| / |x - x_hat| with shared noise and the same schedule."""
    if x == x_hat:
        raise ConfigError("need distinct initial states", field="x_hat")
    n_steps, dt = _steps(spec.T - t, mc.dt_sim, "horizon")
    Z = normals(mc.seed, mc.n_paths, n_steps, mc.antithetic)
    runs = [_run(spec, (t, spec.delta, x0), _controller(controller, t, dt, n_steps), Z, dt, mc.strict, True)
            for x0 in (x, x_hat)]
    gap = np.max(np.abs(runs[0].paths.x - runs[1].paths.x), axis=1)
    return math.fsum(gap.tolist()) / gap.size / abs(x - x_hat)


# --------------------------------------------------------------------------
# admissibility

@dataclass
class AdmissibilityReport:
    admissible: bool
    index: int | None = None
    rule: str | None = None
    message: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"admissible": self.admissible, "index": self.index, "rule": self.rule, "message": self.message}


def check_admissible(schedule: ImpulseSchedule, t: float, r: float, delta: float,
                     T: float | None = None, cone: ConeSpec | None = None) -> AdmissibilityReport:
    """First violated constraint of a deterministic schedule started from (t, r), if any.

    Impulses at ``T`` (when given) are exempt from the lag, as in the
    terminal condition of the value function.
    """
    cone = cone or ConeSpec("full-line")
    prev = None
    for i, (tau, xi) in enumerate(schedule.impulses):
        terminal = T is not None and abs(tau - T) <= _EPS
        if tau < t - _EPS or (T is not None and tau > T + _EPS):
            return AdmissibilityReport(False, i, "horizon", f"tau={tau:.6g} outside [t, T]")
        if prev is None:
            first = max(t + delta - r, t)
            if not terminal and tau < first - _EPS:
                return AdmissibilityReport(False, i, "first-lag",
                                           f"tau_1={tau:.6g} < (t+delta-r) v t = {first:.6g}")
        else:
            if tau < prev - _EPS:
                return AdmissibilityReport(False, i, "order", f"tau={tau:.6g} precedes {prev:.6g}")
            if not terminal and tau < prev + delta - _EPS:
                return AdmissibilityReport(False, i, "lag",
                                           f"gap {tau - prev:.6g} < delta={delta:.6g} before tau={tau:.6g}")
        if xi == 0.0 or not bool(cone.contains(xi)):
            return AdmissibilityReport(False, i, "cone", f"xi={xi:.6g} not in K minus the origin")
        prev = tau
    return AdmissibilityReport(True)


# --------------------------------------------------------------------------
# dynamic programming check

@dataclass
class DppResult:
    regime: str  # "lag" (r < delta, equality) or "free" (r >= delta, inequality)
    mc_value: float
    field_value: float
    residual: float
    stderr: float
    obstacle_value: float | None = None
    obstacle_gap: float | None = None
    obstacle_slack: float | None = None

    @property
    def obstacle_ok(self) -> bool | None:
        if self.obstacle_gap is None:
            return None
        return self.obstacle_gap <= self.obstacle_slack

    def to_dict(self) -> dict[str, Any]:
        return {"regime": self.regime, "mc_value": self.mc_value, "field_value": self.field_value,
                "residual": self.residual, "stderr": self.stderr, "obstacle_value": self.obstacle_value,
                "obstacle_gap": self.obstacle_gap, "obstacle_ok": self.obstacle_ok}


def intervention_at(field: ValueField, spec: ProblemSpec, t: float, x: float) -> float:
    """min over grid landing points y of V(t, 0, y) + l(t, y - x), y - x in K minus the origin."""
    y = field.grid.x
    xi = y - x
    ok = spec.cone.contains(xi) & (np.abs(xi) > _EPS)
    if not ok.any():
        return math.inf
    vals = interpolate(field, t, 0.0, y[ok]) + spec.ell(t, xi[ok])
    return float(np.min(vals))


def dpp_check(field: ValueField, spec: ProblemSpec, init, s: float, mc: McConfig) -> DppResult:
    """Compare V(t, r, x) with E[V(s, r+s-t, X(s)) + int_t^s g] along the uncontrolled flow.

    For r < delta and s < t + delta - r the two agree; for r >= delta the
    field value may only be smaller, and must not exceed the intervention value.
    """
    t, r, x = (float(v) for v in init)
    delta = spec.delta
    if r < delta:
        regime = "lag"
        if not (t <= s < min(t + delta - r, spec.T + _EPS)):
            raise ConfigError(f"DPP case r < delta needs s in [t, t+delta-r) = [{t:.6g}, {t + delta - r:.6g}), "
                              f"got s={s:.6g}", field="s")
    else:
        regime = "free"
        if not (t <= s <= spec.T):
            raise ConfigError(f"DPP case r >= delta needs s in [t, T] = [{t:.6g}, {spec.T:.6g}], got s={s:.6g}",
                              field="s")
    n_steps, dt = _steps(s - t, mc.dt_sim, "interval s - t")
    Z = normals(mc.seed, mc.n_paths, n_steps, mc.antithetic)
    X = np.full(mc.n_paths, x)
    running = np.zeros(mc.n_paths)
    sq = math.sqrt(dt)
    for n in range(n_steps):
        tn = t + n * dt
        running = running + spec.g(tn, X) * dt
        X = X + spec.b(tn, X) * dt + spec.sigma(tn, X) * sq * Z[:, n]
    samples = running + interpolate(field, s, r + (s - t), X)
    mean, stderr = _mean_stderr(np.atleast_1d(samples), mc.antithetic)
    value = float(interpolate(field, t, r, x))
    out = DppResult(regime, mean, value, mean - value, stderr)
    if regime == "free":
        g = field.grid
        k = min(int(t / g.dt), g.n_t - 1)
        base = spec.impulse_cost.base
        slack = (spec.impulse_cost.alpha * g.dx + abs(float(base(g.t[k]) - base(g.t[k + 1])))
                 + float(field.meta.get("obstacle_tol", 0.0)))
        obstacle = intervention_at(field, spec, t, x)
        out.obstacle_value, out.obstacle_gap, out.obstacle_slack = obstacle, value - obstacle, slack
    return out
