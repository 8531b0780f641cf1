"""Explicit monotone backward scheme for the coupled lag / free-layer system.

Each time slice t_k is filled in two passes. The lag layers r_j (j < m) are
one explicit step of the upwind/central generator applied to layer r_{j+1}
at t_{k+1}, with r_m meaning the free layer v0; no obstacle acts there. The
free layer is then the pointwise minimum of its own continuation step and
the intervention value, which only reads the r = 0 layer of the same slice.
That layer is obstacle-free, so no in-slice fixed point is needed.

Boundary nodes drop the diffusion term (linear extrapolation has zero second
difference) and keep only inward-pointing upwind drift, so every weight
stays nonnegative.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import SchemeError
from .grid import Grid, ValueField
from .model import ProblemSpec

log = logging.getLogger(__name__)

SCHEME_NAME = "explicit-upwind-central"


@dataclass(frozen=True)
class SchemeConfig:
    drift_stencil: str = "upwind"
    diffusion_stencil: str = "central"
    obstacle_tol: float | None = None  # None -> 1e-12 * L(T+1)
    impulses: bool = True  # False solves the linear no-impulse equation

    def tol(self, spec: ProblemSpec) -> float:
        return self.obstacle_tol if self.obstacle_tol is not None else 1e-12 * spec.value_bound


@dataclass
class ResidualReport:
    pde_residual_sup: float
    obstacle_violation_sup: float
    active_fraction: float

    def to_dict(self) -> dict[str, float]:
        return {"pde_residual_sup": self.pde_residual_sup,
                "obstacle_violation_sup": self.obstacle_violation_sup,
                "active_fraction": self.active_fraction}


class Operators:
    """Precomputed stencil weights and impulse search tables for one (spec, grid)."""

    def __init__(self, spec: ProblemSpec, grid: Grid, scheme: SchemeConfig | None = None):
        self.spec, self.grid = spec, grid
        self.scheme = scheme or SchemeConfig()
        dt, dx = grid.dt, grid.dx
        t, x = grid.t, grid.x
        b = spec.b(t[:, None], x[None, :])
        s2 = spec.sigma(t[:, None], x[None, :]) ** 2
        bp, bm = np.maximum(b, 0.0), np.maximum(-b, 0.0)
        up = dt * (bp / dx + 0.5 * s2 / dx**2)
        dn = dt * (bm / dx + 0.5 * s2 / dx**2)
        up[:, 0] = dt * bp[:, 0] / dx
        dn[:, 0] = 0.0
        dn[:, -1] = dt * bm[:, -1] / dx
        up[:, -1] = 0.0
        self.up, self.dn = up, dn
        self.mid = 1.0 - up - dn
        self.gdt = dt * spec.g(t[:, None], x[None, :])
        self.check_monotone()

        n = grid.n_x + 1
        idx = np.arange(n)
        shift = idx[None, :] - idx[:, None]
        # destinations per source row, ordered by |xi| so argmin breaks ties toward small impulses
        order = np.argsort(2 * np.abs(shift) + (shift < 0), axis=1, kind="stable")
        sorted_shift = np.take_along_axis(shift, order, axis=1)
        allowed = np.zeros_like(sorted_shift, dtype=bool)
        if spec.cone.allows_sign(1):
            allowed |= sorted_shift > 0
        if spec.cone.allows_sign(-1):
            allowed |= sorted_shift < 0
        self.dest = order
        self.xi = x[order] - x[:, None]
        self.penalty = np.where(allowed, spec.impulse_cost.alpha * np.abs(self.xi), np.inf)
        self.allowed = allowed

    def check_monotone(self) -> None:
        worst = float(np.min(self.mid))
        if worst < -1e-12:
            raise SchemeError(
                f"scheme not monotone: center weight {worst:.3g} < 0; "
                f"reduce dt below {self.grid.dt / (1 - worst):.6g}"
            )

    def step(self, k: int, u: np.ndarray) -> np.ndarray:
        """One explicit backward step with coefficients frozen at t_k; rows of ``u`` are slices at t_{k+1}."""
        out = self.mid[k] * u
        out[..., 1:] += self.dn[k, 1:] * u[..., :-1]
        out[..., :-1] += self.up[k, :-1] * u[..., 1:]
        return out + self.gdt[k]

    def intervene(self, k: int, landing: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Best impulse from every node onto ``landing`` (values after the jump, at time t_k).

        Returns (value, xi); nodes without a feasible destination get (+inf, nan).
        """
        cand = landing[self.dest] + self.penalty
        col = np.argmin(cand, axis=1)
        rows = np.arange(cand.shape[0])
        feasible = np.isfinite(cand[rows, col])
        xi = np.where(feasible, self.xi[rows, col], np.nan)
        dest = self.dest[rows, col]
        value = np.where(feasible, landing[dest] + self.spec.ell(self.grid.t[k], np.nan_to_num(xi)), np.inf)
        return value, xi


def _ops(spec: ProblemSpec, grid: Grid, ops: Operators | None, scheme: SchemeConfig | None = None) -> Operators:
    if ops is not None:
        return ops
    return Operators(spec, grid, scheme)


def terminal_slice(spec: ProblemSpec, grid: Grid, ops: Operators | None = None) -> np.ndarray:
    """min{h(x), min_xi h(x + xi) + l(T, xi)} on the x-grid, one row for every r."""
    ops = _ops(spec, grid, ops)
    h = spec.h(grid.x)
    jump, _ = ops.intervene(grid.n_t, h)
    return np.minimum(h, jump)


def intervention(field: ValueField, spec: ProblemSpec, t_k: int, x_i: int | None = None,
                 ops: Operators | None = None):
    """Intervention value and argmin impulse at time index ``t_k``.

    Reads the r = 0 layer at t_k. With ``x_i`` given returns a scalar pair,
    otherwise whole rows. An empty feasible set yields (+inf, nan).
    """
    ops = _ops(spec, field.grid, ops)
    landing = field.v_lag[t_k, 0]
    if np.isnan(landing).any():
        raise SchemeError(f"r = 0 layer at t_k={t_k} is not populated")
    value, xi = ops.intervene(t_k, landing)
    if x_i is None:
        return value, xi
    xi_i = float(xi[x_i])
    return float(value[x_i]), (None if np.isnan(xi_i) else xi_i)


def _sources(field: ValueField, k: int) -> np.ndarray:
    src = np.concatenate([field.v_lag[k + 1, 1:], field.v0[k + 1][None, :]], axis=0)
    if np.isnan(src).any():
        raise SchemeError(f"slice t_{k + 1} is not fully populated")
    return src


def step_lag_layers(field: ValueField, spec: ProblemSpec, grid: Grid, t_k: int,
                    ops: Operators | None = None) -> None:
    ops = _ops(spec, grid, ops)
    ops.check_monotone()
    field.v_lag[t_k] = ops.step(t_k, _sources(field, t_k))


def step_free_layer(field: ValueField, spec: ProblemSpec, grid: Grid, t_k: int,
                    ops: Operators | None = None) -> None:
    ops = _ops(spec, grid, ops)
    ops.check_monotone()
    if np.isnan(field.v0[t_k + 1]).any():
        raise SchemeError(f"free layer at t_{t_k + 1} is not populated")
    cont = ops.step(t_k, field.v0[t_k + 1])
    if ops.scheme.impulses:
        obstacle, _ = intervention(field, spec, t_k, ops=ops)
        cont = np.minimum(cont, obstacle)
    field.v0[t_k] = cont


def solve(spec: ProblemSpec, grid: Grid, scheme: SchemeConfig | None = None,
          terminal: np.ndarray | None = None) -> ValueField:
    """Backward sweep over all slices; ``terminal`` overrides the terminal row (testing hook)."""
    scheme = scheme or SchemeConfig()
    ops = Operators(spec, grid, scheme)
    if terminal is None:
        terminal = terminal_slice(spec, grid, ops) if scheme.impulses else spec.h(grid.x)
    field = ValueField.empty(grid, {
        "spec_hash": spec.spec_hash(), "scheme": SCHEME_NAME, "impulses": scheme.impulses,
        "obstacle_tol": scheme.tol(spec), "cfl_number": grid.cfl_number,
    })
    field.v0[-1] = terminal
    field.v_lag[-1] = terminal
    for k in range(grid.n_t - 1, -1, -1):
        step_lag_layers(field, spec, grid, k, ops)
        step_free_layer(field, spec, grid, k, ops)
    log.debug("solved %s on n_t=%d m=%d n_x=%d", spec.spec_hash(), grid.n_t, grid.m, grid.n_x)
    return field


def obstacle_rows(field: ValueField, spec: ProblemSpec, ops: Operators | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Intervention value and argmin for every (t_k, x_i), shape (n_t+1, n_x+1) each."""
    ops = _ops(spec, field.grid, ops)
    vals, xis = zip(*(ops.intervene(k, field.v_lag[k, 0]) for k in range(field.grid.n_t + 1)))
    return np.array(vals), np.array(xis)


def residuals(field: ValueField, spec: ProblemSpec, grid: Grid | None = None,
              scheme: SchemeConfig | None = None) -> ResidualReport:
    """Discrete min-form residuals of the unified obstacle system at interior nodes.

    The obstacle is the intervention value on the free layer and the constant
    2L(T+1) on lag layers.
    """
    grid = grid or field.grid
    scheme = scheme or SchemeConfig(impulses=field.meta.get("impulses", True))
    ops = Operators(spec, grid, scheme)
    dt = grid.dt
    vacuous = 2.0 * spec.value_bound
    inner = slice(1, grid.n_x)
    pde = 0.0
    violation = max(0.0, float(np.max(field.v_lag - vacuous)))
    active = 0
    if scheme.impulses:
        obstacle, _ = obstacle_rows(field, spec, ops)
    else:
        obstacle = np.full_like(field.v0, np.inf)
    tol = scheme.tol(spec)
    for k in range(grid.n_t):
        lag = field.v_lag[k]
        f_lag = (ops.step(k, _sources(field, k)) - lag) / dt
        pde = max(pde, float(np.max(np.abs(np.minimum(f_lag, vacuous - lag)[:, inner]))))
        v = field.v0[k]
        f_free = (ops.step(k, field.v0[k + 1]) - v) / dt
        pde = max(pde, float(np.max(np.abs(np.minimum(f_free, obstacle[k] - v)[inner]))))
        active += int(np.count_nonzero(v >= obstacle[k] - tol))
    violation = max(violation, float(np.max(field.v0 - obstacle, initial=0.0)))
    return ResidualReport(pde, violation, active / (grid.n_t * (grid.n_x + 1)))
