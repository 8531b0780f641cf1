"""Classical no-lag baseline, the vanishing-lag study, quadratic sup/inf
convolutions of solved fields, and empirical continuity moduli."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError, SchemeError
from .grid import Grid, ValueField, interpolate
from .hjb import Operators, solve, terminal_slice
from .model import ProblemSpec

log = logging.getLogger(__name__)

FIXED_POINT_TOL = 1e-10
FIXED_POINT_MAX_ITER = 50


@dataclass
class ClassicalResult:
    values: np.ndarray  # (n_t+1, n_x+1)
    iterations: list[int]

    @property
    def max_iterations(self) -> int:
        return max(self.iterations, default=0)


def classical_qvi_solve(spec: ProblemSpec, grid: Grid) -> ClassicalResult:
    """Same explicit scheme with impulses allowed at every time.

    The obstacle now reads the layer being computed, so each slice is a fixed
    point W = min(C, min_xi W(x + xi) + l(t, xi)) found by value iteration
    starting from the continuation values C.
    """
    ops = Operators(spec, grid)
    W = np.empty((grid.n_t + 1, grid.n_x + 1))
    W[-1] = terminal_slice(spec, grid, ops)
    iterations = []
    for k in range(grid.n_t - 1, -1, -1):
        cont = ops.step(k, W[k + 1])
        w = cont
        trace = []
        for it in range(1, FIXED_POINT_MAX_ITER + 1):
            new = np.minimum(cont, ops.intervene(k, w)[0])
            diff = float(np.max(np.abs(new - w)))
            trace.append(diff)
            w = new
            if diff <= FIXED_POINT_TOL:
                break
        else:
            raise SchemeError(f"classical fixed point at t_{k} did not converge; sup-changes {trace}")
        W[k] = w
        iterations.append(it)
    return ClassicalResult(W, iterations[::-1])


# --------------------------------------------------------------------------
# vanishing lag

def on_r_nodes(field: ValueField, m_max: int) -> np.ndarray:
    """Values at r_j = j*dt for j = 0..m_max, layers past delta read from v0."""
    j = np.minimum(np.arange(m_max + 1), field.grid.m)
    return field.stacked()[:, j, :]


@dataclass
class LimitStudy:
    deltas: list[float]
    gaps: list[float]
    rate: float
    classical: ClassicalResult | None = None
    fields: list[ValueField] = field(default_factory=list)

    def strictly_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.gaps, self.gaps[1:]))

    def monotone_violation(self) -> float:
        """Largest breach of V_classical <= V_{d_small} <= V_{d_large} over shared nodes (needs fields)."""
        if len(self.fields) != len(self.deltas) or self.classical is None:
            raise ConfigError("control-set comparison needs keep_fields=True", field="keep_fields")
        m_max = max(f.grid.m for f in self.fields)
        stacks = [on_r_nodes(f, m_max) for f in self.fields]
        worst = float(np.max(self.classical.values[:, None, :] - stacks[-1]))
        for big, small in zip(stacks, stacks[1:]):
            worst = max(worst, float(np.max(small - big)))
        return worst

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["delta", "sup_gap"])
            for d, g in zip(self.deltas, self.gaps):
                w.writerow([f"{d:.17g}", f"{g:.17g}"])

    def to_dict(self) -> dict[str, Any]:
        return {"deltas": self.deltas, "gaps": self.gaps, "rate": self.rate}


def lag_limit_study(spec: ProblemSpec, base_grid: Grid, deltas, keep_fields: bool = False) -> LimitStudy:
    """Solve for each lag on the base grid and measure the t = 0 gap to the no-lag value."""
    deltas = sorted((float(d) for d in deltas), reverse=True)
    if len(set(deltas)) != len(deltas) or not deltas:
        raise ConfigError("deltas must be distinct and nonempty", field="deltas")
    dt = base_grid.dt
    grids = []
    for d in deltas:
        m = round(d / dt)
        if abs(m * dt - d) > 1e-9 or m < 1 or d >= spec.T:
            lo, hi = max(1, math.floor(d / dt)), math.ceil(d / dt)
            raise ConfigError(f"delta={d:.6g} is not a multiple of dt={dt:.6g}; nearest admissible deltas "
                              f"are {lo * dt:.6g} and {max(hi, lo + 1) * dt:.6g}", field="deltas")
        grids.append(dataclasses.replace(base_grid, delta=d, m=m))
    classical = classical_qvi_solve(spec, base_grid)
    gaps, fields = [], []
    for d, grid in zip(deltas, grids):
        sub = dataclasses.replace(spec, delta=d)
        f = solve(sub, grid)
        gap = float(np.max(np.abs(f.stacked()[0] - classical.values[0][None, :])))
        gaps.append(gap)
        log.info("delta=%.6g sup-gap=%.6g", d, gap)
        if keep_fields:
            fields.append(f)
    rate = math.nan
    if len(deltas) >= 2 and all(g > 0 for g in gaps):
        rate = float(np.polyfit(np.log(deltas), np.log(gaps), 1)[0])
    return LimitStudy(deltas, gaps, rate, classical, fields)


# --------------------------------------------------------------------------
# quadratic convolutions

def _sup_axis(a: np.ndarray, axis: int, h: float, gamma: float, radius: int) -> np.ndarray:
    out = a.copy()
    n = a.shape[axis]
    for d in range(1, min(radius, n - 1) + 1):
        pen = (d * h) ** 2 / (2.0 * gamma**2)
        lo = [slice(None)] * a.ndim
        hi = [slice(None)] * a.ndim
        lo[axis], hi[axis] = slice(0, n - d), slice(d, n)
        lo, hi = tuple(lo), tuple(hi)
        np.maximum(out[lo], a[hi] - pen, out=out[lo])
        np.maximum(out[hi], a[lo] - pen, out=out[hi])
    return out


def _field_axes(field: ValueField) -> tuple[np.ndarray, tuple[float, float, float]]:
    g = field.grid
    return field.stacked(), (g.dt, g.dt, g.dx)


def _rewrap(field: ValueField, arr: np.ndarray, gamma: float, kind: str) -> ValueField:
    meta = dict(field.meta, convolution=kind, gamma=gamma)
    return ValueField(field.grid, arr[:, -1].copy(), arr[:, :-1].copy(), meta)


def _check_gamma(gamma: float) -> None:
    if not 0.0 < gamma < 1.0:
        raise ConfigError(f"gamma must lie in (0, 1), got {gamma}", field="gamma")


def sup_convolution(field: ValueField | np.ndarray, gamma: float, spacing=None):
    """max over nodes z' of v(z') - |z - z'|^2 / (2 gamma^2), z = (t, r ^ delta, x).

    The penalty is a sum over axes, so the maximum is taken one axis at a
    time. Nodes farther than gamma*sqrt(2*osc(v)) along an axis can never
    beat z' = z and are skipped.
    """
    _check_gamma(gamma)
    if isinstance(field, ValueField):
        arr, spacing = _field_axes(field)
    else:
        arr = np.asarray(field, dtype=float)
        if spacing is None or len(spacing) != arr.ndim:
            raise ConfigError("array input needs one spacing per axis", field="spacing")
    osc = float(np.max(arr) - np.min(arr))
    out = arr
    for axis, h in enumerate(spacing):
        radius = int(math.floor(gamma * math.sqrt(2.0 * osc) / h)) if osc > 0 else 0
        out = _sup_axis(out, axis, h, gamma, radius)
    if isinstance(field, ValueField):
        return _rewrap(field, out, gamma, "sup")
    return out


def inf_convolution(field: ValueField | np.ndarray, gamma: float, spacing=None):
    """min over nodes z' of v(z') + |z - z'|^2 / (2 gamma^2)."""
    if isinstance(field, ValueField):
        _check_gamma(gamma)
        arr, spacing = _field_axes(field)
        return _rewrap(field, -sup_convolution(-arr, gamma, spacing), gamma, "inf")
    return -sup_convolution(-np.asarray(field, dtype=float), gamma, spacing)


def semiconvexity_margin(arr: np.ndarray, spacing, gamma: float, slack: float = 1.01) -> float:
    """min over axes and nodes of D2 v + slack*h^2/gamma^2; nonnegative means the bound holds."""
    worst = math.inf
    for axis, h in enumerate(spacing):
        if arr.shape[axis] < 3:
            continue
        d2 = np.diff(arr, n=2, axis=axis)
        worst = min(worst, float(np.min(d2)) + slack * h**2 / gamma**2)
    return worst


# --------------------------------------------------------------------------
# continuity moduli

def _quotient(a: np.ndarray, axis: int, stride: int, step: float, power: float) -> float:
    n = a.shape[axis]
    if stride >= n:
        return 0.0
    diff = np.abs(np.take(a, range(stride, n), axis=axis) - np.take(a, range(0, n - stride), axis=axis))
    return float(np.max(diff)) / (stride * step) ** power


def _doubling(limit: int) -> list[int]:
    out, s = [], 1
    while s <= limit:
        out.append(s)
        s *= 2
    if limit >= 1 and out[-1] != limit:
        out.append(limit)
    return out


def continuity_moduli(field: ValueField) -> dict[str, Any]:
    """Largest difference quotients over node pairs.

    x: |dV|/|dx| at strides 1 and 2. t: |dV|/|dt|^(1/2), separately for
    strides with stride*dt <= delta and for doubling strides over the whole
    horizon. r: |dV|/|d(r ^ delta)|^(1/2) along the elapsed-time axis.
    """
    g = field.grid
    v = field.stacked()
    local = _doubling(g.m)
    glob = _doubling(g.n_t)
    return {
        "x_lipschitz": max(_quotient(v, 2, s, g.dx, 1.0) for s in (1, 2)),
        "t_holder_local": max(_quotient(v, 0, s, g.dt, 0.5) for s in local),
        "t_holder_global": max(_quotient(v, 0, s, g.dt, 0.5) for s in glob),
        "r_holder": max(_quotient(v, 1, s, g.dt, 0.5) for s in _doubling(g.m)),
        "strides": {"x": [1, 2], "t_local": local, "t_global": glob, "r": _doubling(g.m)},
        "grid": g.to_dict(),
    }


def shared_node_change(coarse: ValueField, fine: ValueField) -> float:
    """sup |V_fine - V_coarse| over the coarse nodes (t, r ^ delta, x)."""
    g = coarse.grid
    t, r, x = np.meshgrid(g.t, g.r, g.x, indexing="ij")
    return float(np.max(np.abs(interpolate(fine, t, r, x) - coarse.stacked())))
