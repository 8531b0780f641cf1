"""Discretization of (t, r, x) and storage of solved value fields.

The elapsed-time axis only carries nodes r_j = j*dt for j < m = delta/dt;
every r >= delta collapses onto the free layer ``v0``. Queries are
multilinear in (t, min(r, delta), x) and clamp to the stored box.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError, MissingArtifactError
from .model import ProblemSpec

log = logging.getLogger(__name__)

FIELD_FORMAT = "lagqvi-field-v1"
_SNAP = 1e-9


@dataclass(frozen=True)
class Grid:
    T: float
    delta: float
    n_t: int
    m: int
    n_x: int
    x_lo: float
    x_hi: float
    cfl_number: float = 0.0

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / self.n_x

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_t + 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.n_x + 1)

    @property
    def r(self) -> np.ndarray:
        """Elapsed-time nodes including the collapsed layer r = delta (index m)."""
        return np.arange(self.m + 1) * self.dt

    def to_dict(self) -> dict[str, Any]:
        return {"T": self.T, "delta": self.delta, "n_t": self.n_t, "m": self.m,
                "n_x": self.n_x, "x_lo": self.x_lo, "x_hi": self.x_hi}


def _admissible_n_t(ratio: float, n_t: int) -> tuple[int, int]:
    q = Fraction(ratio).limit_denominator(10_000).denominator
    below = max(q, (n_t // q) * q)
    return below, below + q


def cfl_number(spec: ProblemSpec, n_t: int, n_x: int, x_lo: float, x_hi: float) -> tuple[float, float]:
    """Return (dt * (max sigma^2/dx^2 + max|b|/dx), the max stable dt at number 1)."""
    dt = spec.T / n_t
    dx = (x_hi - x_lo) / n_x
    tt, xx = np.meshgrid(np.linspace(0.0, spec.T, n_t + 1), np.linspace(x_lo, x_hi, n_x + 1), indexing="ij")
    rate = float(np.max(spec.sigma(tt, xx) ** 2)) / dx**2 + float(np.max(np.abs(spec.b(tt, xx)))) / dx
    return dt * rate, (math.inf if rate == 0 else 1.0 / rate)


def build_grid(spec: ProblemSpec, n_t: int, n_x: int, x_lo: float, x_hi: float,
               cfl_margin: float = 0.05) -> Grid:
    if n_t < 1 or n_x < 2:
        raise ConfigError("need n_t >= 1 and n_x >= 2", field="grid")
    if not x_lo < x_hi:
        raise ConfigError("need x_lo < x_hi", field="grid")
    if not 0.0 <= cfl_margin < 1.0:
        raise ConfigError("cfl_margin must lie in [0, 1)", field="cfl_margin")
    ratio = spec.delta / spec.T
    m_real = ratio * n_t
    m = round(m_real)
    if abs(m_real - m) > _SNAP or m < 1:
        lo, hi = _admissible_n_t(ratio, n_t)
        raise ConfigError(
            f"lag not commensurate: delta*n_t/T = {m_real:.6g} is not an integer; "
            f"nearest admissible n_t are {lo} and {hi}",
            field="n_t",
        )
    number, stable = cfl_number(spec, n_t, n_x, x_lo, x_hi)
    if number > 1.0 - cfl_margin:
        raise ConfigError(
            f"CFL violated: dt*(sigma^2/dx^2 + |b|/dx) = {number:.4g} > {1 - cfl_margin:.4g}; "
            f"max stable dt is {stable * (1 - cfl_margin):.6g} (requested {spec.T / n_t:.6g})",
            field="n_t",
        )
    return Grid(spec.T, spec.delta, n_t, m, n_x, float(x_lo), float(x_hi), number)


def recommended_bounds(spec: ProblemSpec, x_min: float, x_max: float) -> tuple[float, float]:
    """State window around the initial states of interest with a 4*L*sqrt(T) buffer."""
    pad = 4.0 * spec.L * math.sqrt(spec.T)
    return x_min - pad, x_max + pad


@dataclass
class ValueField:
    """Solved values on the grid.

    ``v0[k, i]`` is the free layer V(t_k, delta, x_i); ``v_lag[k, j, i]`` is
    V(t_k, j*dt, x_i) for j < m.
    """

    grid: Grid
    v0: np.ndarray
    v_lag: np.ndarray
    meta: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def empty(cls, grid: Grid, meta: dict[str, Any] | None = None) -> ValueField:
        shape = (grid.n_t + 1, grid.n_x + 1)
        return cls(grid, np.full(shape, np.nan), np.full((grid.n_t + 1, grid.m, grid.n_x + 1), np.nan),
                   dict(meta or {}))

    def layer(self, j: int) -> np.ndarray:
        """(n_t+1, n_x+1) slab at r-index j, with j >= m meaning v0."""
        return self.v0 if j >= self.grid.m else self.v_lag[:, j]

    def stacked(self) -> np.ndarray:
        """All layers as one (n_t+1, m+1, n_x+1) array, v0 last."""
        return np.concatenate([self.v_lag, self.v0[:, None, :]], axis=1)

    def node(self, k, j, i):
        k, j, i = np.broadcast_arrays(np.asarray(k), np.asarray(j), np.asarray(i))
        m = self.grid.m
        lag = self.v_lag[k, np.minimum(j, m - 1), i]
        return np.where(j >= m, self.v0[k, i], lag)


def _locate(s: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    near = np.round(s)
    s = np.where(np.abs(s - near) < _SNAP, near, s)
    k0 = np.clip(np.floor(s), 0, max(n - 1, 0)).astype(int)
    w = np.clip(s - k0, 0.0, 1.0)
    return k0, w


def _lerp(a, b, w):
    # convex form: exact at w in {0, 1} and monotone in (a, b)
    return (1.0 - w) * a + w * b


def interpolate(field: ValueField, t, r, x):
    """Multilinear value at (t, min(r, delta), x); inputs broadcast, clamped to the box."""
    g = field.grid
    t = np.clip(np.asarray(t, dtype=float), 0.0, g.T)
    r = np.clip(np.asarray(r, dtype=float), 0.0, g.delta)
    x = np.clip(np.asarray(x, dtype=float), g.x_lo, g.x_hi)
    k, wt = _locate(t / g.dt, g.n_t)
    j, wr = _locate(r / g.dt, g.m)
    i, wx = _locate((x - g.x_lo) / g.dx, g.n_x)

    def plane(kk):
        def row(jj):
            return _lerp(field.node(kk, jj, i), field.node(kk, jj, i + 1), wx)
        return _lerp(row(j), row(j + 1), wr)

    out = _lerp(plane(k), plane(k + 1), wt)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# persistence

def _write_csv(path: Path, t: np.ndarray, x: np.ndarray, values: np.ndarray) -> None:
    tt, xx = np.meshgrid(t, x, indexing="ij")
    table = np.column_stack([tt.ravel(), xx.ravel(), values.ravel()])
    np.savetxt(path, table, fmt="%.17g", delimiter=",", header="t,x,value", comments="")


def _read_csv(path: Path, shape: tuple[int, int]) -> np.ndarray:
    if not path.exists():
        raise MissingArtifactError(f"missing field layer {path}")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if table.shape != (shape[0] * shape[1], 3):
        raise MissingArtifactError(f"{path} has unexpected shape {table.shape}")
    return table[:, 2].reshape(shape)


def save_field(field: ValueField, directory: str | Path, spec_hash: str) -> Path:
    """Write the manifest plus one CSV per r-layer and one for v0."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    g = field.grid
    t, x = g.t, g.x
    layers = []
    for j in range(g.m):
        name = f"layer_r{j:04d}.csv"
        _write_csv(d / name, t, x, field.v_lag[:, j])
        layers.append(name)
    _write_csv(d / "v0.csv", t, x, field.v0)
    manifest = {"format": FIELD_FORMAT, "spec_hash": spec_hash, **g.to_dict(),
                "v0": "v0.csv", "layers": layers, "meta": field.meta}
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_field(directory: str | Path) -> tuple[ValueField, dict[str, Any]]:
    d = Path(directory)
    path = d / "manifest.json" if d.is_dir() or not d.suffix else d
    if not path.exists():
        raise MissingArtifactError(f"no field manifest at {path}")
    manifest = json.loads(path.read_text())
    base = path.parent
    g = Grid(manifest["T"], manifest["delta"], manifest["n_t"], manifest["m"], manifest["n_x"],
             manifest["x_lo"], manifest["x_hi"])
    shape = (g.n_t + 1, g.n_x + 1)
    v0 = _read_csv(base / manifest["v0"], shape)
    v_lag = np.stack([_read_csv(base / name, shape) for name in manifest["layers"]], axis=1)
    return ValueField(g, v0, v_lag.reshape(g.n_t + 1, g.m, g.n_x + 1), manifest.get("meta", {})), manifest
