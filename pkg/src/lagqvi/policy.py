"""Impulse policy read off a solved field, and impulse schedules.

A free-layer node is active when its value has reached the intervention
value (up to ``tol``); the stored impulse there is the intervention argmin.
The terminal row uses the terminal minimization, where impulses are allowed
whatever the elapsed time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .grid import Grid, ValueField
from .hjb import Operators, obstacle_rows, residuals
from .model import ProblemSpec

_EPS = 1e-9


@dataclass(frozen=True)
class Action:
    kind: str  # "wait" or "impulse"
    xi: float = 0.0

    @property
    def is_impulse(self) -> bool:
        return self.kind == "impulse"


WAIT = Action("wait")


@dataclass
class PolicyTable:
    grid: Grid
    act: np.ndarray
    xi_star: np.ndarray
    tol: float

    def node(self, t, x, terminal=None) -> tuple[np.ndarray, np.ndarray]:
        """Nearest (t_k, x_i) indices; non-terminal queries never map onto the terminal row."""
        g = self.grid
        t = np.asarray(t, dtype=float)
        if terminal is None:
            terminal = t >= g.T - _EPS
        k = np.clip(np.rint(t / g.dt), 0, g.n_t - 1).astype(int)
        k = np.where(terminal, g.n_t, k)
        i = np.clip(np.rint((np.asarray(x, dtype=float) - g.x_lo) / g.dx), 0, g.n_x).astype(int)
        return k, i

    def propose(self, t: float, r: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Vectorized decide at a common time: impulse sizes, 0 meaning wait."""
        g = self.grid
        terminal = t >= g.T - _EPS
        k, i = self.node(t, x, terminal)
        fire = self.act[k, i]
        if not terminal:
            fire = fire & (np.asarray(r) >= g.delta - _EPS)
        return np.where(fire, self.xi_star[k, i], 0.0)

    def to_csv(self, path: str | Path) -> None:
        g = self.grid
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "act", "xi_star"])
            for k, t in enumerate(g.t):
                for i, x in enumerate(g.x):
                    xi = self.xi_star[k, i]
                    w.writerow([f"{t:.17g}", f"{x:.17g}", int(self.act[k, i]),
                                "" if np.isnan(xi) else f"{xi:.17g}"])


def extract_policy(field: ValueField, spec: ProblemSpec, grid: Grid | None = None,
                   tol: float | None = None) -> PolicyTable:
    """Active set and impulse sizes; ``tol`` defaults to 10*pde residual + 1e-10."""
    grid = grid or field.grid
    if tol is None:
        tol = 10.0 * residuals(field, spec, grid).pde_residual_sup + 1e-10
    if not tol > 0:
        raise ConfigError("policy tolerance must be positive", field="tol")
    ops = Operators(spec, grid)
    obstacle, xi = obstacle_rows(field, spec, ops)
    obstacle[-1], xi[-1] = ops.intervene(grid.n_t, spec.h(grid.x))
    act = field.v0 >= obstacle - tol
    return PolicyTable(grid, act, np.where(act, xi, np.nan), float(tol))


def decide(policy: PolicyTable, t: float, r: float, x: float) -> Action:
    g = policy.grid
    terminal = t >= g.T - _EPS
    if r < g.delta - _EPS and not terminal:
        return WAIT
    xi = float(policy.propose(t, np.array([r]), np.array([x]))[0])
    return Action("impulse", xi) if xi != 0.0 else WAIT


@dataclass
class ImpulseSchedule:
    """Deterministic impulses (tau_i, xi_i) ordered by time."""

    impulses: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.impulses = sorted(((float(t), float(x)) for t, x in self.impulses), key=lambda p: p[0])

    def __len__(self) -> int:
        return len(self.impulses)

    @property
    def times(self) -> list[float]:
        return [t for t, _ in self.impulses]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau", "xi"])
            for t, x in self.impulses:
                w.writerow([f"{t:.17g}", f"{x:.17g}"])

    @classmethod
    def from_csv(cls, path: str | Path) -> ImpulseSchedule:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        try:
            return cls([(float(r["tau"]), float(r["xi"])) for r in rows])
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"schedule CSV {path}: {exc}", field="schedule") from exc


def impulse_count_bound(T: float, delta: float) -> int:
    """Most impulses strictly before T that respect the lag."""
    return int(np.floor(T / delta + _EPS)) + 1
