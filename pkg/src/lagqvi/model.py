"""Problem instances: coefficient registry, impulse cost, cone, and sampled
checks of the standing Lipschitz/boundedness/coercivity assumptions.

Coefficients are picked from a closed registry of parametric families so a
problem round-trips through JSON. Every family is vectorized over ``t`` and
``x``; the terminal cost ``h`` ignores ``t``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigError

FAMILIES = ("constant", "affine-clamped", "sinusoidal-bounded", "custom-table")
C0_FAMILIES = ("constant", "affine", "custom-table")
CONE_DIRECTIONS = ("nonnegative", "nonpositive", "full-line")
PROBLEM_KEYS = {
    "T", "delta", "L", "ell0", "alpha", "drift", "vol", "running", "terminal",
    "impulse_cost", "cone",
}


def _table(params: tuple[float, ...], what: str) -> tuple[np.ndarray, np.ndarray]:
    if len(params) < 2 or len(params) % 2:
        raise ConfigError(f"{what}: custom-table needs (x, value) pairs", field=what)
    arr = np.asarray(params, dtype=float).reshape(-1, 2)
    xs, vs = arr[:, 0], arr[:, 1]
    if np.any(np.diff(xs) <= 0):
        raise ConfigError(f"{what}: custom-table abscissae must increase strictly", field=what)
    return xs, vs


@dataclass(frozen=True)
class CoefficientRef:
    """One of the registered coefficient families.

    ``constant``            [c]
    ``affine-clamped``      [a0, a1] or [a0, a1, a2] -> clip(a0 + a1*x + a2*t, -L, L)
    ``sinusoidal-bounded``  [c, a, k] or [c, a, k, w, phase] -> c + a*sin(k*x + w*t + phase)
    ``custom-table``        [x1, v1, x2, v2, ...], piecewise linear in x, flat outside
    """

    family: str
    params: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        n = len(self.params)
        ok = {
            "constant": n == 1,
            "affine-clamped": n in (2, 3),
            "sinusoidal-bounded": n in (3, 5),
            "custom-table": n >= 2 and n % 2 == 0,
        }
        if self.family not in ok:
            raise ConfigError(f"unknown coefficient family {self.family!r}", field="family")
        if not ok[self.family]:
            raise ConfigError(f"wrong parameter count {n} for family {self.family}", field="params")
        if not all(math.isfinite(p) for p in self.params):
            raise ConfigError("coefficient parameters must be finite", field="params")
        if self.family == "custom-table":
            _table(self.params, "custom-table")

    def __call__(self, t, x, bound: float) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.family == "constant":
            return np.full(np.broadcast(t, x).shape, p[0])
        if self.family == "affine-clamped":
            a2 = p[2] if len(p) == 3 else 0.0
            return np.clip(p[0] + p[1] * x + a2 * t, -bound, bound)
        if self.family == "sinusoidal-bounded":
            w, phase = (p[3], p[4]) if len(p) == 5 else (0.0, 0.0)
            return p[0] + p[1] * np.sin(p[2] * x + w * t + phase)
        xs, vs = _table(p, "custom-table")
        return np.interp(x, xs, vs) + np.zeros_like(t)

    def lipschitz_bound(self) -> float:
        """Lipschitz constant in x guaranteed by the family's construction."""
        p = self.params
        if self.family == "constant":
            return 0.0
        if self.family == "affine-clamped":
            return abs(p[1])
        if self.family == "sinusoidal-bounded":
            return abs(p[1] * p[2])
        xs, vs = _table(p, "custom-table")
        return float(np.max(np.abs(np.diff(vs) / np.diff(xs)), initial=0.0))

    def sup_bound(self, bound: float) -> float:
        p = self.params
        if self.family == "constant":
            return abs(p[0])
        if self.family == "affine-clamped":
            return bound
        if self.family == "sinusoidal-bounded":
            return abs(p[0]) + abs(p[1])
        return float(np.max(np.abs(_table(p, "custom-table")[1])))

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, "params": list(self.params)}

    @classmethod
    def from_dict(cls, doc: Any, what: str = "coefficient") -> CoefficientRef:
        if not isinstance(doc, dict) or set(doc) != {"family", "params"}:
            raise ConfigError(f"{what}: expected exactly {{family, params}}", field=what)
        try:
            return cls(doc["family"], tuple(doc["params"]))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise ConfigError(f"{what}: {exc}", field=what) from exc
            raise ConfigError(f"{what}: bad params ({exc})", field=what) from exc


@dataclass(frozen=True)
class ImpulseCostSpec:
    """Impulse cost ``c(t) + alpha*|xi|`` with a base-cost schedule ``c``.

    ``c0_family`` is ``constant`` [c], ``affine`` [c, slope] (c + slope*t) or
    ``custom-table`` [(t, c) pairs].
    """

    c0_family: str
    c0_params: tuple[float, ...]
    alpha: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "c0_params", tuple(float(p) for p in self.c0_params))
        counts = {"constant": (1,), "affine": (2,)}
        if self.c0_family not in C0_FAMILIES:
            raise ConfigError(f"unknown c0 family {self.c0_family!r}", field="c0_family")
        if self.c0_family == "custom-table":
            _table(self.c0_params, "c0_params")
        elif len(self.c0_params) not in counts[self.c0_family]:
            raise ConfigError(f"wrong c0 parameter count for {self.c0_family}", field="c0_params")
        if not math.isfinite(self.alpha) or self.alpha < 0:
            raise ConfigError("impulse_cost.alpha must be finite and >= 0", field="impulse_cost.alpha")

    def base(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        p = self.c0_params
        if self.c0_family == "constant":
            return np.full(t.shape, p[0])
        if self.c0_family == "affine":
            return p[0] + p[1] * t
        xs, vs = _table(p, "c0_params")
        return np.interp(t, xs, vs)

    def __call__(self, t, xi) -> np.ndarray:
        return self.base(t) + self.alpha * np.abs(np.asarray(xi, dtype=float))

    def to_dict(self) -> dict[str, Any]:
        return {"c0_family": self.c0_family, "c0_params": list(self.c0_params), "alpha": self.alpha}


@dataclass(frozen=True)
class ConeSpec:
    direction: str = "full-line"

    def __post_init__(self) -> None:
        if self.direction not in CONE_DIRECTIONS:
            raise ConfigError(f"unknown cone direction {self.direction!r}", field="cone.direction")

    def contains(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        if self.direction == "nonnegative":
            return xi >= 0
        if self.direction == "nonpositive":
            return xi <= 0
        return np.isfinite(xi)

    def allows_sign(self, sign: int) -> bool:
        """Whether nonzero impulses of the given sign (+1/-1) lie in the cone."""
        return (self.direction == "full-line" or (sign > 0 and self.direction == "nonnegative")
                or (sign < 0 and self.direction == "nonpositive"))


@dataclass(frozen=True)
class ProblemSpec:
    T: float
    delta: float
    drift: CoefficientRef
    vol: CoefficientRef
    running: CoefficientRef
    terminal: CoefficientRef
    impulse_cost: ImpulseCostSpec
    cone: ConeSpec = field(default_factory=ConeSpec)
    L: float = 1.0
    ell0: float = 0.1
    alpha: float = 0.5
    dim: int = 1

    def __post_init__(self) -> None:
        for name in ("T", "delta", "L", "ell0", "alpha"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ConfigError(f"{name} must be a finite number", field=name)
        if self.T <= 0:
            raise ConfigError("T must be positive", field="T")
        if not 0 < self.delta < self.T:
            raise ConfigError(f"delta must lie in (0, T), got {self.delta}", field="delta")
        if self.L <= 0:
            raise ConfigError("L must be positive", field="L")
        # zero is accepted here and reported by the coercivity clause instead
        if self.ell0 < 0:
            raise ConfigError("ell0 must be nonnegative", field="ell0")
        if self.alpha < 0:
            raise ConfigError("alpha must be nonnegative", field="alpha")
        if self.dim != 1:
            raise ConfigError("only dim = 1 is supported", field="dim")

    # coefficient shorthands, all vectorized
    def b(self, t, x):
        return self.drift(t, x, self.L)

    def sigma(self, t, x):
        return self.vol(t, x, self.L)

    def g(self, t, x):
        return self.running(t, x, self.L)

    def h(self, x):
        return self.terminal(0.0, x, self.L)

    def ell(self, t, xi):
        return self.impulse_cost(t, xi)

    @property
    def value_bound(self) -> float:
        """The a-priori bound L(T+1) on |V|."""
        return self.L * (self.T + 1.0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "T": self.T, "delta": self.delta, "L": self.L, "ell0": self.ell0, "alpha": self.alpha,
            "drift": self.drift.to_dict(), "vol": self.vol.to_dict(),
            "running": self.running.to_dict(), "terminal": self.terminal.to_dict(),
            "impulse_cost": self.impulse_cost.to_dict(),
            "cone": {"direction": self.cone.direction},
        }

    @classmethod
    def from_dict(cls, doc: Any) -> ProblemSpec:
        if not isinstance(doc, dict):
            raise ConfigError("problem document must be a JSON object", field="problem")
        missing = PROBLEM_KEYS - set(doc)
        extra = set(doc) - PROBLEM_KEYS
        if missing or extra:
            raise ConfigError(
                f"problem document keys mismatch: missing={sorted(missing)} unexpected={sorted(extra)}",
                field="problem",
            )
        ic = doc["impulse_cost"]
        if not isinstance(ic, dict) or set(ic) != {"c0_family", "c0_params", "alpha"}:
            raise ConfigError("impulse_cost: expected {c0_family, c0_params, alpha}", field="impulse_cost")
        cone = doc["cone"]
        if not isinstance(cone, dict) or set(cone) != {"direction"}:
            raise ConfigError("cone: expected {direction}", field="cone")
        try:
            impulse = ImpulseCostSpec(ic["c0_family"], tuple(ic["c0_params"]), float(ic["alpha"]))
            return cls(
                T=float(doc["T"]), delta=float(doc["delta"]),
                drift=CoefficientRef.from_dict(doc["drift"], "drift"),
                vol=CoefficientRef.from_dict(doc["vol"], "vol"),
                running=CoefficientRef.from_dict(doc["running"], "running"),
                terminal=CoefficientRef.from_dict(doc["terminal"], "terminal"),
                impulse_cost=impulse, cone=ConeSpec(cone["direction"]),
                L=float(doc["L"]), ell0=float(doc["ell0"]), alpha=float(doc["alpha"]),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"problem document: {exc}", field="problem") from exc

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def hamiltonian(spec: ProblemSpec, t, x, p, P):
    """``b*p + sigma^2*P/2 + g`` (the dim-1 form of <b,p> + tr[s^T P s]/2 + g)."""
    sig = spec.sigma(t, x)
    return spec.b(t, x) * p + 0.5 * sig * sig * P + spec.g(t, x)


# --------------------------------------------------------------------------
# hypothesis validation

@dataclass
class ClauseResult:
    name: str
    passed: bool
    worst: float
    limit: float
    witness: dict[str, float] | None = None

    @property
    def ratio(self) -> float:
        return self.worst / self.limit if self.limit else math.inf

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "passed": self.passed, "worst": self.worst,
                "limit": self.limit, "witness": self.witness}


@dataclass
class ValidationReport:
    clauses: list[ClauseResult]
    n_samples: int
    seed: int

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses)

    def failed(self) -> list[str]:
        return [c.name for c in self.clauses if not c.passed]

    def clause(self, name: str) -> ClauseResult:
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {"passed": self.passed, "n_samples": self.n_samples, "seed": self.seed,
                "clauses": [c.to_dict() for c in self.clauses]}


def _worst(name, values, limit, points, strict=False) -> ClauseResult:
    i = int(np.argmax(values))
    worst = float(values[i])
    passed = worst < limit if strict else worst <= limit * (1 + 1e-12)
    witness = None if passed else {k: float(v[i]) for k, v in points.items()}
    return ClauseResult(name, passed, worst, limit, witness)


def _sample_impulses(rng, cone: ConeSpec, n: int, max_mag: float) -> np.ndarray:
    mag = np.exp(rng.uniform(np.log(1e-3), np.log(max_mag), n))
    if cone.direction == "nonnegative":
        return mag
    if cone.direction == "nonpositive":
        return -mag
    return mag * rng.choice([-1.0, 1.0], n)


def validate_hypotheses(spec: ProblemSpec, n_samples: int = 1000, seed: int = 0,
                        x_range: float = 10.0, xi_max: float = 1e4) -> ValidationReport:
    """Sample the boundedness, Lipschitz and impulse-cost conditions.

    Points are drawn half uniformly on [-x_range, x_range] and half from a
    standard normal so that narrow features near the origin are hit.
    """
    if n_samples < 100:
        raise ConfigError("n_samples must be >= 100", field="n_samples")
    rng = np.random.default_rng(seed)
    n = n_samples
    T, L = spec.T, spec.L
    t = rng.uniform(0.0, T, n)
    x = np.concatenate([rng.uniform(-x_range, x_range, n - n // 2), rng.standard_normal(n // 2)])
    step = np.exp(rng.uniform(np.log(1e-4), np.log(2.0), n)) * rng.choice([-1.0, 1.0], n)
    xh = x + step
    pts = {"t": t, "x": x}
    pair = {"t": t, "x": x, "x_hat": xh}

    b, bh = spec.b(t, x), spec.b(t, xh)
    s, sh = spec.sigma(t, x), spec.sigma(t, xh)
    g, gh = spec.g(t, x), spec.g(t, xh)
    h, hh = spec.h(x), spec.h(xh)
    dx = np.abs(xh - x)

    clauses = [
        _worst("drift_vol_bound", np.abs(b) + np.abs(s), L, pts),
        _worst("drift_vol_lipschitz", (np.abs(b - bh) + np.abs(s - sh)) / dx, L, pair),
        _worst("cost_bound", np.abs(g) + np.abs(h), L, pts),
        _worst("cost_lipschitz", (np.abs(g - gh) + np.abs(h - hh)) / dx, L, pair),
    ]

    xi = _sample_impulses(rng, spec.cone, n, xi_max)
    xi2 = _sample_impulses(rng, spec.cone, n, xi_max)
    ell = spec.ell(t, xi)
    with np.errstate(divide="ignore", invalid="ignore"):
        coerc = np.where(ell > 0, (spec.ell0 + spec.alpha * np.abs(xi)) / ell, np.inf)
    coercive = _worst("coercivity", coerc, 1.0, {"t": t, "xi": xi})
    if spec.ell0 <= 0 or spec.alpha <= 0:
        coercive.passed = False
        coercive.witness = {"ell0": spec.ell0, "alpha": spec.alpha}
    clauses.append(coercive)

    t1 = rng.uniform(0.0, T, n)
    t2 = rng.uniform(0.0, T, n)
    lo, hi = np.minimum(t1, t2), np.maximum(t1, t2)
    clauses.append(_worst("time_monotone", spec.ell(hi, xi) - spec.ell(lo, xi), 0.0,
                          {"t": lo, "t_hat": hi, "xi": xi}))

    with np.errstate(divide="ignore", invalid="ignore"):
        sub = spec.ell(t, xi + xi2) / (spec.ell(t, xi) + spec.ell(t, xi2))
    clauses.append(_worst("subadditivity", sub, 1.0, {"t": t, "xi": xi, "xi_hat": xi2}, strict=True))
    return ValidationReport(clauses, n_samples, seed)
