"""Reference problem instances used by the tests, configs and the CLI.

A: every coefficient zero, impulse cost 0.1 + 0.5|xi|. Nothing ever pays off.
B: frozen state (b = sigma = g = 0), h(x) = |x| on [-2, 2], upward impulses,
   impulse cost 0.1 + 0.5 xi. Value is the terminal minimization everywhere.
C: sigma = 0.5, drift 0.4 sin(x) pushing away from 0, running cost
   0.25(1 - cos x), terminal |x| capped at 0.5, two-sided impulses costing
   0.1 + 0.2|xi|. L = 1.25 covers the summed Lipschitz constant of g and h.
"""

from __future__ import annotations

import math

from .model import CoefficientRef, ConeSpec, ImpulseCostSpec, ProblemSpec

ZERO = CoefficientRef("constant", (0.0,))


def instance_a(T: float = 1.0, delta: float = 0.25) -> ProblemSpec:
    return ProblemSpec(
        T=T, delta=delta, drift=ZERO, vol=ZERO, running=ZERO, terminal=ZERO,
        impulse_cost=ImpulseCostSpec("constant", (0.1,), 0.5),
        cone=ConeSpec("full-line"), L=1.0, ell0=0.1, alpha=0.5,
    )


def instance_b(T: float = 1.0, delta: float = 0.25, cone: str = "nonnegative") -> ProblemSpec:
    return ProblemSpec(
        T=T, delta=delta, drift=ZERO, vol=ZERO, running=ZERO,
        terminal=CoefficientRef("custom-table", (-2.0, 2.0, 0.0, 0.0, 2.0, 2.0)),
        impulse_cost=ImpulseCostSpec("constant", (0.1,), 0.5),
        cone=ConeSpec(cone), L=2.0, ell0=0.1, alpha=0.5,
    )


def instance_c(T: float = 1.0, delta: float = 0.25, ell0: float = 0.1, sigma: float = 0.5) -> ProblemSpec:
    return ProblemSpec(
        T=T, delta=delta,
        drift=CoefficientRef("sinusoidal-bounded", (0.0, 0.4, 1.0)),
        vol=CoefficientRef("constant", (sigma,)),
        running=CoefficientRef("sinusoidal-bounded", (0.25, -0.25, 1.0, 0.0, math.pi / 2)),
        terminal=CoefficientRef("custom-table", (-0.5, 0.5, 0.0, 0.0, 0.5, 0.5)),
        impulse_cost=ImpulseCostSpec("constant", (ell0,), 0.2),
        cone=ConeSpec("full-line"), L=1.25, ell0=ell0, alpha=0.2,
    )


INSTANCES = {"A": instance_a, "B": instance_b, "C": instance_c}
