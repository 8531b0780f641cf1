from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lagqvi.grid import build_grid  # noqa: E402
from lagqvi.hjb import solve  # noqa: E402
from lagqvi.instances import instance_a, instance_b, instance_c  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def spec_a():
    return instance_a()


@pytest.fixture(scope="session")
def spec_b():
    return instance_b()


@pytest.fixture(scope="session")
def spec_c():
    return instance_c()


@pytest.fixture(scope="session")
def solved_a(spec_a):
    grid = build_grid(spec_a, 400, 201, -2.0, 2.0)
    return grid, solve(spec_a, grid)


@pytest.fixture(scope="session")
def solved_b(spec_b):
    grid = build_grid(spec_b, 100, 200, -2.0, 2.0)
    return grid, solve(spec_b, grid)


@pytest.fixture(scope="session")
def solved_c(spec_c):
    """Instance C at dt = 1/400, dx = 0.05."""
    grid = build_grid(spec_c, 400, 240, -6.0, 6.0)
    return grid, solve(spec_c, grid)


@pytest.fixture(scope="session")
def small_c(spec_c):
    grid = build_grid(spec_c, 40, 40, -4.0, 4.0)
    return grid, solve(spec_c, grid)
