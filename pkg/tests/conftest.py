import numpy as np
import pytest

from egn.system import AtomicSystem

EPS = np.finfo(np.float64).eps


def fd_allowance(value_scale: float, h: float) -> float:
    """Roundoff bound of a central difference of values of this magnitude.

    The subtraction (f(x+h) - f(x-h)) resolves at best a few ulps of f, so
    a finite-difference oracle cannot certify gradients below this scale.
    """
    return 64.0 * EPS * max(value_scale, 1.0) / h


def rel_err(approx, exact, floor=1e-8):
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(approx), np.abs(exact)), floor)
    return np.abs(approx - exact) / denom


def dimer(distance: float, z=(1, 1)) -> AtomicSystem:
    pos = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, distance]])
    return AtomicSystem(pos, np.array(z, dtype=np.int64))


def collinear_chain(spacing: float = 1.0, n: int = 3) -> AtomicSystem:
    pos = np.zeros((n, 3))
    pos[:, 2] = spacing * np.arange(n)
    return AtomicSystem(pos, np.full(n, 6, dtype=np.int64))


def equilateral_triangle(side: float = 1.0) -> AtomicSystem:
    pos = np.array(
        [[0.0, 0.0, 0.0], [side, 0.0, 0.0], [side / 2, side * np.sqrt(3) / 2, 0.0]]
    )
    return AtomicSystem(pos, np.array([6, 6, 6], dtype=np.int64))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
