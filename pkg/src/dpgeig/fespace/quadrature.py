"""Quadrature on the reference triangle and the unit interval."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_DEGREE = 20


@dataclass(frozen=True)
class QuadratureRule:
    """Points in barycentric coordinates ``(l0, l1, l2)`` and weights.

    The weights sum to the reference area 1/2; ``points[:, 1:]`` are the
    Cartesian coordinates on the reference triangle (0,0), (1,0), (0,1).
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, 1:]

    def __len__(self):
        return len(self.weights)


@lru_cache(maxsize=None)
def quadrature(degree: int) -> QuadratureRule:
    """Collapsed Gauss-Jacobi rule exact for polynomials of total degree ``degree``.

    Uses the Duffy map x = (1+u)/2, y = (1+v)(1-x)/2 with a Gauss-Jacobi
    rule (weight 1-u) in u and Gauss-Legendre in v.
    """
    if not isinstance(degree, (int, np.integer)) or not 1 <= degree <= MAX_DEGREE:
        raise ValueError(f"quadrature degree must be an integer in [1, {MAX_DEGREE}], got {degree!r}")
    n = (degree + 2) // 2
    u, wu = roots_jacobi(n, 1.0, 0.0)
    v, wv = roots_legendre(n)
    x = 0.5 * (1.0 + u)
    X = np.repeat(x, n)
    Y = 0.5 * (1.0 + np.tile(v, n)) * (1.0 - X)
    W = np.outer(wu, wv).ravel() / 8.0
    pts = np.stack([1.0 - X - Y, X, Y], axis=1)
    pts.flags.writeable = False
    W.flags.writeable = False
    return QuadratureRule(pts, W, int(degree))


@lru_cache(maxsize=None)
def line_quadrature(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [0, 1], exact to ``degree``."""
    n = max(1, (degree + 2) // 2)
    s, w = roots_legendre(n)
    s = 0.5 * (s + 1.0)
    w = 0.5 * w
    s.flags.writeable = False
    w.flags.writeable = False
    return s, w


def edge_points(s: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of parameter ``s`` on each local edge.

    Returns an array of shape (3, len(s), 3); local edge ``e`` runs from
    vertex ``e+1`` to vertex ``e+2``.
    """
    out = np.zeros((3, len(s), 3))
    for e in range(3):
        out[e, :, (e + 1) % 3] = 1.0 - s
        out[e, :, (e + 2) % 3] = s
    return out
