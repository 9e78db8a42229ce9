"""Quadrature rules on the reference triangle (0,0), (1,0), (0,1).

Weights sum to the reference area 1/2.
"""
from dataclasses import dataclass
from functools import lru_cache
from math import ceil, sqrt

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@dataclass(frozen=True)
class TriangleRule:
    points: np.ndarray  # (Q, 2) reference coordinates
    weights: np.ndarray  # (Q,)
    degree: int

    @property
    def size(self):
        return len(self.weights)


@lru_cache(maxsize=None)
def symmetric7():
    """Seven-point symmetric rule, exact for total degree 5."""
    s15 = sqrt(15.0)
    a1 = (6.0 - s15) / 21.0
    b1 = (9.0 + 2.0 * s15) / 21.0
    a2 = (6.0 + s15) / 21.0
    b2 = (9.0 - 2.0 * s15) / 21.0
    w0 = 9.0 / 40.0
    w1 = (155.0 - s15) / 1200.0
    w2 = (155.0 + s15) / 1200.0
    bary = [
        (1 / 3, 1 / 3, 1 / 3, w0),
        (a1, a1, b1, w1), (a1, b1, a1, w1), (b1, a1, a1, w1),
        (a2, a2, b2, w2), (a2, b2, a2, w2), (b2, a2, a2, w2),
    ]
    pts = np.array([[l1, l2] for _, l1, l2, _ in bary])
    wts = 0.5 * np.array([w for *_, w in bary])
    return TriangleRule(pts, wts, 5)


@lru_cache(maxsize=None)
def collapsed_gauss(degree):
    """Conical product (Duffy-collapsed Gauss) rule exact for total ``degree``.

    Used as an independent high-order reference for the fixed symmetric rule.
    """
    n = max(1, ceil((degree + 1) / 2))
    s, ws = roots_jacobi(n, 1.0, 0.0)  # weight (1 - s) on [-1, 1]
    t, wt = roots_legendre(n)
    u = 0.5 * (1.0 + s)
    v = 0.5 * (1.0 + t)
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(0.25 * ws, 0.5 * wt)
    pts = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
    return TriangleRule(pts, W.ravel(), degree)


def default_rule():
    return symmetric7()
