"""
Quadrature rules on segments, triangles and tetrahedra

Rules are tensor Gauss rules collapsed onto the simplex (Duffy transform),
so all weights are positive and the exactness degree is guaranteed by
construction.
"""

from dataclasses import dataclass
from functools import lru_cache
from math import ceil, factorial
import logging

import numpy as np
from scipy import special

from app.core.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

MAX_DEGREE = 12

# reference measures of the unit simplices
REFERENCE_MEASURE = {1: 1.0, 2: 0.5, 3: 1.0 / 6.0}


@dataclass(frozen=True)
class QuadratureRule:
    """Points in reference coordinates and weights summing to the reference measure"""
    dim: int
    degree: int
    points: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return len(self.weights)


def _gauss_jacobi_01(npts: int, alpha: float):
    """Nodes/weights on [0,1] for the weight (1-s)^alpha"""
    t, w = special.roots_jacobi(npts, alpha, 0.0)
    s = 0.5 * (1.0 + t)
    return s, w / 2.0 ** (alpha + 1.0)


@lru_cache(maxsize=None)
def simplex_quadrature(dim: int, degree: int) -> QuadratureRule:
    """Quadrature on the reference simplex of dimension dim, exact up to degree"""
    if dim not in (1, 2, 3):
        raise ConfigurationError(f"Unsupported simplex dimension {dim}")
    if degree < 0 or degree > MAX_DEGREE:
        raise ConfigurationError(
            f"Quadrature degree {degree} outside the supported range 0..{MAX_DEGREE}",
            {"dim": dim, "degree": degree},
        )

    npts = max(1, int(ceil((degree + 1) / 2.0)))
    a, wa = _gauss_jacobi_01(npts, 0.0)

    if dim == 1:
        points = a[:, None]
        weights = wa
    elif dim == 2:
        b, wb = _gauss_jacobi_01(npts, 1.0)
        A, B = np.meshgrid(a, b, indexing="ij")
        WA, WB = np.meshgrid(wa, wb, indexing="ij")
        x = A * (1.0 - B)
        y = B
        points = np.column_stack([x.ravel(), y.ravel()])
        weights = (WA * WB).ravel()
    else:
        b, wb = _gauss_jacobi_01(npts, 1.0)
        c, wc = _gauss_jacobi_01(npts, 2.0)
        A, B, C = np.meshgrid(a, b, c, indexing="ij")
        WA, WB, WC = np.meshgrid(wa, wb, wc, indexing="ij")
        x = A * (1.0 - B) * (1.0 - C)
        y = B * (1.0 - C)
        z = C
        points = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
        weights = (WA * WB * WC).ravel()

    logger.debug(f"Built {dim}D quadrature of degree {degree} with {len(weights)} points")
    return QuadratureRule(dim=dim, degree=degree, points=points, weights=weights)


def map_to_cell(rule: QuadratureRule, vertices: np.ndarray):
    """Map a 3D reference rule onto a tetrahedron with vertices (4,3)"""
    B = (vertices[1:] - vertices[0]).T
    points = vertices[0] + rule.points @ B.T
    return points, rule.weights * abs(np.linalg.det(B))


def map_to_face(rule: QuadratureRule, vertices: np.ndarray):
    """Map a 2D reference rule onto triangles with vertices (..., 3, 3)"""
    a, b, c = vertices[..., 0, :], vertices[..., 1, :], vertices[..., 2, :]
    r = rule.points[:, 0]
    s = rule.points[:, 1]
    points = (a[..., None, :]
              + (b - a)[..., None, :] * r[:, None]
              + (c - a)[..., None, :] * s[:, None])
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=-1)
    weights = rule.weights * (2.0 * area)[..., None]
    return points, weights


def map_to_edge(rule: QuadratureRule, vertices: np.ndarray):
    """Map a 1D reference rule onto segments with vertices (..., 2, 3)"""
    a, b = vertices[..., 0, :], vertices[..., 1, :]
    t = rule.points[:, 0]
    points = a[..., None, :] + (b - a)[..., None, :] * t[:, None]
    length = np.linalg.norm(b - a, axis=-1)
    weights = rule.weights * length[..., None]
    return points, weights, t


def barycentric_monomial_integral(exponents, volume: float) -> float:
    """Closed form: int lambda^a = a1! a2! ... d! / (|a| + d)! * d! * volume"""
    exponents = tuple(int(e) for e in exponents)
    d = len(exponents) - 1
    numerator = np.prod([factorial(e) for e in exponents]) * factorial(d)
    return float(numerator) / factorial(sum(exponents) + d) * volume
