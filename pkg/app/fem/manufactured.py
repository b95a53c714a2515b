"""
Manufactured solution of the quad-curl problem on the unit cube

    psi = sin^2(pi x) sin^2(pi y) sin^2(pi z),  u0 = curl(0, 0, psi),  f = curl curl u0

All derivatives are produced symbolically once and lambdified for numpy.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict
import logging

import numpy as np
import sympy as sp

from app.core.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

QUANTITIES = ("psi", "u0", "curl_u0", "grad_curl_u0", "f")

X, Y, Z = sp.symbols("x y z", real=True)
COORDS = (X, Y, Z)


def _curl(v):
    return sp.Matrix([
        sp.diff(v[2], Y) - sp.diff(v[1], Z),
        sp.diff(v[0], Z) - sp.diff(v[2], X),
        sp.diff(v[1], X) - sp.diff(v[0], Y),
    ])


@lru_cache(maxsize=1)
def symbolic_fields() -> Dict[str, sp.Expr]:
    psi = sp.sin(sp.pi * X) ** 2 * sp.sin(sp.pi * Y) ** 2 * sp.sin(sp.pi * Z) ** 2
    u0 = _curl(sp.Matrix([0, 0, psi]))
    curl_u0 = _curl(u0)
    f = _curl(curl_u0)
    grad_curl = sp.Matrix(3, 3, lambda i, d: sp.diff(curl_u0[i], COORDS[d]))
    return {
        "psi": psi,
        "u0": u0,
        "curl_u0": curl_u0,
        "grad_curl_u0": grad_curl,
        "f": f,
    }


def _vectorize(expr) -> Callable[[np.ndarray], np.ndarray]:
    """numpy callable x (N, 3) -> (N, *shape) of a scalar or matrix expression"""
    shape = ()
    if isinstance(expr, sp.MatrixBase):
        shape = (expr.shape[0],) if expr.shape[1] == 1 else tuple(expr.shape)
    entries = [expr] if not shape else list(expr)
    functions = [sp.lambdify(COORDS, e, "numpy") for e in entries]

    def evaluate(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        columns = [np.broadcast_to(np.asarray(fn(x[:, 0], x[:, 1], x[:, 2]), dtype=float), (len(x),))
                   for fn in functions]
        out = np.stack(columns, axis=-1)
        return out.reshape((len(x),) + shape) if shape else out[:, 0]

    return evaluate


@dataclass(frozen=True)
class ManufacturedProblem:
    """Exact data of the benchmark; errors are always measured against u0"""
    epsilon: float = 0.0

    @property
    def u0(self):
        return numeric_field("u0")

    @property
    def curl_u0(self):
        return numeric_field("curl_u0")

    @property
    def grad_curl_u0(self):
        return numeric_field("grad_curl_u0")

    @property
    def f(self):
        return numeric_field("f")

    def f_norm(self, degree: int = 10) -> float:
        """||f||_0 on the unit cube by a tensor Gauss rule"""
        nodes, weights = np.polynomial.legendre.leggauss(degree)
        nodes, weights = 0.5 * (nodes + 1.0), 0.5 * weights
        grid = np.stack(np.meshgrid(nodes, nodes, nodes, indexing="ij"), axis=-1).reshape(-1, 3)
        w = np.einsum("i,j,k->ijk", weights, weights, weights).reshape(-1)
        return float(np.sqrt(w @ np.sum(self.f(grid) ** 2, axis=1)))


@lru_cache(maxsize=None)
def numeric_field(which: str) -> Callable[[np.ndarray], np.ndarray]:
    if which not in QUANTITIES:
        raise ConfigurationError(f"Unknown exact quantity '{which}'", {"quantities": QUANTITIES})
    logger.debug(f"Lambdifying {which}")
    return _vectorize(symbolic_fields()[which])


def evaluate_exact(which: str, point) -> np.ndarray:
    """Exact quantity at one point (3,) or many points (N, 3)"""
    x = np.asarray(point, dtype=float)
    values = numeric_field(which)(x.reshape(-1, 3))
    return values[0] if x.ndim == 1 else values
