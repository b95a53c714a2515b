"""
Polynomial bookkeeping over Cartesian monomials

Fields live in cell-local scaled coordinates xi = (x - center) / scale so
that Vandermonde matrices stay well conditioned on small cells. Physical
derivatives pick up the factor 1/scale.
"""

from functools import lru_cache
from itertools import product
from typing import Sequence, Tuple

import numpy as np

MAX_DEGREE = 5


@lru_cache(maxsize=None)
def monomial_exponents(degree: int = MAX_DEGREE) -> np.ndarray:
    """Exponents (a, b, c) with a + b + c <= degree, ordered by total degree"""
    exps = [e for d in range(degree + 1)
            for e in product(range(d + 1), repeat=3) if sum(e) == d]
    exps.sort(key=lambda e: (sum(e), tuple(-x for x in e)))
    return np.array(exps, dtype=int)


@lru_cache(maxsize=None)
def _tables(degree: int = MAX_DEGREE):
    exps = monomial_exponents(degree)
    index = {tuple(e): i for i, e in enumerate(exps)}
    nmon = len(exps)

    derivative = np.zeros((3, nmon, nmon))
    for j, e in enumerate(exps):
        for d in range(3):
            if e[d] > 0:
                lowered = list(e)
                lowered[d] -= 1
                derivative[d, index[tuple(lowered)], j] = e[d]

    product_index = -np.ones((nmon, nmon), dtype=int)
    for i, ei in enumerate(exps):
        for j, ej in enumerate(exps):
            key = tuple(ei + ej)
            if key in index:
                product_index[i, j] = index[key]

    return index, derivative, product_index


def nmonomials(degree: int = MAX_DEGREE) -> int:
    return len(monomial_exponents(degree))


def monomial_index(exponent: Sequence[int]) -> int:
    return _tables()[0][tuple(int(e) for e in exponent)]


def monomial_values(xi: np.ndarray) -> np.ndarray:
    """Values of all monomials at local points xi (N, 3) -> (N, nmon)"""
    exps = monomial_exponents()
    return np.prod(xi[:, None, :] ** exps[None, :, :], axis=2)


def scalar_monomial(exponent: Sequence[int]) -> np.ndarray:
    coeffs = np.zeros(nmonomials())
    coeffs[monomial_index(exponent)] = 1.0
    return coeffs


def affine_scalar(gradient: Sequence[float], constant: float) -> np.ndarray:
    """Coefficients of g . xi + constant"""
    coeffs = constant * scalar_monomial((0, 0, 0))
    for d in range(3):
        unit = [0, 0, 0]
        unit[d] = 1
        coeffs = coeffs + gradient[d] * scalar_monomial(unit)
    return coeffs


def multiply(p: np.ndarray, q: np.ndarray, tol: float = 1e-14) -> np.ndarray:
    """Product of two scalar polynomials; raises if the degree bound overflows"""
    _, _, product_index = _tables()
    outer = np.outer(p, q)
    inside = product_index >= 0
    overflow = np.abs(outer[~inside])
    if overflow.size and overflow.max() > tol * max(1.0, np.abs(outer).max()):
        raise ValueError(f"Polynomial product exceeds degree {MAX_DEGREE}")
    result = np.zeros(nmonomials())
    np.add.at(result, product_index[inside], outer[inside])
    return result


def cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross product of two vector polynomials (3, nmon)"""
    return np.stack([
        multiply(a[1], b[2]) - multiply(a[2], b[1]),
        multiply(a[2], b[0]) - multiply(a[0], b[2]),
        multiply(a[0], b[1]) - multiply(a[1], b[0]),
    ])


def local_position() -> np.ndarray:
    """The vector field xi itself"""
    return np.stack([scalar_monomial(u) for u in ((1, 0, 0), (0, 1, 0), (0, 0, 1))])


class PolynomialField:
    """A stack of polynomial fields attached to one cell

    coeffs has shape (nfields, *value_shape, nmon); value_shape is () for
    scalars, (3,) for vectors and (3, 3) for gradients of vectors, with
    gradient index last.
    """

    def __init__(self, coeffs: np.ndarray, center: np.ndarray, scale: float, cell: int = -1):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.center = np.asarray(center, dtype=float)
        self.scale = float(scale)
        self.cell = cell

    @property
    def nfields(self) -> int:
        return self.coeffs.shape[0]

    @property
    def value_shape(self) -> Tuple[int, ...]:
        return self.coeffs.shape[1:-1]

    def __len__(self) -> int:
        return self.nfields

    def _like(self, coeffs: np.ndarray) -> "PolynomialField":
        return PolynomialField(coeffs, self.center, self.scale, self.cell)

    def to_local(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.center) / self.scale

    def values_local(self, xi: np.ndarray) -> np.ndarray:
        """Values at local points (N, 3) -> (N, nfields, *value_shape)"""
        return np.einsum("nm,f...m->nf...", monomial_values(xi), self.coeffs)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.values_local(self.to_local(x))

    def partial(self, direction: int) -> "PolynomialField":
        _, derivative, _ = _tables()
        return self._like(self.coeffs @ derivative[direction].T / self.scale)

    def grad(self) -> "PolynomialField":
        return self._like(np.stack([self.partial(d).coeffs for d in range(3)], axis=-2))

    def curl(self) -> "PolynomialField":
        if self.value_shape != (3,):
            raise ValueError("curl needs a vector field")
        d = [self.partial(i).coeffs for i in range(3)]
        return self._like(np.stack([
            d[1][:, 2] - d[2][:, 1],
            d[2][:, 0] - d[0][:, 2],
            d[0][:, 1] - d[1][:, 0],
        ], axis=1))

    def div(self) -> "PolynomialField":
        if self.value_shape != (3,):
            raise ValueError("div needs a vector field")
        return self._like(sum(self.partial(i).coeffs[:, i] for i in range(3)))

    def combine(self, matrix: np.ndarray) -> "PolynomialField":
        """New fields g_j = sum_i matrix[i, j] f_i"""
        return self._like(np.einsum("ij,i...->j...", matrix, self.coeffs))

    def take(self, index) -> "PolynomialField":
        return self._like(self.coeffs[index])

    def flat(self) -> np.ndarray:
        return self.coeffs.reshape(self.nfields, -1)

    @classmethod
    def stack(cls, fields: Sequence[np.ndarray], center, scale, cell: int = -1) -> "PolynomialField":
        return cls(np.stack(fields), center, scale, cell)
