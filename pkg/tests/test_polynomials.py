import numpy as np
import pytest

from app.fem import polynomials as poly
from app.fem.polynomials import PolynomialField


def _field(vectors, scale=0.5):
    return PolynomialField(np.asarray(vectors)[None], center=np.array([0.2, 0.1, 0.3]), scale=scale)


def test_monomial_count():
    assert poly.nmonomials(5) == 56
    assert poly.nmonomials(2) == 10


def test_curl_of_gradient_vanishes(rng):
    scalar = PolynomialField(rng.standard_normal((3, poly.nmonomials())) * (
        poly.monomial_exponents().sum(axis=1) <= 4), center=np.zeros(3), scale=0.7)
    curls = scalar.grad().curl()
    assert np.abs(curls.coeffs).max() < 1e-10


def test_div_of_curl_vanishes(rng):
    mask = poly.monomial_exponents().sum(axis=1) <= 4
    vector = PolynomialField(rng.standard_normal((2, 3, poly.nmonomials())) * mask,
                             center=np.zeros(3), scale=1.3)
    assert np.abs(vector.curl().div().coeffs).max() < 1e-10


def test_curl_of_cross_with_position():
    c = np.array([1.0, -2.0, 0.5])
    # x cross c in local coordinates, rescaled to the physical position
    scale = 0.5
    xi = poly.local_position()
    const = np.stack([v * poly.scalar_monomial((0, 0, 0)) for v in c])
    field = _field(poly.cross(xi, const) * scale, scale=scale)
    points = np.random.default_rng(1).random((5, 3))
    assert np.allclose(field.curl()(points)[:, 0], -2.0 * c)


def test_evaluation_uses_local_coordinates():
    field = PolynomialField(poly.scalar_monomial((1, 0, 0))[None], center=np.array([1.0, 0, 0]), scale=2.0)
    assert field(np.array([[3.0, 0, 0]]))[0, 0] == pytest.approx(1.0)
    assert field.partial(0)(np.array([[0.0, 0, 0]]))[0, 0] == pytest.approx(0.5)


def test_product_overflow_raises():
    high = poly.scalar_monomial((3, 0, 0))
    with pytest.raises(ValueError):
        poly.multiply(high, high)


def test_combine_follows_column_convention():
    fields = PolynomialField(np.eye(3)[:, :, None] * np.ones(poly.nmonomials())[None, None],
                             center=np.zeros(3), scale=1.0)
    matrix = np.array([[1.0, 0.0], [2.0, 1.0], [0.0, 3.0]])
    combined = fields.combine(matrix)
    assert combined.nfields == 2
    assert np.allclose(combined.coeffs[0, :, 0], [1.0, 2.0, 0.0])
    assert np.allclose(combined.coeffs[1, :, 0], [0.0, 1.0, 3.0])
