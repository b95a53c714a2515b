import numpy as np
import pytest

from app.core.exceptions import ConfigurationError
from app.fem.elements import ElementKind
from app.fem.spaces import (
    DiscreteFunction,
    build_space,
    canonical_interpolate,
    conformity_check,
    curl_operator,
    expected_dimension,
    gradient_operator,
    numerical_rank,
    verify_complex,
)
from app.models.fem import BoundaryCondition, ComplexVariant

KINDS = [(ElementKind.W, 1), (ElementKind.W, 2), (ElementKind.ND, 1),
         (ElementKind.TW, 1), (ElementKind.LAGRANGE, 1), (ElementKind.LAGRANGE, 2), (ElementKind.DG0, 1)]


@pytest.mark.parametrize("kind,k", KINDS)
@pytest.mark.parametrize("bc", list(BoundaryCondition))
def test_dimension_matches_entity_counts(mesh2, kind, k, bc):
    space = build_space(mesh2, kind, k, bc)
    assert space.ndofs == expected_dimension(mesh2, kind, k, bc)


def test_w_dimension_on_two_level_mesh(mesh2):
    assert build_space(mesh2, ElementKind.W, 1).ndofs == 2 * 26 + 5 * 72
    assert build_space(mesh2, ElementKind.W, 1, "partial").ndofs == 2 * 26 + 5 * 72 + 3 * 48


def test_single_cube_complex(mesh1):
    report = verify_complex(mesh1, 1, ComplexVariant.ZERO_BC)
    assert report.dims == {"grad": 1, "w": 32, "v": 36, "q": 5}
    assert report.ranks["curl"] == 31
    assert report.euler_residual == 0
    assert report.passed


@pytest.mark.parametrize("variant", list(ComplexVariant))
@pytest.mark.parametrize("k", [1, 2])
def test_complex_is_exact(mesh2, variant, k):
    report = verify_complex(mesh2, k, variant)
    assert report.dims == report.expected_dims
    assert max(report.composition_norms.values()) < 1e-10
    assert report.exact_at_w and report.exact_at_v and report.div_surjective
    assert report.passed


@pytest.mark.parametrize("variant", list(ComplexVariant))
def test_single_cube_complex_of_second_order(mesh1, variant):
    report = verify_complex(mesh1, 2, variant)
    assert report.dims == report.expected_dims
    assert report.euler_residual == 0
    assert report.passed


@pytest.mark.parametrize("bc", [BoundaryCondition.FULL_ZERO, BoundaryCondition.PARTIAL])
def test_random_w_functions_are_conforming(mesh2, rng, bc):
    space = build_space(mesh2, ElementKind.W, 1, bc)
    report = conformity_check(space, rng.standard_normal(space.ndofs))
    assert report.passed
    assert report.boundary_tangential_trace < 1e-8


def test_nedelec_functions_are_conforming(mesh2, rng):
    space = build_space(mesh2, ElementKind.ND, 2, BoundaryCondition.NONE)
    assert conformity_check(space, rng.standard_normal(space.ndofs)).passed


def test_interpolation_reproduces_local_fields(mesh2, rng):
    a = np.array([0.3, -1.0, 2.0])
    b = np.array([1.5, 0.5, -0.25])
    space = build_space(mesh2, ElementKind.W, 1, BoundaryCondition.NONE)

    coeffs = canonical_interpolate(
        space,
        lambda x: a + np.cross(b, x),
        curl=lambda x: np.broadcast_to(2.0 * b, x.shape),
    )
    cells = rng.integers(0, mesh2.num_cells, 30)
    points = mesh2.cell_centers[cells] + 0.05 * rng.standard_normal((30, 3))
    u = DiscreteFunction(space, coeffs)
    assert np.allclose(u.evaluate(cells, points), a + np.cross(b, points), atol=1e-10)
    assert np.allclose(u.evaluate(cells, points, "curl"), 2.0 * b, atol=1e-9)


def test_interpolation_is_a_projection(mesh1, rng):
    space = build_space(mesh1, ElementKind.W, 1, BoundaryCondition.PARTIAL)
    coeffs = rng.standard_normal(space.ndofs)
    again = canonical_interpolate(space, DiscreteFunction(space, coeffs))
    assert np.allclose(again, coeffs, atol=1e-9)


def test_interpolation_into_w_needs_curl(mesh1):
    space = build_space(mesh1, ElementKind.W, 1, BoundaryCondition.NONE)
    with pytest.raises(ConfigurationError):
        canonical_interpolate(space, lambda x: x)


def test_gradients_have_zero_curl(mesh2):
    q = build_space(mesh2, ElementKind.LAGRANGE, 1)
    w = build_space(mesh2, ElementKind.W, 1)
    v = build_space(mesh2, ElementKind.TW, 1)
    G = gradient_operator(q, w)
    C = curl_operator(w, v)
    assert abs(C @ G).max() < 1e-10 * abs(C).max() * abs(G).max()
    assert numerical_rank(G) == q.ndofs


def test_discrete_function_length_checked(mesh1):
    space = build_space(mesh1, ElementKind.W, 1)
    with pytest.raises(ConfigurationError):
        DiscreteFunction(space, np.zeros(space.ndofs + 1))


class GradientOf(DiscreteFunction):
    """Gradient of a Lagrange function, curl-free by construction"""

    def evaluate(self, cells, x, operand="value"):
        if operand == "curl":
            return np.zeros((len(x), 3))
        return super().evaluate(cells, x, "grad")


@pytest.mark.parametrize("k", [1, 2])
def test_interpolated_gradient_matches_gradient_operator(mesh2, rng, k):
    q_space = build_space(mesh2, ElementKind.LAGRANGE, k, BoundaryCondition.FULL_ZERO)
    w_space = build_space(mesh2, ElementKind.W, k, BoundaryCondition.FULL_ZERO)
    q = rng.standard_normal(q_space.ndofs)
    Gq = gradient_operator(q_space, w_space) @ q
    interpolated = canonical_interpolate(w_space, GradientOf(q_space, q))
    assert np.allclose(interpolated, Gq, atol=1e-9 * np.abs(Gq).max())

    cells = rng.integers(0, mesh2.num_cells, 20)
    points = mesh2.cell_centers[cells]
    assert np.allclose(DiscreteFunction(w_space, Gq).evaluate(cells, points),
                       DiscreteFunction(q_space, q).evaluate(cells, points, "grad"), atol=1e-9)
