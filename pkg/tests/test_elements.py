import numpy as np
import pytest

from app.core.exceptions import ConfigurationError, ElementConstructionError
from app.fem.elements import (
    ElementKind,
    build_element_on,
    class_elements,
    delta_residual,
    kernel_check,
    local_complex_residual,
    local_dimension,
    random_tetrahedron,
    shape_ratio,
    tangential_trace_residual,
)
from app.fem.mesh import build_uniform_cube_mesh, reference_tetrahedron

W, ND, TW, LAGRANGE, DG0 = ElementKind.W, ElementKind.ND, ElementKind.TW, ElementKind.LAGRANGE, ElementKind.DG0


@pytest.mark.parametrize("kind,k,expected", [
    (W, 1, 32), (W, 2, 42), (ND, 1, 20), (ND, 2, 30),
    (TW, 1, 24), (LAGRANGE, 1, 10), (LAGRANGE, 2, 20), (DG0, 1, 1),
])
def test_local_dimensions(kind, k, expected):
    assert local_dimension(kind, k) == expected
    element = build_element_on(reference_tetrahedron(), kind, k)
    assert element.dim == element.ndofs == expected


@pytest.mark.parametrize("kind,k", [(W, 1), (W, 2), (ND, 1), (TW, 1), (LAGRANGE, 2)])
def test_nodal_basis_is_dual(kind, k):
    element = build_element_on(reference_tetrahedron(), kind, k)
    assert delta_residual(element) < 1e-9


@pytest.mark.parametrize("kind", [W, ND])
@pytest.mark.parametrize("k,nullity", [(1, 9), (2, 19)])
def test_curl_kernel_is_gradients(kind, k, nullity):
    report = kernel_check(build_element_on(reference_tetrahedron(), kind, k))
    assert report.nullity == report.expected == nullity
    assert report.gradient_residual < 1e-8
    assert report.passed


def test_kernel_check_rejects_other_kinds():
    with pytest.raises(ConfigurationError):
        kernel_check(build_element_on(reference_tetrahedron(), TW, 1))


@pytest.mark.parametrize("k", [1, 2])
def test_curl_maps_into_divergence_element(k, rng):
    vertices = random_tetrahedron(rng)
    w = build_element_on(vertices, W, k)
    tw = build_element_on(vertices, TW, k)
    assert local_complex_residual(w, tw) < 1e-8


@pytest.mark.parametrize("k", [1, 2])
def test_face_curl_dofs_leave_tangential_trace(k, rng):
    element = build_element_on(random_tetrahedron(rng), W, k)
    assert tangential_trace_residual(element, rng) < 1e-8


@pytest.mark.parametrize("kind,k", [(W, 1), (W, 2), (ND, 1), (ND, 2), (TW, 1)])
def test_unisolvent_on_random_cells(kind, k, rng):
    for _ in range(100):
        vertices = random_tetrahedron(rng, max_shape_ratio=10.0)
        assert shape_ratio(vertices) <= 10.0
        element = build_element_on(vertices, kind, k)
        assert element.conditioning > 1e-12


def test_shape_ratio_of_regular_tetrahedron():
    regular = np.array([[1.0, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]])
    assert shape_ratio(regular) == pytest.approx(1.0)
    assert shape_ratio(reference_tetrahedron()) > 1.0


def test_random_tetrahedra_are_positive_and_bounded(rng):
    for _ in range(10):
        x = random_tetrahedron(rng, max_shape_ratio=8.0)
        assert np.linalg.det(x[1:] - x[0]) > 0
        assert shape_ratio(x) <= 8.0


def test_degenerate_cell_cannot_carry_an_element():
    flat = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]])
    with pytest.raises(ElementConstructionError):
        build_element_on(flat, W, 1)


def test_unsupported_order():
    with pytest.raises(ConfigurationError):
        local_dimension(W, 3)


def test_dof_functionals_cover_all_degrees_of_freedom():
    element = build_element_on(reference_tetrahedron(), W, 1)
    dofs = element.dofs
    assert len(dofs) == 32
    assert sum(d.operand == "curl" for d in dofs) == 12
    values = np.array([d(element.basis) for d in dofs])
    assert np.allclose(values, np.eye(32), atol=1e-9)


def test_class_elements_live_on_their_mesh():
    mesh = build_uniform_cube_mesh(1)
    elements = class_elements(mesh, W, 1)
    assert len(elements) == 6
    assert class_elements(mesh, W, 1) is elements
    assert (W.value, 1) in mesh.element_cache
    assert (W.value, 1) not in build_uniform_cube_mesh(1).element_cache
