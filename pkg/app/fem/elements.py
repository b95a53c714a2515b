"""
Local finite elements: shape spaces, degrees of freedom and nodal bases

Every element kind is described by a spanning set of polynomial fields and
a list of DoF families. DoFs are built from global entity frames (edge
tangent from the lower to the higher global vertex, face frame from the
ascending vertex triple), so a DoF evaluates identically from both sides
of a shared entity and the nodal basis needs no sign corrections.
"""

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
from scipy import linalg, special

from app.core.config import settings
from app.core.exceptions import (
    ConfigurationError,
    ElementConstructionError,
    MeshError,
    UnisolvenceError,
)
from app.fem import polynomials as poly
from app.fem.mesh import LOCAL_EDGES, LOCAL_FACES, Mesh, single_cell_mesh
from app.fem.polynomials import PolynomialField
from app.fem.quadrature import map_to_edge, map_to_face, simplex_quadrature

logger = logging.getLogger(__name__)

BUBBLE_SCALE = 256.0  # b_K peaks at 1/256 in the barycenter
CELL_AVERAGE_DEGREE = 6


class ElementKind(str, Enum):
    W = "W"
    ND = "ND"
    TW = "TW"
    LAGRANGE = "Lagrange"
    DG0 = "DG0"


class DofKind(str, Enum):
    EDGE_TANGENT = "edge-tangent-moment"
    FACE_TANGENT_RM = "face-tangent-moment-rm"
    FACE_CURL_RT = "face-curl-tangent-moment-rt"
    FACE_NORMAL = "face-normal-moment"
    FACE_TANGENT_RT = "face-tangent-moment-rt"
    POINT = "point-evaluation"
    CELL_AVERAGE = "cell-average"


@dataclass(frozen=True)
class DofFamily:
    """DoFs of one kind attached to every entity of one dimension"""
    name: str
    entity_dim: int
    kind: DofKind
    per_entity: int
    operand: str = "value"


def _check_order(kind: ElementKind, k: int) -> int:
    if kind in (ElementKind.TW, ElementKind.DG0):
        return int(k)
    if k not in (1, 2):
        raise ConfigurationError(f"{kind.value} elements are defined for k = 1, 2 only", {"k": k})
    return int(k)


@lru_cache(maxsize=None)
def dof_families(kind: ElementKind, k: int) -> Tuple[DofFamily, ...]:
    kind = ElementKind(kind)
    k = _check_order(kind, k)
    rm = 2 if k == 1 else 3
    if kind == ElementKind.W:
        return (
            DofFamily("edge", 1, DofKind.EDGE_TANGENT, k + 1),
            DofFamily("face_tangent", 2, DofKind.FACE_TANGENT_RM, rm),
            DofFamily("face_curl", 2, DofKind.FACE_CURL_RT, 3, operand="curl"),
        )
    if kind == ElementKind.ND:
        return (
            DofFamily("edge", 1, DofKind.EDGE_TANGENT, k + 1),
            DofFamily("face_tangent", 2, DofKind.FACE_TANGENT_RM, rm),
        )
    if kind == ElementKind.TW:
        return (
            DofFamily("face_normal", 2, DofKind.FACE_NORMAL, 3),
            DofFamily("face_tangent", 2, DofKind.FACE_TANGENT_RT, 3),
        )
    if kind == ElementKind.LAGRANGE:
        p = k + 1
        families = [
            DofFamily("vertex", 0, DofKind.POINT, 1),
            DofFamily("edge", 1, DofKind.POINT, p - 1),
        ]
        if p == 3:
            families.append(DofFamily("face", 2, DofKind.POINT, 1))
        return tuple(families)
    return (DofFamily("cell", 3, DofKind.CELL_AVERAGE, 1),)


ENTITIES_PER_CELL = {0: 4, 1: 6, 2: 4, 3: 1}


def local_dimension(kind: ElementKind, k: int) -> int:
    return sum(ENTITIES_PER_CELL[f.entity_dim] * f.per_entity for f in dof_families(kind, k))


# ---- entity frames and DoF weights ----------------------------------------


def face_frames(coords: np.ndarray):
    """In-plane frame of faces given by ascending vertices (Ne, 3, 3)

    Returns t1, t2, n, barycenter and diameter; n is the right-handed normal.
    """
    a, b, c = coords[:, 0], coords[:, 1], coords[:, 2]
    t1 = (b - a) / np.linalg.norm(b - a, axis=1)[:, None]
    n = np.cross(b - a, c - a)
    n = n / np.linalg.norm(n, axis=1)[:, None]
    t2 = np.cross(n, t1)
    center = coords.mean(axis=1)
    diameter = np.linalg.norm(coords[:, [0, 0, 1]] - coords[:, [1, 2, 2]], axis=2).max(axis=1)
    return t1, t2, n, center, diameter


def family_dofs(family: DofFamily, coords: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Points (Ne, m, nq, 3) and weights (Ne, m, nq[, 3]) of one DoF family

    A DoF acts as sum_q weights[q] . field(points[q]); vector weights for
    vector fields, scalar weights for scalar fields.
    """
    m = family.per_entity
    ne = len(coords)

    if family.kind == DofKind.EDGE_TANGENT:
        rule = simplex_quadrature(1, 2 * k + 2)
        points, w, s = map_to_edge(rule, coords)
        t = coords[:, 1] - coords[:, 0]
        t = t / np.linalg.norm(t, axis=1)[:, None]
        legendre = np.stack([special.eval_legendre(j, 2.0 * s - 1.0) for j in range(m)])
        weights = w[:, None, :, None] * legendre[None, :, :, None] * t[:, None, None, :]
        return np.broadcast_to(points[:, None], (ne, m) + points.shape[1:]), weights

    if family.kind in (DofKind.FACE_TANGENT_RM, DofKind.FACE_CURL_RT,
                       DofKind.FACE_TANGENT_RT, DofKind.FACE_NORMAL):
        rule = simplex_quadrature(2, settings.QUAD_DEGREE_FACE)
        points, w = map_to_face(rule, coords)
        t1, t2, n, center, diameter = face_frames(coords)
        y = (points - center[:, None, :]) / diameter[:, None, None]
        nq = points.shape[1]

        if family.kind == DofKind.FACE_NORMAL:
            tests = np.stack([
                np.ones((ne, nq)),
                np.einsum("eqd,ed->eq", y, t1),
                np.einsum("eqd,ed->eq", y, t2),
            ], axis=1)
            weights = (w[:, None, :] * tests)[..., None] * n[:, None, None, :]
        else:
            q = [np.broadcast_to(t1[:, None, :], y.shape), np.broadcast_to(t2[:, None, :], y.shape)]
            if family.kind == DofKind.FACE_TANGENT_RM:
                if m == 3:
                    q.append(np.cross(n[:, None, :], y))
            else:
                q.append(y)
            q = np.stack(q, axis=1)
            # (v x n) . q = v . (n x q)
            weights = w[:, None, :, None] * np.cross(n[:, None, None, :], q)
        return np.broadcast_to(points[:, None], (ne, m) + points.shape[1:]), weights

    if family.kind == DofKind.POINT:
        if family.entity_dim == 0:
            points = coords[:, None, None, 0, :]
        elif family.entity_dim == 1:
            fractions = np.arange(1, m + 1) / (m + 1.0)
            a, b = coords[:, 0], coords[:, 1]
            points = (a[:, None, :] + (b - a)[:, None, :] * fractions[None, :, None])[:, :, None, :]
        else:
            points = coords.mean(axis=1)[:, None, None, :]
        return points, np.ones(points.shape[:-1])

    if family.kind == DofKind.CELL_AVERAGE:
        rule = simplex_quadrature(3, CELL_AVERAGE_DEGREE)
        edges = coords[:, 1:] - coords[:, :1]
        points = coords[:, None, 0, :] + np.einsum("qi,eid->eqd", rule.points, edges)
        weights = np.broadcast_to(rule.weights / rule.weights.sum(), (ne, rule.size))
        return points[:, None], weights[:, None]

    raise ConfigurationError(f"Unknown DoF kind {family.kind}")


def entity_vertices(mesh: Mesh, dim: int, entities: np.ndarray) -> np.ndarray:
    """Vertex coordinates of entities in ascending global order"""
    if dim == 0:
        return mesh.vertices[entities][:, None, :]
    if dim == 1:
        return mesh.vertices[mesh.edges[entities]]
    if dim == 2:
        return mesh.vertices[mesh.faces[entities]]
    return mesh.vertices[mesh.cells[entities]]


def cell_entities(mesh: Mesh, cells, dim: int) -> np.ndarray:
    """Global ids of the local entities of cells, in local order"""
    cells = np.atleast_1d(cells)
    if dim == 0:
        return mesh.cells[cells]
    if dim == 1:
        return mesh.cell_edges[cells]
    if dim == 2:
        return mesh.cell_faces[cells]
    return cells[:, None]


def _contract(weights: np.ndarray, values: np.ndarray) -> np.ndarray:
    if weights.ndim == values.ndim:
        return np.einsum("emqd,emqd->em", weights, values)
    return np.einsum("emq,emq->em", weights, values)


def apply_to_field(field: PolynomialField, points: np.ndarray, weights: np.ndarray,
                   operand: str = "value") -> np.ndarray:
    """DoF values of every field in a stack: (Ne * m, nfields)"""
    target = field.curl() if operand == "curl" else field
    values = target(points.reshape(-1, 3))
    values = values.reshape(points.shape[:-1] + values.shape[1:])
    if weights.ndim == points.ndim:
        result = np.einsum("emqd,emqfd->emf", weights, values)
    else:
        result = np.einsum("emq,emqf->emf", weights, values)
    return result.reshape(-1, target.nfields)


def apply_to_callable(fn: Callable[[np.ndarray], np.ndarray], points: np.ndarray,
                      weights: np.ndarray) -> np.ndarray:
    """DoF values of a smooth field given as a vectorized callable"""
    values = np.asarray(fn(points.reshape(-1, 3)), dtype=float)
    values = values.reshape(points.shape[:-1] + values.shape[1:])
    return _contract(weights, values).reshape(-1)


@dataclass(frozen=True)
class DofFunctional:
    """One degree of freedom as a weighted quadrature sum on its entity"""
    kind: DofKind
    entity_dim: int
    entity: int
    index: int
    operand: str
    points: np.ndarray
    weights: np.ndarray

    def __call__(self, field: PolynomialField) -> np.ndarray:
        return apply_to_field(field, self.points[None, None], self.weights[None, None], self.operand)[0]


@dataclass
class DofBlock:
    family: DofFamily
    entities: np.ndarray
    points: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return len(self.entities) * self.family.per_entity


# ---- shape spaces ----------------------------------------------------------


def _vector(component: int, scalar: np.ndarray) -> np.ndarray:
    out = np.zeros((3, poly.nmonomials()))
    out[component] = scalar
    return out


def _barycentric(vertices: np.ndarray, center: np.ndarray, scale: float) -> List[np.ndarray]:
    xi = (vertices - center) / scale
    inverse = np.linalg.inv(np.column_stack([xi, np.ones(4)]))
    return [poly.affine_scalar(inverse[:3, i], inverse[3, i]) for i in range(4)]


def _bubble(vertices: np.ndarray, center: np.ndarray, scale: float) -> np.ndarray:
    lam = _barycentric(vertices, center, scale)
    b = poly.multiply(poly.multiply(lam[0], lam[1]), poly.multiply(lam[2], lam[3]))
    return BUBBLE_SCALE * b


def _linear_scalars() -> List[np.ndarray]:
    return [poly.scalar_monomial((0, 0, 0))] + [
        poly.scalar_monomial(u) for u in ((1, 0, 0), (0, 1, 0), (0, 0, 1))
    ]


def span_groups(kind: ElementKind, k: int) -> Dict[str, slice]:
    """Index ranges of the direct-sum parts of the spanning set"""
    kind = ElementKind(kind)
    if kind in (ElementKind.W, ElementKind.ND):
        ngrad = len(poly.monomial_exponents(k + 1)) - 1
        groups = {"gradient": slice(0, ngrad), "rotation": slice(ngrad, ngrad + 11)}
        if kind == ElementKind.W:
            groups["bubble"] = slice(ngrad + 11, ngrad + 23)
        return groups
    if kind == ElementKind.TW:
        return {"linear": slice(0, 12), "curl_bubble": slice(12, 24)}
    return {"all": slice(0, local_dimension(kind, k))}


def shape_space(kind: ElementKind, k: int, vertices: np.ndarray, cell: int = -1) -> PolynomialField:
    """Basis of the local shape space on a tetrahedron, in scaled local coordinates"""
    kind = ElementKind(kind)
    k = _check_order(kind, k)
    vertices = np.asarray(vertices, dtype=float)
    center = vertices.mean(axis=0)
    scale = float(max(np.linalg.norm(vertices[i] - vertices[j]) for i, j in LOCAL_EDGES))
    xi = poly.local_position()

    def scalars(exponents) -> PolynomialField:
        return PolynomialField.stack([poly.scalar_monomial(e) for e in exponents], center, scale, cell)

    if kind in (ElementKind.W, ElementKind.ND):
        exps = poly.monomial_exponents(k + 1)[1:]
        gradients = scalars(exps).grad().coeffs * scale
        rotations = [poly.cross(xi, _vector(i, poly.scalar_monomial((0, 0, 0)))) for i in range(3)]
        for i in range(3):
            for j in range(3):
                if (i, j) != (2, 2):
                    rotations.append(poly.cross(xi, _vector(i, xi[j])))
        fields = list(gradients) + rotations
        if kind == ElementKind.W:
            b = _bubble(vertices, center, scale)
            fields += [_vector(i, poly.multiply(b, s)) for s in _linear_scalars() for i in range(3)]
        span = PolynomialField.stack(fields, center, scale, cell)
    elif kind == ElementKind.TW:
        linear = [_vector(i, s) for s in _linear_scalars() for i in range(3)]
        b = _bubble(vertices, center, scale)
        bubbles = PolynomialField.stack(
            [_vector(i, poly.multiply(b, s)) for s in _linear_scalars() for i in range(3)],
            center, scale, cell,
        )
        curls = bubbles.curl().coeffs * scale
        span = PolynomialField.stack(linear + list(curls), center, scale, cell)
    elif kind == ElementKind.LAGRANGE:
        span = scalars(poly.monomial_exponents(k + 1))
    else:
        span = scalars([(0, 0, 0)])

    expected = local_dimension(kind, k)
    rank = np.linalg.matrix_rank(span.flat(), tol=1e-10 * np.abs(span.flat()).max())
    if span.nfields != expected or rank != expected:
        raise ElementConstructionError(
            f"{kind.value}_{k} spanning set has {span.nfields} fields of rank {rank}, expected {expected}",
            {"kind": kind.value, "k": k, "cell": cell},
        )
    return span


# ---- elements --------------------------------------------------------------


@dataclass
class FiniteElement:
    """Local element on one physical cell with its nodal basis"""
    kind: ElementKind
    k: int
    cell: int
    span: PolynomialField
    blocks: List[DofBlock]
    vertices: Optional[np.ndarray] = None
    vandermonde: Optional[np.ndarray] = None
    basis: Optional[PolynomialField] = None
    conditioning: float = 0.0
    groups: Dict[str, slice] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.span.nfields

    @property
    def ndofs(self) -> int:
        return sum(block.size for block in self.blocks)

    @property
    def center(self) -> np.ndarray:
        return self.span.center

    @property
    def scale(self) -> float:
        return self.span.scale

    def apply(self, fields: PolynomialField) -> np.ndarray:
        """Matrix D[i, j] = DoF_i(fields_j)"""
        return np.vstack([
            apply_to_field(fields, block.points, block.weights, block.family.operand)
            for block in self.blocks
        ])

    def family_slices(self) -> Dict[str, slice]:
        slices, start = {}, 0
        for block in self.blocks:
            slices[block.family.name] = slice(start, start + block.size)
            start += block.size
        return slices

    @property
    def dofs(self) -> List[DofFunctional]:
        functionals = []
        for block in self.blocks:
            for e, entity in enumerate(block.entities):
                for i in range(block.family.per_entity):
                    functionals.append(DofFunctional(
                        kind=block.family.kind,
                        entity_dim=block.family.entity_dim,
                        entity=int(entity),
                        index=i,
                        operand=block.family.operand,
                        points=np.asarray(block.points[e, i]),
                        weights=np.asarray(block.weights[e, i]),
                    ))
        return functionals


def dof_set(mesh: Mesh, cell: int, kind: ElementKind, k: int) -> List[DofBlock]:
    blocks = []
    for family in dof_families(ElementKind(kind), k):
        entities = cell_entities(mesh, cell, family.entity_dim)[0]
        coords = entity_vertices(mesh, family.entity_dim, entities)
        points, weights = family_dofs(family, coords, k)
        blocks.append(DofBlock(family, entities, points, weights))
    return blocks


def normalized_conditioning(matrix: np.ndarray) -> float:
    """sigma_min / sigma_max after row and column equilibration"""
    rows = np.linalg.norm(matrix, axis=1)
    cols = np.linalg.norm(matrix, axis=0)
    if (rows == 0).any() or (cols == 0).any():
        return 0.0
    scaled = matrix / rows[:, None] / cols[None, :]
    sigma = linalg.svdvals(scaled)
    return float(sigma[-1] / sigma[0])


def dualize(element: FiniteElement) -> FiniteElement:
    """Invert the DoF Vandermonde to obtain the nodal basis"""
    V = element.apply(element.span)
    if V.shape[0] != V.shape[1]:
        raise ElementConstructionError(
            f"{element.kind.value}_{element.k}: {V.shape[0]} DoFs for {V.shape[1]} shape functions",
            {"cell": element.cell},
        )
    ratio = normalized_conditioning(V)
    if ratio < settings.UNISOLVENCE_TOL:
        raise UnisolvenceError(
            f"{element.kind.value}_{element.k} DoFs are not unisolvent on cell {element.cell}",
            {"cell": element.cell, "conditioning": ratio},
        )
    element.vandermonde = V
    element.conditioning = ratio
    element.basis = element.span.combine(np.linalg.inv(V))
    return element


def build_element(mesh: Mesh, cell: int, kind: ElementKind, k: int) -> FiniteElement:
    kind = ElementKind(kind)
    try:
        mesh.affine_map(cell)
    except MeshError as e:
        raise ElementConstructionError(
            f"Cannot build {kind.value}_{k} on cell {cell}: {e.message}",
            {"cell": cell, **e.context},
        ) from e

    vertices = mesh.vertices[mesh.cells[cell]]
    span = shape_space(kind, k, vertices, cell)
    element = FiniteElement(
        kind=kind, k=k, cell=cell, span=span, vertices=vertices,
        blocks=dof_set(mesh, cell, kind, k), groups=span_groups(kind, k),
    )
    element = dualize(element)
    logger.debug(f"Built {kind.value}_{k} on cell {cell} (conditioning {element.conditioning:.2e})")
    return element


def build_element_on(vertices: np.ndarray, kind: ElementKind, k: int) -> FiniteElement:
    """Element on a standalone tetrahedron"""
    return build_element(single_cell_mesh(vertices), 0, kind, k)


def class_elements(mesh: Mesh, kind: ElementKind, k: int) -> Tuple[FiniteElement, ...]:
    """One element per translation class of the mesh, cached on the mesh"""
    kind = ElementKind(kind)
    key = (kind.value, k)
    elements = mesh.element_cache.get(key)
    if elements is None:
        _, representatives = mesh.shape_classes()
        elements = tuple(build_element(mesh, int(c), kind, k) for c in representatives)
        mesh.element_cache[key] = elements
        logger.debug(f"{kind.value}_{k}: {len(elements)} element classes for {mesh.num_cells} cells")
    return elements


# ---- structural checks ----------------------------------------------------


def delta_residual(element: FiniteElement) -> float:
    D = element.apply(element.basis)
    return float(np.abs(D - np.eye(element.ndofs)).max())


@dataclass
class KernelReport:
    nullity: int
    expected: int
    gradient_residual: float
    complement_min_singular: float
    passed: bool


def kernel_check(element: FiniteElement, rtol: float = 1e-8) -> KernelReport:
    """Null space of curl on the local space is exactly the gradient part"""
    if element.kind not in (ElementKind.W, ElementKind.ND):
        raise ConfigurationError("Kernel check applies to W and ND elements")
    curls = element.span.curl().flat().T  # (3 * nmon, nfields)
    sigma_all = linalg.svdvals(curls)
    tol = rtol * sigma_all[0]
    rank = int((sigma_all > tol).sum())
    nullity = element.dim - rank
    expected = len(poly.monomial_exponents(element.k + 1)) - 1

    null = linalg.null_space(curls, rcond=rtol)
    grad = element.groups["gradient"]
    gradients = element.span.take(grad).flat().T
    fields = element.span.flat().T @ null
    if null.shape[1]:
        coeffs, *_ = np.linalg.lstsq(gradients, fields, rcond=None)
        residual = float(np.abs(gradients @ coeffs - fields).max() / max(np.abs(fields).max(), 1e-300))
    else:
        residual = 0.0

    complement = curls[:, grad.stop:]
    sigma = linalg.svdvals(complement / np.linalg.norm(complement, axis=0))
    report = KernelReport(
        nullity=nullity,
        expected=expected,
        gradient_residual=residual,
        complement_min_singular=float(sigma[-1]),
        passed=nullity == expected and residual < 1e-8 and sigma[-1] > rtol,
    )
    if not report.passed:
        logger.error(f"Kernel check failed for {element.kind.value}_{element.k}: {report}")
    return report


def local_complex_residual(w_element: FiniteElement, tw_element: FiniteElement) -> float:
    """Distance of curl W(K) from its interpolant in V^d(K)"""
    curls = w_element.basis.curl()
    D = tw_element.apply(curls)
    reproduced = tw_element.basis.combine(D)
    scale = max(np.abs(curls.coeffs).max(), 1e-300)
    return float(np.abs(reproduced.coeffs - curls.coeffs).max() / scale)


def tangential_trace_residual(element: FiniteElement, rng: np.random.Generator, samples: int = 5) -> float:
    """Tangential trace on the cell boundary of fields whose edge/face-tangent DoFs vanish"""
    curl_dofs = element.family_slices()["face_curl"]
    coefficients = np.zeros((element.ndofs, samples))
    coefficients[curl_dofs] = rng.standard_normal((curl_dofs.stop - curl_dofs.start, samples))
    fields = element.basis.combine(coefficients)

    face_coords = element.vertices[LOCAL_FACES]
    points, _ = map_to_face(simplex_quadrature(2, settings.QUAD_DEGREE_FACE), face_coords)
    _, _, n, _, _ = face_frames(face_coords)
    worst = 0.0
    for f in range(4):
        values = fields(points[f])  # (nq, samples, 3)
        tangential = values - np.einsum("qsd,d->qs", values, n[f])[..., None] * n[f]
        worst = max(worst, float(np.abs(tangential).max()))
    interior = fields(element.vertices.mean(axis=0)[None])
    return worst / max(float(np.abs(interior).max()), 1.0)


# ---- random cells ------------------------------------------------------------


def shape_ratio(vertices: np.ndarray) -> float:
    """Diameter over inradius, normalized so the regular tetrahedron gives 1"""
    vertices = np.asarray(vertices, dtype=float)
    volume = abs(np.linalg.det(vertices[1:] - vertices[0])) / 6.0
    if volume == 0.0:
        return np.inf
    faces = vertices[LOCAL_FACES]
    areas = 0.5 * np.linalg.norm(np.cross(faces[:, 1] - faces[:, 0], faces[:, 2] - faces[:, 0]), axis=1)
    inradius = 3.0 * volume / areas.sum()
    diameter = max(np.linalg.norm(vertices[i] - vertices[j]) for i, j in LOCAL_EDGES)
    return float(diameter / inradius / (2.0 * np.sqrt(6.0)))


def random_tetrahedron(rng: np.random.Generator, max_shape_ratio: float = 10.0,
                       max_tries: int = 10000) -> np.ndarray:
    """Positively oriented random tetrahedron in the unit cube"""
    for _ in range(max_tries):
        vertices = rng.random((4, 3))
        if shape_ratio(vertices) <= max_shape_ratio:
            if np.linalg.det(vertices[1:] - vertices[0]) < 0:
                vertices[[2, 3]] = vertices[[3, 2]]
            return vertices
    raise ConfigurationError(
        f"No tetrahedron with shape ratio <= {max_shape_ratio} after {max_tries} draws",
    )
