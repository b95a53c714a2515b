"""
Global finite element spaces, discrete complex operators and interpolation

A global DoF is identified by (family, entity, index). Its full index is
family offset + entity * per_entity + index; boundary conditions remove
full indices and the remaining ones are numbered in ascending order.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union
import logging

import numpy as np
from scipy import linalg, sparse

from app.core.config import settings
from app.core.exceptions import ConfigurationError
from app.fem.elements import (
    DofFamily,
    DofKind,
    ElementKind,
    FiniteElement,
    apply_to_callable,
    cell_entities,
    class_elements,
    dof_families,
    entity_vertices,
    face_frames,
    family_dofs,
)
from app.fem.mesh import Mesh
from app.fem.polynomials import PolynomialField, monomial_values
from app.fem.quadrature import map_to_cell, map_to_face, simplex_quadrature
from app.models.fem import (
    BoundaryCondition,
    ComplexReport,
    ComplexVariant,
    ConformityReport,
)

logger = logging.getLogger(__name__)

# families left free on the boundary by the partial boundary condition
PARTIAL_FREE = {
    ElementKind.W: {"face_curl"},
    ElementKind.TW: {"face_tangent"},
}


def _entity_count(mesh: Mesh, dim: int) -> int:
    return (mesh.num_vertices, mesh.num_edges, mesh.num_faces, mesh.num_cells)[dim]


def _boundary_entities(mesh: Mesh, dim: int) -> np.ndarray:
    if dim == 0:
        return mesh.boundary_vertices
    if dim == 1:
        return mesh.boundary_edges
    if dim == 2:
        return mesh.boundary_faces
    return np.zeros(mesh.num_cells, dtype=bool)


@dataclass(eq=False)
class GlobalSpace:
    """Global DoF layout of one element family on a mesh"""
    mesh: Mesh
    kind: ElementKind
    k: int
    bc: BoundaryCondition
    families: Tuple[DofFamily, ...]
    offsets: np.ndarray
    free: np.ndarray
    free_index: np.ndarray
    cell_full_dofs: np.ndarray
    cell_dofs: np.ndarray
    _tables: Dict[Tuple, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def ndofs(self) -> int:
        return int(self.free.sum())

    @property
    def full_size(self) -> int:
        return len(self.free)

    @property
    def nloc(self) -> int:
        return self.cell_dofs.shape[1]

    @property
    def elements(self) -> Tuple[FiniteElement, ...]:
        return class_elements(self.mesh, self.kind, self.k)

    @property
    def class_ids(self) -> np.ndarray:
        return self.mesh.shape_classes()[0]

    def class_cells(self) -> List[Tuple[int, np.ndarray]]:
        ids = self.class_ids
        return [(c, np.flatnonzero(ids == c)) for c in range(len(self.elements))]

    def basis_field(self, c: int, operand: str = "value") -> PolynomialField:
        """Nodal basis of class c, or a derivative of it"""
        basis = self.elements[c].basis
        if operand == "value":
            return basis
        if operand == "curl":
            return basis.curl()
        if operand == "div":
            return basis.div()
        if operand == "grad":
            return basis.grad()
        if operand == "grad_curl":
            return basis.curl().grad()
        raise ConfigurationError(f"Unknown operand {operand}")

    def quadrature(self, c: int, degree: int) -> Tuple[np.ndarray, np.ndarray]:
        """Local points xi_q and weights of the class-c cell rule"""
        key = ("quad", c, degree)
        if key not in self._tables:
            element = self.elements[c]
            points, weights = map_to_cell(simplex_quadrature(3, degree), element.vertices)
            self._tables[key] = ((points - element.center) / element.scale, weights)
        return self._tables[key]

    def tabulate(self, c: int, operand: str, degree: int) -> np.ndarray:
        """Basis values at the class quadrature points: (nq, nloc, *value_shape)"""
        key = ("tab", c, operand, degree)
        if key not in self._tables:
            xi, _ = self.quadrature(c, degree)
            self._tables[key] = self.basis_field(c, operand).values_local(xi)
        return self._tables[key]

    def physical_points(self, cells: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """(Nc, nq, 3) physical points of local points shared by a class"""
        scale = self.mesh.cell_diameters[cells]
        return self.mesh.cell_centers[cells][:, None, :] + scale[:, None, None] * xi[None]

    def local_coefficients(self, coeffs: np.ndarray, cells: np.ndarray) -> np.ndarray:
        dofs = self.cell_dofs[cells]
        return np.where(dofs >= 0, coeffs[np.maximum(dofs, 0)], 0.0)

    def summary(self) -> Dict[str, object]:
        return {"kind": self.kind.value, "k": self.k, "bc": self.bc.value, "ndofs": self.ndofs}


def build_space(mesh: Mesh, kind: Union[ElementKind, str], k: int,
                bc: Union[BoundaryCondition, str] = BoundaryCondition.FULL_ZERO) -> GlobalSpace:
    kind = ElementKind(kind)
    bc = BoundaryCondition(bc)
    families = dof_families(kind, k)

    offsets, free_parts, cell_parts = [], [], []
    offset = 0
    for family in families:
        count = _entity_count(mesh, family.entity_dim)
        on_boundary = _boundary_entities(mesh, family.entity_dim)
        constrained = np.zeros(count, dtype=bool)
        if kind == ElementKind.DG0:
            if bc != BoundaryCondition.NONE:
                constrained[-1] = True  # zero mean: last cell's constant is dropped
        elif bc == BoundaryCondition.FULL_ZERO or (
            bc == BoundaryCondition.PARTIAL and family.name not in PARTIAL_FREE.get(kind, set())
        ):
            constrained = on_boundary.copy()
        free_parts.append(np.repeat(~constrained, family.per_entity))

        entities = cell_entities(mesh, np.arange(mesh.num_cells), family.entity_dim)
        full = offset + entities[:, :, None] * family.per_entity + np.arange(family.per_entity)
        cell_parts.append(full.reshape(mesh.num_cells, -1))
        offsets.append(offset)
        offset += count * family.per_entity

    free = np.concatenate(free_parts)
    free_index = -np.ones(len(free), dtype=int)
    free_index[free] = np.arange(int(free.sum()))
    cell_full_dofs = np.concatenate(cell_parts, axis=1)

    space = GlobalSpace(
        mesh=mesh, kind=kind, k=k, bc=bc, families=families,
        offsets=np.array(offsets), free=free, free_index=free_index,
        cell_full_dofs=cell_full_dofs, cell_dofs=free_index[cell_full_dofs],
    )
    logger.info(f"Built space {kind.value}_{k} ({bc.value}) with {space.ndofs} DoFs on {mesh.num_cells} cells")
    return space


def expected_dimension(mesh: Mesh, kind: Union[ElementKind, str], k: int,
                       bc: Union[BoundaryCondition, str]) -> int:
    """Dimension formula from entity counts, independent of the numbering"""
    kind, bc = ElementKind(kind), BoundaryCondition(bc)
    Vi, Ei, Fi = mesh.num_interior_vertices, mesh.num_interior_edges, mesh.num_interior_faces
    V, E, F, T = mesh.num_vertices, mesh.num_edges, mesh.num_faces, mesh.num_cells
    Fb = F - Fi
    rm = 2 if k == 1 else 3

    if kind == ElementKind.W:
        if bc == BoundaryCondition.NONE:
            return (k + 1) * E + (k + 4) * F
        return (k + 1) * Ei + (k + 4) * Fi + (3 * Fb if bc == BoundaryCondition.PARTIAL else 0)
    if kind == ElementKind.ND:
        if bc == BoundaryCondition.NONE:
            return (k + 1) * E + rm * F
        return (k + 1) * Ei + rm * Fi
    if kind == ElementKind.TW:
        if bc == BoundaryCondition.NONE:
            return 6 * F
        return 6 * Fi + (3 * Fb if bc == BoundaryCondition.PARTIAL else 0)
    if kind == ElementKind.LAGRANGE:
        if bc == BoundaryCondition.NONE:
            return V + k * E + (k - 1) * F
        return Vi + k * Ei + (k - 1) * Fi
    return T if bc == BoundaryCondition.NONE else T - 1


# ---- operators between spaces ------------------------------------------------


def scatter_groups(rows: GlobalSpace, cols: GlobalSpace,
                   groups: List[Tuple[np.ndarray, np.ndarray]],
                   mode: str = "sum") -> sparse.csr_matrix:
    """Global matrix from (cells, local matrix) pairs

    mode "sum" accumulates cell contributions; mode "first" keeps the first
    value seen for each entry, for DoF operators that every adjacent cell
    evaluates identically.
    """
    shape = (rows.ndofs, cols.ndofs)
    result = sparse.csr_matrix(shape)
    r_all, c_all, v_all = [], [], []
    for cells, matrix in groups:
        if not len(cells):
            continue
        r = np.broadcast_to(rows.cell_dofs[cells][:, :, None], (len(cells),) + matrix.shape)
        cc = np.broadcast_to(cols.cell_dofs[cells][:, None, :], (len(cells),) + matrix.shape)
        v = np.broadcast_to(matrix[None], (len(cells),) + matrix.shape)
        keep = (r >= 0) & (cc >= 0)
        if mode == "sum":
            result = result + sparse.coo_matrix((v[keep], (r[keep], cc[keep])), shape=shape).tocsr()
        else:
            r_all.append(r[keep])
            c_all.append(cc[keep])
            v_all.append(v[keep])

    if mode == "sum":
        result.sum_duplicates()
        return result.tocsr()
    if not r_all:
        return result
    r = np.concatenate(r_all)
    cc = np.concatenate(c_all)
    v = np.concatenate(v_all)
    _, first = np.unique(r.astype(np.int64) * shape[1] + cc, return_index=True)
    return sparse.coo_matrix((v[first], (r[first], cc[first])), shape=shape).tocsr()


def scatter(rows: GlobalSpace, cols: GlobalSpace, local: List[np.ndarray],
            mode: str = "sum") -> sparse.csr_matrix:
    """Global matrix from one local matrix per translation class"""
    groups = [(cells, local[c]) for c, cells in rows.class_cells()]
    return scatter_groups(rows, cols, groups, mode)


def _check_same_mesh(*spaces: GlobalSpace) -> None:
    mesh = spaces[0].mesh
    if any(s.mesh is not mesh for s in spaces):
        raise ConfigurationError("Spaces live on different meshes")


def gradient_operator(grad_space: GlobalSpace, w_space: GlobalSpace) -> sparse.csr_matrix:
    """Column j holds the W DoFs of the gradient of Lagrange basis function j"""
    _check_same_mesh(grad_space, w_space)
    local = [w.apply(g.basis.grad()) for g, w in zip(grad_space.elements, w_space.elements)]
    return scatter(w_space, grad_space, local, mode="first")


def curl_operator(w_space: GlobalSpace, v_space: GlobalSpace) -> sparse.csr_matrix:
    _check_same_mesh(w_space, v_space)
    local = [v.apply(w.basis.curl()) for w, v in zip(w_space.elements, v_space.elements)]
    return scatter(v_space, w_space, local, mode="first")


def div_operator(v_space: GlobalSpace, q_space: GlobalSpace) -> sparse.csr_matrix:
    """Cell averages of the divergence, in the coordinates of the retained cells"""
    _check_same_mesh(v_space, q_space)
    local = [q.apply(v.basis.div()) for v, q in zip(v_space.elements, q_space.elements)]
    return scatter(q_space, v_space, local, mode="first")


def numerical_rank(matrix, rtol: Optional[float] = None) -> int:
    """Rank after row/column equilibration, by dense SVD"""
    rtol = settings.RANK_RTOL if rtol is None else rtol
    dense = matrix.toarray() if sparse.issparse(matrix) else np.asarray(matrix)
    if max(dense.shape, default=0) > settings.DENSE_LIMIT:
        raise ConfigurationError(
            f"Matrix of shape {dense.shape} exceeds the dense rank limit {settings.DENSE_LIMIT}",
        )
    if dense.size == 0:
        return 0
    scale = np.abs(dense).max()
    if scale == 0:
        return 0
    rows = np.linalg.norm(dense, axis=1)
    dense = dense[rows > 1e-14 * scale]
    cols = np.linalg.norm(dense, axis=0)
    dense = dense[:, cols > 1e-14 * scale]
    if dense.size == 0:
        return 0
    dense = dense / np.linalg.norm(dense, axis=1)[:, None]
    dense = dense / np.linalg.norm(dense, axis=0)[None, :]
    sigma = linalg.svdvals(dense)
    return int((sigma > rtol * sigma[0]).sum())


def complex_spaces(mesh: Mesh, k: int, variant: ComplexVariant) -> Dict[str, GlobalSpace]:
    variant = ComplexVariant(variant)
    partial = variant == ComplexVariant.PARTIAL_BC
    bc = BoundaryCondition.PARTIAL if partial else BoundaryCondition.FULL_ZERO
    return {
        "grad": build_space(mesh, ElementKind.LAGRANGE, k, BoundaryCondition.FULL_ZERO),
        "w": build_space(mesh, ElementKind.W, k, bc),
        "v": build_space(mesh, ElementKind.TW, k, bc),
        "q": build_space(mesh, ElementKind.DG0, k, BoundaryCondition.FULL_ZERO),
    }


def verify_complex(mesh: Mesh, k: int,
                   variant: Union[ComplexVariant, str] = ComplexVariant.ZERO_BC) -> ComplexReport:
    """Rank check of 0 -> V_h^g -> W -> V^d -> Q_h -> 0"""
    variant = ComplexVariant(variant)
    spaces = complex_spaces(mesh, k, variant)
    G = gradient_operator(spaces["grad"], spaces["w"])
    C = curl_operator(spaces["w"], spaces["v"])
    D = div_operator(spaces["v"], spaces["q"])

    dims = {name: space.ndofs for name, space in spaces.items()}
    expected = {name: expected_dimension(mesh, s.kind, k, s.bc) for name, s in spaces.items()}
    ranks = {"grad": numerical_rank(G), "curl": numerical_rank(C), "div": numerical_rank(D)}

    def relative(product, left, right) -> float:
        scale = max(abs(left).max(), 1e-300) * max(abs(right).max(), 1e-300)
        return float(abs(product).max() / scale) if product.nnz else 0.0

    compositions = {"curl_grad": relative(C @ G, C, G), "div_curl": relative(D @ C, D, C)}
    euler = (mesh.num_interior_vertices - mesh.num_interior_edges
             + mesh.num_interior_faces - mesh.num_cells + 1)

    exact_w = ranks["grad"] == dims["grad"] and ranks["curl"] == dims["w"] - dims["grad"]
    exact_v = ranks["curl"] == dims["v"] - ranks["div"]
    surjective = ranks["div"] == dims["q"]
    passed = (exact_w and exact_v and surjective and dims == expected
              and max(compositions.values()) < 1e-10)
    report = ComplexReport(
        n=mesh.n, k=k, variant=variant, dims=dims, expected_dims=expected, ranks=ranks,
        composition_norms=compositions, euler_residual=euler,
        exact_at_w=exact_w, exact_at_v=exact_v, div_surjective=surjective, passed=passed,
    )
    log = logger.info if passed else logger.error
    log(f"Complex ({variant.value}, n={mesh.n}, k={k}): dims={dims} ranks={ranks} passed={passed}")
    return report


# ---- discrete functions and interpolation ---------------------------------------


class DiscreteFunction:
    """Coefficient vector of a global space, evaluable cell by cell"""

    def __init__(self, space: GlobalSpace, coeffs: np.ndarray):
        self.space = space
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.coeffs.shape != (space.ndofs,):
            raise ConfigurationError(
                f"Coefficient vector of length {self.coeffs.shape} does not match {space.ndofs} DoFs",
            )

    def evaluate(self, cells: np.ndarray, x: np.ndarray, operand: str = "value") -> np.ndarray:
        """Values at physical points x (N, 3), each taken from the given cell"""
        cells = np.asarray(cells, dtype=int)
        x = np.asarray(x, dtype=float)
        classes = self.space.class_ids[cells]
        out = None
        for c in np.unique(classes):
            idx = np.flatnonzero(classes == c)
            basis = self.space.basis_field(int(c), operand)
            xi = (x[idx] - self.space.mesh.cell_centers[cells[idx]]) / basis.scale
            local = self.space.local_coefficients(self.coeffs, cells[idx])
            values = np.einsum("nm,f...m,nf->n...", monomial_values(xi), basis.coeffs, local)
            if out is None:
                out = np.zeros((len(x),) + values.shape[1:])
            out[idx] = values
        return out


def owner_cells(mesh: Mesh, dim: int) -> np.ndarray:
    """One adjacent cell per entity of the given dimension"""
    entities = cell_entities(mesh, np.arange(mesh.num_cells), dim)
    owners = -np.ones(_entity_count(mesh, dim), dtype=int)
    cells = np.repeat(np.arange(mesh.num_cells), entities.shape[1])
    owners[entities.reshape(-1)[::-1]] = cells[::-1]
    return owners


Source = Union[Callable[[np.ndarray], np.ndarray], DiscreteFunction]


def _family_values(space: GlobalSpace, family: DofFamily, source: Source, operand: str) -> np.ndarray:
    mesh = space.mesh
    count = _entity_count(mesh, family.entity_dim)
    coords = entity_vertices(mesh, family.entity_dim, np.arange(count))
    points, weights = family_dofs(family, coords, space.k)
    if isinstance(source, DiscreteFunction):
        owners = owner_cells(mesh, family.entity_dim)
        per_entity = int(np.prod(points.shape[1:-1]))
        cells = np.repeat(owners, per_entity)
        return apply_to_callable(lambda pts: source.evaluate(cells, pts, operand), points, weights)
    return apply_to_callable(source, points, weights)


def canonical_interpolate(space: GlobalSpace, v: Source,
                          curl: Optional[Source] = None) -> np.ndarray:
    """Free coefficients whose DoFs equal the DoFs of v

    For W spaces the face-curl DoFs need curl v; a DiscreteFunction source
    provides it itself, a callable source needs the curl argument.
    """
    full = np.zeros(space.full_size)
    for family, offset in zip(space.families, space.offsets):
        operand = family.operand
        source = v
        if operand == "curl" and not isinstance(v, DiscreteFunction):
            if curl is None:
                raise ConfigurationError(f"Interpolation into {space.kind.value} needs curl of the field")
            source, operand = curl, "value"
        values = _family_values(space, family, source, operand)
        full[offset:offset + len(values)] = values
    return full[space.free]


def conformity_check(space: GlobalSpace, coeffs: np.ndarray, tol: float = 1e-8) -> ConformityReport:
    """Tangential jumps across interior faces and traces on the boundary"""
    mesh = space.mesh
    u = DiscreteFunction(space, coeffs)
    faces = np.arange(mesh.num_faces)
    coords = entity_vertices(mesh, 2, faces)
    points, _ = map_to_face(simplex_quadrature(2, settings.QUAD_DEGREE_FACE), coords)
    _, _, normals, _, _ = face_frames(coords)
    nq = points.shape[1]

    def tangential(values, n):
        return values - np.einsum("fqd,fd->fq", values, n)[..., None] * n[:, None, :]

    interior = np.flatnonzero(~mesh.boundary_faces)
    side0 = mesh.face_cells[interior, 0]
    side1 = mesh.face_cells[interior, 1]
    pts = points[interior].reshape(-1, 3)
    v0 = u.evaluate(np.repeat(side0, nq), pts).reshape(len(interior), nq, 3)
    v1 = u.evaluate(np.repeat(side1, nq), pts).reshape(len(interior), nq, 3)
    scale = max(np.abs(v0).max(initial=0.0), np.abs(v1).max(initial=0.0), 1e-300)
    jump = float(np.abs(tangential(v0 - v1, normals[interior])).max(initial=0.0) / scale)

    boundary_trace = None
    if space.bc != BoundaryCondition.NONE:
        bfaces = np.flatnonzero(mesh.boundary_faces)
        vb = u.evaluate(np.repeat(mesh.face_cells[bfaces, 0], nq), points[bfaces].reshape(-1, 3))
        vb = vb.reshape(len(bfaces), nq, 3)
        boundary_trace = float(np.abs(tangential(vb, normals[bfaces])).max(initial=0.0) / scale)

    normal_jump = None
    if space.kind in (ElementKind.W, ElementKind.ND):
        family = DofFamily("face_normal", 2, DofKind.FACE_NORMAL, 3)
        fpoints, fweights = family_dofs(family, coords[interior], space.k)
        flat = fpoints.reshape(-1, 3)
        per_face = int(np.prod(fpoints.shape[1:-1]))
        c0 = u.evaluate(np.repeat(side0, per_face), flat, "curl").reshape(fpoints.shape)
        c1 = u.evaluate(np.repeat(side1, per_face), flat, "curl").reshape(fpoints.shape)
        moments0 = np.einsum("emqd,emqd->em", fweights, c0)
        moments1 = np.einsum("emqd,emqd->em", fweights, c1)
        normal_scale = max(np.abs(moments0).max(initial=0.0), 1e-300)
        normal_jump = float(np.abs(moments0 - moments1).max(initial=0.0) / normal_scale)

    values = [jump] + [x for x in (boundary_trace, normal_jump) if x is not None]
    report = ConformityReport(
        tangential_jump=jump,
        boundary_tangential_trace=boundary_trace,
        curl_normal_moment_jump=normal_jump,
        passed=max(values) < tol,
    )
    logger.debug(f"Conformity of {space.kind.value}_{space.k} ({space.bc.value}): {report}")
    return report
