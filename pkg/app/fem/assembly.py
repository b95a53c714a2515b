"""
Assembly of bilinear forms, the Nitsche form and load vectors

Local matrices are computed once per translation class and scattered to
every cell of the class.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Tuple
import logging

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg

from app.core.config import settings
from app.core.exceptions import ConfigurationError
from app.fem.elements import ElementKind, entity_vertices
from app.fem.mesh import local_face_index
from app.fem.quadrature import map_to_face, simplex_quadrature
from app.fem.spaces import GlobalSpace, scatter, scatter_groups
from app.models.fem import FormConfig

logger = logging.getLogger(__name__)

FORMS = ("mass", "vector_mass", "b", "a_h", "c", "stiffness")


@dataclass
class SparseOperator:
    """CSR matrix with the properties the solver relies on"""
    matrix: sparse.csr_matrix
    symmetric: bool = False
    name: str = ""
    info: Dict[str, Any] = field(default_factory=dict)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    def __matmul__(self, other):
        return self.matrix @ other

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def asymmetry(self) -> float:
        diff = abs(self.matrix - self.matrix.T)
        scale = max(abs(self.matrix).max(), 1e-300) if self.matrix.nnz else 1.0
        return float(diff.max() / scale) if diff.nnz else 0.0


def _config(config: Optional[FormConfig]) -> FormConfig:
    if config is not None:
        return config
    return FormConfig(
        sigma=settings.SIGMA, epsilon=settings.EPSILON,
        cell_degree=settings.QUAD_DEGREE_CELL, face_degree=settings.QUAD_DEGREE_FACE,
        load_degree=settings.QUAD_DEGREE_LOAD,
    )


def _local_matrix(form: str, row: GlobalSpace, col: GlobalSpace, c: int, degree: int) -> np.ndarray:
    _, w = row.quadrature(c, degree)
    if form in ("mass", "vector_mass"):
        a = b = row.tabulate(c, "value", degree)
    elif form == "b":
        a = b = row.tabulate(c, "curl", degree)
    elif form == "a_h":
        a = b = row.tabulate(c, "grad_curl", degree)
    elif form == "stiffness":
        a = b = row.tabulate(c, "grad", degree)
    elif form == "c":
        a = row.tabulate(c, "value", degree)
        b = col.tabulate(c, "grad", degree)
    else:
        raise ConfigurationError(f"Unknown form '{form}'", {"forms": FORMS})
    a = a.reshape(a.shape[0], a.shape[1], -1)
    b = b.reshape(b.shape[0], b.shape[1], -1)
    return np.einsum("q,qik,qjk->ij", w, a, b)


def assemble_form(form: str, space: GlobalSpace, other: Optional[GlobalSpace] = None,
                  config: Optional[FormConfig] = None) -> SparseOperator:
    """Assemble mass, vector_mass, b, a_h, c (rows space, columns other) or stiffness"""
    config = _config(config)
    if form not in FORMS:
        raise ConfigurationError(f"Unknown form '{form}'", {"forms": FORMS})
    if form == "c":
        if other is None or other.kind != ElementKind.LAGRANGE:
            raise ConfigurationError("Form c couples a vector space with a Lagrange space")
        if other.mesh is not space.mesh:
            raise ConfigurationError("Spaces live on different meshes")
    if form == "stiffness" and space.kind != ElementKind.LAGRANGE:
        raise ConfigurationError("Stiffness is assembled on Lagrange spaces")
    col = other if form == "c" else space

    local = [_local_matrix(form, space, col, c, config.cell_degree) for c in range(len(space.elements))]
    matrix = scatter(space, col, local, mode="sum")
    symmetric = form != "c"
    if symmetric:
        matrix = ((matrix + matrix.T) * 0.5).tocsr()
    logger.debug(f"Assembled {form} on {space.kind.value}_{space.k}: shape {matrix.shape}, nnz {matrix.nnz}")
    return SparseOperator(matrix=matrix, symmetric=symmetric, name=form)


# ---- boundary faces ------------------------------------------------------------


def _boundary_face_groups(space: GlobalSpace):
    """Boundary faces grouped by (class of the adjacent cell, local face index)"""
    mesh = space.mesh
    faces = np.flatnonzero(mesh.boundary_faces)
    cells = mesh.face_cells[faces, 0]
    local = local_face_index(mesh, faces, 0)
    classes = space.class_ids[cells]
    keys = classes * 4 + local
    groups = []
    for key in np.unique(keys):
        idx = np.flatnonzero(keys == key)
        groups.append((int(key // 4), int(key % 4), faces[idx], cells[idx]))
    return groups


def _face_tables(space: GlobalSpace, c: int, face: int, cell: int, local: int, degree: int):
    mesh = space.mesh
    coords = entity_vertices(mesh, 2, np.array([face]))
    points, weights = map_to_face(simplex_quadrature(2, degree), coords)
    element = space.elements[c]
    xi = (points[0] - mesh.cell_centers[cell]) / element.scale
    curl = space.basis_field(c, "curl").values_local(xi)
    grad_curl = space.basis_field(c, "grad_curl").values_local(xi)
    normal = mesh.outward_normal(cell, local)
    return weights[0], curl, grad_curl, normal, float(mesh.face_diameters[face])


def nitsche_parts(space: GlobalSpace, config: Optional[FormConfig] = None):
    """(a_h, consistency N, boundary curl mass S) with N_ij = sum_F (curl phi_i, d_n curl phi_j)_F"""
    config = _config(config)
    if space.kind != ElementKind.W:
        raise ConfigurationError("The Nitsche form is defined on W spaces")
    A = assemble_form("a_h", space, config=config)
    n_groups = []
    for c, local, faces, cells in _boundary_face_groups(space):
        w, curl, grad_curl, normal, h_F = _face_tables(space, c, faces[0], cells[0], local, config.face_degree)
        normal_derivative = np.einsum("qjde,e->qjd", grad_curl, normal)
        n_groups.append((cells, np.einsum("q,qid,qjd->ij", w, curl, normal_derivative)))
    N = scatter_groups(space, space, n_groups)
    return A.matrix, N, boundary_curl_mass(space, config).matrix


def boundary_curl_mass(space: GlobalSpace, config: Optional[FormConfig] = None) -> SparseOperator:
    """sum over boundary faces of h_F^-1 (curl u, curl v)_F"""
    config = _config(config)
    groups = []
    for c, local, faces, cells in _boundary_face_groups(space):
        w, curl, _, _, h_F = _face_tables(space, c, faces[0], cells[0], local, config.face_degree)
        groups.append((cells, np.einsum("q,qid,qjd->ij", w, curl, curl) / h_F))
    S = scatter_groups(space, space, groups)
    return SparseOperator(matrix=((S + S.T) * 0.5).tocsr(), symmetric=True, name="boundary_curl_mass")


def smallest_eigenvalue(matrix, dense_limit: Optional[int] = None) -> Tuple[float, float]:
    """(smallest, largest) eigenvalue of a symmetric matrix"""
    dense_limit = settings.DENSE_LIMIT if dense_limit is None else dense_limit
    n = matrix.shape[0]
    if n == 0:
        return 0.0, 0.0
    if n <= dense_limit:
        dense = matrix.toarray() if sparse.issparse(matrix) else np.asarray(matrix)
        values = linalg.eigvalsh(dense)
        return float(values[0]), float(values[-1])
    try:
        largest = splinalg.eigsh(matrix, k=1, which="LA", return_eigenvectors=False, tol=1e-6)[0]
        smallest = splinalg.eigsh(matrix, k=1, which="SA", return_eigenvectors=False,
                                  tol=1e-6, maxiter=20 * n)[0]
    except splinalg.ArpackNoConvergence as e:
        logger.warning(f"Eigenvalue estimate did not converge: {e}")
        return float("nan"), float("nan")
    return float(smallest), float(largest)


def is_psd(matrix, tol: Optional[float] = None) -> Tuple[bool, float, float]:
    tol = settings.PSD_TOL if tol is None else tol
    lo, hi = smallest_eigenvalue(matrix)
    if not np.isfinite(lo):
        # unconverged estimate
        return False, lo, hi
    return bool(lo >= -tol * max(abs(hi), abs(lo), 1e-300)), lo, hi


def assemble_nitsche(space: GlobalSpace, config: Optional[FormConfig] = None,
                     check_psd: Optional[bool] = None) -> SparseOperator:
    """Nitsche-modified a_h on W_h:

        a_h(u, v) - sum_F (d_n curl u, curl v)_F - sum_F (curl u, d_n curl v)_F
                  + sum_F sigma / h_F (curl u, curl v)_F
    """
    config = _config(config)
    A, N, S = nitsche_parts(space, config)
    matrix = (A - N - N.T + config.sigma * S).tocsr()
    matrix = ((matrix + matrix.T) * 0.5).tocsr()
    operator = SparseOperator(matrix=matrix, symmetric=True, name="nitsche",
                              info={"sigma": config.sigma, "epsilon": config.epsilon})

    if check_psd is None:
        check_psd = space.ndofs <= settings.DENSE_LIMIT
    if check_psd:
        psd, lo, hi = is_psd(matrix)
        operator.info.update({"psd": psd, "min_eigenvalue": lo, "max_eigenvalue": hi})
        if not psd and not np.isfinite(lo):
            logger.warning(f"Nitsche PSD check failed at sigma={config.sigma}; coercivity unconfirmed")
        elif not psd:
            logger.warning(
                f"Nitsche form is indefinite at sigma={config.sigma} (min eigenvalue {lo:.3e}): "
                f"sigma below sigma_0; increase --sigma"
            )
    else:
        logger.debug(f"Skipping PSD check for {space.ndofs} DoFs")
    return operator


def find_sigma_threshold(space: GlobalSpace, config: Optional[FormConfig] = None,
                         lo: float = 1e-3, hi: float = 1.0, rtol: float = 1e-2,
                         max_sigma: float = 1e6) -> float:
    """Smallest sigma (to relative accuracy rtol) at which the Nitsche form is PSD"""
    config = _config(config)
    A, N, S = nitsche_parts(space, config)
    base = (A - N - N.T).toarray()
    base = 0.5 * (base + base.T)
    S = S.toarray()

    def psd(sigma: float) -> bool:
        values = linalg.eigvalsh(base + sigma * S)
        return values[0] >= -settings.PSD_TOL * max(abs(values[-1]), 1e-300)

    while not psd(hi):
        lo, hi = hi, 2.0 * hi
        if hi > max_sigma:
            raise ConfigurationError(f"Nitsche form is not PSD for any sigma <= {max_sigma}")
    if psd(lo):
        return lo
    while hi / lo > 1.0 + rtol:
        mid = np.sqrt(lo * hi)
        if psd(mid):
            hi = mid
        else:
            lo = mid
    logger.info(f"Empirical Nitsche threshold sigma_0 ~ {hi:.4g} on n={space.mesh.n}")
    return float(hi)


def assemble_load(space: GlobalSpace, f: Callable[[np.ndarray], np.ndarray],
                  degree: Optional[int] = None) -> np.ndarray:
    """Entries (f, phi_i) by cell quadrature"""
    degree = settings.QUAD_DEGREE_LOAD if degree is None else degree
    load = np.zeros(space.ndofs)
    for c, cells in space.class_cells():
        if not len(cells):
            continue
        xi, w = space.quadrature(c, degree)
        phi = space.tabulate(c, "value", degree)
        x = space.physical_points(cells, xi)
        values = np.asarray(f(x.reshape(-1, 3)), dtype=float).reshape(x.shape[:2] + phi.shape[2:])
        if phi.ndim == 2:
            local = np.einsum("q,cq,qi->ci", w, values, phi)
        else:
            local = np.einsum("q,cqd,qid->ci", w, values, phi)
        dofs = space.cell_dofs[cells]
        keep = dofs >= 0
        load += np.bincount(dofs[keep], weights=local[keep], minlength=space.ndofs)
    return load


# ---- norms ------------------------------------------------------------------------


def energy_norm(v: np.ndarray, M, B, A, epsilon: float) -> float:
    """||v||_{eps,h}^2 = v^T (M + B + eps^2 A) v"""
    value = v @ (M @ v) + v @ (B @ v) + epsilon ** 2 * (v @ (A @ v))
    return float(np.sqrt(max(value, 0.0)))


def nitsche_energy_norm(v: np.ndarray, M, B, A, S, epsilon: float) -> float:
    """Energy norm plus eps^2 sum_F h_F^-1 ||curl v||_F^2"""
    value = energy_norm(v, M, B, A, epsilon) ** 2 + epsilon ** 2 * (v @ (S @ v))
    return float(np.sqrt(max(value, 0.0)))
