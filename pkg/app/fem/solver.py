"""
Saddle point systems of the mixed and Nitsche discretizations

    [[A_eps, C], [C^T, 0]] [u; lambda] = [f; 0]

with A_eps = eps^2 a + b on the W space and C the coupling (v, grad q)
to the Lagrange multiplier space.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional
import logging
import time

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg

from app.core.config import settings
from app.core.exceptions import ConfigurationError, SolverError
from app.fem.assembly import (
    assemble_form,
    assemble_load,
    assemble_nitsche,
    energy_norm,
)
from app.fem.elements import ElementKind
from app.fem.mesh import Mesh
from app.fem.spaces import GlobalSpace, build_space, gradient_operator
from app.models.fem import BoundaryCondition, FormConfig, Method, SolverBackend

logger = logging.getLogger(__name__)


@dataclass
class SaddleSystem:
    """Blocks and data of one discrete problem"""
    A_eps: sparse.csr_matrix
    C: sparse.csr_matrix
    rhs: np.ndarray
    method: Method
    w_space: Optional[GlobalSpace] = None
    q_space: Optional[GlobalSpace] = None
    mass: Optional[sparse.csr_matrix] = None
    multiplier_stiffness: Optional[sparse.csr_matrix] = None
    info: Dict[str, Any] = field(default_factory=dict)

    @property
    def sizes(self):
        return self.A_eps.shape[0], self.C.shape[1]

    def block_matrix(self) -> sparse.csc_matrix:
        return sparse.bmat([[self.A_eps, self.C], [self.C.T, None]], format="csc")

    def block_rhs(self) -> np.ndarray:
        return np.concatenate([self.rhs, np.zeros(self.C.shape[1])])


@dataclass(frozen=True)
class Solution:
    u: np.ndarray
    lam: np.ndarray
    residual: float
    wall_ms: float
    backend: SolverBackend
    iterations: Optional[int] = None


def build_saddle_system(mesh: Mesh, method: Method, k: int, f: Callable[[np.ndarray], np.ndarray],
                        config: Optional[FormConfig] = None) -> SaddleSystem:
    """Assemble the mixed (W_h0) or Nitsche (W_h) system for load f"""
    method = Method(method)
    config = config or FormConfig(sigma=settings.SIGMA, epsilon=settings.EPSILON)
    bc = BoundaryCondition.FULL_ZERO if method == Method.MIXED else BoundaryCondition.PARTIAL
    w_space = build_space(mesh, ElementKind.W, k, bc)
    q_space = build_space(mesh, ElementKind.LAGRANGE, k, BoundaryCondition.FULL_ZERO)

    M = assemble_form("vector_mass", w_space, config=config).matrix
    B = assemble_form("b", w_space, config=config).matrix
    if method == Method.MIXED:
        A = assemble_form("a_h", w_space, config=config)
    else:
        A = assemble_nitsche(w_space, config)
    C = assemble_form("c", w_space, q_space, config=config).matrix
    L = assemble_form("stiffness", q_space, config=config).matrix
    rhs = assemble_load(w_space, f, config.load_degree)

    A_eps = (config.epsilon ** 2 * A.matrix + B).tocsr()
    logger.info(
        f"Assembled {method.value} system on n={mesh.n}: W {w_space.ndofs} DoFs, "
        f"multiplier {q_space.ndofs} DoFs, eps={config.epsilon}"
    )
    return SaddleSystem(
        A_eps=A_eps, C=C, rhs=rhs, method=method, w_space=w_space, q_space=q_space,
        mass=M, multiplier_stiffness=L,
        info={"epsilon": config.epsilon, "sigma": config.sigma, "A": A.matrix, "B": B, **A.info},
    )


def _block_preconditioner(system: SaddleSystem) -> splinalg.LinearOperator:
    """blockdiag(diag(M + A_eps)^-1, L^-1), symmetric positive definite"""
    nu, nl = system.sizes
    w_block = system.A_eps if system.mass is None else system.A_eps + system.mass
    diagonal = np.abs(w_block.diagonal())
    diagonal[diagonal == 0] = 1.0
    inv_diagonal = 1.0 / diagonal
    if system.multiplier_stiffness is not None:
        lu = splinalg.splu(sparse.csc_matrix(system.multiplier_stiffness))
        solve_l = lu.solve
    else:
        solve_l = lambda r: r

    def apply(r):
        r = np.asarray(r).ravel()
        return np.concatenate([inv_diagonal * r[:nu], solve_l(r[nu:])])

    return splinalg.LinearOperator((nu + nl, nu + nl), matvec=apply, dtype=float)


def _first_block_residual(system: SaddleSystem, u: np.ndarray, lam: np.ndarray) -> float:
    r = system.A_eps @ u + system.C @ lam - system.rhs
    return float(np.abs(r).max() / max(np.abs(system.rhs).max(), 1e-300))


def _converged(system: SaddleSystem, K, rhs, x, tol: float) -> bool:
    nu = system.sizes[0]
    return (np.linalg.norm(K @ x - rhs) <= tol * np.linalg.norm(rhs)
            and _first_block_residual(system, x[:nu], x[nu:]) <= 0.1 * settings.GALERKIN_TOL)


def _direct(K, rhs, system: SaddleSystem, tol: float):
    lu = splinalg.splu(K)
    x = lu.solve(rhs)
    for _ in range(settings.REFINEMENT_PASSES):
        if not np.all(np.isfinite(x)) or _converged(system, K, rhs, x, tol):
            break
        x = x + lu.solve(rhs - K @ x)
    if not np.all(np.isfinite(x)):
        raise RuntimeError("non-finite solution")
    return x


def _minres(K, rhs, system: SaddleSystem, tol: float):
    """Preconditioned MINRES, restarted on the residual until the Galerkin check holds"""
    iterations = [0]

    def count(_):
        iterations[0] += 1

    preconditioner = _block_preconditioner(system)
    x = np.zeros_like(rhs)
    for _ in range(settings.REFINEMENT_PASSES + 1):
        if iterations[0] and _converged(system, K, rhs, x, tol):
            break
        dx, info = splinalg.minres(
            K, rhs - K @ x, rtol=tol, maxiter=settings.MINRES_MAXITER,
            M=preconditioner, callback=count,
        )
        x = x + dx
        if info != 0:
            residual = float(np.linalg.norm(K @ x - rhs) / np.linalg.norm(rhs))
            raise SolverError(
                f"MINRES did not converge after {iterations[0]} iterations",
                {"info": int(info), "residual": residual, "method": system.method.value},
            )
    return x, iterations[0]


def solve(system: SaddleSystem, backend: SolverBackend = SolverBackend.DIRECT,
          tol: Optional[float] = None) -> Solution:
    """Solve the block system; a failing factorization falls back to MINRES"""
    backend = SolverBackend(backend)
    tol = settings.SOLVER_TOL if tol is None else tol
    nu, nl = system.sizes
    if system.C.shape[0] != nu:
        raise ConfigurationError(f"Coupling block has {system.C.shape[0]} rows for {nu} W DoFs")

    start = time.perf_counter()
    K = system.block_matrix()
    rhs = system.block_rhs()
    if not np.any(rhs):
        return Solution(u=np.zeros(nu), lam=np.zeros(nl), residual=0.0,
                        wall_ms=(time.perf_counter() - start) * 1000, backend=backend)

    iterations = None
    if backend == SolverBackend.DIRECT:
        try:
            x = _direct(K, rhs, system, tol)
        except RuntimeError as e:
            logger.warning(f"Direct factorization failed ({e}); falling back to MINRES")
            backend = SolverBackend.MINRES
    if backend == SolverBackend.MINRES:
        x, iterations = _minres(K, rhs, system, tol)

    residual = float(np.linalg.norm(K @ x - rhs) / np.linalg.norm(rhs))
    wall_ms = (time.perf_counter() - start) * 1000
    galerkin = _first_block_residual(system, x[:nu], x[nu:])
    if not galerkin <= settings.GALERKIN_TOL:
        raise SolverError(
            f"Galerkin residual {galerkin:.2e} exceeds {settings.GALERKIN_TOL:.0e}",
            {"galerkin_residual": galerkin, "residual": residual, "backend": backend.value,
             "method": system.method.value},
        )
    logger.info(
        f"Solved {system.method.value} system ({nu}+{nl} unknowns) with {backend.value} "
        f"in {wall_ms:.0f} ms, residual {residual:.2e}"
    )
    return Solution(u=x[:nu], lam=x[nu:], residual=residual, wall_ms=wall_ms,
                    backend=backend, iterations=iterations)


def galerkin_residual(system: SaddleSystem, solution: Solution) -> float:
    """max_i |A_eps u + C lambda - f|_i relative to max |f|"""
    return _first_block_residual(system, solution.u, solution.lam)


# ---- stability checks ---------------------------------------------------------------


def discrete_poincare_constant(mesh: Mesh, k: int, config: Optional[FormConfig] = None) -> float:
    """min ||curl v||_0 / ||v||_0 over {v in W_h0 : (v, grad q) = 0 for all q}"""
    w_space = build_space(mesh, ElementKind.W, k, BoundaryCondition.FULL_ZERO)
    q_space = build_space(mesh, ElementKind.LAGRANGE, k, BoundaryCondition.FULL_ZERO)
    if w_space.ndofs > settings.DENSE_LIMIT:
        raise ConfigurationError(
            f"Poincare eigenproblem on {w_space.ndofs} DoFs exceeds the dense limit {settings.DENSE_LIMIT}",
        )
    M = assemble_form("vector_mass", w_space, config=config).toarray()
    B = assemble_form("b", w_space, config=config).toarray()
    C = assemble_form("c", w_space, q_space, config=config).toarray()

    Z = linalg.null_space(C.T) if C.shape[1] else np.eye(w_space.ndofs)
    try:
        values = linalg.eigh(Z.T @ B @ Z, Z.T @ M @ Z, subset_by_index=[0, 0], eigvals_only=True)
    except linalg.LinAlgError as e:
        raise SolverError(f"Poincare eigenproblem failed: {e}", {"n": mesh.n, "k": k})
    beta = float(np.sqrt(max(values[0], 0.0)))
    logger.info(f"Discrete Poincare constant on n={mesh.n}, k={k}: {beta:.4f}")
    return beta


@dataclass(frozen=True)
class InfSupWitness:
    ratio: float
    seminorm: float

    @property
    def relative_defect(self) -> float:
        return abs(self.ratio / self.seminorm - 1.0)


def infsup_witness_check(mesh: Mesh, k: int, mu: Optional[np.ndarray] = None,
                         rng: Optional[np.random.Generator] = None, epsilon: float = 0.0,
                         config: Optional[FormConfig] = None) -> InfSupWitness:
    """c(grad mu, mu) / ||grad mu||_{eps,h} against |mu|_1"""
    w_space = build_space(mesh, ElementKind.W, k, BoundaryCondition.FULL_ZERO)
    q_space = build_space(mesh, ElementKind.LAGRANGE, k, BoundaryCondition.FULL_ZERO)
    if mu is None:
        rng = rng or np.random.default_rng(0)
        mu = rng.standard_normal(q_space.ndofs)
    mu = np.asarray(mu, dtype=float)
    if not np.any(mu):
        raise ConfigurationError("The witness needs a nonzero multiplier")

    v = gradient_operator(q_space, w_space) @ mu
    M = assemble_form("vector_mass", w_space, config=config).matrix
    B = assemble_form("b", w_space, config=config).matrix
    A = assemble_form("a_h", w_space, config=config).matrix
    C = assemble_form("c", w_space, q_space, config=config).matrix
    L = assemble_form("stiffness", q_space, config=config).matrix

    ratio = float(v @ (C @ mu)) / energy_norm(v, M, B, A, epsilon)
    seminorm = float(np.sqrt(mu @ (L @ mu)))
    witness = InfSupWitness(ratio=ratio, seminorm=seminorm)
    logger.debug(f"Inf-sup witness on n={mesh.n}: ratio {ratio:.6e}, |mu|_1 {seminorm:.6e}")
    return witness
