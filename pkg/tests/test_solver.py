import numpy as np
import pytest
from scipy import sparse
from scipy.sparse import linalg as splinalg

from app.core.config import settings
from app.core.exceptions import ConfigurationError, SolverError
from app.fem.assembly import energy_norm
from app.fem.manufactured import ManufacturedProblem
from app.fem import solver
from app.fem.mesh import build_uniform_cube_mesh
from app.fem.solver import (
    SaddleSystem,
    build_saddle_system,
    discrete_poincare_constant,
    galerkin_residual,
    infsup_witness_check,
    solve,
)
from app.fem.spaces import gradient_operator
from app.models.fem import FormConfig, Method, SolverBackend


@pytest.fixture(scope="module")
def mixed2(mesh2):
    return build_saddle_system(mesh2, Method.MIXED, 1, ManufacturedProblem().f, FormConfig())


def _copy(system, rhs):
    return SaddleSystem(
        A_eps=system.A_eps, C=system.C, rhs=rhs, method=system.method,
        w_space=system.w_space, q_space=system.q_space, mass=system.mass,
        multiplier_stiffness=system.multiplier_stiffness,
    )


def test_zero_load_gives_zero_solution(mixed2):
    solution = solve(_copy(mixed2, np.zeros_like(mixed2.rhs)))
    assert not solution.u.any() and not solution.lam.any()


def test_gradient_load_goes_to_multiplier(mixed2, rng):
    g = rng.standard_normal(mixed2.C.shape[1])
    solution = solve(_copy(mixed2, mixed2.C @ g))
    assert np.abs(solution.u).max() < 1e-8
    assert np.allclose(solution.lam, g, atol=1e-8 * np.abs(g).max())


def test_divergence_free_load_has_zero_multiplier(mixed2, rng):
    w = rng.standard_normal(mixed2.A_eps.shape[0])
    G = gradient_operator(mixed2.q_space, mixed2.w_space)
    w = w - G @ splinalg.spsolve(mixed2.multiplier_stiffness.tocsc(), mixed2.C.T @ w)
    solution = solve(_copy(mixed2, mixed2.A_eps @ w))
    assert np.allclose(solution.u, w, atol=1e-7 * np.abs(w).max())
    assert np.abs(solution.lam).max() < 1e-7 * np.abs(w).max()


def test_direct_and_minres_agree(mixed2):
    direct = solve(mixed2, SolverBackend.DIRECT)
    iterative = solve(mixed2, SolverBackend.MINRES, tol=1e-12)
    assert iterative.backend == SolverBackend.MINRES
    assert iterative.iterations > 0
    M, B, A = mixed2.mass, mixed2.info["B"], mixed2.info["A"]
    diff = energy_norm(direct.u - iterative.u, M, B, A, 0.0)
    assert diff <= 1e-7 * energy_norm(direct.u, M, B, A, 0.0)
    assert galerkin_residual(mixed2, iterative) < 1e-9


def test_failed_galerkin_check_raises(mixed2, monkeypatch):
    monkeypatch.setattr(solver, "_direct", lambda K, rhs, system, tol: np.zeros_like(rhs))
    with pytest.raises(SolverError, match="Galerkin residual") as excinfo:
        solve(mixed2, SolverBackend.DIRECT)
    assert excinfo.value.context["galerkin_residual"] == pytest.approx(1.0)
    assert excinfo.value.exit_code == 3


def test_galerkin_tolerance_is_configurable(mixed2, monkeypatch):
    monkeypatch.setattr(settings, "GALERKIN_TOL", -1.0)
    with pytest.raises(SolverError, match="Galerkin residual"):
        solve(mixed2, SolverBackend.DIRECT)


def test_minres_iteration_cap_raises(mixed2, monkeypatch):
    monkeypatch.setattr(settings, "MINRES_MAXITER", 1)
    with pytest.raises(SolverError) as excinfo:
        solve(mixed2, SolverBackend.MINRES)
    assert excinfo.value.context["residual"] > 1e-9
    assert excinfo.value.exit_code == 3


def test_direct_solution_satisfies_galerkin_equations(mixed2):
    solution = solve(mixed2)
    assert solution.residual < 1e-9
    assert galerkin_residual(mixed2, solution) < 1e-9
    assert np.abs(mixed2.C.T @ solution.u).max() < 1e-9 * np.abs(solution.u).max()


def test_nitsche_system_solves(mesh1):
    system = build_saddle_system(mesh1, Method.NITSCHE, 1, ManufacturedProblem().f,
                                 FormConfig(epsilon=1e-3, sigma=10.0))
    assert system.info["sigma"] == 10.0
    assert system.info["psd"]
    solution = solve(system)
    assert galerkin_residual(system, solution) < 1e-9


def test_vanishing_perturbation_limit(mesh2, mixed2):
    f = ManufacturedProblem().f
    tiny = build_saddle_system(mesh2, Method.MIXED, 1, f, FormConfig(epsilon=1e-8))
    u0, u_tiny = solve(mixed2).u, solve(tiny).u
    M = mixed2.mass
    diff = np.sqrt((u0 - u_tiny) @ (M @ (u0 - u_tiny)))
    assert diff < 1e-5 * np.sqrt(u0 @ (M @ u0))


def test_mismatched_coupling_rejected():
    system = SaddleSystem(A_eps=sparse.identity(3, format="csr"), C=sparse.csr_matrix((2, 1)),
                          rhs=np.ones(3), method=Method.MIXED)
    with pytest.raises(ConfigurationError):
        solve(system)


def test_poincare_constant_is_positive(mesh1, mesh2):
    assert discrete_poincare_constant(mesh1, 1) > 0
    assert discrete_poincare_constant(mesh2, 1) > 0


@pytest.mark.slow
def test_poincare_constant_is_uniform(mesh2):
    beta2 = discrete_poincare_constant(mesh2, 1)
    beta4 = discrete_poincare_constant(build_uniform_cube_mesh(4), 1)
    assert beta4 / beta2 >= 0.75


@pytest.mark.parametrize("k", [1, 2])
def test_infsup_witness_is_exact(mesh2, rng, k):
    witness = infsup_witness_check(mesh2, k, rng=rng)
    assert witness.relative_defect < 1e-10


def test_infsup_witness_is_homogeneous(mesh1, rng):
    mu = rng.standard_normal(1)
    once = infsup_witness_check(mesh1, 1, mu=mu)
    thrice = infsup_witness_check(mesh1, 1, mu=3.0 * mu)
    assert thrice.ratio == pytest.approx(3.0 * once.ratio)


def test_infsup_witness_needs_nonzero_multiplier(mesh1):
    with pytest.raises(ConfigurationError):
        infsup_witness_check(mesh1, 1, mu=np.zeros(1))
