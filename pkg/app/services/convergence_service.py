"""
Convergence studies of the mixed and Nitsche methods
Builds, solves and measures one level at a time and renders the tables
"""

import logging
import math
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.config import get_solver_backend, settings
from app.core.exceptions import ConfigurationError, SolverError
from app.core.logging_config import StructuredLogger
from app.fem.manufactured import ManufacturedProblem
from app.fem.mesh import build_uniform_cube_mesh
from app.fem.quadrature import map_to_face, simplex_quadrature
from app.fem.elements import entity_vertices
from app.fem.solver import SaddleSystem, Solution, build_saddle_system, solve
from app.fem.spaces import DiscreteFunction, GlobalSpace
from app.models.fem import (
    ConvergenceTable,
    ErrorReport,
    FormConfig,
    Method,
    ReferenceDeviation,
    SolverBackend,
)

logger = logging.getLogger(__name__)
structured = StructuredLogger(__name__)

CSV_COLUMNS = [
    "h", "err_l2", "order_l2", "err_curl", "order_curl",
    "err_energy", "order_energy", "lambda_h1", "wall_ms",
]
ERROR_COLUMNS = ("err_l2", "err_curl", "err_energy")

# Published errors for k = 1, keyed by (method, epsilon) then n:
# (err_l2, err_curl, err_energy, order_l2, order_curl, order_energy)
REFERENCE_TABLES: Dict[Tuple[str, float], Dict[int, Tuple]] = {
    ("mixed", 0.0): {
        2: (5.142e-01, 5.386e+00, 5.410e+00, None, None, None),
        4: (1.526e-01, 2.573e+00, 2.577e+00, 1.75, 1.07, 1.07),
        8: (5.390e-02, 1.495e+00, 1.496e+00, 1.50, 0.78, 0.78),
        16: (2.229e-02, 9.933e-01, 9.936e-01, 1.27, 0.59, 0.59),
    },
    ("mixed", 1e-3): {
        2: (5.143e-01, 5.386e+00, 5.412e+00, None, None, None),
        4: (1.529e-01, 2.573e+00, 2.583e+00, 1.75, 1.07, 1.07),
        8: (5.451e-02, 1.495e+00, 1.509e+00, 1.49, 0.78, 0.78),
        16: (2.358e-02, 9.943e-01, 1.027e+00, 1.21, 0.59, 0.56),
    },
    ("nitsche", 0.0): {
        2: (4.660e-01, 4.553e+00, 4.576e+00, None, None, None),
        4: (1.193e-01, 1.445e+00, 1.450e+00, 1.97, 1.66, 1.66),
        8: (3.203e-02, 4.189e-01, 4.201e-01, 1.90, 1.79, 1.79),
        16: (8.277e-03, 1.105e-01, 1.108e-01, 1.95, 1.92, 1.92),
    },
    ("nitsche", 1e-3): {
        2: (4.661e-01, 4.553e+00, 4.578e+00, None, None, None),
        4: (1.193e-01, 1.445e+00, 1.452e+00, 1.97, 1.66, 1.66),
        8: (3.204e-02, 4.190e-01, 4.224e-01, 1.90, 1.79, 1.78),
        16: (8.299e-03, 1.130e-01, 1.153e-01, 1.95, 1.89, 1.87),
    },
}


# ---- error norms ------------------------------------------------------------------


def error_norms(space: GlobalSpace, coeffs: np.ndarray, problem: ManufacturedProblem,
                degree: Optional[int] = None, boundary_term: bool = False) -> Dict[str, float]:
    """Squared-then-rooted L2, curl and broken grad-curl errors of coeffs against u0"""
    degree = settings.QUAD_DEGREE_CELL if degree is None else degree
    totals = {"l2": 0.0, "curl": 0.0, "grad_curl": 0.0}
    exact = {"l2": problem.u0, "curl": problem.curl_u0, "grad_curl": problem.grad_curl_u0}
    operands = {"l2": "value", "curl": "curl", "grad_curl": "grad_curl"}

    for c, cells in space.class_cells():
        if not len(cells):
            continue
        xi, w = space.quadrature(c, degree)
        x = space.physical_points(cells, xi)
        local = space.local_coefficients(coeffs, cells)
        for name, operand in operands.items():
            phi = space.tabulate(c, operand, degree)
            approx = np.einsum("ci,qi...->cq...", local, phi)
            reference = exact[name](x.reshape(-1, 3)).reshape(approx.shape)
            diff = (reference - approx).reshape(len(cells), len(w), -1)
            totals[name] += float(np.einsum("q,cqk,cqk->", w, diff, diff))

    norms = {name: math.sqrt(value) for name, value in totals.items()}
    eps2 = problem.epsilon ** 2
    norms["energy"] = math.sqrt(totals["l2"] + totals["curl"] + eps2 * totals["grad_curl"])
    if boundary_term:
        norms["energy_nitsche"] = math.sqrt(
            norms["energy"] ** 2 + eps2 * _boundary_curl_error(space, coeffs, problem)
        )
    return norms


def _boundary_curl_error(space: GlobalSpace, coeffs: np.ndarray, problem: ManufacturedProblem) -> float:
    """sum over boundary faces of h_F^-1 ||curl(u0 - u_h)||_F^2"""
    mesh = space.mesh
    faces = np.flatnonzero(mesh.boundary_faces)
    points, weights = map_to_face(simplex_quadrature(2, settings.QUAD_DEGREE_FACE),
                                  entity_vertices(mesh, 2, faces))
    nq = points.shape[1]
    cells = np.repeat(mesh.face_cells[faces, 0], nq)
    approx = DiscreteFunction(space, coeffs).evaluate(cells, points.reshape(-1, 3), "curl")
    diff = (problem.curl_u0(points.reshape(-1, 3)) - approx).reshape(len(faces), nq, 3)
    per_face = np.einsum("fq,fqd,fqd->f", weights, diff, diff)
    return float(np.sum(per_face / mesh.face_diameters[faces]))


def compute_errors(system: SaddleSystem, solution: Solution, problem: ManufacturedProblem,
                   degree: Optional[int] = None) -> ErrorReport:
    mesh = system.w_space.mesh
    norms = error_norms(system.w_space, solution.u, problem, degree,
                        boundary_term=system.method == Method.NITSCHE)
    L = system.multiplier_stiffness
    lambda_h1 = float(np.sqrt(max(solution.lam @ (L @ solution.lam), 0.0))) if L is not None else 0.0
    lambda_tol = settings.LAMBDA_RTOL * problem.f_norm()
    return ErrorReport(
        n=mesh.n, h=1.0 / mesh.n, mesh_h=mesh.h,
        err_l2=norms["l2"], err_curl=norms["curl"], err_energy=norms["energy"],
        err_energy_nitsche=norms.get("energy_nitsche"),
        lambda_h1=lambda_h1,
        lambda_vanishes=bool(lambda_h1 < lambda_tol),
        ndofs=system.w_space.ndofs + system.q_space.ndofs,
        wall_ms=solution.wall_ms,
        solver_backend=solution.backend,
        solver_iterations=solution.iterations,
    )


def _order(previous: float, current: float, h_previous: float, h_current: float) -> Optional[float]:
    if previous <= 0 or current <= 0:
        return None
    return math.log(previous / current) / math.log(h_previous / h_current)


def fill_orders(levels: List[ErrorReport]) -> List[ErrorReport]:
    """Orders log(e_H / e_h) / log(H / h) between consecutive levels"""
    for coarse, fine in zip(levels, levels[1:]):
        fine.order_l2 = _order(coarse.err_l2, fine.err_l2, coarse.h, fine.h)
        fine.order_curl = _order(coarse.err_curl, fine.err_curl, coarse.h, fine.h)
        fine.order_energy = _order(coarse.err_energy, fine.err_energy, coarse.h, fine.h)
        if coarse.err_energy_nitsche is not None and fine.err_energy_nitsche is not None:
            fine.order_energy_nitsche = _order(coarse.err_energy_nitsche, fine.err_energy_nitsche,
                                               coarse.h, fine.h)
    return levels


# ---- studies ----------------------------------------------------------------------


class ConvergenceService:
    """Runs convergence studies level by level"""

    def run_level(self, n: int, method: Method, config: FormConfig, k: int,
                  backend: Optional[SolverBackend] = None, tol: Optional[float] = None) -> ErrorReport:
        start = time.perf_counter()
        problem = ManufacturedProblem(epsilon=config.epsilon)
        mesh = build_uniform_cube_mesh(n)
        system = build_saddle_system(mesh, method, k, problem.f, config)
        backend = SolverBackend(backend or get_solver_backend(n))
        try:
            solution = solve(system, backend, tol)
        except SolverError as e:
            raise SolverError(f"Level n={n}: {e.message}", {**e.context, "n": n, "method": method.value})
        report = compute_errors(system, solution, problem, config.cell_degree)
        report.wall_ms = (time.perf_counter() - start) * 1000

        if not report.lambda_vanishes:
            logger.warning(
                f"Multiplier did not vanish on n={n}: |lambda_h|_1 = {report.lambda_h1:.3e} "
                f"against {settings.LAMBDA_RTOL:.0e} * ||f||_0 = {settings.LAMBDA_RTOL * problem.f_norm():.3e}"
            )
        structured.log_study_event(
            "level_completed",
            f"{method.value} n={n}: L2 {report.err_l2:.3e}, curl {report.err_curl:.3e}, "
            f"energy {report.err_energy:.3e}",
            level_n=n, method=method.value, epsilon=config.epsilon,
            err_l2=report.err_l2, err_curl=report.err_curl, err_energy=report.err_energy,
            lambda_h1=report.lambda_h1, lambda_vanishes=report.lambda_vanishes,
            wall_ms=report.wall_ms,
        )
        return report

    def convergence_study(self, method: Method, epsilon: float = 0.0, k: int = 1,
                          sigma: Optional[float] = None, levels: Optional[Sequence[int]] = None,
                          backend: Optional[SolverBackend] = None, tol: Optional[float] = None,
                          quad_degree: Optional[int] = None) -> ConvergenceTable:
        method = Method(method)
        levels = list(levels) if levels is not None else list(settings.LEVELS)
        if not levels or any(n < 1 for n in levels) or sorted(set(levels)) != levels:
            raise ConfigurationError(f"Levels must be ascending positive subdivisions, got {levels}")
        sigma = settings.SIGMA if sigma is None else sigma
        degree = settings.QUAD_DEGREE_CELL if quad_degree is None else quad_degree
        try:
            config = FormConfig(epsilon=epsilon, sigma=sigma, cell_degree=degree,
                                load_degree=degree, face_degree=settings.QUAD_DEGREE_FACE)
        except ValueError as e:
            raise ConfigurationError(f"Invalid study parameters: {e}")

        logger.info(f"Starting {method.value} study: eps={epsilon}, k={k}, sigma={sigma}, levels={levels}")
        table = ConvergenceTable(method=method, epsilon=epsilon, k=k,
                                 sigma=sigma if method == Method.NITSCHE else None)
        for n in levels:
            table.levels.append(self.run_level(n, method, config, k, backend, tol))
        fill_orders(table.levels)
        structured.log_study_event("study_completed", f"{method.value} study finished",
                                   method=method.value, epsilon=epsilon, levels=levels)
        return table


convergence_service = ConvergenceService()


def convergence_study(method: Method, epsilon: float = 0.0, k: int = 1, sigma: Optional[float] = None,
                      levels: Optional[Sequence[int]] = None, **kwargs) -> ConvergenceTable:
    return convergence_service.convergence_study(method, epsilon, k, sigma, levels, **kwargs)


# ---- rendering --------------------------------------------------------------------


def to_dataframe(table: ConvergenceTable) -> pd.DataFrame:
    rows = [{column: getattr(level, column) for column in CSV_COLUMNS} for level in table.levels]
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


def to_csv(table: ConvergenceTable, path: Optional[str] = None) -> str:
    """CSV text of the table; orders are empty on the first row"""
    text = to_dataframe(table).to_csv(index=False, na_rep="")
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
        logger.info(f"Wrote {len(table.levels)} levels to {path}")
    return text


def _fmt_order(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.2f}"


def to_markdown(table: ConvergenceTable) -> str:
    """h | error | order triples, plus the mesh-dependent norm for Nitsche runs"""
    nitsche = table.method == Method.NITSCHE and all(
        level.err_energy_nitsche is not None for level in table.levels
    )
    header = ["h", "L2 error", "order", "curl error", "order", "energy error", "order"]
    if nitsche:
        header += ["Nitsche energy error", "order"]
    header += ["|lambda_h|_1"]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for level in table.levels:
        exponent = math.log2(level.n)
        h = f"2^-{int(exponent)}" if exponent.is_integer() else f"{level.h:.4g}"
        cells = [
            h,
            f"{level.err_l2:.3e}", _fmt_order(level.order_l2),
            f"{level.err_curl:.3e}", _fmt_order(level.order_curl),
            f"{level.err_energy:.3e}", _fmt_order(level.order_energy),
        ]
        if nitsche:
            cells += [f"{level.err_energy_nitsche:.3e}", _fmt_order(level.order_energy_nitsche)]
        cells += [f"{level.lambda_h1:.1e}"]
        lines.append("| " + " | ".join(cells) + " |")
    title = f"{table.method.value} method, k={table.k}, eps={table.epsilon:g}"
    if table.sigma is not None:
        title += f", sigma={table.sigma:g}"
    return f"**{title}**\n\n" + "\n".join(lines) + "\n"


def reference_table(method: Method, epsilon: float) -> Optional[Dict[int, Tuple]]:
    for (name, eps), rows in REFERENCE_TABLES.items():
        if name == Method(method).value and math.isclose(eps, epsilon, rel_tol=1e-9, abs_tol=1e-15):
            return rows
    return None


def compare_with_reference(table: ConvergenceTable) -> List[ReferenceDeviation]:
    """Error ratios computed/published and order differences, for levels with published data"""
    rows = reference_table(table.method, table.epsilon)
    if rows is None or table.k != 1:
        return []
    deviations = []
    for level in table.levels:
        if level.n not in rows:
            continue
        published = rows[level.n]
        for i, column in enumerate(ERROR_COLUMNS):
            computed = getattr(level, column)
            deviations.append(ReferenceDeviation(
                n=level.n, column=column, computed=computed, reference=published[i],
                ratio=computed / published[i],
            ))
            order = getattr(level, column.replace("err_", "order_"))
            if order is not None and published[3 + i] is not None:
                deviations.append(ReferenceDeviation(
                    n=level.n, column=column.replace("err_", "order_"), computed=order,
                    reference=published[3 + i], deviation=order - published[3 + i],
                ))
    return deviations
