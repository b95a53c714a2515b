"""
Verification suite for the elements, complexes and discrete stability
Aggregates the structural checks into one machine-readable report
"""

import logging
import time
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from app.core.config import settings
from app.core.exceptions import ConfigurationError, UnisolvenceError
from app.core.logging_config import StructuredLogger
from app.fem.assembly import assemble_form, assemble_nitsche, find_sigma_threshold
from app.fem.elements import (
    ElementKind,
    build_element_on,
    kernel_check,
    random_tetrahedron,
)
from app.fem.mesh import Mesh, build_uniform_cube_mesh, reference_tetrahedron
from app.fem.solver import discrete_poincare_constant, infsup_witness_check
from app.fem.spaces import build_space, conformity_check, curl_operator, verify_complex
from app.models.fem import (
    BoundaryCondition,
    CheckResult,
    ComplexVariant,
    FormConfig,
    VerificationReport,
)

logger = logging.getLogger(__name__)
structured = StructuredLogger(__name__)

UNISOLVENCE_KINDS = (ElementKind.W, ElementKind.ND, ElementKind.TW)
POINCARE_RATIO = 0.75
POINCARE_MIN_LEVEL = 2  # coarsest level entering the ratio test
POINCARE_LEVELS = (2, 4)
INFSUP_TOL = 1e-10


class VerificationService:
    """Runs the structural checks and collects their results"""

    def __init__(self, mesh_builder: Callable[[int], Mesh] = build_uniform_cube_mesh,
                 random_cells: int = 100, seed: int = 0):
        self.mesh_builder = mesh_builder
        self.random_cells = random_cells
        self.seed = seed

    def check_unisolvence(self, k: int) -> List[CheckResult]:
        rng = np.random.default_rng(self.seed)
        cells = [reference_tetrahedron()] + [random_tetrahedron(rng) for _ in range(self.random_cells)]
        results = []
        for kind in UNISOLVENCE_KINDS:
            worst, failure = np.inf, None
            for vertices in cells:
                try:
                    worst = min(worst, build_element_on(vertices, kind, k).conditioning)
                except UnisolvenceError as e:
                    failure = e.message
                    break
            results.append(CheckResult(
                name=f"unisolvence_{kind.value}_{k}",
                passed=failure is None,
                detail=failure or f"worst normalized conditioning {worst:.2e} over {len(cells)} cells",
                context={"cells": len(cells), "worst_conditioning": None if failure else float(worst)},
            ))
        for kind in (ElementKind.W, ElementKind.ND):
            report = kernel_check(build_element_on(reference_tetrahedron(), kind, k))
            results.append(CheckResult(
                name=f"curl_kernel_{kind.value}_{k}", passed=report.passed,
                detail=f"nullity {report.nullity} (expected {report.expected})",
                context={"gradient_residual": report.gradient_residual},
            ))
        return results

    def check_complexes(self, mesh: Mesh, k: int) -> List[CheckResult]:
        results = []
        for variant in ComplexVariant:
            report = verify_complex(mesh, k, variant)
            results.append(CheckResult(
                name=f"complex_{variant.value}_n{mesh.n}_k{k}",
                passed=report.passed,
                detail=f"dims {report.dims}, ranks {report.ranks}",
                context=report.model_dump(mode="json"),
            ))
        return results

    def check_conformity(self, mesh: Mesh, k: int) -> List[CheckResult]:
        rng = np.random.default_rng(self.seed)
        results = []
        for bc in (BoundaryCondition.FULL_ZERO, BoundaryCondition.PARTIAL):
            space = build_space(mesh, ElementKind.W, k, bc)
            report = conformity_check(space, rng.standard_normal(space.ndofs))
            results.append(CheckResult(
                name=f"conformity_{bc.value}_n{mesh.n}_k{k}",
                passed=report.passed,
                detail=f"tangential jump {report.tangential_jump:.1e}",
                context=report.model_dump(),
            ))
        return results

    def check_b_oracle(self, mesh: Mesh, k: int) -> CheckResult:
        """b assembled directly against curl^T M_d curl through the complex operators"""
        w_space = build_space(mesh, ElementKind.W, k, BoundaryCondition.FULL_ZERO)
        v_space = build_space(mesh, ElementKind.TW, k, BoundaryCondition.FULL_ZERO)
        B = assemble_form("b", w_space).matrix
        D = curl_operator(w_space, v_space)
        M_d = assemble_form("vector_mass", v_space).matrix
        diff = B - D.T @ M_d @ D
        scale = max(abs(B).max(), 1e-300)
        error = float(abs(diff).max() / scale) if diff.nnz else 0.0
        return CheckResult(name=f"b_oracle_n{mesh.n}_k{k}", passed=error < 1e-10,
                           detail=f"relative difference {error:.1e}")

    def check_poincare(self, meshes: Dict[int, Mesh], k: int) -> CheckResult:
        """beta(n) > 0 on every level and beta(fine) / beta(coarse) >= 0.75 from n=2 on"""
        meshes = dict(meshes)
        for n in POINCARE_LEVELS:
            if n not in meshes:
                meshes[n] = self.mesh_builder(n)
        betas, skipped = {}, []
        for n in sorted(meshes):
            try:
                betas[n] = discrete_poincare_constant(meshes[n], k)
            except ConfigurationError:
                skipped.append(n)
        ordered = [betas[n] for n in sorted(betas) if n >= POINCARE_MIN_LEVEL]
        ratios = [fine / coarse for coarse, fine in zip(ordered, ordered[1:]) if coarse > 0]
        passed = (len(ordered) >= 2 and all(b > 0 for b in betas.values())
                  and all(r >= POINCARE_RATIO for r in ratios))
        detail = f"beta {dict(sorted(betas.items()))}"
        if skipped:
            detail += f", skipped n={skipped} above the dense limit"
        return CheckResult(
            name=f"poincare_k{k}", passed=passed, detail=detail,
            context={"beta": {str(n): b for n, b in betas.items()}, "ratios": ratios,
                     "skipped": skipped},
        )

    def check_infsup(self, mesh: Mesh, k: int) -> CheckResult:
        witness = infsup_witness_check(mesh, k, rng=np.random.default_rng(self.seed))
        return CheckResult(
            name=f"infsup_n{mesh.n}_k{k}", passed=witness.relative_defect < INFSUP_TOL,
            detail=f"ratio {witness.ratio:.6e} against |mu|_1 {witness.seminorm:.6e}",
            context={"relative_defect": witness.relative_defect},
        )

    def check_nitsche(self, mesh: Mesh, k: int, sigma: float) -> CheckResult:
        space = build_space(mesh, ElementKind.W, k, BoundaryCondition.PARTIAL)
        config = FormConfig(sigma=sigma)
        operator = assemble_nitsche(space, config, check_psd=True)
        context = {key: operator.info.get(key) for key in ("min_eigenvalue", "max_eigenvalue")}
        detail = f"min eigenvalue {operator.info['min_eigenvalue']:.3e} at sigma={sigma}"
        if space.ndofs <= settings.DENSE_LIMIT:
            sigma_0 = find_sigma_threshold(space, config)
            context["sigma_0"] = sigma_0
            detail += f", empirical sigma_0 ~ {sigma_0:.3g}"
        if not operator.info["psd"]:
            detail += "; sigma below sigma_0, increase --sigma"
        return CheckResult(name=f"nitsche_psd_n{mesh.n}_k{k}", passed=bool(operator.info["psd"]),
                           detail=detail, context=context)

    def run(self, levels: Sequence[int] = (1, 2), orders: Sequence[int] = (1,),
            sigma: Optional[float] = None) -> VerificationReport:
        sigma = settings.SIGMA if sigma is None else sigma
        if sigma <= 0:
            raise ConfigurationError(f"sigma must be positive, got {sigma}")
        start = time.perf_counter()
        meshes = {n: self.mesh_builder(n) for n in levels}
        poincare_meshes = {n: self.mesh_builder(n) for n in POINCARE_LEVELS if n not in meshes}
        poincare_meshes.update(meshes)
        report = VerificationReport(levels=list(levels), orders=list(orders), sigma=sigma)

        for k in orders:
            report.checks.extend(self.check_unisolvence(k))
            for n, mesh in meshes.items():
                report.checks.extend(self.check_complexes(mesh, k))
                report.checks.extend(self.check_conformity(mesh, k))
                report.checks.append(self.check_b_oracle(mesh, k))
                report.checks.append(self.check_infsup(mesh, k))
            report.checks.append(self.check_poincare(poincare_meshes, k))
            for n, mesh in meshes.items():
                report.checks.append(self.check_nitsche(mesh, k, sigma))

        for check in report.failures:
            logger.error(f"Verification check failed: {check.name}: {check.detail}")
        structured.log_study_event(
            "verification_completed",
            f"{len(report.checks) - len(report.failures)}/{len(report.checks)} checks passed",
            levels=list(levels), orders=list(orders), passed=report.passed,
            wall_ms=(time.perf_counter() - start) * 1000,
        )
        return report


verification_service = VerificationService()


def run_verification_suite(levels: Sequence[int] = (1, 2), orders: Sequence[int] = (1,),
                           sigma: Optional[float] = None) -> VerificationReport:
    return verification_service.run(levels, orders, sigma)
