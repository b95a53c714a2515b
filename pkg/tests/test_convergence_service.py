import math

import numpy as np
import pandas as pd
import pytest

from app.core.config import settings
from app.core.exceptions import ConfigurationError
from app.fem.elements import ElementKind
from app.fem.manufactured import ManufacturedProblem
from app.fem.mesh import build_uniform_cube_mesh
from app.fem.spaces import build_space, canonical_interpolate
from app.models.fem import BoundaryCondition, ConvergenceTable, ErrorReport, Method, SolverBackend
from app.services.convergence_service import (
    CSV_COLUMNS,
    REFERENCE_TABLES,
    compare_with_reference,
    convergence_study,
    error_norms,
    fill_orders,
    reference_table,
    to_csv,
    to_markdown,
)


def _level(n, err_l2, err_curl, err_energy, nitsche=None):
    return ErrorReport(
        n=n, h=1.0 / n, mesh_h=math.sqrt(3.0) / n, err_l2=err_l2, err_curl=err_curl,
        err_energy=err_energy, err_energy_nitsche=nitsche, lambda_h1=0.0, ndofs=10 * n,
        wall_ms=1.0, solver_backend=SolverBackend.DIRECT,
    )


def _published(method, epsilon, levels):
    rows = REFERENCE_TABLES[(method, epsilon)]
    table = ConvergenceTable(method=method, epsilon=epsilon, k=1)
    table.levels = fill_orders([_level(n, *rows[n][:3]) for n in levels])
    return table


def test_orders_of_halving_errors():
    levels = fill_orders([_level(2, 1.0, 4.0, 4.0), _level(4, 0.25, 2.0, 2.0), _level(8, 0.0625, 1.0, 1.0)])
    assert levels[0].order_l2 is None
    assert levels[1].order_l2 == pytest.approx(2.0)
    assert levels[2].order_curl == pytest.approx(1.0)


def test_order_undefined_for_zero_error():
    levels = fill_orders([_level(2, 0.0, 1.0, 1.0), _level(4, 0.0, 0.5, 0.5)])
    assert levels[1].order_l2 is None
    assert levels[1].order_energy == pytest.approx(1.0)


def test_csv_layout(tmp_path):
    table = _published("mixed", 0.0, [2, 4])
    path = tmp_path / "out" / "mixed.csv"
    text = to_csv(table, path)
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    frame = pd.read_csv(path)
    assert list(frame.columns) == CSV_COLUMNS
    assert np.isnan(frame.loc[0, "order_l2"])
    assert frame.loc[1, "order_l2"] == pytest.approx(1.75, abs=0.01)


def test_markdown_rows():
    text = to_markdown(_published("nitsche", 1e-3, [2, 4, 8]))
    assert "nitsche method" in text
    assert "Nitsche energy error" not in text.splitlines()[2]
    assert "| 2^-1 |" in text and "| 2^-3 |" in text


def test_markdown_for_nitsche_energy():
    table = ConvergenceTable(method=Method.NITSCHE, epsilon=1e-3, k=1, sigma=10.0)
    table.levels = fill_orders([_level(2, 1.0, 1.0, 1.0, nitsche=2.0), _level(4, 0.5, 0.5, 0.5, nitsche=1.0)])
    text = to_markdown(table)
    assert "Nitsche energy error" in text
    assert "sigma=10" in text


def test_published_tables_are_self_consistent():
    deviations = compare_with_reference(_published("mixed", 0.0, [2, 4, 8, 16]))
    ratios = [d.ratio for d in deviations if d.ratio is not None]
    orders = [d.deviation for d in deviations if d.deviation is not None]
    assert ratios and all(r == pytest.approx(1.0) for r in ratios)
    assert orders and max(abs(o) for o in orders) < 0.02


def test_reference_lookup():
    assert reference_table(Method.NITSCHE, 1e-3)[16][0] == pytest.approx(8.299e-3)
    assert reference_table(Method.MIXED, 0.5) is None
    table = _published("mixed", 0.0, [2])
    table.k = 2
    assert compare_with_reference(table) == []


def test_interpolation_error_decreases(mesh1, mesh2):
    problem = ManufacturedProblem()
    errors = []
    for mesh in (mesh1, mesh2):
        space = build_space(mesh, ElementKind.W, 1, BoundaryCondition.FULL_ZERO)
        coeffs = canonical_interpolate(space, problem.u0, curl=problem.curl_u0)
        errors.append(error_norms(space, coeffs, problem))
    assert errors[1]["l2"] < errors[0]["l2"]
    assert errors[1]["curl"] < errors[0]["curl"]


def test_small_mixed_study():
    table = convergence_study(Method.MIXED, levels=[1, 2])
    assert [level.n for level in table.levels] == [1, 2]
    assert table.levels[1].order_l2 is not None
    assert all(np.isfinite(level.err_energy) for level in table.levels)
    assert all(level.lambda_vanishes is not None for level in table.levels)
    assert table.levels[1].lambda_vanishes
    assert table.levels[1].lambda_h1 < 1e-7 * ManufacturedProblem().f_norm()


def test_lambda_criterion_recorded_per_level(monkeypatch):
    monkeypatch.setattr(settings, "LAMBDA_RTOL", 0.0)
    table = convergence_study(Method.MIXED, levels=[1])
    assert table.levels[0].lambda_vanishes is False
    assert not table.lambda_vanishes
    assert table.model_dump(mode="json")["levels"][0]["lambda_vanishes"] is False


def test_created_at_serializes_to_iso_text():
    table = _published("mixed", 0.0, [2])
    dumped = table.model_dump(mode="json")
    assert isinstance(dumped["created_at"], str)
    assert dumped["created_at"] == table.created_at.isoformat()
    assert isinstance(table.model_dump()["created_at"], type(table.created_at))


def test_small_nitsche_study_reports_mesh_norm():
    table = convergence_study(Method.NITSCHE, epsilon=1e-3, sigma=10.0, levels=[1, 2])
    assert table.sigma == 10.0
    for level in table.levels:
        assert level.err_energy_nitsche >= level.err_energy


@pytest.mark.parametrize("levels", [[4, 2], [], [0, 1], [2, 2]])
def test_invalid_levels(levels):
    with pytest.raises(ConfigurationError):
        convergence_study(Method.MIXED, levels=levels)


def test_invalid_quadrature_degree():
    with pytest.raises(ConfigurationError):
        convergence_study(Method.MIXED, levels=[1], quad_degree=20)


@pytest.mark.slow
@pytest.mark.parametrize("method,epsilon", [("mixed", 0.0), ("mixed", 1e-3), ("nitsche", 0.0), ("nitsche", 1e-3)])
def test_reproduces_published_table(method, epsilon):
    table = convergence_study(method, epsilon=epsilon, levels=[2, 4, 8])
    for deviation in compare_with_reference(table):
        if deviation.ratio is not None:
            assert 0.5 < deviation.ratio < 2.0, deviation
        if deviation.deviation is not None:
            assert abs(deviation.deviation) < 0.15, deviation
    f_norm = ManufacturedProblem().f_norm()
    for level in table.levels:
        assert level.lambda_vanishes
        assert level.lambda_h1 < 1e-7 * f_norm
    if method == "mixed" and epsilon == 0.0:
        for level in table.levels:
            if level.n >= 8:
                assert 0.4 <= level.order_energy <= 1.3


@pytest.mark.slow
def test_small_perturbation_barely_changes_mixed_energy():
    unperturbed = convergence_study(Method.MIXED, epsilon=0.0, levels=[2, 4, 8])
    perturbed = convergence_study(Method.MIXED, epsilon=1e-3, levels=[2, 4, 8])
    for base, level in zip(unperturbed.levels, perturbed.levels):
        assert level.err_energy >= base.err_energy * (1 - 1e-6)
        assert level.err_energy <= 1.05 * base.err_energy


@pytest.mark.slow
def test_interpolation_converges_at_second_order():
    problem = ManufacturedProblem()
    errors = []
    for n in (2, 4, 8):
        space = build_space(build_uniform_cube_mesh(n), ElementKind.W, 1, BoundaryCondition.FULL_ZERO)
        coeffs = canonical_interpolate(space, problem.u0, curl=problem.curl_u0)
        errors.append(error_norms(space, coeffs, problem)["l2"])
    assert errors[0] > errors[1] > errors[2]
    assert 1.7 <= math.log2(errors[1] / errors[2]) <= 2.5
