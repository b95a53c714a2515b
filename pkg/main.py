"""
Quad-Curl FEM Lab - Application Entry Point
FastAPI service and command line interface for the quad-curl finite element studies
"""

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import uvicorn
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

from app.core.config import get_default_levels, settings
from app.core.exceptions import ConfigurationError, QuadCurlError, SolverError, VerificationFailure
from app.core.logging_config import setup_logging
from app.models.fem import Method, OutputFormat, SolverBackend

logger = logging.getLogger(__name__)

# Define lifespan context manager (must be defined before app creation)
from contextlib import asynccontextmanager


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Lifespan context manager for startup/shutdown events"""
    logger.info(f"Starting {settings.APP_NAME} {settings.VERSION}...")
    yield
    logger.info(f"Shutting down {settings.APP_NAME}...")


# Create FastAPI application
app = FastAPI(
    title=settings.APP_NAME,
    description="Finite elements, discrete Stokes complexes and mixed methods for the quad-curl problem",
    version=settings.VERSION,
    docs_url="/docs",
    redoc_url="/redoc",
    openapi_url="/openapi.json",
    lifespan=lifespan
)

from app.middleware.error_handling import ErrorHandlingMiddleware

app.add_middleware(ErrorHandlingMiddleware)
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["GET", "POST", "OPTIONS"],
    allow_headers=["*"],
)

from app.api.v1.routes import api_router

app.include_router(api_router, prefix="/api/v1")


@app.get("/")
async def root():
    """Root endpoint"""
    return {
        "message": f"{settings.APP_NAME} - quad-curl singular perturbation solver",
        "version": settings.VERSION,
        "status": "operational",
        "docs": "/docs",
        "features": [
            "W_k, Nedelec, Tai-Winther, Lagrange and P0 elements",
            "Discrete Stokes complex verification",
            "Mixed and Nitsche-modified mixed methods",
            "Convergence tables against published results",
        ]
    }


@app.get("/health")
async def health_check():
    """Health check endpoint"""
    return {
        "status": "healthy",
        "version": settings.VERSION,
        "environment": settings.ENVIRONMENT,
        "defaults": {
            "epsilon": settings.EPSILON,
            "sigma": settings.SIGMA,
            "levels": settings.LEVELS,
            "solver": settings.SOLVER,
        },
    }


# ---- command line --------------------------------------------------------------------


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma separated list of integers, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadcurl", description=settings.APP_NAME)
    parser.add_argument("--log-level", default=None, help="override LOG_LEVEL")
    sub = parser.add_subparsers(dest="command")

    study = sub.add_parser("study", help="run a convergence study")
    study.add_argument("--method", choices=[m.value for m in Method], default="mixed")
    study.add_argument("--eps", type=float, default=settings.EPSILON)
    study.add_argument("--k", type=int, choices=[1, 2], default=settings.ORDER_K)
    study.add_argument("--sigma", type=float, default=settings.SIGMA)
    study.add_argument("--levels", type=_int_list, default=None)
    study.add_argument("--extended", action="store_true", help="use EXTENDED_LEVELS (adds n=16)")
    study.add_argument("--solver", choices=[b.value for b in SolverBackend], default=None)
    study.add_argument("--tol", type=float, default=settings.SOLVER_TOL)
    study.add_argument("--quad-degree", type=int, default=settings.QUAD_DEGREE_CELL)
    study.add_argument("--out", default=None, help="output path; stdout when omitted")
    study.add_argument("--format", choices=[f.value for f in OutputFormat], default=OutputFormat.CSV.value)

    verify = sub.add_parser("verify", help="run the verification suite")
    verify.add_argument("--levels", type=_int_list, default=[1, 2])
    verify.add_argument("--k", type=_int_list, default=[1])
    verify.add_argument("--sigma", type=float, default=settings.SIGMA)
    verify.add_argument("--json", default=None, help="write the JSON report to this path")

    dump = sub.add_parser("mesh-dump", help="write the cube mesh as legacy VTK")
    dump.add_argument("--n", type=int, required=True)
    dump.add_argument("--out", required=True)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default=settings.HOST)
    serve.add_argument("--port", type=int, default=settings.PORT)
    return parser


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
        logger.info(f"Wrote {path}")
    else:
        sys.stdout.write(text)


def cmd_study(args) -> int:
    from app.services.convergence_service import (
        compare_with_reference,
        convergence_service,
        to_csv,
        to_markdown,
    )

    levels = args.levels or get_default_levels(extended=args.extended)
    table = convergence_service.convergence_study(
        method=args.method, epsilon=args.eps, k=args.k, sigma=args.sigma, levels=levels,
        backend=args.solver, tol=args.tol, quad_degree=args.quad_degree,
    )
    for deviation in compare_with_reference(table):
        if deviation.deviation is not None:
            logger.info(f"n={deviation.n} {deviation.column}: {deviation.computed:.2f} "
                        f"vs published {deviation.reference:.2f}")
    _emit(to_markdown(table) if args.format == OutputFormat.MARKDOWN else to_csv(table), args.out)
    return 0


def cmd_verify(args) -> int:
    from app.services.verification_service import run_verification_suite

    report = run_verification_suite(args.levels, args.k, args.sigma)
    if args.json:
        _emit(report.model_dump_json(indent=2), args.json)
    summary = {"passed": report.passed, "checks": len(report.checks),
               "failures": [check.name for check in report.failures]}
    sys.stdout.write(json.dumps(summary) + "\n")
    if not report.passed:
        raise VerificationFailure(f"{len(report.failures)} verification checks failed",
                                  {"failures": summary["failures"]})
    return 0


def cmd_mesh_dump(args) -> int:
    from app.fem.mesh import build_uniform_cube_mesh

    mesh = build_uniform_cube_mesh(args.n)
    mesh.write_vtk(args.out)
    sys.stdout.write(json.dumps(mesh.summary()) + "\n")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(level=args.log_level)

    if args.command in (None, "serve"):
        host = getattr(args, "host", settings.HOST)
        port = getattr(args, "port", settings.PORT)
        logger.info(f"Starting server on {host}:{port}")
        uvicorn.run("main:app", host=host, port=port, log_level="info")
        return 0

    commands = {"study": cmd_study, "verify": cmd_verify, "mesh-dump": cmd_mesh_dump}
    try:
        return commands[args.command](args)
    except QuadCurlError as e:
        logger.error(f"{type(e).__name__}: {e.message} {e.context or ''}")
        return e.exit_code
    except np.linalg.LinAlgError as e:
        logger.error(f"Linear algebra failure in {args.command}: {e}")
        return SolverError.exit_code
    except ValueError as e:
        logger.error(f"Invalid input to {args.command}: {e}")
        return ConfigurationError.exit_code


# Run the application when script is executed directly
if __name__ == "__main__":
    sys.exit(main())
