"""
Convergence study API endpoints for Quad-Curl FEM Lab
"""

from fastapi import APIRouter
import logging

from app.models.fem import StudyRequest
from app.services.convergence_service import (
    compare_with_reference,
    convergence_service,
    to_markdown,
)

logger = logging.getLogger(__name__)

router = APIRouter()


@router.post("")
def run_study(request: StudyRequest):
    """Run a convergence study synchronously and return the table"""
    logger.info(f"Study requested: {request.model_dump()}")
    table = convergence_service.convergence_study(
        method=request.method,
        epsilon=request.epsilon,
        k=request.k,
        sigma=request.sigma,
        levels=request.levels,
        backend=request.solver,
        tol=request.tol,
        quad_degree=request.quad_degree,
    )
    return {
        "success": True,
        "data": table.model_dump(mode="json"),
        "markdown": to_markdown(table),
        "reference": [d.model_dump() for d in compare_with_reference(table)],
    }
