"""
Mesh API endpoints for Quad-Curl FEM Lab
"""

from fastapi import APIRouter
import logging

from app.core.config import settings
from app.core.exceptions import ConfigurationError
from app.fem.mesh import build_uniform_cube_mesh
from app.models.fem import MeshSummary

logger = logging.getLogger(__name__)

router = APIRouter()


@router.get("/{n}")
def get_mesh_summary(n: int):
    """Entity counts of the uniform cube mesh with n subdivisions per axis"""
    if n > settings.MAX_SERVED_N:
        raise ConfigurationError(f"n={n} exceeds the served maximum {settings.MAX_SERVED_N}", {"n": n})
    mesh = build_uniform_cube_mesh(n)
    summary = MeshSummary(**mesh.summary())
    return {"success": True, "data": summary.model_dump()}
