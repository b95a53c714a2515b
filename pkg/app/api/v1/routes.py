"""
API v1 routes for Quad-Curl FEM Lab
"""

from fastapi import APIRouter
from app.api.v1.endpoints import (
    mesh,
    studies,
    verification,
)

api_router = APIRouter()

# Include all endpoint routers
api_router.include_router(
    mesh.router,
    prefix="/mesh",
    tags=["Mesh"]
)

api_router.include_router(
    studies.router,
    prefix="/studies",
    tags=["Studies"]
)

api_router.include_router(
    verification.router,
    prefix="/verification",
    tags=["Verification"]
)
