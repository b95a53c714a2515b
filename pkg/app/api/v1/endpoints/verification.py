"""
Verification API endpoints for Quad-Curl FEM Lab
"""

from fastapi import APIRouter
import logging

from app.models.fem import VerifyRequest
from app.services.verification_service import verification_service

logger = logging.getLogger(__name__)

router = APIRouter()


@router.post("")
def run_verification(request: VerifyRequest):
    """Run the verification suite; failed checks are reported, not raised"""
    report = verification_service.run(request.levels, request.orders, request.sigma)
    return {
        "success": True,
        "passed": report.passed,
        "data": report.model_dump(mode="json"),
    }
