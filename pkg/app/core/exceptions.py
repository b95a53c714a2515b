"""
Exception hierarchy for Quad-Curl FEM Lab

Every error carries the CLI exit code and the HTTP status it maps to.
"""

from typing import Any, Dict, Optional


class QuadCurlError(Exception):
    """Base class for all library errors"""

    exit_code: int = 1
    status_code: int = 500

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.context = context or {}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "success": False,
            "error": type(self).__name__,
            "detail": self.message,
            "context": self.context,
        }


class ConfigurationError(QuadCurlError):
    """Invalid user-supplied configuration"""

    exit_code = 2
    status_code = 422


class MeshError(QuadCurlError):
    """Invalid or degenerate mesh"""

    exit_code = 2
    status_code = 422


class ElementConstructionError(QuadCurlError):
    """Local element could not be built (indicates a coding bug or bad cell)"""

    exit_code = 1


class UnisolvenceError(ElementConstructionError):
    """DoF Vandermonde matrix is numerically singular"""


class VerificationFailure(QuadCurlError):
    """A structural property check did not hold"""

    exit_code = 1


class SolverError(QuadCurlError):
    """Linear solve failed or did not converge"""

    exit_code = 3
