"""
Error handling middleware for Quad-Curl FEM Lab
"""

from fastapi import Request, HTTPException
from fastapi.responses import JSONResponse
from starlette.middleware.base import BaseHTTPMiddleware
import logging
import traceback

from app.core.exceptions import QuadCurlError

logger = logging.getLogger(__name__)


class ErrorHandlingMiddleware(BaseHTTPMiddleware):
    """Maps library errors to JSON responses with their HTTP status"""

    async def dispatch(self, request: Request, call_next):
        """Process request with error handling"""

        try:
            response = await call_next(request)
            return response

        except HTTPException:
            # Re-raise HTTP exceptions as they are handled by FastAPI
            raise

        except QuadCurlError as e:
            logger.warning(f"{type(e).__name__} in {request.method} {request.url.path}: {e.message}")
            return JSONResponse(status_code=e.status_code, content=e.to_dict())

        except Exception as e:
            logger.error(f"Unhandled exception in {request.method} {request.url}: {e}")
            logger.error(f"Traceback: {traceback.format_exc()}")

            return JSONResponse(
                status_code=500,
                content={
                    "success": False,
                    "error": "Internal server error",
                    "detail": "An unexpected error occurred"
                }
            )
