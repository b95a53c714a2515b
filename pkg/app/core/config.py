"""
Configuration management for Quad-Curl FEM Lab
"""

from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import List, Literal


class Settings(BaseSettings):
    """Application settings with numerical defaults for studies and checks"""

    # Application Configuration
    APP_NAME: str = "Quad-Curl FEM Lab"
    VERSION: str = "1.0.0"
    DEBUG: bool = False
    ENVIRONMENT: str = "development"

    # Logging Configuration
    LOG_LEVEL: str = "INFO"
    LOG_DIR: str = "logs"
    LOG_TO_FILE: bool = True

    # Server Configuration
    HOST: str = "0.0.0.0"
    PORT: int = 8000

    # Problem Configuration
    EPSILON: float = 0.0
    SIGMA: float = 10.0
    ORDER_K: int = 1
    LEVELS: List[int] = [2, 4, 8]
    EXTENDED_LEVELS: List[int] = [2, 4, 8, 16]

    # Linear Solver Configuration
    SOLVER: Literal["direct", "minres"] = "direct"
    SOLVER_TOL: float = 1e-10
    MINRES_MAXITER: int = 20000
    DIRECT_MAX_N: int = 8  # larger meshes switch to MINRES
    GALERKIN_TOL: float = 1e-9
    REFINEMENT_PASSES: int = 2  # residual corrections after the first solve
    LAMBDA_RTOL: float = 1e-7  # |lambda_h|_1 relative to ||f||_0 for div-free data

    # Quadrature Configuration (exactness degrees)
    QUAD_DEGREE_CELL: int = 10
    QUAD_DEGREE_LOAD: int = 10
    QUAD_DEGREE_FACE: int = 8

    # Verification Tolerances
    UNISOLVENCE_TOL: float = 1e-12
    RANK_RTOL: float = 1e-8
    PSD_TOL: float = 1e-8
    MESH_DET_TOL: float = 1e-14
    DENSE_LIMIT: int = 6000  # largest dense SVD/eigen problem we attempt

    # API Limits
    MAX_SERVED_N: int = 32

    model_config = SettingsConfigDict(
        env_file=".env",
        case_sensitive=True,
        extra="ignore",  # Ignore extra fields from .env
    )


def get_default_levels(extended: bool = False) -> List[int]:
    """Get the mesh levels used by convergence studies"""
    return list(settings.EXTENDED_LEVELS if extended else settings.LEVELS)


def get_solver_backend(n: int) -> str:
    """Pick the linear solver backend for a mesh with n subdivisions"""
    if settings.SOLVER == "direct" and n > settings.DIRECT_MAX_N:
        return "minres"
    return settings.SOLVER


# Create settings instance
settings = Settings()
