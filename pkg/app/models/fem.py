"""
Report and request models for Quad-Curl FEM Lab
"""

from pydantic import BaseModel, Field, field_serializer, field_validator
from enum import Enum
from typing import List, Dict, Any, Optional
from datetime import datetime

from app.core.config import settings


class Method(str, Enum):
    """Discretization of the quad-curl problem"""
    MIXED = "mixed"
    NITSCHE = "nitsche"


class SolverBackend(str, Enum):
    DIRECT = "direct"
    MINRES = "minres"


class BoundaryCondition(str, Enum):
    """Which boundary DoFs are removed from a global space"""
    FULL_ZERO = "full-zero"
    PARTIAL = "partial"
    NONE = "none"


class ComplexVariant(str, Enum):
    ZERO_BC = "zero-bc"
    PARTIAL_BC = "partial-bc"


class OutputFormat(str, Enum):
    CSV = "csv"
    MARKDOWN = "markdown"


class FormConfig(BaseModel):
    """Per-run numerical parameters of the bilinear forms"""
    epsilon: float = Field(0.0, ge=0.0)
    sigma: float = Field(10.0, gt=0.0)
    cell_degree: int = Field(10, ge=1, le=12)
    face_degree: int = Field(8, ge=1, le=12)
    load_degree: int = Field(10, ge=1, le=12)


class MeshSummary(BaseModel):
    n: Optional[int] = None
    h: float
    vertices: int
    edges: int
    faces: int
    cells: int
    interior_vertices: int
    interior_edges: int
    interior_faces: int
    boundary_faces: int
    euler_characteristic: int


class ComplexReport(BaseModel):
    """Dimensions and ranks of one discrete Stokes complex"""
    n: Optional[int] = None
    k: int
    variant: ComplexVariant
    dims: Dict[str, int]
    expected_dims: Dict[str, int]
    ranks: Dict[str, int]
    composition_norms: Dict[str, float]
    euler_residual: int
    exact_at_w: bool
    exact_at_v: bool
    div_surjective: bool
    passed: bool


class ConformityReport(BaseModel):
    tangential_jump: float
    boundary_tangential_trace: Optional[float] = None
    curl_normal_moment_jump: Optional[float] = None
    passed: bool


class ErrorReport(BaseModel):
    """Errors of one level against the manufactured solution"""
    n: int
    h: float
    mesh_h: float
    err_l2: float
    err_curl: float
    err_energy: float
    err_energy_nitsche: Optional[float] = None
    lambda_h1: float
    lambda_vanishes: Optional[bool] = None
    ndofs: int
    wall_ms: float
    solver_backend: SolverBackend
    solver_iterations: Optional[int] = None
    order_l2: Optional[float] = None
    order_curl: Optional[float] = None
    order_energy: Optional[float] = None
    order_energy_nitsche: Optional[float] = None


class ConvergenceTable(BaseModel):
    method: Method
    epsilon: float
    k: int
    sigma: Optional[float] = None
    levels: List[ErrorReport] = Field(default_factory=list)
    created_at: datetime = Field(default_factory=datetime.utcnow)

    @field_serializer("created_at", when_used="json")
    def serialize_created_at(self, value: datetime) -> str:
        return value.isoformat()

    @property
    def lambda_vanishes(self) -> bool:
        return all(level.lambda_vanishes is not False for level in self.levels)


class ReferenceDeviation(BaseModel):
    """Computed vs published value for one table entry"""
    n: int
    column: str
    computed: float
    reference: float
    ratio: Optional[float] = None
    deviation: Optional[float] = None


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str = ""
    context: Dict[str, Any] = Field(default_factory=dict)


class VerificationReport(BaseModel):
    levels: List[int]
    orders: List[int]
    sigma: float
    checks: List[CheckResult] = Field(default_factory=list)
    created_at: datetime = Field(default_factory=datetime.utcnow)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> List[CheckResult]:
        return [check for check in self.checks if not check.passed]


def _served_levels(v: List[int]) -> List[int]:
    if not v or any(n < 1 for n in v):
        raise ValueError("levels must be a non-empty list of positive subdivisions")
    if sorted(set(v)) != list(v):
        raise ValueError("levels must be strictly ascending")
    if v[-1] > settings.MAX_SERVED_N:
        raise ValueError(f"levels above n={settings.MAX_SERVED_N} are not served")
    return v


class StudyRequest(BaseModel):
    """Convergence study request"""
    method: Method = Method.MIXED
    epsilon: float = Field(0.0, ge=0.0)
    k: int = Field(1, ge=1, le=2)
    sigma: float = Field(10.0, gt=0.0)
    levels: List[int] = Field(default_factory=lambda: [2, 4, 8])
    solver: Optional[SolverBackend] = None  # None follows the configured backend per level
    tol: float = Field(1e-10, gt=0.0)
    quad_degree: int = Field(10, ge=1, le=12)

    @field_validator("levels")
    @classmethod
    def levels_ascending(cls, v: List[int]) -> List[int]:
        return _served_levels(v)


class VerifyRequest(BaseModel):
    levels: List[int] = Field(default_factory=lambda: [1, 2])
    orders: List[int] = Field(default_factory=lambda: [1])
    sigma: float = Field(10.0, gt=0.0)

    @field_validator("levels")
    @classmethod
    def levels_ascending(cls, v: List[int]) -> List[int]:
        return _served_levels(v)

    @field_validator("orders")
    @classmethod
    def supported_orders(cls, v: List[int]) -> List[int]:
        if not v or any(k not in (1, 2) for k in v):
            raise ValueError("orders must be drawn from {1, 2}")
        return v
