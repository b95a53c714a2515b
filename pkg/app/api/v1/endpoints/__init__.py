"""API v1 endpoints package"""

from . import mesh, studies, verification

__all__ = ["mesh", "studies", "verification"]
