"""Shared fixtures: small cube meshes and a seeded generator"""

import numpy as np
import pytest

from app.core.config import settings
from app.fem.mesh import build_uniform_cube_mesh


@pytest.fixture(scope="session")
def mesh1():
    return build_uniform_cube_mesh(1)


@pytest.fixture(scope="session")
def mesh2():
    return build_uniform_cube_mesh(2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(autouse=True)
def no_log_files(monkeypatch):
    monkeypatch.setattr(settings, "LOG_TO_FILE", False)
