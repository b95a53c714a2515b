"""
Tetrahedral meshes of the unit cube

Entities are stored with ascending global vertex indices, so edge tangents
and face normals defined from that ordering are shared by every cell that
touches the entity.
"""

from dataclasses import dataclass, field
from functools import cached_property
from itertools import permutations
from pathlib import Path
from typing import Any, Dict, Optional, Tuple
import logging

import meshio
import numpy as np

from app.core.config import settings
from app.core.exceptions import ConfigurationError, MeshError

logger = logging.getLogger(__name__)

# local entity numbering shared by every element
LOCAL_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
LOCAL_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])  # face i is opposite vertex i


@dataclass(frozen=True)
class AffineMap:
    """x = B @ xhat + b from the reference tetrahedron onto a cell"""
    B: np.ndarray
    b: np.ndarray
    det: float
    inv_T: np.ndarray

    def __call__(self, xhat: np.ndarray) -> np.ndarray:
        return np.asarray(xhat) @ self.B.T + self.b

    def barycentric(self, x: np.ndarray) -> np.ndarray:
        """Barycentric coordinates (N, 4) of physical points (N, 3)"""
        xhat = (np.atleast_2d(x) - self.b) @ self.inv_T
        return np.column_stack([1.0 - xhat.sum(axis=1), xhat])

    @property
    def volume(self) -> float:
        return abs(self.det) / 6.0


def _affine_from_vertices(vertices: np.ndarray, cell: int = -1) -> AffineMap:
    B = (vertices[1:] - vertices[0]).T
    det = float(np.linalg.det(B))
    diameter = max(np.linalg.norm(vertices[i] - vertices[j]) for i, j in LOCAL_EDGES)
    if diameter == 0.0 or abs(det) <= settings.MESH_DET_TOL * diameter ** 3:
        raise MeshError(
            f"Cell {cell} is degenerate (det B = {det:.3e})",
            {"cell": cell, "det": det},
        )
    return AffineMap(B=B, b=vertices[0].copy(), det=det, inv_T=np.linalg.inv(B).T)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable tetrahedral complex with oriented entity incidence"""
    vertices: np.ndarray
    cells: np.ndarray
    edges: np.ndarray
    faces: np.ndarray
    cell_edges: np.ndarray
    cell_faces: np.ndarray
    edge_signs: np.ndarray
    face_signs: np.ndarray
    face_cells: np.ndarray
    boundary_faces: np.ndarray
    boundary_edges: np.ndarray
    boundary_vertices: np.ndarray
    h: float
    n: Optional[int] = None
    metadata: Dict[str, Any] = field(default_factory=dict)
    element_cache: Dict[Tuple[str, int], Tuple] = field(default_factory=dict, repr=False)

    @classmethod
    def from_arrays(cls, vertices: np.ndarray, cells: np.ndarray, n: Optional[int] = None) -> "Mesh":
        """Build incidence for an arbitrary tetrahedral complex

        Cells are reordered to positive orientation where possible; degenerate
        cells are kept so that element construction reports them.
        """
        vertices = np.asarray(vertices, dtype=float)
        cells = np.array(cells, dtype=int)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError("Vertices must have shape (V, 3)")
        if cells.ndim != 2 or cells.shape[1] != 4:
            raise MeshError("Cells must have shape (T, 4)")
        if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
            raise MeshError("Cell references a vertex that does not exist")

        x = vertices[cells]
        dets = np.linalg.det(np.transpose(x[:, 1:] - x[:, :1], (0, 2, 1)))
        flip = dets < 0
        cells[flip, 2], cells[flip, 3] = cells[flip, 3].copy(), cells[flip, 2].copy()

        T = len(cells)
        local_edges = np.sort(cells[:, LOCAL_EDGES], axis=2).reshape(-1, 2)
        edges, edge_inverse = np.unique(local_edges, axis=0, return_inverse=True)
        cell_edges = edge_inverse.reshape(-1).reshape(T, 6)
        edge_signs = np.where(cells[:, LOCAL_EDGES[:, 0]] < cells[:, LOCAL_EDGES[:, 1]], 1, -1)

        local_faces = np.sort(cells[:, LOCAL_FACES], axis=2).reshape(-1, 3)
        faces, face_inverse = np.unique(local_faces, axis=0, return_inverse=True)
        cell_faces = face_inverse.reshape(-1).reshape(T, 4)

        # two-sided incidence; second column -1 on the boundary
        flat = cell_faces.reshape(-1)
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=len(faces))
        if counts.max(initial=0) > 2:
            raise MeshError("A face is shared by more than two cells")
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        owners = order // 4
        face_cells = -np.ones((len(faces), 2), dtype=int)
        face_cells[:, 0] = owners[starts]
        interior = counts == 2
        face_cells[interior, 1] = owners[starts[interior] + 1]
        boundary_faces = counts == 1

        # outward normal of the cell against the global face normal
        fx = vertices[faces]
        normals = np.cross(fx[:, 1] - fx[:, 0], fx[:, 2] - fx[:, 0])
        centroids = fx.mean(axis=1)
        opposite = vertices[cells]  # (T, 4, 3); local face i is opposite vertex i
        outward = centroids[cell_faces] - opposite
        face_signs = np.where(np.einsum("tfd,tfd->tf", normals[cell_faces], outward) > 0, 1, -1)

        boundary_edges = np.zeros(len(edges), dtype=bool)
        boundary_vertices = np.zeros(len(vertices), dtype=bool)
        bf = faces[boundary_faces]
        boundary_vertices[bf.reshape(-1)] = True
        if len(bf):
            edge_index = {tuple(e): i for i, e in enumerate(edges)}
            for a, b, c in bf:
                for pair in ((a, b), (a, c), (b, c)):
                    boundary_edges[edge_index[pair]] = True

        diam = np.linalg.norm(x[:, LOCAL_EDGES[:, 0]] - x[:, LOCAL_EDGES[:, 1]], axis=2).max(axis=1)

        mesh = cls(
            vertices=vertices, cells=cells, edges=edges, faces=faces,
            cell_edges=cell_edges, cell_faces=cell_faces,
            edge_signs=edge_signs, face_signs=face_signs, face_cells=face_cells,
            boundary_faces=boundary_faces, boundary_edges=boundary_edges,
            boundary_vertices=boundary_vertices,
            h=float(diam.max(initial=0.0)), n=n,
        )
        logger.debug(f"Mesh incidence built: {mesh.summary()}")
        return mesh

    # ---- counts -------------------------------------------------------

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def num_interior_vertices(self) -> int:
        return int((~self.boundary_vertices).sum())

    @property
    def num_interior_edges(self) -> int:
        return int((~self.boundary_edges).sum())

    @property
    def num_interior_faces(self) -> int:
        return int((~self.boundary_faces).sum())

    @property
    def euler_characteristic(self) -> int:
        return self.num_vertices - self.num_edges + self.num_faces - self.num_cells

    def summary(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "h": self.h,
            "vertices": self.num_vertices,
            "edges": self.num_edges,
            "faces": self.num_faces,
            "cells": self.num_cells,
            "interior_vertices": self.num_interior_vertices,
            "interior_edges": self.num_interior_edges,
            "interior_faces": self.num_interior_faces,
            "boundary_faces": int(self.boundary_faces.sum()),
            "euler_characteristic": self.euler_characteristic,
        }

    # ---- geometry -----------------------------------------------------

    @cached_property
    def cell_centers(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    @cached_property
    def cell_diameters(self) -> np.ndarray:
        x = self.vertices[self.cells]
        return np.linalg.norm(x[:, LOCAL_EDGES[:, 0]] - x[:, LOCAL_EDGES[:, 1]], axis=2).max(axis=1)

    @cached_property
    def cell_volumes(self) -> np.ndarray:
        x = self.vertices[self.cells]
        return np.abs(np.linalg.det(x[:, 1:] - x[:, :1])) / 6.0

    @cached_property
    def face_diameters(self) -> np.ndarray:
        fx = self.vertices[self.faces]
        lengths = np.linalg.norm(fx[:, [0, 0, 1]] - fx[:, [1, 2, 2]], axis=2)
        return lengths.max(axis=1)

    def affine_map(self, cell: int) -> AffineMap:
        return _affine_from_vertices(self.vertices[self.cells[cell]], cell)

    def outward_normal(self, cell: int, local_face: int) -> np.ndarray:
        """Unit outward normal of a cell on one of its faces"""
        fx = self.vertices[self.faces[self.cell_faces[cell, local_face]]]
        normal = np.cross(fx[1] - fx[0], fx[2] - fx[0])
        return self.face_signs[cell, local_face] * normal / np.linalg.norm(normal)

    # ---- translation classes -------------------------------------------

    @cached_property
    def _classes(self) -> Tuple[np.ndarray, np.ndarray]:
        x = self.vertices[self.cells]
        scale = np.where(self.cell_diameters > 0, self.cell_diameters, 1.0)
        rel = np.round((x - self.cell_centers[:, None, :]) / scale[:, None, None], 9)
        ranks = np.argsort(np.argsort(self.cells, axis=1), axis=1)
        keys = np.concatenate(
            [rel.reshape(len(x), -1), ranks, np.round(scale, 12)[:, None]], axis=1,
        )
        _, representatives, class_ids = np.unique(
            keys, axis=0, return_index=True, return_inverse=True,
        )
        return class_ids.reshape(-1), representatives

    def shape_classes(self) -> Tuple[np.ndarray, np.ndarray]:
        """Group cells that are translates with identical global vertex ordering

        Returns (class id per cell, representative cell per class). Cells in
        one class share their local element and all local matrices.
        """
        return self._classes

    # ---- invariants / output ------------------------------------------

    def check_invariants(self) -> None:
        if self.euler_characteristic != 1:
            raise MeshError(
                f"Euler characteristic {self.euler_characteristic} != 1",
                self.summary(),
            )
        if (self.cell_volumes <= 0).any():
            bad = int(np.argmin(self.cell_volumes))
            raise MeshError(f"Cell {bad} has non-positive volume", {"cell": bad})
        interior = np.flatnonzero(~self.boundary_faces)
        product = (self.face_signs[self.face_cells[interior, 0], local_face_index(self, interior, 0)]
                   * self.face_signs[self.face_cells[interior, 1], local_face_index(self, interior, 1)])
        if (product != -1).any():
            raise MeshError("Interior face orientation is not two-sided")

    def write_vtk(self, path: str) -> Path:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        out = meshio.Mesh(
            points=self.vertices,
            cells=[("tetra", self.cells)],
            cell_data={"volume": [self.cell_volumes]},
        )
        meshio.write(str(target), out, file_format="vtk", binary=False)
        logger.info(f"Mesh with {self.num_cells} cells written to {target}")
        return target


def local_face_index(mesh: Mesh, faces: np.ndarray, side: int = 0) -> np.ndarray:
    """Local index of each face inside its adjacent cell on one side"""
    faces = np.asarray(faces, dtype=int)
    cells = mesh.face_cells[faces, side]
    return np.argmax(mesh.cell_faces[cells] == faces[:, None], axis=1)


def build_uniform_cube_mesh(n: int) -> Mesh:
    """Uniform mesh of (0,1)^3: n^3 cubes, each cut into 6 tetrahedra along the main diagonal"""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ConfigurationError(f"Number of subdivisions must be >= 1, got {n}", {"n": n})

    ticks = np.linspace(0.0, 1.0, n + 1)
    Z, Y, X = np.meshgrid(ticks, ticks, ticks, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def index(i, j, k):
        return i + (n + 1) * j + (n + 1) ** 2 * k

    I, J, K = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    I, J, K = I.ravel(), J.ravel(), K.ravel()
    unit = np.eye(3, dtype=int)

    cells = []
    for perm in permutations(range(3)):
        path = [np.zeros(3, dtype=int)]
        for axis in perm:
            path.append(path[-1] + unit[axis])
        cells.append(np.column_stack([index(I + p[0], J + p[1], K + p[2]) for p in path]))
    cells = np.concatenate(cells)

    mesh = Mesh.from_arrays(vertices, cells, n=n)
    mesh.check_invariants()
    logger.info(f"Built uniform cube mesh n={n}: {mesh.num_cells} cells, {mesh.num_faces} faces")
    return mesh


def entity_orientation_sign(mesh: Mesh, cell: int, dim: int, local: int) -> int:
    """+1 when the cell's local tangent (dim 1) or outward normal (dim 2) agrees with the global one"""
    if dim == 1:
        return int(mesh.edge_signs[cell, local])
    if dim == 2:
        return int(mesh.face_signs[cell, local])
    raise ConfigurationError(f"Orientation is defined for edges and faces, not dim={dim}")


def affine_map(mesh: Mesh, cell: int) -> AffineMap:
    return mesh.affine_map(cell)


def reference_tetrahedron() -> np.ndarray:
    return np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def single_cell_mesh(vertices: np.ndarray) -> Mesh:
    return Mesh.from_arrays(np.asarray(vertices, dtype=float), np.array([[0, 1, 2, 3]]))
