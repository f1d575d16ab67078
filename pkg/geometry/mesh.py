"""Triangular meshes of the half-disk subsurface domain.

Coordinates are ``(x, z)`` with ``z >= 0`` the depth below the ground
surface ``z = 0``. Cells are stored counterclockwise in the ``(x, z)`` plane.
"""

import json
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from errors import MeshError, ParameterError

logger = logging.getLogger(__name__)

SURFACE = "SURFACE"
FAR = "FAR"
BOUNDARY_TAGS = (SURFACE, FAR)

# relative to the mesh diameter
_SURFACE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class MeshGrading:
    """Refinement parameters of the half-disk mesher"""

    growth: float = 1.3
    surface_layer: float = 1.0
    max_arc_step: float = 0.125

    @classmethod
    def from_dict(cls, config: dict[str, Any]) -> "MeshGrading":
        return cls(
            growth=float(config.get("growth", 1.3)),
            surface_layer=float(config.get("surface_layer", 1.0)),
            max_arc_step=float(config.get("max_arc_step", 0.125)),
        )

    def validate(self) -> None:
        if not math.isfinite(self.growth) or self.growth < 1.0:
            raise ParameterError(f"grading growth must be >= 1, got {self.growth}")
        if not math.isfinite(self.surface_layer) or self.surface_layer <= 0.0:
            raise ParameterError(
                f"grading surface_layer must be positive, got {self.surface_layer}"
            )
        if not 0.0 < self.max_arc_step <= 0.5:
            raise ParameterError(
                f"grading max_arc_step must lie in (0, 0.5], got {self.max_arc_step}"
            )


class Mesh:
    """Immutable 2D simplicial mesh with oriented edges and boundary tags"""

    def __init__(
        self,
        vertices: Any,
        cells: Any,
        electrode_nodes: Sequence[int] = (),
        boundary_tags: Optional[Mapping[tuple[int, int], str]] = None,
    ):
        self.vertices = _frozen(np.asarray(vertices, dtype=float).reshape(-1, 2))
        self.cells = _frozen(np.asarray(cells, dtype=np.int64).reshape(-1, 3))
        self.electrode_nodes = _frozen(np.asarray(electrode_nodes, dtype=np.int64))

        n_vertices = len(self.vertices)
        if len(self.cells) == 0:
            raise MeshError("mesh has no cells")
        if self.cells.min() < 0 or self.cells.max() >= n_vertices:
            raise MeshError("cell references a vertex out of range")
        if len(self.electrode_nodes) and (
            self.electrode_nodes.min() < 0 or self.electrode_nodes.max() >= n_vertices
        ):
            raise MeshError("electrode node out of range")

        p = self.vertices[self.cells]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        areas = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        if not np.all(areas > 0.0):
            bad = np.flatnonzero(~(areas > 0.0))
            raise MeshError(f"{len(bad)} cells with non-positive signed area, first {bad[0]}")
        self.cell_areas = _frozen(areas)

        self._build_edges()
        self._tag_boundary(boundary_tags)

    def _build_edges(self) -> None:
        n_cells = len(self.cells)
        # local edge i is opposite local vertex i, traversed counterclockwise
        tail = self.cells[:, [1, 2, 0]]
        head = self.cells[:, [2, 0, 1]]
        low = np.minimum(tail, head)
        high = np.maximum(tail, head)
        keys = low * len(self.vertices) + high
        unique_keys, inverse = np.unique(keys.ravel(), return_inverse=True)
        inverse = inverse.reshape(n_cells, 3)

        self.edges = _frozen(
            np.column_stack([unique_keys // len(self.vertices), unique_keys % len(self.vertices)])
        )
        self.cell_edges = _frozen(inverse)
        self.cell_edge_signs = _frozen(np.where(tail < head, 1, -1).astype(np.int64))

        counts = np.bincount(inverse.ravel(), minlength=len(self.edges))
        if counts.max() > 2:
            raise MeshError("an edge is shared by more than two cells")
        sign_sums = np.zeros(len(self.edges), dtype=np.int64)
        np.add.at(sign_sums, inverse.ravel(), self.cell_edge_signs.ravel())
        if np.any(sign_sums[counts == 2] != 0):
            raise MeshError("interior edge with inconsistent orientation")
        self.boundary_edges = _frozen(np.flatnonzero(counts == 1))

    def _tag_boundary(self, boundary_tags: Optional[Mapping[tuple[int, int], str]]) -> None:
        boundary_pairs = [
            (int(self.edges[e, 0]), int(self.edges[e, 1])) for e in self.boundary_edges
        ]
        if boundary_tags is None:
            boundary_tags = self._classify_boundary()
        tags = []
        for pair in boundary_pairs:
            tag = boundary_tags.get(pair)
            if tag not in BOUNDARY_TAGS:
                raise MeshError(f"boundary edge {pair} carries no valid tag")
            tags.append(tag)
        extra = set(boundary_tags) - set(boundary_pairs)
        if extra:
            raise MeshError(f"{len(extra)} tagged edges are not on the boundary")
        self.boundary_edge_tags = _frozen(np.array(tags, dtype=object))

    def _classify_boundary(self) -> dict[tuple[int, int], str]:
        tolerance = _SURFACE_TOLERANCE * self.diameter
        on_surface = np.abs(self.vertices[:, 1]) <= tolerance
        tags = {}
        for e in self.boundary_edges:
            i, j = (int(v) for v in self.edges[e])
            tags[(i, j)] = SURFACE if on_surface[i] and on_surface[j] else FAR
        return tags

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def diameter(self) -> float:
        span = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.hypot(*span))

    @property
    def cell_centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    def edges_with_tag(self, tag: str) -> np.ndarray:
        """Edge indices of the boundary edges carrying ``tag``"""
        return self.boundary_edges[self.boundary_edge_tags == tag]

    def boundary_nodes(self, tag: str) -> np.ndarray:
        return np.unique(self.edges[self.edges_with_tag(tag)].ravel())

    def polygon_area(self) -> float:
        """Area enclosed by the boundary, by the shoelace formula"""
        cell_of_edge = np.empty(self.n_edges, dtype=np.int64)
        local_of_edge = np.empty(self.n_edges, dtype=np.int64)
        cell_of_edge[self.cell_edges.ravel()] = np.repeat(np.arange(self.n_cells), 3)
        local_of_edge[self.cell_edges.ravel()] = np.tile(np.arange(3), self.n_cells)
        cells = self.cells[cell_of_edge[self.boundary_edges]]
        local = local_of_edge[self.boundary_edges]
        rows = np.arange(len(cells))
        a = self.vertices[cells[rows, (local + 1) % 3]]
        b = self.vertices[cells[rows, (local + 2) % 3]]
        return float(0.5 * np.sum(a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1]))

    def to_dict(self) -> dict[str, Any]:
        boundary = [
            {"edge": [int(v) for v in self.edges[e]], "tag": str(tag)}
            for e, tag in zip(self.boundary_edges, self.boundary_edge_tags)
        ]
        return {
            "vertices": self.vertices.tolist(),
            "cells": self.cells.tolist(),
            "boundary": boundary,
            "electrodes": self.electrode_nodes.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Mesh":
        tags = {
            (min(item["edge"]), max(item["edge"])): item["tag"] for item in data["boundary"]
        }
        return cls(data["vertices"], data["cells"], data.get("electrodes", []), tags)

    @classmethod
    def from_json(cls, json_str: str) -> "Mesh":
        return cls.from_dict(json.loads(json_str))

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Mesh":
        return cls.from_json(Path(path).read_text())


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def electrode_positions(n_electrodes: int, extent: Sequence[float]) -> np.ndarray:
    """Equidistant electrode x-coordinates with exact end points"""
    lo, hi = float(extent[0]), float(extent[1])
    positions = lo + (hi - lo) * np.arange(n_electrodes) / (n_electrodes - 1)
    positions[-1] = hi
    return positions


def _layer_parameters(first_layer: float, growth: float) -> np.ndarray:
    if growth == 1.0:
        n_layers = max(1, round(1.0 / first_layer))
        return np.linspace(0.0, 1.0, n_layers + 1)
    n_layers = max(1, round(math.log(1.0 + (growth - 1.0) / first_layer) / math.log(growth)))
    powers = growth ** np.arange(n_layers + 1)
    t = (powers - 1.0) / (powers[-1] - 1.0)
    t[-1] = 1.0
    return t


def build_half_disk_mesh(
    radius: float,
    n_electrodes: int,
    extent: Sequence[float],
    grading: Optional[MeshGrading] = None,
) -> Mesh:
    """Graded mesh of ``{z > 0, x^2 + z^2 < radius^2}`` with surface electrode nodes.

    The domain is swept by the nested half ellipses
    ``x = c (1 - t) - A(t) cos(pi u)``, ``z = radius t sin(pi u)`` with
    ``A(t) = a + (radius - a) t``, which degenerate to the electrode segment
    ``[c - a, c + a]`` at ``t = 0`` and reach the far half circle at ``t = 1``.
    Layer thicknesses in ``t`` grow geometrically away from the surface and
    the first layer is about one electrode spacing thick.
    """
    grading = grading or MeshGrading()
    grading.validate()
    if n_electrodes < 2:
        raise ParameterError(f"need at least 2 electrodes, got {n_electrodes}")
    if radius <= 0.0:
        raise ParameterError(f"radius must be positive, got {radius}")
    lo, hi = float(extent[0]), float(extent[1])
    if not -radius < lo < hi < radius:
        raise ParameterError(f"extent [{lo}, {hi}] must lie inside (-{radius}, {radius})")

    half_width = 0.5 * (hi - lo)
    center = 0.5 * (hi + lo)
    positions = electrode_positions(n_electrodes, (lo, hi))
    spacing = (hi - lo) / (n_electrodes - 1)

    electrode_u = np.arccos(np.clip((center - positions) / half_width, -1.0, 1.0)) / np.pi
    electrode_u[0], electrode_u[-1] = 0.0, 1.0
    u_nodes = [0.0]
    electrode_columns = [0]
    for k in range(n_electrodes - 1):
        pieces = max(1, math.ceil((electrode_u[k + 1] - electrode_u[k]) / grading.max_arc_step))
        fractions = np.arange(1, pieces + 1) / pieces
        u_nodes.extend(electrode_u[k] + fractions[:-1] * (electrode_u[k + 1] - electrode_u[k]))
        u_nodes.append(electrode_u[k + 1])
        electrode_columns.append(len(u_nodes) - 1)
    u = np.array(u_nodes)
    t = _layer_parameters(min(1.0, grading.surface_layer * spacing / radius), grading.growth)
    n_u, n_t = len(u), len(t)

    cos_u = np.cos(np.pi * u)
    sin_u = np.sin(np.pi * u)
    sin_u[0] = sin_u[-1] = 0.0
    semi_axis = half_width + (radius - half_width) * t
    semi_axis[-1] = radius
    shift = center * (1.0 - t)
    shift[-1] = 0.0
    x = shift[:, None] - semi_axis[:, None] * cos_u[None, :]
    z = radius * t[:, None] * sin_u[None, :]
    x[0, electrode_columns] = positions
    vertices = np.column_stack([x.ravel(), z.ravel()])

    def node(i: int, j: int) -> int:
        return j * n_u + i

    cells = []
    for j in range(n_t - 1):
        for i in range(n_u - 1):
            p00, p10 = node(i, j), node(i + 1, j)
            p01, p11 = node(i, j + 1), node(i + 1, j + 1)
            # diagonals point away from the two straight surface corners
            if u[i] + u[i + 1] < 1.0:
                cells.extend([(p00, p10, p11), (p00, p11, p01)])
            else:
                cells.extend([(p00, p10, p01), (p10, p11, p01)])

    mesh = Mesh(vertices, cells, [node(i, 0) for i in electrode_columns])
    logger.debug(
        "half-disk mesh: %d electrodes, %d vertices, %d cells, %d layers",
        n_electrodes,
        mesh.n_vertices,
        mesh.n_cells,
        n_t - 1,
    )
    return mesh


def build_rectangle_mesh(
    nx: int,
    nz: int,
    width: float = 1.0,
    height: float = 1.0,
    origin: Sequence[float] = (0.0, 0.0),
) -> Mesh:
    """Structured triangulation of a rectangle, two triangles per grid square"""
    if nx < 1 or nz < 1:
        raise ParameterError(f"need at least one square per direction, got {nx}x{nz}")
    if width <= 0.0 or height <= 0.0:
        raise ParameterError("rectangle sides must be positive")
    xs = origin[0] + width * np.arange(nx + 1) / nx
    zs = origin[1] + height * np.arange(nz + 1) / nz
    grid_x, grid_z = np.meshgrid(xs, zs)
    vertices = np.column_stack([grid_x.ravel(), grid_z.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(nz))
    p00 = (j * (nx + 1) + i).ravel()
    p10 = p00 + 1
    p01 = p00 + nx + 1
    p11 = p01 + 1
    lower = np.column_stack([p00, p10, p11])
    upper = np.column_stack([p00, p11, p01])
    cells = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return Mesh(vertices, cells)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every triangle into four congruent children.

    Original vertices keep their indices and the midpoint of edge ``e`` becomes
    vertex ``n_vertices + e``. The children of cell ``c`` are cells
    ``4c .. 4c + 3``, so cellwise data is prolonged with ``np.repeat(values, 4)``.
    """
    n_vertices = mesh.n_vertices
    midpoints = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    vertices = np.vstack([mesh.vertices, midpoints])

    v0, v1, v2 = mesh.cells.T
    m0, m1, m2 = (n_vertices + mesh.cell_edges).T
    cells = np.stack(
        [
            np.column_stack([v0, m2, m1]),
            np.column_stack([v1, m0, m2]),
            np.column_stack([v2, m1, m0]),
            np.column_stack([m0, m1, m2]),
        ],
        axis=1,
    ).reshape(-1, 3)

    tags = {}
    for e, tag in zip(mesh.boundary_edges, mesh.boundary_edge_tags):
        a, b = (int(v) for v in mesh.edges[e])
        mid = n_vertices + int(e)
        tags[(min(a, mid), max(a, mid))] = tag
        tags[(min(b, mid), max(b, mid))] = tag
    return Mesh(vertices, cells, mesh.electrode_nodes, tags)
