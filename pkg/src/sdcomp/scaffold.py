"""Piecewise-planar scaffolding of sparse depth.

Sparse measurements are triangulated in the image plane and depth is
interpolated linearly inside each triangle. The Delaunay triangulation is
obtained by lifting the 2-D points onto the paraboloid (u, v, u^2 + v^2),
computing the 3-D convex hull and keeping the downward-facing facets, whose
projection back to the plane is exactly the Delaunay triangulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

# Triangles thinner than this (in px^2) are dropped from rasterization.
_MIN_TRIANGLE_AREA = 1e-12


class DegenerateInput(ValueError):
    """Fewer than 3 distinct points, or all points collinear."""


@dataclass(frozen=True)
class SparseDepthMap:
    """Sparse depth measurements on a pixel grid.

    ``points`` rows are (u, v, z) with u = column, v = row, z in meters.
    Duplicate (u, v) entries are resolved at construction by keeping the
    smallest depth (the closest surface wins).
    """

    width: int
    height: int
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if pts.size and not np.all(np.isfinite(pts)):
            raise ValueError("sparse points must be finite")
        if np.any(pts[:, 2] <= 0):
            raise ValueError("sparse depths must be positive")
        u, v = pts[:, 0], pts[:, 1]
        if np.any((u < 0) | (u >= self.width) | (v < 0) | (v >= self.height)):
            raise ValueError("sparse points must lie inside the image")
        pts = _dedupe_keep_nearest(pts)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class TriangleMesh:
    """Triangulated depth surface over the image plane.

    ``vertices`` rows are (u, v, z); ``triangles`` rows index vertices and
    are counterclockwise in the image plane.
    """

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)


@dataclass
class DenseDepthMap:
    """Per-pixel depth (meters) with a validity channel."""

    depth: np.ndarray
    validity: np.ndarray

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=float)
        self.validity = np.asarray(self.validity, dtype=bool)
        if self.depth.shape != self.validity.shape or self.depth.ndim != 2:
            raise ValueError("depth and validity must be matching 2-D arrays")
        if np.any(self.depth[self.validity] <= 0):
            raise ValueError("depth must be positive wherever validity is set")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


def _dedupe_keep_nearest(pts: np.ndarray) -> np.ndarray:
    if len(pts) == 0:
        return pts.copy()
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))
    pts = pts[order]
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = (pts[1:, 0] != pts[:-1, 0]) | (pts[1:, 1] != pts[:-1, 1])
    return pts[keep].copy()


def lift(points) -> np.ndarray:
    """Lifting transform: (u, v) -> (u, v, u^2 + v^2)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 1:
        raise ValueError("need at least one point")
    return np.column_stack([pts[:, 0], pts[:, 1], pts[:, 0] ** 2 + pts[:, 1] ** 2])


def _signed_area2(pts: np.ndarray, tri: np.ndarray) -> np.ndarray:
    a, b, c = pts[tri[:, 0]], pts[tri[:, 1]], pts[tri[:, 2]]
    return (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (
        c[:, 0] - a[:, 0]
    )


def _fan_triangulation(pts2: np.ndarray) -> np.ndarray:
    """Fan of the 2-D convex hull; used when all points are cocircular.

    Cocircular points lift to a common plane, so the lifted hull is flat and
    every triangulation of the polygon satisfies the (tolerant) empty-
    circumcircle test with ties.
    """
    hull = ConvexHull(pts2)
    ring = hull.vertices  # counterclockwise
    return np.array(
        [[ring[0], ring[i], ring[i + 1]] for i in range(1, len(ring) - 1)],
        dtype=np.int64,
    )


def delaunay(points) -> TriangleMesh:
    """Delaunay triangulation via the lower envelope of the lifted hull.

    Raises :class:`DegenerateInput` for fewer than 3 distinct points or a
    collinear point set.
    """
    pts2 = np.asarray(points, dtype=float).reshape(-1, 2)
    pts2 = np.unique(pts2, axis=0)
    if len(pts2) < 3:
        raise DegenerateInput(f"need at least 3 distinct points, got {len(pts2)}")

    if len(pts2) == 3:
        tri = np.array([[0, 1, 2]], dtype=np.int64)
        if abs(_signed_area2(pts2, tri)[0]) <= 2 * _MIN_TRIANGLE_AREA:
            raise DegenerateInput("points are collinear")
    else:
        lifted = lift(pts2)
        try:
            hull = ConvexHull(lifted)
            # Outward normals with negative z face the paraboloid's underside.
            down = hull.equations[:, 2] < -1e-12
            tri = hull.simplices[down].astype(np.int64)
        except QhullError:
            # Flat lifted hull: collinear (no triangulation) or cocircular.
            rank = np.linalg.matrix_rank(pts2 - pts2.mean(axis=0), tol=1e-9)
            if rank < 2:
                raise DegenerateInput("points are collinear") from None
            tri = _fan_triangulation(pts2)

    # Orient counterclockwise in the image plane and drop slivers.
    area2 = _signed_area2(pts2, tri)
    flip = area2 < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    tri = tri[np.abs(area2) > 2 * _MIN_TRIANGLE_AREA]
    if len(tri) == 0:
        raise DegenerateInput("all candidate triangles are degenerate")

    vertices = np.column_stack([pts2, np.zeros(len(pts2))])
    return TriangleMesh(vertices, tri)


def _mesh_from_sparse(zs: SparseDepthMap) -> TriangleMesh:
    mesh = delaunay(zs.points[:, :2])
    # delaunay() may reorder/dedupe; re-attach depths by exact coordinates.
    depth_of = {(u, v): z for u, v, z in zs.points}
    verts = mesh.vertices.copy()
    for i, (u, v, _) in enumerate(verts):
        verts[i, 2] = depth_of[(u, v)]
    return TriangleMesh(verts, mesh.triangles)


def rasterize(mesh: TriangleMesh, width: int, height: int) -> DenseDepthMap:
    """Barycentric rasterization of a depth mesh at integer pixel centers.

    Pixels on shared edges are resolved by the first covering triangle in
    index order, so output is deterministic.
    """
    depth = np.zeros((height, width), dtype=float)
    covered = np.zeros((height, width), dtype=bool)
    verts = mesh.vertices

    for tri in mesh.triangles:
        a, b, c = verts[tri[0]], verts[tri[1]], verts[tri[2]]
        denom = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1])
        if abs(denom) <= 2 * _MIN_TRIANGLE_AREA:
            continue
        u_min = max(int(np.ceil(min(a[0], b[0], c[0]))), 0)
        u_max = min(int(np.floor(max(a[0], b[0], c[0]))), width - 1)
        v_min = max(int(np.ceil(min(a[1], b[1], c[1]))), 0)
        v_max = min(int(np.floor(max(a[1], b[1], c[1]))), height - 1)
        if u_min > u_max or v_min > v_max:
            continue
        us = np.arange(u_min, u_max + 1, dtype=float)
        vs = np.arange(v_min, v_max + 1, dtype=float)
        uu, vv = np.meshgrid(us, vs)
        l1 = ((b[1] - c[1]) * (uu - c[0]) + (c[0] - b[0]) * (vv - c[1])) / denom
        l2 = ((c[1] - a[1]) * (uu - c[0]) + (a[0] - c[0]) * (vv - c[1])) / denom
        l3 = 1.0 - l1 - l2
        # Tiny negative slack so pixels exactly on shared edges are never
        # dropped by both neighbors due to rounding.
        inside = (l1 >= -1e-12) & (l2 >= -1e-12) & (l3 >= -1e-12)
        block = covered[v_min : v_max + 1, u_min : u_max + 1]
        write = inside & ~block
        z = l1 * a[2] + l2 * b[2] + l3 * c[2]
        depth[v_min : v_max + 1, u_min : u_max + 1][write] = z[write]
        block |= write

    return DenseDepthMap(np.where(covered, depth, 1.0), covered)


def scaffold(zs: SparseDepthMap) -> DenseDepthMap:
    """Dense piecewise-planar depth from sparse measurements.

    Pixels outside the convex hull of the measurements (and the whole map
    when triangulation is impossible) are filled with the mean sparse depth
    and left marked invalid so downstream consumers can mask them.
    """
    if len(zs) == 0:
        raise DegenerateInput("sparse depth map is empty")
    mean_depth = float(np.mean(zs.points[:, 2]))
    try:
        mesh = _mesh_from_sparse(zs)
    except DegenerateInput:
        depth = np.full((zs.height, zs.width), mean_depth)
        validity = np.zeros((zs.height, zs.width), dtype=bool)
        for u, v, z in zs.points:
            iu, iv = int(round(u)), int(round(v))
            depth[iv, iu] = z
            validity[iv, iu] = True
        return DenseDepthMap(depth, validity)

    rastered = rasterize(mesh, zs.width, zs.height)
    depth = np.where(rastered.validity, rastered.depth, mean_depth)
    return DenseDepthMap(depth, rastered.validity)
