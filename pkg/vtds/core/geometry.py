import numpy as np
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Sequence, Tuple

from vtds.core.errors import GeometryError
from vtds.core.semantics import SemanticClass

EPS = 1e-9


###############
## Rigid pose ##
###############


@dataclass(frozen=True)
class Pose:
    """
    Rigid placement of a node: translation plus a rotation about +z (yaw, radians,
    counterclockwise from east).
    """

    position: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw: float = 0.0

    def rotation(self) -> np.ndarray:
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def apply(self, points: np.ndarray) -> np.ndarray:
        """
        Map local points (..., 3) to world coordinates.
        """
        return points @ self.rotation().T + np.asarray(self.position, dtype=np.float64)

    def inverse_apply(self, points: np.ndarray) -> np.ndarray:
        """
        Map world points (..., 3) back to the local frame.
        """
        return (points - np.asarray(self.position, dtype=np.float64)) @ self.rotation()


IDENTITY = Pose()


##########
## Mesh ##
##########


@dataclass
class Mesh:
    """
    Indexed triangle mesh with one semantic class and one albedo per triangle.

    ``vertex_albedo`` optionally overrides the flat albedo with per-vertex colours
    that the renderer interpolates across each triangle.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    class_ids: np.ndarray
    albedo: np.ndarray
    instance_id: int = 0
    vertex_albedo: Optional[np.ndarray] = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64).reshape(-1)
        self.albedo = np.asarray(self.albedo, dtype=np.float32).reshape(-1, 3)
        if self.vertex_albedo is not None:
            self.vertex_albedo = np.asarray(self.vertex_albedo, dtype=np.float32).reshape(-1, 3)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @classmethod
    def empty(cls) -> "Mesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)))

    def triangle_areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def validate(self) -> None:
        """
        Check index ranges, triangle areas, class ids and the instance-id rule.

        :raises GeometryError: On the first violated invariant.
        """
        n = self.n_triangles
        if len(self.class_ids) != n or len(self.albedo) != n:
            raise GeometryError("Per-triangle attributes do not match the triangle count.")
        if n and (self.triangles.min() < 0 or self.triangles.max() >= self.n_vertices):
            raise GeometryError("Triangle index out of range.")
        if n and self.triangle_areas().min() <= EPS:
            raise GeometryError("Mesh contains a degenerate triangle.")
        if n and (self.class_ids.min() < 0 or self.class_ids.max() >= len(SemanticClass)):
            raise GeometryError("Triangle carries an unknown semantic class.")
        annotatable = any(SemanticClass(int(c)).annotatable for c in np.unique(self.class_ids))
        if annotatable and self.instance_id <= 0:
            raise GeometryError("Annotatable mesh must carry a positive instance id.")
        if not annotatable and self.instance_id != 0:
            raise GeometryError("Only cars, cyclists and pedestrians carry instance ids.")

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def box_corners(self) -> np.ndarray:
        """
        The 8 corners of the local axis-aligned bounding box.
        """
        lo, hi = self.bounds()
        return np.array(
            [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]
        )

    def transformed(self, pose: Pose) -> "Mesh":
        return replace(self, vertices=pose.apply(self.vertices))

    def with_instance(self, instance_id: int) -> "Mesh":
        return replace(self, instance_id=int(instance_id))

    def recolored(self, albedo: Sequence[float], only_class: Optional[SemanticClass] = None) -> "Mesh":
        new_albedo = self.albedo.copy()
        mask = np.ones(self.n_triangles, dtype=bool)
        if only_class is not None:
            mask = self.class_ids == only_class.value
        new_albedo[mask] = np.asarray(albedo, dtype=np.float32)
        return replace(self, albedo=new_albedo)

    def corner_albedo(self) -> np.ndarray:
        """
        Albedo at each triangle corner, shape (T, 3, 3).
        """
        if self.vertex_albedo is not None:
            return self.vertex_albedo[self.triangles]
        return np.repeat(self.albedo[:, None, :], 3, axis=1)

    def drop_degenerate(self) -> "Mesh":
        if not self.n_triangles:
            return self
        keep = self.triangle_areas() > EPS
        return replace(
            self,
            triangles=self.triangles[keep],
            class_ids=self.class_ids[keep],
            albedo=self.albedo[keep],
        )

    @staticmethod
    def merge(meshes: Iterable["Mesh"], instance_id: int = 0) -> "Mesh":
        """
        Concatenate meshes into one, re-indexing triangles.
        """
        meshes = [m for m in meshes if m.n_triangles]
        if not meshes:
            return replace(Mesh.empty(), instance_id=instance_id)
        offsets = np.cumsum([0] + [m.n_vertices for m in meshes[:-1]])
        vertex_albedo = None
        if any(m.vertex_albedo is not None for m in meshes):
            vertex_albedo = np.concatenate(
                [
                    m.vertex_albedo
                    if m.vertex_albedo is not None
                    else _flat_vertex_albedo(m)
                    for m in meshes
                ]
            )
        return Mesh(
            vertices=np.concatenate([m.vertices for m in meshes]),
            triangles=np.concatenate([m.triangles + o for m, o in zip(meshes, offsets)]),
            class_ids=np.concatenate([m.class_ids for m in meshes]),
            albedo=np.concatenate([m.albedo for m in meshes]),
            instance_id=instance_id,
            vertex_albedo=vertex_albedo,
        )


def _flat_vertex_albedo(mesh: Mesh) -> np.ndarray:
    out = np.zeros((mesh.n_vertices, 3), dtype=np.float32)
    out[mesh.triangles.reshape(-1)] = np.repeat(mesh.albedo, 3, axis=0)
    return out


def _uniform(n: int, semantic: SemanticClass, albedo: Sequence[float]):
    return (
        np.full(n, semantic.value, dtype=np.int64),
        np.tile(np.asarray(albedo, dtype=np.float32), (n, 1)),
    )


##########################
## Polygons and polylines ##
##########################


def signed_area(polygon: np.ndarray) -> float:
    x, y = polygon[:, 0], polygon[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def clean_polygon(polygon: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """
    Drop a repeated closing point, duplicate points and collinear vertices.
    """
    pts = np.asarray(polygon, dtype=np.float64)[:, :2]
    if len(pts) > 1 and np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]
    changed = True
    while changed and len(pts) >= 3:
        changed = False
        prev = np.roll(pts, 1, axis=0)
        nxt = np.roll(pts, -1, axis=0)
        cross = (pts[:, 0] - prev[:, 0]) * (nxt[:, 1] - pts[:, 1]) - (
            pts[:, 1] - prev[:, 1]
        ) * (nxt[:, 0] - pts[:, 0])
        dup = np.linalg.norm(pts - prev, axis=1) <= tol
        bad = dup | (np.abs(cross) <= tol)
        if bad.any():
            drop = int(np.argmax(bad))
            pts = np.delete(pts, drop, axis=0)
            changed = True
    return pts


def counterclockwise(polygon: np.ndarray) -> np.ndarray:
    """
    The same ring, reversed if it winds clockwise.
    """
    return polygon[::-1].copy() if signed_area(polygon) < 0 else polygon


def triangulate_polygon(polygon: np.ndarray) -> np.ndarray:
    """
    Ear-clipping triangulation of a simple polygon of either winding.

    :param polygon: (N, 2) vertices without a repeated closing point.
    :return: (N - 2, 3) vertex index triples into ``polygon``, each
        counterclockwise.
    :raises GeometryError: If no ear can be found (polygon not simple).
    """
    n = len(polygon)
    if n < 3:
        raise GeometryError("Polygon needs at least 3 vertices.")
    if signed_area(polygon) < 0:
        # triangulate the reversed ring and map indices back
        return (n - 1) - triangulate_polygon(polygon[::-1])
    remaining = list(range(n))
    triangles = []
    while len(remaining) > 3:
        m = len(remaining)
        for k in range(m):
            i0, i1, i2 = remaining[k - 1], remaining[k], remaining[(k + 1) % m]
            a, b, c = polygon[i0], polygon[i1], polygon[i2]
            if _cross2(b - a, c - b) <= EPS:
                continue
            others = [j for j in remaining if j not in (i0, i1, i2)]
            if others and _points_in_triangle(polygon[others], a, b, c).any():
                continue
            triangles.append((i0, i1, i2))
            remaining.pop(k)
            break
        else:
            raise GeometryError("Polygon is not simple; ear clipping failed.")
    triangles.append(tuple(remaining))
    return np.array(triangles, dtype=np.int64)


def _cross2(u: np.ndarray, v: np.ndarray) -> float:
    return float(u[0] * v[1] - u[1] * v[0])


def _points_in_triangle(p: np.ndarray, a, b, c) -> np.ndarray:
    def edge(p0, p1):
        return (p1[0] - p0[0]) * (p[:, 1] - p0[1]) - (p1[1] - p0[1]) * (p[:, 0] - p0[0])

    return (edge(a, b) >= -EPS) & (edge(b, c) >= -EPS) & (edge(c, a) >= -EPS)


def polyline_arclength(points: np.ndarray) -> np.ndarray:
    """
    Cumulative arc length at each vertex of a polyline, starting at 0.
    """
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def point_at(points: np.ndarray, s: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Point and unit tangent at arc length ``s`` (clamped to the polyline).
    """
    arc = polyline_arclength(points)
    s = float(np.clip(s, 0.0, arc[-1]))
    k = int(np.searchsorted(arc, s, side="right") - 1)
    k = min(max(k, 0), len(points) - 2)
    seg_len = arc[k + 1] - arc[k]
    direction = (points[k + 1] - points[k]) / seg_len
    return points[k] + direction * (s - arc[k]), direction


def offset_polyline(points: np.ndarray, distance: float, miter_limit: float = 4.0) -> np.ndarray:
    """
    Offset a polyline to its right (relative to travel direction) by ``distance``
    meters; negative distances offset to the left. Interior vertices use a miter
    join.
    """
    points = np.asarray(points, dtype=np.float64)
    if distance == 0.0:
        return points.copy()
    d = np.diff(points, axis=0)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    right = np.stack([d[:, 1], -d[:, 0]], axis=1)
    normals = np.empty_like(points)
    normals[0] = right[0]
    normals[-1] = right[-1]
    if len(points) > 2:
        mid = right[:-1] + right[1:]
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        cos_half = np.sum(mid * right[1:], axis=1)
        scale = 1.0 / np.maximum(cos_half, 1.0 / miter_limit)
        normals[1:-1] = mid * scale[:, None]
    return points + distance * normals


#######################
## Primitive builders ##
#######################


def prism(
    polygon: np.ndarray,
    z0: float,
    height: float,
    semantic: SemanticClass,
    albedo: Sequence[float],
    top: bool = True,
    bottom: bool = False,
) -> Mesh:
    """
    Extrude a polygon from ``z0`` to ``z0 + height``. Vertices
    are shared between walls and caps, so the result is watertight apart from an
    optional open bottom.
    """
    ring = counterclockwise(clean_polygon(polygon))
    n = len(ring)
    if n < 3 or height <= 0:
        raise GeometryError("Cannot extrude a degenerate footprint.")
    lower = np.column_stack([ring, np.full(n, z0)])
    upper = np.column_stack([ring, np.full(n, z0 + height)])
    vertices = np.vstack([lower, upper])
    i = np.arange(n)
    j = (i + 1) % n
    walls = np.concatenate(
        [np.stack([i, j, j + n], axis=1), np.stack([i, j + n, i + n], axis=1)]
    )
    parts = [walls]
    if top:
        parts.append(triangulate_polygon(ring) + n)
    if bottom:
        parts.append(triangulate_polygon(ring)[:, ::-1])
    triangles = np.concatenate(parts)
    class_ids, colors = _uniform(len(triangles), semantic, albedo)
    return Mesh(vertices, triangles, class_ids, colors)


def rectangle(center: Sequence[float], size: Sequence[float]) -> np.ndarray:
    cx, cy = center
    hx, hy = size[0] / 2.0, size[1] / 2.0
    return np.array([[cx - hx, cy - hy], [cx + hx, cy - hy], [cx + hx, cy + hy], [cx - hx, cy + hy]])


def regular_polygon(center: Sequence[float], radius: float, segments: int = 8) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(segments) / segments
    return np.column_stack(
        [center[0] + radius * np.cos(angles), center[1] + radius * np.sin(angles)]
    )


def box(
    center: Sequence[float],
    size: Sequence[float],
    z0: float,
    semantic: SemanticClass,
    albedo: Sequence[float],
) -> Mesh:
    """
    Closed axis-aligned box with its base at ``z0``.
    """
    return prism(rectangle(center, size[:2]), z0, size[2], semantic, albedo, bottom=True)


def cylinder(
    center: Sequence[float],
    radius: float,
    z0: float,
    height: float,
    semantic: SemanticClass,
    albedo: Sequence[float],
    segments: int = 8,
) -> Mesh:
    return prism(regular_polygon(center, radius, segments), z0, height, semantic, albedo)


def cone(
    center: Sequence[float],
    radius: float,
    z0: float,
    height: float,
    semantic: SemanticClass,
    albedo: Sequence[float],
    segments: int = 8,
) -> Mesh:
    ring = regular_polygon(center, radius, segments)
    vertices = np.vstack(
        [np.column_stack([ring, np.full(segments, z0)]), [[center[0], center[1], z0 + height]]]
    )
    i = np.arange(segments)
    triangles = np.stack([i, (i + 1) % segments, np.full(segments, segments)], axis=1)
    class_ids, colors = _uniform(segments, semantic, albedo)
    return Mesh(vertices, triangles, class_ids, colors)


def flat_polygon(
    polygon: np.ndarray, z: float, semantic: SemanticClass, albedo: Sequence[float]
) -> Mesh:
    """
    Horizontal, upward-facing polygon at height ``z``.
    """
    ring = clean_polygon(polygon)
    if len(ring) < 3:
        return Mesh.empty()
    vertices = np.column_stack([ring, np.full(len(ring), z)])
    triangles = triangulate_polygon(ring)
    class_ids, colors = _uniform(len(triangles), semantic, albedo)
    return Mesh(vertices, triangles, class_ids, colors)


def ribbon(
    left: np.ndarray, right: np.ndarray, z: float, semantic: SemanticClass, albedo: Sequence[float]
) -> Mesh:
    """
    Upward-facing strip between two matching polylines (left and right edge
    relative to the travel direction).
    """
    n = len(left)
    vertices = np.vstack(
        [np.column_stack([left, np.full(n, z)]), np.column_stack([right, np.full(n, z)])]
    )
    i = np.arange(n - 1)
    triangles = np.concatenate(
        [np.stack([i + n, i + n + 1, i + 1], axis=1), np.stack([i + n, i + 1, i], axis=1)]
    )
    class_ids, colors = _uniform(len(triangles), semantic, albedo)
    return Mesh(vertices, triangles, class_ids, colors).drop_degenerate()
