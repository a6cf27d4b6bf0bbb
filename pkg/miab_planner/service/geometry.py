"""Points, obstacles, deployment areas and line-of-sight classification.

Obstacles are eight-vertex cuboids whose quadrilateral faces are tested as two
triangles each. Areas are closed convex regions given as half-plane intersections.
"""
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from miab_planner.exceptions import DegenerateAreaError, ModelRangeError

SPEED_OF_LIGHT = 3e8  # m/s

# bottom, top, then the four sides; vertex i + 4 sits above vertex i
CUBOID_FACES: tuple[tuple[int, int, int, int], ...] = (
    (0, 1, 2, 3),
    (4, 5, 6, 7),
    (0, 1, 5, 4),
    (1, 2, 6, 5),
    (2, 3, 7, 6),
    (3, 0, 4, 7),
)
PLANARITY_TOLERANCE = 1e-6
ENDPOINT_TOLERANCE = 1e-9
AREA_TOLERANCE = 1e-9
MAX_SAMPLE_REJECTIONS = 1_000_000


class LosClass(str, Enum):
    LOS = "LoS"
    NLOS = "NLoS"


class Point3(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    x: float
    y: float
    z: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array((self.x, self.y, self.z), dtype=float)


class Segment(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    p: Point3
    q: Point3

    @model_validator(mode="after")
    def _distinct_endpoints(self) -> "Segment":
        if self.p == self.q:
            raise ValueError("segment endpoints must differ")
        return self


@dataclass(frozen=True, eq=False)
class CuboidMesh:
    """Array form of a cuboid used by the blockage tests.

    It is derived from the model fields and cached on the model, so it compares equal
    to any other mesh: equality of the owning models is decided by their vertices alone.
    """

    triangles: np.ndarray  # (12, 3, 3), two per face
    normals: np.ndarray  # outward unit normal per triangle
    offsets: np.ndarray
    footprint: tuple[float, float, float, float]  # xmin, xmax, ymin, ymax

    @classmethod
    def of(cls, pts: np.ndarray) -> "CuboidMesh":
        tris = []
        for a, b, c, d in CUBOID_FACES:
            tris.append((pts[a], pts[b], pts[c]))
            tris.append((pts[a], pts[c], pts[d]))
        triangles = np.array(tris)
        normals = np.cross(triangles[:, 1] - triangles[:, 0], triangles[:, 2] - triangles[:, 0])
        normals /= np.linalg.norm(normals, axis=1)[:, None]
        inward = np.einsum("ij,ij->i", normals, pts.mean(axis=0) - triangles[:, 0]) > 0
        normals[inward] *= -1.0
        footprint = float(pts[:, 0].min()), float(pts[:, 0].max()), float(pts[:, 1].min()), float(pts[:, 1].max())
        return cls(triangles, normals, np.einsum("ij,ij->i", normals, triangles[:, 0]), footprint)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, CuboidMesh)

    def __hash__(self) -> int:
        return 0


class Cuboid(BaseModel):
    """Trapezoidal cuboid: eight vertices, six planar faces (see CUBOID_FACES)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    vertices: tuple[Point3, ...] = Field(min_length=8, max_length=8)

    @classmethod
    def from_box(cls, xmin: float, ymin: float, zmin: float, xmax: float, ymax: float, zmax: float) -> "Cuboid":
        corners = [(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)]
        bottom = [Point3(x=x, y=y, z=zmin) for x, y in corners]
        top = [Point3(x=x, y=y, z=zmax) for x, y in corners]
        return cls(vertices=tuple(bottom + top))

    @classmethod
    def footprint(cls, cx: float, cy: float, size_x: float, size_y: float, height: float) -> "Cuboid":
        """Axis-aligned obstacle standing on the ground, centred on (cx, cy)."""
        return cls.from_box(cx - size_x / 2, cy - size_y / 2, 0.0, cx + size_x / 2, cy + size_y / 2, height)

    @model_validator(mode="after")
    def _check_shape(self) -> "Cuboid":
        pts = self.vertex_array
        for face in CUBOID_FACES:
            a, b, c, d = (pts[i] for i in face)
            normal = np.cross(b - a, c - a)
            norm = float(np.linalg.norm(normal))
            diagonal = max(float(np.linalg.norm(c - a)), float(np.linalg.norm(d - b)))
            if norm == 0.0 or diagonal == 0.0:
                raise ValueError(f"cuboid face {face} is degenerate")
            deviation = abs(float(np.dot(normal, d - a))) / norm
            if deviation > PLANARITY_TOLERANCE * diagonal:
                raise ValueError(f"cuboid face {face} is not planar (deviation {deviation:.3g} m)")
        try:
            volume = ConvexHull(pts).volume
        except QhullError as exc:
            raise ValueError("cuboid has zero volume") from exc
        if volume <= 0.0:
            raise ValueError("cuboid has zero volume")
        return self

    @property
    def vertex_array(self) -> np.ndarray:
        return np.array([v.as_array() for v in self.vertices])

    @cached_property
    def mesh(self) -> "CuboidMesh":
        return CuboidMesh.of(self.vertex_array)

    @property
    def triangles(self) -> np.ndarray:
        return self.mesh.triangles

    @property
    def outward_planes(self) -> tuple[np.ndarray, np.ndarray]:
        return self.mesh.normals, self.mesh.offsets

    def contains_strictly(self, point: np.ndarray) -> bool:
        mesh = self.mesh
        return bool(np.all(mesh.normals @ point - mesh.offsets < -ENDPOINT_TOLERANCE))

    @property
    def footprint_bounds(self) -> tuple[float, float, float, float]:
        return self.mesh.footprint


class HalfPlane(BaseModel):
    """a*x + b*y <= c, in meters."""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    a: float
    b: float
    c: float

    @model_validator(mode="after")
    def _non_degenerate(self) -> "HalfPlane":
        if self.a == 0.0 and self.b == 0.0:
            raise ValueError("half-plane needs a non-zero normal (a, b)")
        return self


class AreaPolygon(BaseModel):
    """Closed convex deployment area. Inequalities are normalised to unit normals
    internally, so the containment tolerance is in meters."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = ""
    half_planes: tuple[HalfPlane, ...] = Field(min_length=3)

    @model_validator(mode="after")
    def _bounded_and_non_empty(self) -> "AreaPolygon":
        self.bounding_box()
        return self

    @classmethod
    def rectangle(cls, xmin: float, ymin: float, xmax: float, ymax: float, name: str = "") -> "AreaPolygon":
        return cls(
            name=name,
            half_planes=(
                HalfPlane(a=1.0, b=0.0, c=xmax),
                HalfPlane(a=-1.0, b=0.0, c=-xmin),
                HalfPlane(a=0.0, b=1.0, c=ymax),
                HalfPlane(a=0.0, b=-1.0, c=-ymin),
            ),
        )

    @cached_property
    def unit_half_planes(self) -> tuple[tuple[float, float, float], ...]:
        """(a, b, c) rows scaled to a unit normal."""
        rows = []
        for h in self.half_planes:
            norm = math.hypot(h.a, h.b)
            rows.append((h.a / norm, h.b / norm, h.c / norm))
        return tuple(rows)

    @property
    def unit_rows(self) -> tuple[np.ndarray, np.ndarray]:
        planes = np.array(self.unit_half_planes, dtype=float)
        return planes[:, :2], planes[:, 2]

    def bounding_box(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) probed with four linear programs."""
        return self.bbox_extremes

    @cached_property
    def bbox_extremes(self) -> tuple[float, float, float, float]:
        rows, rhs = self.unit_rows
        extremes = []
        for objective in ((1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)):
            res = linprog(c=objective, A_ub=rows, b_ub=rhs, bounds=[(None, None), (None, None)], method="highs")
            if res.status == 2:
                raise DegenerateAreaError(f"area '{self.name}' is empty", field="half_planes")
            if res.status == 3 or not res.success:
                raise DegenerateAreaError(f"area '{self.name}' is unbounded", field="half_planes")
            extremes.append(float(res.fun))
        return extremes[0], -extremes[1], extremes[2], -extremes[3]

    def contains(self, x: float, y: float, tolerance: float = AREA_TOLERANCE) -> bool:
        return all(a * x + b * y - c <= tolerance for a, b, c in self.unit_half_planes)

    @cached_property
    def vertices(self) -> tuple[tuple[float, float], ...]:
        """Polygon corners, counter-clockwise."""
        rows, rhs = self.unit_rows
        found: list[tuple[float, float]] = []
        for i in range(len(rows)):
            for j in range(i + 1, len(rows)):
                matrix = np.array((rows[i], rows[j]))
                if abs(np.linalg.det(matrix)) < 1e-12:
                    continue
                x, y = np.linalg.solve(matrix, np.array((rhs[i], rhs[j])))
                if self.contains(float(x), float(y)) and all(math.dist((x, y), v) > 1e-9 for v in found):
                    found.append((float(x), float(y)))
        cx = sum(v[0] for v in found) / len(found)
        cy = sum(v[1] for v in found) / len(found)
        return tuple(sorted(found, key=lambda v: math.atan2(v[1] - cy, v[0] - cx)))

    @property
    def centroid(self) -> tuple[float, float]:
        verts = self.vertices
        return sum(v[0] for v in verts) / len(verts), sum(v[1] for v in verts) / len(verts)


def dist3d(p: Point3, q: Point3) -> float:
    return math.dist((p.x, p.y, p.z), (q.x, q.y, q.z))


def dist2d(p: Point3, q: Point3) -> float:
    return math.hypot(p.x - q.x, p.y - q.y)


def breakpoint_distance(h_bs: float, h_ut: float, h_e: float, f_ghz: float) -> float:
    """2D breakpoint distance of the UMi LoS model."""
    if h_bs <= h_e or h_ut <= h_e:
        raise ModelRangeError(f"antenna heights ({h_bs}, {h_ut}) must exceed the environment height {h_e}")
    if f_ghz <= 0:
        raise ModelRangeError(f"carrier frequency must be positive, got {f_ghz}")
    return 4.0 * (h_bs - h_e) * (h_ut - h_e) * f_ghz * 1e9 / SPEED_OF_LIGHT


def _hits_triangles(p: np.ndarray, q: np.ndarray, triangles: np.ndarray) -> bool:
    # Moller-Trumbore against all triangles at once; t restricted to the open segment
    direction = q - p
    v0 = triangles[:, 0]
    e1 = triangles[:, 1] - v0
    e2 = triangles[:, 2] - v0
    h = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, h)
    scale = np.linalg.norm(direction) * np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
    usable = np.abs(det) > 1e-12 * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(usable, 1.0 / np.where(usable, det, 1.0), 0.0)
        s = p - v0
        u = inv * np.einsum("ij,ij->i", s, h)
        qvec = np.cross(s, e1)
        v = inv * (qvec @ direction)
        t = inv * np.einsum("ij,ij->i", e2, qvec)
    hit = (
        usable
        & (u >= 0.0)
        & (u <= 1.0)
        & (v >= 0.0)
        & (u + v <= 1.0)
        & (t > ENDPOINT_TOLERANCE)
        & (t < 1.0 - ENDPOINT_TOLERANCE)
    )
    return bool(hit.any())


def blocked_between(p: np.ndarray, q: np.ndarray, obstacle: Cuboid) -> bool:
    """Array form of segment_blocked_by, used on the evaluation hot path."""
    xmin, xmax, ymin, ymax = obstacle.footprint_bounds
    if max(p[0], q[0]) < xmin or min(p[0], q[0]) > xmax or max(p[1], q[1]) < ymin or min(p[1], q[1]) > ymax:
        return False
    if _hits_triangles(p, q, obstacle.triangles):
        return True
    return obstacle.contains_strictly((p + q) / 2.0)


def segment_blocked_by(seg: Segment, obs: Cuboid) -> bool:
    return blocked_between(seg.p.as_array(), seg.q.as_array(), obs)


def los_between(p: np.ndarray, q: np.ndarray, obstacles: Iterable[Cuboid]) -> LosClass:
    for obstacle in obstacles:
        if blocked_between(p, q, obstacle):
            return LosClass.NLOS
    return LosClass.LOS


def los_class(seg: Segment, obstacles: Sequence[Cuboid]) -> LosClass:
    return los_between(seg.p.as_array(), seg.q.as_array(), obstacles)


def area_contains(area: AreaPolygon, x: float, y: float) -> bool:
    return area.contains(x, y)


def area_sample(area: AreaPolygon, rng: np.random.Generator) -> tuple[float, float]:
    """Uniform point of the area by rejection in its bounding box."""
    xmin, xmax, ymin, ymax = area.bounding_box()
    for _ in range(MAX_SAMPLE_REJECTIONS):
        x, y = rng.uniform((xmin, ymin), (xmax, ymax))
        if area.contains(float(x), float(y)):
            return float(x), float(y)
    raise DegenerateAreaError(f"no sample accepted in area '{area.name}' after {MAX_SAMPLE_REJECTIONS} draws")


def area_project(area: AreaPolygon, x: float, y: float) -> tuple[float, float]:
    """Euclidean-nearest point of the area; the input itself when already inside."""
    if area.contains(x, y):
        return x, y
    rows, rhs = area.unit_rows
    point = np.array((x, y))
    candidates: list[tuple[float, float]] = list(area.vertices)
    for normal, offset in zip(rows, rhs):
        foot = point - (float(normal @ point) - offset) * normal
        if area.contains(float(foot[0]), float(foot[1])):
            candidates.append((float(foot[0]), float(foot[1])))
    best: Optional[tuple[float, float]] = None
    best_distance = math.inf
    for candidate in candidates:
        distance = math.dist(candidate, (x, y))
        if distance < best_distance:
            best, best_distance = candidate, distance
    assert best is not None
    return best


def area_distance(area: AreaPolygon, x: float, y: float) -> float:
    """Distance from (x, y) to the area; zero inside."""
    px, py = area_project(area, x, y)
    return math.hypot(px - x, py - y)
