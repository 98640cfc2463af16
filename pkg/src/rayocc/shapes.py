"""Analytic CSG solids and closed triangle meshes with exact occupancy tests."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np


class MeshError(ValueError):
    pass


# ---------------------------------------------------------------------------
# CSG solids
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Rigid:
    """Node placement: local = rotation^T (x - translation)."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(self.rotation.T @ self.rotation, np.eye(3), atol=1e-9):
            raise ValueError("Rigid.rotation must be orthonormal")

    def to_local(self, x: np.ndarray) -> np.ndarray:
        return (x - self.translation) @ self.rotation

    def to_dict(self) -> dict:
        return {"R": self.rotation.reshape(-1).tolist(), "t": self.translation.tolist()}


class Solid:
    """Base class: anything with a signed distance bound and an occupancy test."""

    transform: Optional[Rigid] = None

    def _local(self, x: np.ndarray) -> np.ndarray:
        return x if self.transform is None else self.transform.to_local(x)

    def sdf(self, x) -> np.ndarray:
        raise NotImplementedError

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return (self.sdf(x) < 0).astype(np.uint8)

    def primitives(self) -> list["Primitive"]:
        raise NotImplementedError

    def bounding_sphere(self) -> tuple[np.ndarray, float]:
        raise NotImplementedError

    def bounds(self) -> np.ndarray:
        c, r = self.bounding_sphere()
        return np.stack([c - r, c + r])

    def to_dict(self) -> dict:
        raise NotImplementedError

    def _place(self, center: np.ndarray) -> np.ndarray:
        if self.transform is None:
            return center
        return center @ self.transform.rotation.T + self.transform.translation


class Primitive(Solid):
    albedo: tuple = (0.8, 0.8, 0.8)

    def primitives(self):
        return [self]


@dataclass(eq=False)
class Sphere(Primitive):
    radius: float = 1.0
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    transform: Optional[Rigid] = None
    albedo: tuple = (0.8, 0.8, 0.8)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")

    def sdf(self, x):
        p = self._local(np.atleast_2d(np.asarray(x, dtype=np.float64))) - self.center
        return np.linalg.norm(p, axis=1) - self.radius

    def bounding_sphere(self):
        return self._place(self.center), float(self.radius)

    def to_dict(self):
        return {"type": "sphere", "radius": self.radius, "center": self.center.tolist(),
                "albedo": list(self.albedo), **_tf(self)}


@dataclass(eq=False)
class Box(Primitive):
    half_extents: np.ndarray = field(default_factory=lambda: np.full(3, 0.5))
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    transform: Optional[Rigid] = None
    albedo: tuple = (0.8, 0.8, 0.8)

    def __post_init__(self):
        self.half_extents = np.asarray(self.half_extents, dtype=np.float64)
        self.center = np.asarray(self.center, dtype=np.float64)
        if np.any(self.half_extents <= 0):
            raise ValueError("box half extents must be positive")

    def sdf(self, x):
        q = np.abs(self._local(np.atleast_2d(np.asarray(x, dtype=np.float64))) - self.center) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0), axis=1)
        return outside + np.minimum(q.max(axis=1), 0)

    def bounding_sphere(self):
        return self._place(self.center), float(np.linalg.norm(self.half_extents))

    def to_dict(self):
        return {"type": "box", "half_extents": self.half_extents.tolist(), "center": self.center.tolist(),
                "albedo": list(self.albedo), **_tf(self)}


@dataclass(eq=False)
class Cylinder(Primitive):
    """Capped cylinder around ``axis`` through ``center``."""

    radius: float = 0.5
    half_height: float = 0.5
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    transform: Optional[Rigid] = None
    albedo: tuple = (0.8, 0.8, 0.8)

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=np.float64)
        self.axis = a / np.linalg.norm(a)
        self.center = np.asarray(self.center, dtype=np.float64)
        if not (self.radius > 0 and self.half_height > 0):
            raise ValueError("cylinder radius and half height must be positive")

    def sdf(self, x):
        p = self._local(np.atleast_2d(np.asarray(x, dtype=np.float64))) - self.center
        h = p @ self.axis
        radial = np.linalg.norm(p - h[:, None] * self.axis, axis=1)
        d = np.stack([radial - self.radius, np.abs(h) - self.half_height], axis=1)
        return np.minimum(d.max(axis=1), 0) + np.linalg.norm(np.maximum(d, 0), axis=1)

    def bounding_sphere(self):
        return self._place(self.center), float(np.hypot(self.radius, self.half_height))

    def to_dict(self):
        return {"type": "cylinder", "radius": self.radius, "half_height": self.half_height,
                "axis": self.axis.tolist(), "center": self.center.tolist(), "albedo": list(self.albedo),
                **_tf(self)}


@dataclass(eq=False)
class _Binary(Solid):
    a: Solid = None
    b: Solid = None
    transform: Optional[Rigid] = None
    op = ""

    def primitives(self):
        return _placed(self.a.primitives() + self.b.primitives(), self._local)

    def to_dict(self):
        return {"type": self.op, "a": self.a.to_dict(), "b": self.b.to_dict(), **_tf(self)}


class Union(_Binary):
    op = "union"

    def sdf(self, x):
        p = self._local(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        return np.minimum(self.a.sdf(p), self.b.sdf(p))

    def bounding_sphere(self):
        (ca, ra), (cb, rb) = self.a.bounding_sphere(), self.b.bounding_sphere()
        d = float(np.linalg.norm(cb - ca))
        if d + rb <= ra:
            c, r = ca, ra
        elif d + ra <= rb:
            c, r = cb, rb
        else:
            r = (d + ra + rb) / 2
            c = ca + (cb - ca) * ((r - ra) / d)
        return self._place(c), r


class Intersection(_Binary):
    op = "intersection"

    def sdf(self, x):
        p = self._local(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        return np.maximum(self.a.sdf(p), self.b.sdf(p))

    def bounding_sphere(self):
        (ca, ra), (cb, rb) = self.a.bounding_sphere(), self.b.bounding_sphere()
        c, r = (ca, ra) if ra <= rb else (cb, rb)
        return self._place(c), r


class Difference(_Binary):
    op = "difference"

    def sdf(self, x):
        p = self._local(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        return np.maximum(self.a.sdf(p), -self.b.sdf(p))

    def bounding_sphere(self):
        c, r = self.a.bounding_sphere()
        return self._place(c), r


@dataclass(eq=False)
class Scaled(Solid):
    """Uniform scaling about the origin; keeps the distance bound valid."""

    child: Solid = None
    factor: float = 1.0
    transform: Optional[Rigid] = None

    def sdf(self, x):
        p = self._local(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        return self.child.sdf(p / self.factor) * self.factor

    def primitives(self):
        return _placed(self.child.primitives(), lambda x: self._local(x) / self.factor, self.factor)

    def bounding_sphere(self):
        c, r = self.child.bounding_sphere()
        return self._place(c * self.factor), r * self.factor

    def to_dict(self):
        return {"type": "scaled", "factor": self.factor, "child": self.child.to_dict(), **_tf(self)}


@dataclass(eq=False)
class InCameraFrame(Solid):
    """View of a world-frame solid through a world->camera rigid transform."""

    child: Solid = None
    rotation: np.ndarray = None
    translation: np.ndarray = None

    def sdf(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self.child.sdf((x - self.translation) @ self.rotation)

    def primitives(self):
        return _placed(self.child.primitives(), lambda x: (x - self.translation) @ self.rotation)

    def bounding_sphere(self):
        c, r = self.child.bounding_sphere()
        return self.rotation @ c + self.translation, r


@dataclass(eq=False)
class Placed(Primitive):
    """A primitive seen from an enclosing node's frame, so its sdf takes outer points."""

    part: Primitive = None
    to_part: Callable = None
    factor: float = 1.0

    @property
    def albedo(self):
        return self.part.albedo

    def sdf(self, x):
        return self.part.sdf(self.to_part(np.atleast_2d(np.asarray(x, dtype=np.float64)))) * self.factor

    def to_dict(self):
        raise TypeError("Placed primitives are views into a CSG tree; serialise the tree instead")


def _placed(parts: list, to_part, factor: float = 1.0) -> list:
    return [Placed(part=q, to_part=to_part, factor=factor) for q in parts]


def _tf(node: Solid) -> dict:
    return {} if node.transform is None else {"transform": node.transform.to_dict()}


def solid_from_dict(d: dict) -> Solid:
    tf = Rigid(np.array(d["transform"]["R"]), d["transform"]["t"]) if "transform" in d else None
    kind = d["type"]
    if kind == "sphere":
        return Sphere(radius=d["radius"], center=d["center"], albedo=tuple(d["albedo"]), transform=tf)
    if kind == "box":
        return Box(half_extents=d["half_extents"], center=d["center"], albedo=tuple(d["albedo"]), transform=tf)
    if kind == "cylinder":
        return Cylinder(radius=d["radius"], half_height=d["half_height"], axis=d["axis"], center=d["center"],
                        albedo=tuple(d["albedo"]), transform=tf)
    if kind == "scaled":
        return Scaled(child=solid_from_dict(d["child"]), factor=d["factor"], transform=tf)
    ops = {"union": Union, "intersection": Intersection, "difference": Difference}
    if kind in ops:
        return ops[kind](a=solid_from_dict(d["a"]), b=solid_from_dict(d["b"]), transform=tf)
    raise ValueError(f"unknown solid type {kind!r}")


def occupancy_analytic(shape: Solid, x) -> np.ndarray:
    """1 where the point is inside the CSG volume (sdf < 0)."""
    return shape.contains(x)


# ---------------------------------------------------------------------------
# Triangle meshes
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise MeshError("triangle index out of range")

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def is_empty(self) -> bool:
        return self.n_triangles == 0

    def corners(self) -> np.ndarray:
        return self.vertices[self.triangles]

    def face_normals(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit normals and areas per triangle (zero-area faces get a zero normal)."""
        c = self.corners()
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        twice_area = np.linalg.norm(n, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(twice_area[:, None] > 0, n / twice_area[:, None], 0.0)
        return unit, twice_area / 2

    def volume(self) -> float:
        """Signed volume from the divergence theorem; positive for outward winding."""
        if self.is_empty():
            return 0.0
        c = self.corners()
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)

    def edge_counts(self) -> np.ndarray:
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        e = np.sort(e, axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    def is_closed(self) -> bool:
        """Every undirected edge is used by exactly two triangles."""
        return self.is_empty() or bool(np.all(self.edge_counts() == 2))

    def is_consistently_oriented(self) -> bool:
        d = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        _, counts = np.unique(d, axis=0, return_counts=True)
        return bool(np.all(counts == 1))

    def bounds(self) -> np.ndarray:
        return np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    def transformed(self, rotation=None, translation=None, scale: float = 1.0) -> "TriMesh":
        v = self.vertices * scale
        if rotation is not None:
            v = v @ np.asarray(rotation).T
        if translation is not None:
            v = v + np.asarray(translation)
        return TriMesh(v, self.triangles.copy())

    def sample_surface(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Area-weighted surface samples and the normals of the faces they lie on."""
        normals, areas = self.face_normals()
        keep = areas > 0
        if not np.any(keep):
            raise MeshError("mesh has no triangles with positive area")
        idx_keep = np.flatnonzero(keep)
        probs = areas[keep] / areas[keep].sum()
        face = idx_keep[rng.choice(len(idx_keep), size=n, p=probs)]
        r1, r2 = rng.random(n), rng.random(n)
        flip = r1 + r2 > 1
        r1, r2 = np.where(flip, 1 - r1, r1), np.where(flip, 1 - r2, r2)
        c = self.corners()[face]
        pts = c[:, 0] + r1[:, None] * (c[:, 1] - c[:, 0]) + r2[:, None] * (c[:, 2] - c[:, 0])
        return pts, normals[face]

    def degenerate_faces(self) -> int:
        return int(np.count_nonzero(self.face_normals()[1] <= 0))


def save_obj(mesh: TriMesh, path, comments: tuple[str, ...] = ()) -> None:
    lines = [f"# {c}" for c in comments]
    lines += [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path) -> TriMesh:
    verts, faces = [], []
    for raw in Path(path).read_text().splitlines():
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(v) for v in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            if len(idx) != 3:
                raise MeshError(f"{path}: only triangle faces are supported")
            faces.append(idx)
    return TriMesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def icosphere(radius: float = 1.0, subdivisions: int = 3, center=(0.0, 0.0, 0.0)) -> TriMesh:
    t = (1.0 + 5 ** 0.5) / 2
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t], [0, -1, -t],
                  [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=np.float64)
    f = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
                  [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
                  [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(subdivisions):
        edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        mids = v[uniq[:, 0]] + v[uniq[:, 1]]
        mids /= np.linalg.norm(mids, axis=1, keepdims=True)
        m = inv.reshape(3, -1).T + len(v)
        a, b, c = f[:, 0], f[:, 1], f[:, 2]
        ab, bc, ca = m[:, 0], m[:, 1], m[:, 2]
        f = np.concatenate([np.stack([a, ab, ca], 1), np.stack([b, bc, ab], 1), np.stack([c, ca, bc], 1),
                            np.stack([ab, bc, ca], 1)])
        v = np.concatenate([v, mids])
    return TriMesh(v * radius + np.asarray(center), f)


def box_mesh(half_extents=(0.5, 0.5, 0.5), center=(0.0, 0.0, 0.0)) -> TriMesh:
    h = np.asarray(half_extents, dtype=np.float64)
    v = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64) * h
    # vertex index = 4*ix + 2*iy + iz, outward winding
    f = np.array([[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
                  [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]])
    return TriMesh(v + np.asarray(center), f)


# ---------------------------------------------------------------------------
# Point-in-mesh by ray parity
# ---------------------------------------------------------------------------


def _rotation_to_z(d: np.ndarray) -> np.ndarray:
    """Rotation matrix taking unit vector d onto +z."""
    z = np.array([0.0, 0.0, 1.0])
    v = np.cross(d, z)
    s, c = np.linalg.norm(v), float(np.dot(d, z))
    if s < 1e-12:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    k = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]]) / s
    return np.eye(3) + s * k + (1 - c) * (k @ k)


class MeshSolid(Solid):
    """Closed mesh with an occupancy test by ray-crossing parity.

    Rays are cast along a fixed, slightly jittered direction. Triangles are
    binned on a uniform 2D grid in the plane orthogonal to that direction,
    so each query only tests the triangles of its own cell. Queries whose ray
    lands within 1e-9 of a triangle edge or vertex are recast along a new
    direction.
    """

    _DIRECTIONS_SEED = 20240607
    EPS = 1e-9

    def __init__(self, mesh: TriMesh):
        if mesh.is_empty():
            raise MeshError("cannot test occupancy against an empty mesh")
        if not mesh.is_closed():
            raise MeshError("mesh is not closed: some edge is not shared by exactly two triangles")
        self.mesh = mesh
        self._bbox = mesh.bounds()
        self._accel: dict[int, tuple] = {}

    def _direction(self, attempt: int) -> np.ndarray:
        rng = np.random.default_rng([self._DIRECTIONS_SEED, attempt])
        d = np.array([0.0, 0.0, 1.0]) + rng.normal(scale=0.05, size=3) if attempt == 0 else rng.normal(size=3)
        return d / np.linalg.norm(d)

    def _structure(self, attempt: int):
        if attempt not in self._accel:
            rot = _rotation_to_z(self._direction(attempt))
            v = self.mesh.vertices @ rot.T
            tri = v[self.mesh.triangles]
            lo, hi = tri[:, :, :2].min(axis=1), tri[:, :, :2].max(axis=1)
            glo, ghi = lo.min(axis=0), hi.max(axis=0)
            g = max(1, int(np.sqrt(len(tri))))
            cell = np.maximum((ghi - glo) / g, 1e-12)
            c0 = np.clip(((lo - glo) / cell).astype(np.int64), 0, g - 1)
            c1 = np.clip(((hi - glo) / cell).astype(np.int64), 0, g - 1)
            nx, ny = c1[:, 0] - c0[:, 0] + 1, c1[:, 1] - c0[:, 1] + 1
            counts = nx * ny
            tri_id = np.repeat(np.arange(len(tri)), counts)
            local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
            cx = c0[tri_id, 0] + local % nx[tri_id]
            cy = c0[tri_id, 1] + local // nx[tri_id]
            key = cx * g + cy
            order = np.argsort(key, kind="stable")
            key, tri_id = key[order], tri_id[order]
            starts = np.searchsorted(key, np.arange(g * g + 1))
            self._accel[attempt] = (rot, tri, glo, cell, g, starts, tri_id)
        return self._accel[attempt]

    def _crossings(self, pts: np.ndarray, attempt: int):
        rot, tri, glo, cell, g, starts, tri_id = self._structure(attempt)
        q = pts @ rot.T
        cxy = np.floor((q[:, :2] - glo) / cell).astype(np.int64)
        valid = np.all((cxy >= 0) & (cxy < g), axis=1)
        hits = np.zeros(len(pts), dtype=np.int64)
        unsure = np.zeros(len(pts), dtype=bool)
        qi = np.flatnonzero(valid)
        if not len(qi):
            return hits, unsure
        key = cxy[qi, 0] * g + cxy[qi, 1]
        n = starts[key + 1] - starts[key]
        pair_q = np.repeat(qi, n)
        pair_t = tri_id[np.repeat(starts[key], n) + np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)]
        p = q[pair_q]
        a, b, c = tri[pair_t, 0], tri[pair_t, 1], tri[pair_t, 2]
        # 2D edge functions in the projected plane
        def edge(u, w):
            return (w[:, 0] - u[:, 0]) * (p[:, 1] - u[:, 1]) - (w[:, 1] - u[:, 1]) * (p[:, 0] - u[:, 0])
        e0, e1, e2 = edge(b, c), edge(c, a), edge(a, b)
        area = e0 + e1 + e2
        ok = np.abs(area) > 1e-300
        safe = np.where(ok, area, 1.0)
        w0, w1, w2 = e0 / safe, e1 / safe, e2 / safe
        inside = ok & (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        zhit = w0 * a[:, 2] + w1 * b[:, 2] + w2 * c[:, 2]
        dz = zhit - p[:, 2]
        near_edge = ok & (np.minimum(np.minimum(np.abs(w0), np.abs(w1)), np.abs(w2)) < self.EPS) \
            & (w0 >= -self.EPS) & (w1 >= -self.EPS) & (w2 >= -self.EPS)
        near_t = inside & (np.abs(dz) < self.EPS)
        crossing = inside & (dz > 0)
        np.add.at(hits, pair_q[crossing], 1)
        bad = np.zeros(len(pts), dtype=bool)
        bad[pair_q[near_edge | near_t]] = True
        return hits, bad

    def contains(self, x, max_attempts: int = 8) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.zeros(len(x), dtype=np.uint8)
        lo, hi = self._bbox
        todo = np.flatnonzero(np.all((x >= lo) & (x <= hi), axis=1))
        for attempt in range(max_attempts):
            if not len(todo):
                break
            chunk = 200_000
            parts = [self._crossings(x[todo[i:i + chunk]], attempt) for i in range(0, len(todo), chunk)]
            hits = np.concatenate([h for h, _ in parts])
            unsure = np.concatenate([u for _, u in parts])
            out[todo] = (hits % 2).astype(np.uint8)
            if attempt < max_attempts - 1:
                todo = todo[unsure]
        return out

    def sdf(self, x):
        # sign only; magnitude is not a distance
        return np.where(self.contains(x) > 0, -1.0, 1.0)

    def bounds(self):
        return self._bbox.copy()

    def bounding_sphere(self):
        c = self._bbox.mean(axis=0)
        return c, float(np.linalg.norm(self._bbox[1] - c))


def occupancy_mesh(mesh, x) -> np.ndarray:
    solid = mesh if isinstance(mesh, MeshSolid) else MeshSolid(mesh)
    return solid.contains(x)
