"""Pinhole camera, rays, frustum coordinates and frustum-to-grid resampling.

Conventions: camera frame is x right, y down, z forward. Integer pixel (i, j)
spans [i, i+1) x [j, j+1) with its centre at (i + 0.5, j + 0.5). Ray samples
are parameterised by Euclidean distance ``t`` from the camera centre.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(eq=False)
class Camera:
    f: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray  # world -> camera
    translation: np.ndarray
    object_distance: float

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not self.f > 0:
            raise GeometryError(f"focal length must be positive, got {self.f}")
        if not self.object_distance > 0:
            raise GeometryError(f"object distance must be positive, got {self.object_distance}")
        if not np.allclose(self.rotation.T @ self.rotation, np.eye(3), atol=1e-6):
            raise GeometryError("camera rotation is not orthonormal")

    @classmethod
    def look_at(cls, center, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0), *, f: float,
                width: int, height: int, cx: float | None = None, cy: float | None = None) -> "Camera":
        center = np.asarray(center, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        fwd = target - center
        dist = float(np.linalg.norm(fwd))
        fwd /= dist
        up = np.asarray(up, dtype=np.float64)
        down = -(up - np.dot(up, fwd) * fwd)
        n = np.linalg.norm(down)
        if n < 1e-9:
            raise GeometryError("look_at: up vector parallel to viewing direction")
        down /= n
        right = np.cross(down, fwd)
        rot = np.stack([right, down, fwd])
        return cls(f=f, cx=width / 2 if cx is None else cx, cy=height / 2 if cy is None else cy,
                   width=width, height=height, rotation=rot, translation=-rot @ center,
                   object_distance=dist)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def f_normalized(self) -> float:
        return self.f / (self.width / 2)

    def to_camera(self, x_world: np.ndarray) -> np.ndarray:
        return np.asarray(x_world, dtype=np.float64) @ self.rotation.T + self.translation

    def to_world(self, x_cam: np.ndarray) -> np.ndarray:
        return (np.asarray(x_cam, dtype=np.float64) - self.translation) @ self.rotation

    def to_dict(self) -> dict:
        return {"f": float(self.f), "cx": float(self.cx), "cy": float(self.cy), "W": int(self.width),
                "H": int(self.height), "R": [float(v) for v in self.rotation.reshape(-1)],
                "t": [float(v) for v in self.translation], "object_distance": float(self.object_distance)}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(f=d["f"], cx=d["cx"], cy=d["cy"], width=d["W"], height=d["H"],
                   rotation=np.array(d["R"]).reshape(3, 3), translation=d["t"],
                   object_distance=d["object_distance"])


@dataclass(eq=False)
class Ray:
    p: np.ndarray
    origin: np.ndarray
    dir: np.ndarray


def _check_in_image(camera: Camera, pts: np.ndarray) -> None:
    bad = (pts[:, 0] < 0) | (pts[:, 0] > camera.width) | (pts[:, 1] < 0) | (pts[:, 1] > camera.height)
    if np.any(bad):
        raise GeometryError(f"point {pts[np.argmax(bad)].tolist()} outside image "
                            f"{camera.width}x{camera.height}")


def ray_directions(camera: Camera, pts) -> np.ndarray:
    """Unit camera-frame directions for (n, 2) pixel positions."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    _check_in_image(camera, pts)
    d = np.stack([(pts[:, 0] - camera.cx) / camera.f, (pts[:, 1] - camera.cy) / camera.f,
                  np.ones(len(pts))], axis=1)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def backproject(camera: Camera, p) -> Ray:
    p = np.asarray(p, dtype=np.float64).reshape(2)
    return Ray(p=p, origin=np.zeros(3), dir=ray_directions(camera, p[None])[0])


def project(camera: Camera, x_cam) -> np.ndarray:
    """Pixel coordinates of camera-frame points (z must be positive)."""
    x = np.atleast_2d(np.asarray(x_cam, dtype=np.float64))
    return np.stack([camera.f * x[:, 0] / x[:, 2] + camera.cx, camera.f * x[:, 1] / x[:, 2] + camera.cy], axis=1)


def ray_distances(m: int, d_min: float, d_max: float) -> np.ndarray:
    if m < 2:
        raise GeometryError(f"need at least 2 samples per ray, got {m}")
    if not d_max > d_min > 0:
        raise GeometryError(f"need d_max > d_min > 0, got {d_min}, {d_max}")
    return d_min + np.arange(m) * ((d_max - d_min) / (m - 1))


def sample_along_ray(ray: Ray, m: int, d_min: float, d_max: float) -> np.ndarray:
    t = ray_distances(m, d_min, d_max)
    return ray.origin + t[:, None] * ray.dir


def scale_factor(camera: Camera) -> float:
    """Camera-object distance over the focal length in half-image units."""
    return camera.object_distance / camera.f_normalized


@dataclass(eq=False)
class FrustumGrid:
    """Occupancy probabilities indexed by (pixel u, pixel v, ray sample)."""

    values: np.ndarray  # (S_u, S_v, M)
    camera: Camera
    d_min: float
    d_max: float

    def __post_init__(self):
        if self.values.ndim != 3 or min(self.values.shape) < 2:
            raise GeometryError(f"frustum values must be (S_u>=2, S_v>=2, M>=2), got {self.values.shape}")
        if not self.d_max > self.d_min > 0:
            raise GeometryError(f"need d_max > d_min > 0, got {self.d_min}, {self.d_max}")

    @property
    def shape(self):
        return self.values.shape

    def pixel_centers(self) -> np.ndarray:
        """(S_u * S_v, 2) pixel positions of the ray lattice, u fastest in the second axis."""
        return lattice_pixels(self.camera, self.shape[0], self.shape[1])

    def node_points(self) -> np.ndarray:
        """Camera-frame positions of every node, shape (S_u, S_v, M, 3)."""
        su, sv, m = self.shape
        dirs = ray_directions(self.camera, self.pixel_centers()).reshape(su, sv, 3)
        t = ray_distances(m, self.d_min, self.d_max)
        return dirs[:, :, None, :] * t[None, None, :, None]


def lattice_pixels(camera: Camera, su: int, sv: int) -> np.ndarray:
    """Centres of an su x sv lattice over the image, ordered [u][v]."""
    u = (np.arange(su) + 0.5) * camera.width / su
    v = (np.arange(sv) + 0.5) * camera.height / sv
    uu, vv = np.meshgrid(u, v, indexing="ij")
    return np.stack([uu.reshape(-1), vv.reshape(-1)], axis=1)


def world_to_frustum(camera: Camera, grid: FrustumGrid, x, camera_frame: bool = True):
    """Map points to continuous (u, v, t).

    ``x`` is (n, 3), in the camera frame unless ``camera_frame`` is False.
    Returns ``(uvt, inside)``; ``inside`` is False for points behind the
    camera, projecting outside the image, or with t outside [d_min, d_max].
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if not camera_frame:
        x = camera.to_camera(x)
    z = x[:, 2]
    front = z > 0
    safe_z = np.where(front, z, 1.0)
    u = camera.f * x[:, 0] / safe_z + camera.cx
    v = camera.f * x[:, 1] / safe_z + camera.cy
    t = np.linalg.norm(x, axis=1)
    tol = 1e-9 * grid.d_max  # node points at d_max must count as inside
    inside = (front & (u >= 0) & (u <= camera.width) & (v >= 0) & (v <= camera.height)
              & (t >= grid.d_min - tol) & (t <= grid.d_max + tol))
    return np.stack([u, v, t], axis=1), inside


def frustum_index_coords(grid: FrustumGrid, uvt: np.ndarray) -> np.ndarray:
    """Continuous (i, j, k) node indices for (u, v, t) coordinates."""
    su, sv, m = grid.shape
    cam = grid.camera
    i = uvt[:, 0] * su / cam.width - 0.5
    j = uvt[:, 1] * sv / cam.height - 0.5
    k = (uvt[:, 2] - grid.d_min) * (m - 1) / (grid.d_max - grid.d_min)
    return np.stack([i, j, k], axis=1)


def trilinear(values: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of a 3D array at continuous indices, clamped to the array."""
    shape = np.array(values.shape)
    idx = np.clip(idx, 0, shape - 1)
    lo = np.minimum(np.floor(idx).astype(np.int64), shape - 2)
    fr = idx - lo
    out = np.zeros(len(idx))
    for di in (0, 1):
        wi = fr[:, 0] if di else 1 - fr[:, 0]
        for dj in (0, 1):
            wj = fr[:, 1] if dj else 1 - fr[:, 1]
            for dk in (0, 1):
                wk = fr[:, 2] if dk else 1 - fr[:, 2]
                out += wi * wj * wk * values[lo[:, 0] + di, lo[:, 1] + dj, lo[:, 2] + dk]
    return out


def regular_grid_points(n: int, bounds) -> np.ndarray:
    """(n, n, n, 3) lattice spanning the box ``bounds = (lo, hi)`` inclusive."""
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    axes = [np.linspace(lo[a], hi[a], n) for a in range(3)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def resample_frustum_to_grid(grid: FrustumGrid, n: int, bounds) -> np.ndarray:
    """Resample frustum occupancies onto an n^3 camera-frame lattice; outside -> 0."""
    if n < 2:
        raise GeometryError(f"grid resolution must be >= 2, got {n}")
    pts = regular_grid_points(n, bounds).reshape(-1, 3)
    uvt, inside = world_to_frustum(grid.camera, grid, pts)
    out = np.zeros(len(pts))
    if np.any(inside):
        out[inside] = trilinear(grid.values, frustum_index_coords(grid, uvt[inside]))
    return out.reshape(n, n, n)


def frustum_bounds(grid: FrustumGrid) -> np.ndarray:
    """Axis-aligned camera-frame box enclosing the frustum shell."""
    cam = grid.camera
    corners = np.array([[0, 0], [cam.width, 0], [0, cam.height], [cam.width, cam.height],
                        [cam.cx, cam.cy]], dtype=np.float64)
    dirs = ray_directions(cam, corners)
    pts = np.concatenate([dirs * grid.d_min, dirs * grid.d_max])
    return np.stack([pts.min(axis=0), pts.max(axis=0)])


def transform_mesh_to_camera(mesh, camera: Camera):
    """Rigidly move a mesh into the camera frame; triangles (and winding) unchanged."""
    from .shapes import TriMesh

    return TriMesh(camera.to_camera(mesh.vertices), mesh.triangles.copy())
