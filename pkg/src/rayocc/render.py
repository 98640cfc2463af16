"""Ray-cast Lambertian renderer for CSG solids and triangle meshes."""

from __future__ import annotations

import numpy as np

from .geometry import Camera, lattice_pixels, ray_directions
from .shapes import Solid, TriMesh

DEFAULT_LIGHT = (0.4, -0.6, -1.0)  # direction towards the light, camera frame


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def _pixel_rays(camera: Camera):
    pix = lattice_pixels(camera, camera.width, camera.height)
    return ray_directions(camera, pix)  # ordered [u][v]


def _to_image(shade: np.ndarray, camera: Camera) -> np.ndarray:
    # [u][v] lattice -> H x W x 3
    return np.ascontiguousarray(shade.reshape(camera.width, camera.height, 3).transpose(1, 0, 2))


def _sphere_trace(sdf, dirs: np.ndarray, t0: float, t1: float, max_steps: int = 256, tol: float = 1e-5):
    # tolerance is relative to depth, so scaling scene and camera together renders the same image
    t = np.full(len(dirs), t0)
    hit = np.zeros(len(dirs), dtype=bool)
    alive = np.ones(len(dirs), dtype=bool)
    for _ in range(max_steps):
        idx = np.flatnonzero(alive)
        if not len(idx):
            break
        d = sdf(dirs[idx] * t[idx, None])
        done = d < tol * t[idx]
        hit[idx[done]] = True
        alive[idx[done]] = False
        t[idx[~done]] += d[~done]
        gone = t[idx] > t1
        alive[idx[gone]] = False
    return hit, t


def render_solid(shape: Solid | None, camera: Camera, light_dir=DEFAULT_LIGHT) -> np.ndarray:
    """Render a world-frame solid as an H x W x 3 image in [0, 1]; misses are white."""
    img = np.ones((camera.width * camera.height, 3))
    if shape is None:
        return _to_image(img, camera)
    rot, trans = camera.rotation, camera.translation

    def sdf_cam(x):
        return shape.sdf((x - trans) @ rot)

    c, r = shape.bounding_sphere()
    dist = float(np.linalg.norm(camera.to_camera(c[None])[0]))
    dirs = _pixel_rays(camera)
    hit, t = _sphere_trace(sdf_cam, dirs, max(dist - r, 1e-6) * 0.999, dist + r)
    if not np.any(hit):
        return _to_image(img, camera)
    p = dirs[hit] * t[hit, None]
    h = 1e-5 * t[hit, None]
    grad = np.stack([sdf_cam(p + h * e) - sdf_cam(p - h * e) for e in np.eye(3)], axis=1)
    n = grad / np.maximum(np.linalg.norm(grad, axis=1, keepdims=True), 1e-12)
    lam = np.maximum(0.0, n @ _unit(light_dir))
    prims = shape.primitives()
    pw = (p - trans) @ rot
    # the primitive whose surface is closest labels the hit
    owner = np.argmin(np.stack([np.abs(q.sdf(pw)) for q in prims], axis=1), axis=1)
    albedo = np.array([q.albedo for q in prims], dtype=np.float64)[owner]
    img[hit] = albedo * lam[:, None]
    return _to_image(img, camera)


def render_mesh(mesh: TriMesh, camera: Camera, light_dir=DEFAULT_LIGHT, albedo=(0.8, 0.8, 0.8),
                chunk: int = 4096) -> np.ndarray:
    """Render a world-frame mesh by brute-force ray/triangle intersection."""
    img = np.ones((camera.width * camera.height, 3))
    if mesh.is_empty():
        return _to_image(img, camera)
    tri = camera.to_camera(mesh.vertices)[mesh.triangles]
    normals, _ = _face_normals(tri)
    a, e1, e2 = tri[:, 0], tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    dirs = _pixel_rays(camera)
    l = _unit(light_dir)
    for lo in range(0, len(dirs), chunk):
        d = dirs[lo:lo + chunk]
        # Moller-Trumbore with origin at the camera centre
        pvec = np.cross(d[:, None, :], e2[None])
        det = np.einsum("rtk,tk->rt", pvec, e1)
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = -a
        u = np.einsum("tk,rtk->rt", s, pvec) * inv
        q = np.cross(s, e1)
        v = np.einsum("rk,tk->rt", d, q) * inv
        t = np.einsum("tk,tk->t", e2, q)[None] * inv
        valid = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-9)
        t = np.where(valid, t, np.inf)
        first = np.argmin(t, axis=1)
        got = np.isfinite(t[np.arange(len(d)), first])
        n = normals[first[got]]
        # shade the side facing the camera
        n = np.where((np.einsum("rk,rk->r", n, d[got]) > 0)[:, None], -n, n)
        img[lo:lo + chunk][got] = np.asarray(albedo) * np.maximum(0.0, n @ l)[:, None]
    return _to_image(img, camera)


def _face_normals(tri: np.ndarray):
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    a = np.linalg.norm(n, axis=1)
    return n / np.maximum(a, 1e-300)[:, None], a / 2


def render_view(scene, camera: Camera, light_dir=DEFAULT_LIGHT) -> np.ndarray:
    if isinstance(scene, TriMesh):
        return render_mesh(scene, camera, light_dir)
    return render_solid(scene, camera, light_dir)
