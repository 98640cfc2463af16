"""Dense ray prediction, frustum-to-grid resampling and mesh extraction."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .autodiff import no_grad
from .autodiff.ops import _sigmoid
from .geometry import Camera, FrustumGrid, frustum_bounds, resample_frustum_to_grid
from .mcubes import marching_cubes
from .network import Ablation, RayOccupancyNet
from .shapes import TriMesh, save_obj

DEFAULT_THRESHOLD = 0.2


class InferenceError(ValueError):
    pass


def camera_from_meta(meta: dict, s: float | None = None) -> Camera:
    """Camera-frame (identity pose) camera with the training intrinsics."""
    c = meta["camera"]
    cam = Camera(f=c["f"], cx=c["cx"], cy=c["cy"], width=c["W"], height=c["H"], rotation=np.eye(3),
                 translation=np.zeros(3), object_distance=1.0)
    if s is not None:
        cam = replace(cam, object_distance=float(s) * cam.f_normalized)
    return cam


def default_scale(meta: dict) -> float:
    lo, hi = meta["s_range"]
    return 0.5 * (lo + hi)


def predict_rays(net: RayOccupancyNet, image, pixels, s: float, ablation: Ablation | None = None,
                 chunk: int = 8192) -> np.ndarray:
    """Occupancy probabilities (T, M) for pixel positions of one image."""
    pixels = np.asarray(pixels, dtype=np.float64)
    net.eval()
    out = []
    with no_grad():
        z, fmap = net.encode(np.asarray(image)[None])
        for lo in range(0, len(pixels), chunk):
            p = pixels[lo:lo + chunk]
            logits = net.forward_rays(z, fmap, np.zeros(len(p), dtype=np.int64), p, [s], ablation)
            out.append(_sigmoid(logits.data.astype(np.float64)))
    return np.concatenate(out) if out else np.zeros((0, net.config.m))


def predict_frustum(net: RayOccupancyNet, image, camera: Camera, s: float, su: int, sv: int,
                    d_min: float, d_max: float, ablation: Ablation | None = None) -> FrustumGrid:
    """One decoder forward per lattice ray; values are probabilities on a (S_u, S_v, M) grid."""
    image = np.asarray(image)
    if image.shape[:2] != (camera.height, camera.width):
        raise InferenceError(f"image is {image.shape[1]}x{image.shape[0]}, camera expects "
                             f"{camera.width}x{camera.height}")
    grid = FrustumGrid(np.zeros((su, sv, net.config.m)), camera, d_min, d_max)
    before = net.decoder_forwards
    probs = predict_rays(net, image, grid.pixel_centers(), s, ablation)
    if net.decoder_forwards - before != su * sv:
        raise InferenceError(f"expected {su * sv} decoder forwards, counted {net.decoder_forwards - before}")
    grid.values = probs.reshape(su, sv, -1)
    return grid


def resample_along_t(grid: FrustumGrid, m: int) -> FrustumGrid:
    """Linearly re-sample every ray to ``m`` equally spaced samples over the same range."""
    m0 = grid.shape[2]
    if m == m0:
        return grid
    pos = np.arange(m) * ((m0 - 1) / (m - 1))
    lo = np.minimum(np.floor(pos).astype(np.int64), m0 - 2)
    fr = pos - lo
    v = grid.values[..., lo] * (1 - fr) + grid.values[..., lo + 1] * fr
    return FrustumGrid(v, grid.camera, grid.d_min, grid.d_max)


def occupied_bounds(grid: FrustumGrid, threshold: float) -> np.ndarray:
    """Box around the above-threshold nodes, padded by 1.5 node spacings, clipped to the shell."""
    shell = frustum_bounds(grid)
    mask = grid.values > threshold
    if not np.any(mask):
        return shell
    pts = grid.node_points()[mask]
    su, _, m = grid.shape
    cam = grid.camera
    spacing = max((grid.d_max - grid.d_min) / (m - 1), grid.d_max * (cam.width / su) / cam.f)
    lo = np.maximum(pts.min(axis=0) - 1.5 * spacing, shell[0])
    hi = np.minimum(pts.max(axis=0) + 1.5 * spacing, shell[1])
    return np.stack([lo, hi])


def extract_mesh(values: np.ndarray, threshold: float, bounds) -> TriMesh:
    if not 0.0 < threshold < 1.0:
        raise InferenceError(f"threshold must lie in (0, 1), got {threshold}")
    return marching_cubes(values, threshold, bounds, pad=True)


@dataclass
class ReconstructionRequest:
    image: np.ndarray
    s: Optional[float] = None
    plane: tuple = (64, 64)
    m: Optional[int] = None  # None: the network's native sample count
    n: int = 64
    bounds: Optional[np.ndarray] = None
    threshold: float = DEFAULT_THRESHOLD
    normalize: bool = True

    def __post_init__(self):
        if self.n < 8:
            raise InferenceError(f"grid resolution must be >= 8, got {self.n}")
        if not 0.0 < self.threshold < 1.0:
            raise InferenceError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.m is not None and self.m < 2:
            raise InferenceError(f"samples per ray must be >= 2, got {self.m}")


@dataclass
class Reconstruction:
    mesh: TriMesh  # evaluation frame: camera frame divided by s when normalised
    camera_mesh: TriMesh
    grid: FrustumGrid
    bounds: np.ndarray  # camera frame
    s: float
    forwards: int


def reconstruct(net: RayOccupancyNet, meta: dict, req: ReconstructionRequest, ablation: Ablation | None = None,
                out_path=None) -> Reconstruction:
    s = default_scale(meta) if req.s is None else float(req.s)
    cam = camera_from_meta(meta, s)
    before = net.decoder_forwards
    grid = predict_frustum(net, req.image, cam, s, req.plane[0], req.plane[1], meta["d_min"], meta["d_max"], ablation)
    forwards = net.decoder_forwards - before
    if req.m is not None:
        grid = resample_along_t(grid, req.m)
    bounds = occupied_bounds(grid, req.threshold) if req.bounds is None else np.asarray(req.bounds, dtype=np.float64)
    values = resample_frustum_to_grid(grid, req.n, bounds)
    cmesh = extract_mesh(values, req.threshold, bounds)
    mesh = TriMesh(cmesh.vertices / s, cmesh.triangles) if req.normalize else cmesh
    if out_path is not None:
        lo, hi = bounds
        save_obj(mesh, Path(out_path), comments=[
            f"bounds_camera {' '.join(f'{x:.6f}' for x in lo)} {' '.join(f'{x:.6f}' for x in hi)}",
            f"s {s:.6f} normalized {int(req.normalize)} threshold {req.threshold:g}",
            f"plane {req.plane[0]}x{req.plane[1]} samples {grid.shape[2]} grid {req.n}",
        ])
    return Reconstruction(mesh=mesh, camera_mesh=cmesh, grid=grid, bounds=bounds, s=s, forwards=forwards)
