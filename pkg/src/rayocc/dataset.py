"""Ray-sampled occupancy datasets: scene presets, generation and file formats.

A dataset directory holds one PPM image and one ``.rayo`` ray file per view
plus ``manifest.json`` describing cameras and the CSG scenes.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geometry import Camera, ray_directions, ray_distances, scale_factor
from .render import render_view
from .shapes import Box, Cylinder, Difference, Intersection, Rigid, Scaled, Solid, Sphere, Union, solid_from_dict
from .seeding import stream

PAPER_RAYS, PAPER_SAMPLES = 5000, 128
PAPER_D_MIN, PAPER_D_MAX = 0.63, 2.16

RAYO_MAGIC = b"RAYO"
RAYO_VERSION = 1


class DatasetError(ValueError):
    pass


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, img: np.ndarray) -> None:
    """Binary P6, 8 bit; ``img`` is H x W x 3 in [0, 1] or uint8."""
    px = img if img.dtype == np.uint8 else to_uint8(img)
    h, w, _ = px.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(px).tobytes())


def read_ppm(path) -> np.ndarray:
    """Return H x W x 3 float32 in [0, 1]."""
    buf = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise DatasetError(f"{path}: only 8-bit binary PPM (P6) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h * 3, offset=pos + 1)
    return (data.reshape(h, w, 3).astype(np.float32) / 255.0)


@dataclass(eq=False)
class RaySamples:
    pixels: np.ndarray  # (R, 2) float32
    bits: np.ndarray  # (R, M) uint8
    d_min: float
    d_max: float
    s: float

    @property
    def n_rays(self) -> int:
        return len(self.pixels)

    @property
    def m(self) -> int:
        return self.bits.shape[1]


def write_rays(path, rays: RaySamples) -> None:
    r, m = rays.bits.shape
    rec = np.zeros(r, dtype=[("p", "<f4", (2,)), ("bits", "u1", (m,))])
    rec["p"] = rays.pixels
    rec["bits"] = rays.bits
    head = RAYO_MAGIC + struct.pack("<IIIfff", RAYO_VERSION, r, m, rays.d_min, rays.d_max, rays.s)
    Path(path).write_bytes(head + rec.tobytes())


def read_rays(path) -> RaySamples:
    buf = Path(path).read_bytes()
    if buf[:4] != RAYO_MAGIC:
        raise DatasetError(f"{path}: bad magic {buf[:4]!r}")
    version, r, m, d_min, d_max, s = struct.unpack_from("<IIIfff", buf, 4)
    if version != RAYO_VERSION:
        raise DatasetError(f"{path}: unsupported version {version}")
    dt = np.dtype([("p", "<f4", (2,)), ("bits", "u1", (m,))])
    if len(buf) != 28 + r * dt.itemsize:
        raise DatasetError(f"{path}: size does not match header ({r} rays x {m} samples)")
    rec = np.frombuffer(buf, dtype=dt, count=r, offset=28)
    return RaySamples(pixels=rec["p"].copy(), bits=rec["bits"].copy(), d_min=d_min, d_max=d_max, s=s)


# ---------------------------------------------------------------------------
# scenes
# ---------------------------------------------------------------------------


def sphere_box_scene() -> Solid:
    return Union(a=Sphere(radius=0.32, center=[-0.12, 0.06, 0.0], albedo=(0.85, 0.35, 0.3)),
                 b=Box(half_extents=[0.22, 0.18, 0.24], center=[0.16, -0.1, 0.05], albedo=(0.3, 0.55, 0.85)))


NAMED_SCENES = {"sphere_box": sphere_box_scene}


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_scene(rng: np.random.Generator) -> Solid:
    """Two or three random primitives combined with random CSG operators."""

    def prim():
        kind = rng.integers(0, 3)
        albedo = tuple(float(a) for a in rng.uniform(0.3, 0.9, 3))
        c = rng.uniform(-0.2, 0.2, 3)
        tf = Rigid(_random_rotation(rng), np.zeros(3))
        if kind == 0:
            return Sphere(radius=float(rng.uniform(0.2, 0.35)), center=c, albedo=albedo)
        if kind == 1:
            return Box(half_extents=rng.uniform(0.12, 0.28, 3), center=c, albedo=albedo, transform=tf)
        return Cylinder(radius=float(rng.uniform(0.1, 0.22)), half_height=float(rng.uniform(0.15, 0.3)),
                        center=c, albedo=albedo, transform=tf)

    shape = Union(a=prim(), b=prim())
    if rng.random() < 0.6:
        op = (Union, Difference, Intersection)[int(rng.integers(0, 3))]
        if op is Intersection:
            # keep intersections non-empty by growing the second operand
            shape = Union(a=shape, b=Intersection(a=prim(), b=Sphere(radius=0.4)))
        else:
            shape = op(a=shape, b=prim())
    return shape


def normalized(shape: Solid, radius: float) -> Solid:
    """Recentre on the bounding-sphere centre and scale to the given bounding radius."""
    c, r = shape.bounding_sphere()
    k = radius / r
    return Scaled(child=shape, factor=k, transform=Rigid(np.eye(3), -k * c))


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


@dataclass
class GenConfig:
    scenes: int = 4
    views: int = 8
    rays: int = 1024
    samples: int = 32
    image_size: int = 64
    d_min: float = PAPER_D_MIN
    d_max: float = PAPER_D_MAX
    dist_range: tuple = (1.0, 1.8)
    elev_range_deg: tuple = (-20.0, 40.0)
    f_normalized: float = 2.0
    scene: Optional[str] = None  # named preset for every scene; random CSG otherwise
    scene_radius: float = 0.35
    scale_with_distance: bool = False
    distance_levels: int = 0  # >0: every view direction is rendered at this many evenly spaced distances
    seed: int = 0
    threads: int = 1


def _view_camera(cfg: GenConfig, rng: np.random.Generator, distance: float | None = None) -> Camera:
    az = rng.uniform(0, 2 * np.pi)
    el = np.deg2rad(rng.uniform(*cfg.elev_range_deg))
    d = rng.uniform(*cfg.dist_range)
    if distance is not None:
        d = distance
    center = d * np.array([np.cos(el) * np.cos(az), np.sin(el), np.cos(el) * np.sin(az)])
    w = cfg.image_size
    return Camera.look_at(center, f=cfg.f_normalized * w / 2, width=w, height=w)


def view_solid(scene: Solid, object_scale: float) -> Solid:
    return scene if object_scale == 1.0 else Scaled(child=scene, factor=object_scale)


def check_in_shell(solid: Solid, camera: Camera, d_min: float, d_max: float, label: str) -> None:
    c, r = solid.bounding_sphere()
    dist = float(np.linalg.norm(camera.to_camera(c[None])[0]))
    if dist - r < d_min or dist + r > d_max:
        raise DatasetError(f"{label}: shape extends over [{dist - r:.3f}, {dist + r:.3f}], outside the "
                           f"[{d_min}, {d_max}] shell")


def ray_occupancy(solid: Solid, camera: Camera, pixels: np.ndarray, m: int, d_min: float, d_max: float) -> np.ndarray:
    """(R, M) ground-truth occupancy bits at the equally spaced ray samples."""
    dirs = ray_directions(camera, pixels)
    t = ray_distances(m, d_min, d_max)
    pts = (dirs[:, None, :] * t[None, :, None]).reshape(-1, 3)
    return solid.contains(camera.to_world(pts)).reshape(len(pixels), m)


def _make_scene(cfg: GenConfig, index: int) -> Solid:
    if cfg.scene is not None:
        if cfg.scene not in NAMED_SCENES:
            raise DatasetError(f"unknown scene preset {cfg.scene!r}; choose from {sorted(NAMED_SCENES)}")
        base = NAMED_SCENES[cfg.scene]()
    else:
        base = random_scene(stream(cfg.seed, "scene", index))
    return normalized(base, cfg.scene_radius)


def _gen_view(cfg: GenConfig, scene: Solid, si: int, vi: int, out: Path) -> dict:
    if cfg.distance_levels:
        di, level = divmod(vi, cfg.distance_levels)
        lo, hi = cfg.dist_range
        dist = lo + (hi - lo) * level / max(cfg.distance_levels - 1, 1)
        cam = _view_camera(cfg, stream(cfg.seed, "view", si, di), dist)
        rng = stream(cfg.seed, "view", si, di, level + 1)
    else:
        level = None
        rng = stream(cfg.seed, "view", si, vi)
        cam = _view_camera(cfg, rng)
    k = cam.object_distance / float(np.mean(cfg.dist_range)) if cfg.scale_with_distance else 1.0
    solid = view_solid(scene, k)
    label = f"scene {si} view {vi}"
    check_in_shell(solid, cam, cfg.d_min, cfg.d_max, label)
    img = to_uint8(render_view(solid, cam))
    pixels = np.stack([rng.uniform(0, cam.width, cfg.rays), rng.uniform(0, cam.height, cfg.rays)], axis=1)
    pixels = pixels.astype(np.float32)
    bits = ray_occupancy(solid, cam, pixels.astype(np.float64), cfg.samples, cfg.d_min, cfg.d_max)
    s = scale_factor(cam)
    stem = f"scene{si:03d}_view{vi:03d}"
    write_ppm(out / f"{stem}.ppm", img)
    write_rays(out / f"{stem}.rayo", RaySamples(pixels, bits, cfg.d_min, cfg.d_max, s))
    return {"scene": si, "view": vi, "image": f"{stem}.ppm", "rays": f"{stem}.rayo",
            "camera": cam.to_dict(), "s": s, "object_scale": k, "distance_level": level}


def generate_dataset(cfg: GenConfig, out_dir) -> Path:
    if cfg.rays < 1 or cfg.samples < 2 or cfg.views < 1 or cfg.scenes < 1:
        raise DatasetError("scenes, views and rays must be >= 1 and samples >= 2")
    if cfg.distance_levels < 0:
        raise DatasetError("distance_levels must be >= 0")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenes = [_make_scene(cfg, i) for i in range(cfg.scenes)]
    per_scene = cfg.views * max(cfg.distance_levels, 1)
    jobs = [(si, vi) for si in range(cfg.scenes) for vi in range(per_scene)]
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            views = list(ex.map(lambda j: _gen_view(cfg, scenes[j[0]], j[0], j[1], out), jobs))
    else:
        views = [_gen_view(cfg, scenes[si], si, vi, out) for si, vi in jobs]
    manifest = {
        "format": 1,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items() if k != "threads"},
        "d_min": cfg.d_min, "d_max": cfg.d_max, "rays": cfg.rays, "samples": cfg.samples,
        "image_size": cfg.image_size,
        "scenes": [s.to_dict() for s in scenes],
        "views": views,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return out


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class View:
    scene: int
    index: int
    image: np.ndarray  # H x W x 3 float32
    camera: Camera
    rays: RaySamples
    s: float
    object_scale: float
    solid: Solid  # world-frame ground truth for this view
    distance_level: Optional[int] = None

    def camera_frame_solid(self):
        from .shapes import InCameraFrame

        return InCameraFrame(child=self.solid, rotation=self.camera.rotation, translation=self.camera.translation)


@dataclass(eq=False)
class Dataset:
    root: Path
    manifest: dict
    views: list = field(default_factory=list)

    @property
    def d_min(self) -> float:
        return float(self.manifest["d_min"])

    @property
    def d_max(self) -> float:
        return float(self.manifest["d_max"])

    @property
    def samples(self) -> int:
        return int(self.manifest["samples"])

    def s_range(self) -> tuple[float, float]:
        s = [v.s for v in self.views]
        return float(min(s)), float(max(s))


def load_dataset(root) -> Dataset:
    root = Path(root)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except OSError as exc:
        raise DatasetError(f"cannot read {root / 'manifest.json'}: {exc}") from exc
    scenes = [solid_from_dict(d) for d in manifest["scenes"]]
    views = []
    for e in manifest["views"]:
        rays = read_rays(root / e["rays"])
        views.append(View(scene=e["scene"], index=e["view"], image=read_ppm(root / e["image"]),
                          camera=Camera.from_dict(e["camera"]), rays=rays, s=float(e["s"]),
                          object_scale=float(e["object_scale"]), distance_level=e.get("distance_level"),
                          solid=view_solid(scenes[e["scene"]], float(e["object_scale"]))))
    return Dataset(root=root, manifest=manifest, views=views)
