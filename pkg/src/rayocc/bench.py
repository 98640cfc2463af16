"""Cost scaling of dense-ray vs dense-point prediction, and the sampling sweep."""

from __future__ import annotations

import csv
import io
import time
import tracemalloc
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Tensor, no_grad, ops
from .autodiff.ops import _sigmoid
from .geometry import FrustumGrid, frustum_bounds, project, regular_grid_points
from .inference import ReconstructionRequest, camera_from_meta, default_scale, predict_frustum, reconstruct
from .metrics import volumetric_iou
from .network import RayOccupancyNet

CSV_HEADER = ["mode", "N", "S_u", "S_v", "M", "forwards", "wall_ms", "peak_bytes", "seed"]
MIN_TICKS = 20


class PointModeEmulator:
    """Query-every-point baseline with the decoder width of ``net``.

    Per 3D point x: the mixer runs on the projected pixel, a random linear
    embedding of x is added, and x joins the CBN condition. The decoder's
    hidden layers reuse the trained weights; CBN generators (wider condition)
    and the 1-wide output head are random. Only the cost is meaningful.
    """

    def __init__(self, net: RayOccupancyNet, seed: int = 0):
        self.net = net
        h = RayOccupancyNet.__new__(RayOccupancyNet)
        h.config, h.training, h.decoder_forwards = net.config, False, 0
        h.params, h.buffers = dict(net.params), dict(net.buffers)
        h._rng = np.random.default_rng(seed)
        h._decoder_params("pt", net.config.d_global + 1 + 3, 1)
        h._fc("pt.x", 3, net.config.hidden)
        for bi in range(net.config.decoder_blocks):
            for j in (1, 2):
                for k in ("w", "b"):
                    h.params[f"pt.b{bi}.fc{j}.{k}"] = net.params[f"dec.b{bi}.fc{j}.{k}"]
        self.host = h

    @property
    def decoder_forwards(self) -> int:
        return self.host.decoder_forwards

    def predict_points(self, z: Tensor, fmap: Tensor, camera, s: float, x: np.ndarray) -> np.ndarray:
        h = self.host
        k = len(x)
        pix = project(camera, x)
        pix[:, 0] = np.clip(pix[:, 0], 0, camera.width)
        pix[:, 1] = np.clip(pix[:, 1], 0, camera.height)
        rows = np.zeros(k, dtype=np.int64)
        local = h.sample_local(fmap, rows, pix)
        xt = Tensor(x, dtype=local.dtype)
        y = ops.add(h.mix(h.normalized_pixels(pix), local), h.fc("pt.x", xt))
        cond = ops.concat([ops.take_rows(z, rows), Tensor(np.full((k, 1), s), dtype=local.dtype), xt], axis=1)
        return _sigmoid(h.decoder_forward("pt", y, cond, None).data.astype(np.float64))[:, 0]

    def __call__(self, image, camera, s: float, n: int, bounds) -> np.ndarray:
        """N^3 occupancies, evaluated in chunks of N^2 points."""
        pts = regular_grid_points(n, bounds).reshape(-1, 3)
        out = np.empty(len(pts))
        with no_grad():
            z, fmap = self.host.encode(np.asarray(image)[None])
            step = n * n
            for lo in range(0, len(pts), step):
                out[lo:lo + step] = self.predict_points(z, fmap, camera, s, pts[lo:lo + step])
        return out.reshape(n, n, n)


def point_mode_emulator(net: RayOccupancyNet, image, camera, s: float, n: int, bounds, seed: int = 0) -> np.ndarray:
    return PointModeEmulator(net, seed)(image, camera, s, n, bounds)


@dataclass
class BenchRecord:
    mode: str
    n: int
    s_u: int
    s_v: int
    m: int
    forwards: int
    wall_ms: float
    peak_bytes: int
    seed: int

    def row(self) -> list:
        return [self.mode, self.n, self.s_u, self.s_v, self.m, self.forwards, f"{self.wall_ms:.3f}",
                self.peak_bytes, self.seed]


def fit_exponent(ns: Sequence[float], ts: Sequence[float]) -> float:
    """Least-squares slope of log(t) against log(N)."""
    return float(np.polyfit(np.log(np.asarray(ns, dtype=np.float64)), np.log(np.asarray(ts, dtype=np.float64)), 1)[0])


def _timed(fn, repeats: int, warmup: int) -> tuple[float, int]:
    """Median wall time (ms); repeats double until a sample spans MIN_TICKS clock ticks."""
    res = time.get_clock_info("perf_counter").resolution
    for _ in range(warmup):
        fn()
    while True:
        samples = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            samples.append(time.perf_counter() - t0)
        med = float(np.median(samples))
        if med >= MIN_TICKS * res or repeats > 1 << 16:
            return med * 1e3, repeats
        repeats *= 2


def _peak(fn) -> int:
    tracemalloc.start()
    try:
        tracemalloc.reset_peak()
        base = tracemalloc.get_traced_memory()[0]
        fn()
        return int(tracemalloc.get_traced_memory()[1] - base)
    finally:
        tracemalloc.stop()


def run_complexity_bench(net: RayOccupancyNet, meta: dict, image, ns: Iterable[int] = (32, 64, 128),
                         repeats: int = 5, point_repeats: int | None = None, warmup: int = 1, seed: int = 0,
                         modes: Sequence[str] = ("ray", "point"), measure_memory: bool = True):
    """Time network prediction for an N x N ray lattice and an N^3 point grid.

    Returns (records, exponents) where exponents maps mode -> fitted slope.
    """
    ns = list(ns)
    if len(ns) < 3:
        raise ValueError("complexity bench needs at least three N values")
    s = default_scale(meta)
    cam = camera_from_meta(meta, s)
    d_min, d_max = meta["d_min"], meta["d_max"]
    bounds = frustum_bounds(FrustumGrid(np.zeros((2, 2, 2)), cam, d_min, d_max))
    emu = PointModeEmulator(net, seed)
    records = []
    for n in ns:
        for mode in modes:
            if mode == "ray":
                def fn(n=n):
                    predict_frustum(net, image, cam, s, n, n, d_min, d_max)
                counter, m = (lambda: net.decoder_forwards), net.config.m
                reps = repeats
            elif mode == "point":
                def fn(n=n):
                    emu(image, cam, s, n, bounds)
                counter, m = (lambda: emu.decoder_forwards), n
                reps = point_repeats or repeats
            else:
                raise ValueError(f"unknown bench mode {mode!r}")
            before = counter()
            fn()
            forwards = counter() - before
            wall, _ = _timed(fn, reps, max(warmup - 1, 0))
            peak = _peak(fn) if measure_memory else 0
            records.append(BenchRecord(mode, n, n, n, m, forwards, wall, peak, seed))
    exps = {mode: fit_exponent([r.n for r in records if r.mode == mode], [r.wall_ms for r in records if r.mode == mode])
            for mode in modes}
    return records, exps


def bench_csv(records: Sequence[BenchRecord], exponents: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.row())
    for mode, e in exponents.items():
        buf.write(f"# exponent {mode} {e:.4f}\n")
    return buf.getvalue()


def sampling_sweep(net: RayOccupancyNet, meta: dict, views, planes: Sequence[int], ms: Sequence[int],
                   n: int = 64, n_iou: int = 100_000, seed: int = 0, threshold: float = 0.2) -> list[dict]:
    """Mean IoU over ``views`` for every (S_plane, M) cell.

    ``views`` are dataset views; ground truth is the view's camera-frame solid
    normalised by s. M other than the network's native count is realised by
    resampling along t.
    """
    from .shapes import Scaled

    rows = []
    for plane in planes:
        for m in ms:
            ious = []
            for v in views:
                rec = reconstruct(net, meta, ReconstructionRequest(image=v.image, s=v.s, plane=(plane, plane), m=m,
                                                                    n=n, threshold=threshold))
                gt = Scaled(child=v.camera_frame_solid(), factor=1.0 / v.s)
                ious.append(volumetric_iou(rec.mesh, gt, n_iou, seed))
            rows.append({"S_plane": plane, "M": m, "iou": float(np.mean(ious)), "views": len(views)})
    return rows
