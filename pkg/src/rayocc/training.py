"""Mini-batch training on per-ray occupancy bits with Adam."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .autodiff import Adam, NonFiniteError, backward, ops
from .dataset import Dataset, load_dataset
from .network import Ablation, NetworkConfig, RayOccupancyNet, save_checkpoint
from .seeding import stream

LOG_HEADER = "step,loss,wall_ms"


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    dataset: str = ""
    out_dir: str = "run"
    preset: str = "desk"
    network: dict = field(default_factory=dict)  # NetworkConfig overrides
    pixels_per_image: int = 1024
    batch_images: int = 8
    lr: float = 1e-4
    steps: int = 1000
    seed: int = 0
    use_scale: bool = True
    use_global: bool = True
    use_local: bool = True
    checkpoint_every: int = 0  # 0: final checkpoint only
    stat_batches: int = 50  # batches used to recalibrate CBN statistics after the last step, 0: keep the moving average

    def __post_init__(self):
        for name in ("pixels_per_image", "batch_images"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.steps < 0 or self.checkpoint_every < 0 or self.stat_batches < 0:
            raise ValueError("steps, checkpoint_every and stat_batches must be >= 0")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")

    @property
    def ablation(self) -> Ablation:
        return Ablation(self.use_scale, self.use_global, self.use_local)


@dataclass
class Batch:
    images: np.ndarray  # (B, H, W, 3)
    batch_idx: np.ndarray  # (T,)
    pixels: np.ndarray  # (T, 2)
    bits: np.ndarray  # (T, M) float 0/1
    s: np.ndarray  # (B,)
    views: list


def make_batch(dataset: Dataset, cfg: TrainConfig, rng: np.random.Generator) -> Batch:
    """Draw ``batch_images`` views, then ``pixels_per_image`` distinct rays per view.

    Views are drawn without replacement when the dataset has enough of them.
    """
    n = len(dataset.views)
    if n == 0:
        raise TrainingError("dataset has no views")
    vids = rng.choice(n, size=cfg.batch_images, replace=cfg.batch_images > n)
    images, bidx, pix, bits, s = [], [], [], [], []
    for b, vi in enumerate(vids):
        view = dataset.views[vi]
        r = view.rays.n_rays
        if cfg.pixels_per_image > r:
            raise TrainingError(f"view {vi} stores {r} rays, {cfg.pixels_per_image} requested")
        sel = rng.choice(r, size=cfg.pixels_per_image, replace=False)
        images.append(view.image)
        bidx.append(np.full(len(sel), b, dtype=np.int64))
        pix.append(view.rays.pixels[sel])
        bits.append(view.rays.bits[sel])
        s.append(view.s)
    return Batch(images=np.stack(images), batch_idx=np.concatenate(bidx),
                 pixels=np.concatenate(pix).astype(np.float64),
                 bits=np.concatenate(bits).astype(np.float64), s=np.asarray(s, dtype=np.float64),
                 views=[int(v) for v in vids])


def training_step(net: RayOccupancyNet, batch: Batch, opt: Adam, ablation: Ablation, step: int = 0) -> float:
    net.train()
    opt.zero_grad()
    try:
        logits = net.forward(batch.images, batch.batch_idx, batch.pixels, batch.s, ablation)
        loss = ops.bce_with_logits(logits, batch.bits)
        backward(loss)
    except NonFiniteError as exc:
        raise TrainingError(f"step {step}: non-finite value ({exc})") from exc
    value = float(loss.item())
    if not np.isfinite(value):
        raise TrainingError(f"step {step}: non-finite loss")
    opt.step()
    return value


def new_network(cfg: TrainConfig) -> RayOccupancyNet:
    ncfg = NetworkConfig.preset_named(cfg.preset, **cfg.network)
    return RayOccupancyNet(ncfg, seed=stream(cfg.seed, "init"))


def checkpoint_meta(cfg: TrainConfig, dataset: Dataset, step: int) -> dict:
    cam = dataset.views[0].camera.to_dict()
    return {"camera": {k: cam[k] for k in ("f", "cx", "cy", "W", "H")},
            "s_range": list(dataset.s_range()), "d_min": dataset.d_min, "d_max": dataset.d_max,
            "ablation": asdict(cfg.ablation), "step": step, "seed": cfg.seed}


@dataclass
class TrainResult:
    net: RayOccupancyNet
    losses: list
    checkpoint: Path
    log: Path


def train(cfg: TrainConfig, dataset: Optional[Dataset] = None, progress=None) -> TrainResult:
    """Run ``cfg.steps`` steps; write the CSV log, the config echo and checkpoints."""
    dataset = dataset if dataset is not None else load_dataset(cfg.dataset)
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise TrainingError(f"cannot create output directory {out}: {exc}") from exc
    net = new_network(cfg)
    if net.config.image_size != dataset.views[0].image.shape[0]:
        raise TrainingError(f"network expects {net.config.image_size}px images, dataset has "
                            f"{dataset.views[0].image.shape[0]}px")
    if net.config.m != dataset.samples:
        raise TrainingError(f"network emits M={net.config.m}, dataset stores {dataset.samples} samples per ray")
    opt = Adam(net.params, lr=cfg.lr)
    rng = stream(cfg.seed, "train")
    ab = cfg.ablation
    (out / "train_config.json").write_text(json.dumps(asdict(cfg), indent=1, sort_keys=True) + "\n")
    log_path = out / "train_log.csv"
    losses = []
    with open(log_path, "w") as log:
        log.write(f"# use_scale={int(ab.use_scale)},use_global={int(ab.use_global)},use_local={int(ab.use_local)}\n")
        log.write(LOG_HEADER + "\n")
        for step in range(1, cfg.steps + 1):
            t0 = time.perf_counter()
            loss = training_step(net, make_batch(dataset, cfg, rng), opt, ab, step)
            wall = (time.perf_counter() - t0) * 1e3
            losses.append(loss)
            log.write(f"{step},{loss:.6f},{wall:.3f}\n")
            if progress is not None:
                progress(step, loss)
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0 and step < cfg.steps:
                save_checkpoint(net, out / f"ckpt_{step:06d}.ronw", checkpoint_meta(cfg, dataset, step))
    if cfg.steps and cfg.stat_batches:
        srng = stream(cfg.seed, "stats")

        def batches():
            for _ in range(cfg.stat_batches):
                b = make_batch(dataset, cfg, srng)
                yield b.images, b.batch_idx, b.pixels, b.s

        net.recalibrate_statistics(batches(), ab)
    final = out / "model.ronw"
    save_checkpoint(net, final, checkpoint_meta(cfg, dataset, cfg.steps))
    net.eval()
    return TrainResult(net=net, losses=losses, checkpoint=final, log=log_path)


def read_log(path) -> tuple[dict, np.ndarray]:
    """Parse a training log into (ablation flags, array of rows)."""
    lines = Path(path).read_text().splitlines()
    flags = dict(kv.split("=") for kv in lines[0].lstrip("# ").split(","))
    if lines[1] != LOG_HEADER:
        raise ValueError(f"{path}: unexpected header {lines[1]!r}")
    rows = np.array([[float(x) for x in ln.split(",")] for ln in lines[2:]]) if len(lines) > 2 else np.zeros((0, 3))
    return {k: bool(int(v)) for k, v in flags.items()}, rows
