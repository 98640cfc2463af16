"""Desk-scale experiments shared by ``scripts/`` and the acceptance tests."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import Dataset, GenConfig, generate_dataset, load_dataset
from .inference import ReconstructionRequest, predict_rays, reconstruct
from .metrics import volumetric_iou
from .network import RayOccupancyNet, load_checkpoint
from .shapes import Scaled
from .training import TrainConfig, train


def view_iou(net: RayOccupancyNet, meta: dict, view, plane: int = 128, n: int = 64, m: int | None = None,
             n_iou: int = 100_000, seed: int = 0) -> float:
    rec = reconstruct(net, meta, ReconstructionRequest(image=view.image, s=view.s, plane=(plane, plane), m=m, n=n))
    return volumetric_iou(rec.mesh, Scaled(child=view.camera_frame_solid(), factor=1.0 / view.s), n_iou, seed)


def _dataset(cfg: GenConfig, root: Path) -> Dataset:
    if not (root / "manifest.json").exists():
        generate_dataset(cfg, root)
    return load_dataset(root)


# overfit -----------------------------------------------------------------------------


@dataclass
class OverfitConfig:
    views: int = 8
    rays: int = 1024
    samples: int = 32
    image_size: int = 64
    scene_radius: float = 0.5
    dist_range: tuple = (1.3, 1.5)
    steps: int = 3000
    lr: float = 1e-3
    pixels_per_image: int = 256
    batch_images: int = 8
    seed: int = 0
    eval_view: int = 0
    plane: int = 128
    grid: int = 64


def overfit(workdir, cfg: OverfitConfig = OverfitConfig()) -> dict:
    """Train the desk preset on one sphere-box scene and score a training view."""
    work = Path(workdir)
    gen = GenConfig(scenes=1, views=cfg.views, rays=cfg.rays, samples=cfg.samples, image_size=cfg.image_size,
                    scene="sphere_box", scene_radius=cfg.scene_radius, dist_range=tuple(cfg.dist_range),
                    seed=cfg.seed)
    ds = _dataset(gen, work / "data")
    tcfg = TrainConfig(dataset=str(work / "data"), out_dir=str(work / "run"), lr=cfg.lr, steps=cfg.steps,
                       pixels_per_image=cfg.pixels_per_image, batch_images=cfg.batch_images, seed=cfg.seed,
                       network={"m": cfg.samples, "image_size": cfg.image_size})
    res = train(tcfg, ds)
    net, meta = load_checkpoint(res.checkpoint)
    view = ds.views[cfg.eval_view]
    probs = predict_rays(net, view.image, view.rays.pixels, view.s)
    bits = view.rays.bits.astype(np.float64)
    eps = 1e-12
    bce = float(-np.mean(bits * np.log(probs + eps) + (1 - bits) * np.log(1 - probs + eps)))
    acc = float(np.mean((probs > 0.2) == (bits > 0.5)))
    iou = view_iou(net, meta, view, plane=cfg.plane, n=cfg.grid)
    out = {"final_train_loss": float(np.mean(res.losses[-50:])), "view_bce": bce, "view_accuracy": acc,
           "iou": iou, "steps": cfg.steps, "losses": res.losses, "checkpoint": str(res.checkpoint)}
    (work / "overfit.json").write_text(json.dumps({k: v for k, v in out.items() if k != "losses"}, indent=1) + "\n")
    return out


# scale ablation ------------------------------------------------------------------------


@dataclass
class AblationConfig:
    scene: Optional[str] = "sphere_box"  # None = random CSG per scene
    scenes: int = 1
    directions: int = 4
    distance_levels: int = 9
    train_levels: tuple = (0, 2, 4, 6, 8)
    rays: int = 1024
    samples: int = 32
    image_size: int = 64
    dist_range: tuple = (1.0, 1.8)
    scene_radius: float = 0.27  # far views scale by 1.8/1.4 and must stay inside the shell
    steps: int = 1500
    lr: float = 1e-3
    pixels_per_image: int = 256
    batch_images: int = 8
    seeds: tuple = (0, 1, 2)
    plane: int = 64
    grid: int = 48
    n_iou: int = 30_000
    data_seed: int = 11


def scale_ablation(workdir, cfg: AblationConfig = AblationConfig()) -> dict:
    """Full model vs ``use_scale=False`` on held-out camera distances.

    Objects scale with camera distance, so one direction seen at several
    distances gives the same image; only s tells the depths apart. Training
    uses some distance levels, IoU is measured on the others.
    """
    work = Path(workdir)
    gen = GenConfig(scene=cfg.scene, scenes=cfg.scenes, views=cfg.directions, distance_levels=cfg.distance_levels, rays=cfg.rays,
                    samples=cfg.samples, image_size=cfg.image_size, dist_range=tuple(cfg.dist_range),
                    scene_radius=cfg.scene_radius, scale_with_distance=True, seed=cfg.data_seed)
    ds = _dataset(gen, work / "data")
    train_ds = Dataset(root=ds.root, manifest=ds.manifest,
                       views=[v for v in ds.views if v.distance_level in cfg.train_levels])
    held = [v for v in ds.views if v.distance_level not in cfg.train_levels]
    rows = []
    for seed in cfg.seeds:
        for use_scale in (True, False):
            tag = f"{'full' if use_scale else 'no_scale'}_seed{seed}"
            tcfg = TrainConfig(dataset=str(work / "data"), out_dir=str(work / tag), lr=cfg.lr, steps=cfg.steps,
                               pixels_per_image=cfg.pixels_per_image, batch_images=cfg.batch_images, seed=seed,
                               use_scale=use_scale, network={"m": cfg.samples, "image_size": cfg.image_size})
            res = train(tcfg, train_ds)
            net, meta = load_checkpoint(res.checkpoint)
            ious, levels = [], {}
            for v in held:
                req = ReconstructionRequest(image=v.image, s=v.s, plane=(cfg.plane, cfg.plane), n=cfg.grid)
                rec = reconstruct(net, meta, req, ablation=tcfg.ablation)
                gt = Scaled(child=v.camera_frame_solid(), factor=1.0 / v.s)
                ious.append(volumetric_iou(rec.mesh, gt, cfg.n_iou, seed))
                levels.setdefault(v.distance_level, []).append(ious[-1])
            rows.append({"seed": seed, "use_scale": use_scale, "iou": float(np.mean(ious)),
                         "iou_by_level": {int(k): float(np.mean(x)) for k, x in sorted(levels.items())},
                         "final_loss": float(np.mean(res.losses[-50:]))})
    by = {(r["seed"], r["use_scale"]): r["iou"] for r in rows}
    gaps = [by[(s, True)] - by[(s, False)] for s in cfg.seeds]
    out = {"rows": rows, "gaps": gaps, "median_gap": float(np.median(gaps)), "held_views": len(held),
           "train_views": len(train_ds.views)}
    (work / "scale_ablation.json").write_text(json.dumps(out, indent=1) + "\n")
    return out
