"""Command line entry point: gen, train, infer, eval, bench, gradcheck."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import traceback
from pathlib import Path


EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _pair(text: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH such as 128x128, got {text!r}") from None


def _range(text: str) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in text.split(","))
        return a, b
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO,HI such as 1.0,1.8, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="JSON file of flag values; explicit flags win (default: none)")
    p.add_argument("--seed", type=int, default=0, help="root seed for all random streams (default: %(default)s)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker and BLAS threads; 1 is fully deterministic (default: %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    from .dataset import PAPER_D_MAX, PAPER_D_MIN, PAPER_RAYS, PAPER_SAMPLES

    root = _Parser(prog="rayocc", description="Ray-based occupancy prediction for single-view reconstruction.")
    sub = root.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic CSG dataset")
    g.add_argument("--out", type=Path, required=True, help="output dataset directory")
    g.add_argument("--scenes", type=int, default=4, help="number of scenes (default: %(default)s)")
    g.add_argument("--views", type=int, default=8, help="views per scene (default: %(default)s)")
    g.add_argument("--rays", type=int, default=PAPER_RAYS, help="stored rays per view (default: %(default)s)")
    g.add_argument("--samples", type=int, default=PAPER_SAMPLES, help="samples per ray, M (default: %(default)s)")
    g.add_argument("--image-size", type=int, default=64, help="square image side in pixels (default: %(default)s)")
    g.add_argument("--d-min", type=float, default=PAPER_D_MIN, help="nearest ray distance (default: %(default)s)")
    g.add_argument("--d-max", type=float, default=PAPER_D_MAX, help="farthest ray distance (default: %(default)s)")
    g.add_argument("--dist-range", type=_range, default=(1.0, 1.8), help="camera distance range LO,HI (default: 1.0,1.8)")
    g.add_argument("--scene", default=None, help="named scene for every scene, e.g. sphere_box (default: random CSG)")
    g.add_argument("--scene-radius", type=float, default=0.35, help="object bounding radius (default: %(default)s)")
    g.add_argument("--scale-with-distance", action="store_true",
                   help="scale each view's object with its camera distance (default: off)")
    g.add_argument("--distance-levels", type=int, default=0,
                   help="render every view direction at this many evenly spaced distances, 0 = random (default: %(default)s)")
    _common(g)

    t = sub.add_parser("train", help="train a network on a dataset")
    t.add_argument("--data", type=Path, required=True, help="dataset directory")
    t.add_argument("--out", type=Path, required=True, help="run directory for log and checkpoints")
    t.add_argument("--preset", choices=["desk", "paper"], default="desk", help="network size (default: %(default)s)")
    t.add_argument("--steps", type=int, default=1000, help="optimisation steps (default: %(default)s)")
    t.add_argument("--lr", type=float, default=1e-4, help="Adam learning rate (default: %(default)s)")
    t.add_argument("--pixels", type=int, default=1024, help="rays drawn per image per step (default: %(default)s)")
    t.add_argument("--batch-images", type=int, default=8, help="images per step (default: %(default)s)")
    t.add_argument("--checkpoint-every", type=int, default=0, help="extra checkpoint cadence, 0 = final only (default: %(default)s)")
    t.add_argument("--stat-batches", type=int, default=50,
                   help="batches used to recalibrate CBN statistics after training, 0 = off (default: %(default)s)")
    t.add_argument("--no-scale", action="store_true", help="zero the scale input s (default: off)")
    t.add_argument("--no-global", action="store_true", help="zero the global feature z (default: off)")
    t.add_argument("--no-local", action="store_true", help="zero the local feature C_p (default: off)")
    _common(t)

    i = sub.add_parser("infer", help="reconstruct a mesh from one image")
    i.add_argument("--ckpt", type=Path, required=True, help="checkpoint file (.ronw)")
    i.add_argument("--image", type=Path, required=True, help="input image (.ppm)")
    i.add_argument("--out", type=Path, required=True, help="output mesh (.obj)")
    i.add_argument("--plane", type=_pair, default=(128, 128), help="ray lattice S_u x S_v (default: 128x128)")
    i.add_argument("--samples", type=int, default=PAPER_SAMPLES, help="samples per ray M, resampled along t (default: %(default)s)")
    i.add_argument("--grid", type=int, default=128, help="regular grid resolution N (default: %(default)s)")
    i.add_argument("--threshold", type=float, default=0.2, help="occupancy threshold (default: %(default)s)")
    i.add_argument("--scale", type=float, default=None, help="scale factor s (default: training-range midpoint)")
    i.add_argument("--camera-frame", action="store_true", help="write camera-frame vertices instead of dividing by s")
    _common(i)

    e = sub.add_parser("eval", help="reconstruct dataset views and score them against ground truth")
    e.add_argument("--ckpt", type=Path, required=True, help="checkpoint file (.ronw)")
    e.add_argument("--data", type=Path, required=True, help="dataset directory")
    e.add_argument("--out", type=Path, required=True, help="output CSV")
    e.add_argument("--plane", type=_pair, default=(128, 128), help="ray lattice S_u x S_v (default: 128x128)")
    e.add_argument("--samples", type=int, default=None, help="samples per ray M (default: network native)")
    e.add_argument("--grid", type=int, default=64, help="regular grid resolution N (default: %(default)s)")
    e.add_argument("--threshold", type=float, default=0.2, help="occupancy threshold (default: %(default)s)")
    e.add_argument("--n-iou", type=int, default=100_000, help="IoU sample points (default: %(default)s)")
    e.add_argument("--n-surface", type=int, default=30_000, help="surface samples per mesh (default: %(default)s)")
    e.add_argument("--max-views", type=int, default=0, help="evaluate only the first K views, 0 = all (default: %(default)s)")
    _common(e)

    b = sub.add_parser("bench", help="time ray-mode vs point-mode prediction; optional sampling sweep")
    b.add_argument("--ckpt", type=Path, required=True, help="checkpoint file (.ronw)")
    b.add_argument("--data", type=Path, required=True, help="dataset directory (first view is the bench image)")
    b.add_argument("--out", type=Path, required=True, help="output CSV")
    b.add_argument("--grids", type=_ints, default=[32, 64, 128], help="N values (default: 32,64,128)")
    b.add_argument("--repeats", type=int, default=5, help="timed repeats per cell, median reported (default: %(default)s)")
    b.add_argument("--sweep-planes", type=_ints, default=[], help="S_plane sides for the sampling sweep (default: none)")
    b.add_argument("--sweep-samples", type=_ints, default=[], help="M values for the sampling sweep (default: none)")
    b.add_argument("--sweep-views", type=int, default=4, help="views used by the sweep (default: %(default)s)")
    _common(b)

    c = sub.add_parser("gradcheck", help="finite-difference check of every op and a full network")
    c.add_argument("--preset", choices=["desk", "paper"], default="desk", help="network size (default: %(default)s)")
    c.add_argument("--coords", type=int, default=2, help="probed coordinates per parameter tensor (default: %(default)s)")
    c.add_argument("--tolerance", type=float, default=1e-4, help="pass bound on max relative error (default: %(default)s)")
    c.add_argument("--out", type=Path, default=None, help="optional JSON report path")
    _common(c)
    return root


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("rayocc: a command is required (gen, train, infer, eval, bench, gradcheck)")
    if getattr(args, "config", None) is None:
        return args
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"rayocc {args.command}: --config {args.config}: {exc}") from None
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    for key in cfg:
        if key not in known or key in ("help", "config"):
            raise UsageError(f"rayocc {args.command}: --config: unknown key {key!r}")
    # re-parse with JSON values as defaults so explicit flags still win
    converted = {}
    for key, val in cfg.items():
        act = known[key]
        if act.type is not None and isinstance(val, str):
            val = act.type(val)
        converted[key] = val
    sub.set_defaults(**converted)
    return parser.parse_args(argv)


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, tuple):
        return list(v)
    return v


def _write_resolved(args: argparse.Namespace, path: Path) -> None:
    d = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in ("config",)}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(d, indent=1, sort_keys=True) + "\n")


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".config.json")


def _positive(args, *names):
    for n in names:
        v = getattr(args, n)
        if v is not None and v < 1:
            raise UsageError(f"rayocc {args.command}: --{n.replace('_', '-')} must be >= 1, got {v}")


# commands --------------------------------------------------------------------------


def cmd_gen(args) -> int:
    from .dataset import GenConfig, generate_dataset

    _positive(args, "scenes", "views", "rays", "samples", "image_size")
    cfg = GenConfig(scenes=args.scenes, views=args.views, rays=args.rays, samples=args.samples,
                    image_size=args.image_size, d_min=args.d_min, d_max=args.d_max, dist_range=tuple(args.dist_range),
                    scene=args.scene, scene_radius=args.scene_radius, scale_with_distance=args.scale_with_distance,
                    distance_levels=args.distance_levels,
                    seed=args.seed, threads=args.threads)
    generate_dataset(cfg, args.out)
    _write_resolved(args, args.out / "resolved_config.json")
    print(f"wrote {args.scenes * args.views * max(args.distance_levels, 1)} views to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .dataset import load_dataset
    from .training import TrainConfig, train

    _positive(args, "pixels", "batch_images")
    ds = load_dataset(args.data)
    network = {"m": ds.samples, "image_size": int(ds.views[0].image.shape[0])}
    cfg = TrainConfig(dataset=str(args.data), out_dir=str(args.out), preset=args.preset, network=network,
                      pixels_per_image=args.pixels, batch_images=args.batch_images, lr=args.lr, steps=args.steps,
                      seed=args.seed, use_scale=not args.no_scale, use_global=not args.no_global,
                      use_local=not args.no_local, checkpoint_every=args.checkpoint_every,
                      stat_batches=args.stat_batches)

    def progress(step, loss):
        if step % 100 == 0 or step == cfg.steps:
            print(f"step {step} loss {loss:.5f}", flush=True)

    res = train(cfg, ds, progress)
    _write_resolved(args, args.out / "resolved_config.json")
    print(f"checkpoint {res.checkpoint}")
    return 0


def cmd_infer(args) -> int:
    from .dataset import read_ppm
    from .inference import ReconstructionRequest, reconstruct
    from .network import load_checkpoint

    _positive(args, "samples", "grid")
    net, meta = load_checkpoint(args.ckpt)
    img = read_ppm(args.image)
    req = ReconstructionRequest(image=img, s=args.scale, plane=tuple(args.plane), m=args.samples, n=args.grid,
                                threshold=args.threshold, normalize=not args.camera_frame)
    rec = reconstruct(net, meta, req, out_path=args.out)
    _write_resolved(args, _sidecar(args.out))
    print(f"wrote {args.out}: {rec.mesh.n_triangles} triangles, {rec.forwards} ray forwards")
    return 0


def cmd_eval(args) -> int:
    from .dataset import load_dataset
    from .inference import ReconstructionRequest, reconstruct
    from .metrics import evaluate
    from .network import load_checkpoint
    from .seeding import stream
    from .shapes import Scaled

    net, meta = load_checkpoint(args.ckpt)
    ds = load_dataset(args.data)
    views = ds.views[:args.max_views] if args.max_views else ds.views
    eval_seed = int(stream(args.seed, "eval").integers(2**31))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scene", "view", "iou", "chamfer_l1", "nc", "n_iou", "n_surf", "seed"])
        for v in views:
            rec = reconstruct(net, meta, ReconstructionRequest(image=v.image, s=v.s, plane=tuple(args.plane),
                                                               m=args.samples, n=args.grid, threshold=args.threshold))
            gt = Scaled(child=v.camera_frame_solid(), factor=1.0 / v.s)
            r = evaluate(rec.mesh, gt, args.n_iou, args.n_surface, eval_seed)
            w.writerow([v.scene, v.index, f"{r.iou:.6f}", f"{r.chamfer_l1:.6f}", f"{r.normal_consistency:.6f}",
                        r.n_iou, r.n_surface, r.seed])
            print(f"scene {v.scene} view {v.index}: iou {r.iou:.4f} chamfer {r.chamfer_l1:.4f} nc "
                  f"{r.normal_consistency:.4f}", flush=True)
    _write_resolved(args, _sidecar(args.out))
    return 0


def cmd_bench(args) -> int:
    from .bench import bench_csv, run_complexity_bench, sampling_sweep
    from .dataset import load_dataset
    from .network import load_checkpoint

    _positive(args, "repeats")
    net, meta = load_checkpoint(args.ckpt)
    ds = load_dataset(args.data)
    recs, exps = run_complexity_bench(net, meta, ds.views[0].image, args.grids, repeats=args.repeats, seed=args.seed)
    text = bench_csv(recs, exps)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(text)
    print(text, end="")
    if args.sweep_planes or args.sweep_samples:
        planes = args.sweep_planes or [128]
        ms = args.sweep_samples or [net.config.m]
        rows = sampling_sweep(net, meta, ds.views[:args.sweep_views], planes, ms, seed=args.seed)
        sweep = args.out.with_name(args.out.stem + "_sweep.csv")
        with open(sweep, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["S_plane", "M", "iou", "views"])
            for r in rows:
                w.writerow([r["S_plane"], r["M"], f"{r['iou']:.6f}", r["views"]])
                print(f"S_plane {r['S_plane']}^2 M {r['M']}: iou {r['iou']:.4f}")
    _write_resolved(args, _sidecar(args.out))
    return 0


def cmd_gradcheck(args) -> int:
    from .autodiff.gradcheck import op_gradcheck_suite
    from .network import NetworkConfig, network_gradcheck

    ops_err = op_gradcheck_suite(seeds=range(args.seed, args.seed + 3))
    for kind, err in sorted(ops_err.items()):
        print(f"op {kind:<20s} {err:.3e}")
    net = network_gradcheck(NetworkConfig.preset_named(args.preset), seed=args.seed, max_coords=args.coords)
    print(f"network ({args.preset}) {net['max_rel_error']:.3e} worst at {net['worst_param']} over {net['coords']} coords")
    worst = max(max(ops_err.values()), net["max_rel_error"])
    print(f"max relative error {worst:.3e}")
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps({"ops": ops_err, "network": net, "max_rel_error": worst}, indent=1,
                                       sort_keys=True) + "\n")
    return 0 if worst < args.tolerance else EXIT_RUNTIME


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval, "bench": cmd_bench,
            "gradcheck": cmd_gradcheck}


def _where(exc: BaseException) -> str:
    """module.function of the innermost package frame that raised."""
    for fr in reversed(traceback.extract_tb(exc.__traceback__)):
        parts = Path(fr.filename).parts
        if "rayocc" in parts and not fr.filename.endswith("cli.py"):
            mod = Path(fr.filename).stem
            return f"{mod}.{fr.name}"
    return "cli"


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        if args.threads < 1:
            raise UsageError(f"rayocc {args.command}: --threads must be >= 1, got {args.threads}")
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (Exception, MemoryError) as exc:
        print(f"rayocc {args.command}: {_where(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
