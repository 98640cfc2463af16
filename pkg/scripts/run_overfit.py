"""Overfit the desk network on one sphere-and-box scene and score a training view."""

import argparse
import json
import time
from dataclasses import asdict

from rayocc.experiments import OverfitConfig, overfit


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--work", default="runs/overfit", help="output directory (default: %(default)s)")
    p.add_argument("--steps", type=int, default=OverfitConfig.steps)
    p.add_argument("--seed", type=int, default=OverfitConfig.seed)
    a = p.parse_args()
    cfg = OverfitConfig(steps=a.steps, seed=a.seed)
    t0 = time.perf_counter()
    out = overfit(a.work, cfg)
    print(json.dumps({"config": asdict(cfg), "final_train_loss": out["final_train_loss"], "iou": out["iou"],
                      "view_bce": out["view_bce"], "seconds": round(time.perf_counter() - t0, 1)}, indent=1))


if __name__ == "__main__":
    main()
