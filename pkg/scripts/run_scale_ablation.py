"""Full model vs a model without the scale input, on held-out camera distances."""

import argparse
import json

from rayocc.experiments import AblationConfig, scale_ablation


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--work", default="runs/scale_ablation", help="output directory (default: %(default)s)")
    p.add_argument("--seeds", default="0,1,2", help="training seeds (default: %(default)s)")
    p.add_argument("--steps", type=int, default=AblationConfig.steps)
    a = p.parse_args()
    cfg = AblationConfig(seeds=tuple(int(s) for s in a.seeds.split(",")), steps=a.steps)
    out = scale_ablation(a.work, cfg)
    for r in out["rows"]:
        print(f"seed {r['seed']} {'full    ' if r['use_scale'] else 'no scale'} iou {r['iou']:.4f}")
    print(json.dumps({"gaps": out["gaps"], "median_gap": out["median_gap"]}))


if __name__ == "__main__":
    main()
