"""Ray-mode vs point-mode timing over N; writes the bench CSV."""

import argparse
from pathlib import Path

from rayocc.bench import bench_csv, run_complexity_bench
from rayocc.dataset import load_dataset
from rayocc.network import load_checkpoint


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--ckpt", required=True, help="checkpoint, e.g. runs/overfit/run/model.ronw")
    p.add_argument("--data", required=True, help="dataset whose first view is the bench image")
    p.add_argument("--out", default="runs/complexity.csv")
    p.add_argument("--grids", default="32,64,128")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--point-repeats", type=int, default=1, help="point mode at N=128 takes tens of seconds")
    a = p.parse_args()
    net, meta = load_checkpoint(a.ckpt)
    image = load_dataset(a.data).views[0].image
    recs, exps = run_complexity_bench(net, meta, image, [int(n) for n in a.grids.split(",")], repeats=a.repeats,
                                      point_repeats=a.point_repeats)
    text = bench_csv(recs, exps)
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    Path(a.out).write_text(text)
    print(text, end="")


if __name__ == "__main__":
    main()
