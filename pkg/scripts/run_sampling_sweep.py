"""IoU over a grid of ray-lattice sizes and per-ray sample counts."""

import argparse

from rayocc.bench import sampling_sweep
from rayocc.dataset import load_dataset
from rayocc.network import load_checkpoint


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--planes", default="32,64,128")
    p.add_argument("--samples", default="32,64", help="M values; counts above the native M resample along t")
    p.add_argument("--views", type=int, default=2)
    p.add_argument("--grid", type=int, default=64)
    a = p.parse_args()
    net, meta = load_checkpoint(a.ckpt)
    views = load_dataset(a.data).views[:a.views]
    rows = sampling_sweep(net, meta, views, [int(x) for x in a.planes.split(",")],
                          [int(x) for x in a.samples.split(",")], n=a.grid)
    print("S_plane,M,iou")
    for r in rows:
        print(f"{r['S_plane']},{r['M']},{r['iou']:.4f}")


if __name__ == "__main__":
    main()
