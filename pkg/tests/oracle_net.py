"""Analytic stand-in for a trained network, shared by the inference and bench tests."""

import numpy as np

from rayocc.autodiff import Tensor
from rayocc.geometry import ray_directions, ray_distances
from rayocc.inference import camera_from_meta
from rayocc.network import NetworkConfig, RayOccupancyNet
from rayocc.shapes import Box, Sphere, Union

META = {"camera": {"f": 64.0, "cx": 32.0, "cy": 32.0, "W": 64, "H": 64}, "s_range": [0.5, 0.9],
        "d_min": 0.63, "d_max": 2.16}
IMAGE = np.ones((64, 64, 3), np.float32)


class OracleNet(RayOccupancyNet):
    """Emits +-8 logits from an analytic camera-frame solid instead of learned weights."""

    def __init__(self, solid, m=32):
        super().__init__(NetworkConfig.desk(m=m), seed=0)
        self.solid = solid

    def forward_rays(self, z, fmap, batch_idx, pixels, s, ablation=None):
        cam = camera_from_meta(META, s[0])
        d = ray_directions(cam, pixels)
        t = ray_distances(self.config.m, META["d_min"], META["d_max"])
        pts = (d[:, None] * t[None, :, None]).reshape(-1, 3)
        occ = self.solid.contains(pts).reshape(len(pixels), -1)
        self.decoder_forwards += len(pixels)
        return Tensor(np.where(occ > 0, 8.0, -8.0))


def scene(s=0.7):
    z = s * 2.0
    return Union(a=Sphere(radius=0.25, center=[-0.05, 0.02, z]),
                 b=Box(half_extents=[0.15, 0.12, 0.18], center=[0.12, -0.06, z + 0.05]))
