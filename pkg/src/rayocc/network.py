"""Ray occupancy network: image encoder, local context mixer, CBN decoder.

For a batch of images and a set of rays (each tagged with the image it
belongs to) the network emits ``M`` occupancy logits per ray in one pass.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .autodiff import Tensor, load_tensors, ops, save_tensors
from .autodiff.tensor import TensorError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


@dataclass
class NetworkConfig:
    image_size: int = 64
    d_global: int = 64
    d_local: int = 64
    hidden: int = 64
    m: int = 32
    stem_channels: int = 16
    stem_kernel: int = 3
    stage_channels: tuple = (16, 32, 64, 64)
    stage_strides: tuple = (1, 2, 2, 2)
    blocks_per_stage: int = 1
    mixer_blocks: int = 2
    decoder_blocks: int = 3
    preset: str = "desk"

    def __post_init__(self):
        self.stage_channels = tuple(self.stage_channels)
        self.stage_strides = tuple(self.stage_strides)
        if self.m < 1 or self.d_global < 1 or self.d_local < 1:
            raise ValueError("m, d_global and d_local must be >= 1")
        if len(self.stage_channels) != len(self.stage_strides) or len(self.stage_channels) < 2:
            raise ValueError("need matching stage channels/strides, at least two stages")

    @classmethod
    def desk(cls, **overrides) -> "NetworkConfig":
        return replace(cls(), **overrides)

    @classmethod
    def paper(cls, **overrides) -> "NetworkConfig":
        base = cls(image_size=224, d_global=256, d_local=256, hidden=256, m=128, stem_channels=64,
                   stem_kernel=7, stage_channels=(64, 128, 256, 512), stage_strides=(2, 2, 2, 2),
                   blocks_per_stage=2, mixer_blocks=3, decoder_blocks=5, preset="paper")
        return replace(base, **overrides)

    @classmethod
    def preset_named(cls, name: str, **overrides) -> "NetworkConfig":
        if name == "desk":
            return cls.desk(**overrides)
        if name == "paper":
            return cls.paper(**overrides)
        raise ValueError(f"unknown preset {name!r}")

    @property
    def feature_size(self) -> int:
        """Side of the local feature map (stem resolution)."""
        return self.image_size // 2

    @property
    def concat_width(self) -> int:
        return self.stem_channels + sum(self.stage_channels[:-1])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        d["stage_strides"] = list(self.stage_strides)
        return d


@dataclass
class Ablation:
    use_scale: bool = True
    use_global: bool = True
    use_local: bool = True


class RayOccupancyNet:
    """Parameters live in ``params`` (named tensors); BN running stats in ``buffers``."""

    def __init__(self, config: NetworkConfig, seed: int | np.random.Generator = 0):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.training = True
        self.bn_momentum = BN_MOMENTUM
        self.decoder_forwards = 0
        self._rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self._build()

    # construction ---------------------------------------------------------

    def _add(self, name: str, arr: np.ndarray) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name}")
        self.params[name] = Tensor(arr.astype(np.float32), requires_grad=True, dtype=np.float32, name=name)

    def _he(self, shape, fan_in):
        return self._rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

    def _conv(self, name, cin, cout, k):
        self._add(f"{name}.w", self._he((cout, cin, k, k), cin * k * k))
        self._add(f"{name}.b", np.zeros(cout))

    def _fc(self, name, cin, cout, he=True, scale=1.0):
        w = self._he((cin, cout), cin) if he else self._rng.normal(0.0, scale / np.sqrt(cin), size=(cin, cout))
        self._add(f"{name}.w", w)
        self._add(f"{name}.b", np.zeros(cout))

    def _cbn(self, name, cond_dim, width):
        self._fc(f"{name}.gamma", cond_dim, width, he=False, scale=0.1)
        self._fc(f"{name}.beta", cond_dim, width, he=False, scale=0.1)
        self.params[f"{name}.gamma.b"].data[:] = 1.0
        self.buffers[f"{name}.running_mean"] = np.zeros(width, dtype=np.float32)
        self.buffers[f"{name}.running_var"] = np.ones(width, dtype=np.float32)

    def _build(self):
        c = self.config
        self._conv("enc.stem", 3, c.stem_channels, c.stem_kernel)
        cin = c.stem_channels
        for si, (cout, stride) in enumerate(zip(c.stage_channels, c.stage_strides)):
            for bi in range(c.blocks_per_stage):
                name = f"enc.s{si}.b{bi}"
                st = stride if bi == 0 else 1
                self._conv(f"{name}.conv1", cin, cout, 3)
                self._conv(f"{name}.conv2", cout, cout, 3)
                if st != 1 or cin != cout:
                    self._conv(f"{name}.short", cin, cout, 1)
                cin = cout
        self._fc("enc.global", c.stage_channels[-1], c.d_global)
        self._conv("enc.local", c.concat_width, c.d_local, 1)
        self._fc("mix.in", 2 + c.d_local, c.hidden)
        for bi in range(c.mixer_blocks):
            self._fc(f"mix.b{bi}.fc1", c.hidden, c.hidden)
            self._fc(f"mix.b{bi}.fc2", c.hidden, c.hidden)
        self._decoder_params("dec", c.d_global + 1, c.m)

    def _decoder_params(self, prefix: str, cond_dim: int, out_dim: int):
        c = self.config
        for bi in range(c.decoder_blocks):
            self._cbn(f"{prefix}.b{bi}.cbn1", cond_dim, c.hidden)
            self._fc(f"{prefix}.b{bi}.fc1", c.hidden, c.hidden)
            self._cbn(f"{prefix}.b{bi}.cbn2", cond_dim, c.hidden)
            self._fc(f"{prefix}.b{bi}.fc2", c.hidden, c.hidden)
        self._cbn(f"{prefix}.final", cond_dim, c.hidden)
        self._fc(f"{prefix}.out", c.hidden, out_dim, he=False)

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def train(self) -> "RayOccupancyNet":
        self.training = True
        return self

    def eval(self) -> "RayOccupancyNet":
        self.training = False
        return self

    def freeze_statistics(self, images, batch_idx, pixels, s) -> "RayOccupancyNet":
        """Store one batch's CBN statistics as running statistics and switch to inference mode."""
        from .autodiff import no_grad

        mom, self.bn_momentum = self.bn_momentum, 0.0
        try:
            with no_grad():
                self.train().forward(images, batch_idx, pixels, s)
        finally:
            self.bn_momentum = mom
        return self.eval()

    def recalibrate_statistics(self, batches, ablation: Ablation | None = None) -> "RayOccupancyNet":
        """Replace running statistics by the average batch statistics over ``batches`` at the current weights.

        ``batches`` yields (images, batch_idx, pixels, s). The moving average
        kept during training describes weights from earlier steps; this
        removes that lag before inference.
        """
        from .autodiff import no_grad

        keys = [k for k in self.buffers if k.endswith((".running_mean", ".running_var"))]
        acc = {k: np.zeros(self.buffers[k].shape) for k in keys}
        n = 0
        mom, self.bn_momentum = self.bn_momentum, 0.0
        try:
            with no_grad():
                for images, batch_idx, pixels, s in batches:
                    self.train().forward(images, batch_idx, pixels, s, ablation)
                    for k in keys:
                        acc[k] += self.buffers[k]
                    n += 1
        finally:
            self.bn_momentum = mom
        if n:
            for k in keys:
                self.buffers[k] = (acc[k] / n).astype(self.buffers[k].dtype)
        return self.eval()

    def to_double(self) -> "RayOccupancyNet":
        for k, p in self.params.items():
            self.params[k] = Tensor(p.data.astype(np.float64), requires_grad=True, dtype=np.float64, name=k)
        self.buffers = {k: v.astype(np.float64) for k, v in self.buffers.items()}
        return self

    # building blocks --------------------------------------------------------

    def _p(self, name):
        return self.params[name]

    def conv(self, name, x, stride=1, pad=None):
        w = self._p(f"{name}.w")
        k = w.shape[2]
        return ops.conv2d(x, w, self._p(f"{name}.b"), stride=stride, pad=k // 2 if pad is None else pad)

    def fc(self, name, x, tag=None):
        return ops.fully_connected(x, self._p(f"{name}.w"), self._p(f"{name}.b"), tag=tag)

    def cbn(self, name, h: Tensor, cond: Tensor, rows: Optional[np.ndarray]) -> Tensor:
        """Batch-normalise ``h`` then apply scale/shift generated from ``cond``.

        ``cond`` has one row per image (gathered with ``rows``) or, when
        ``rows`` is None, one row per entry of ``h``.
        """
        rm, rv = f"{name}.running_mean", f"{name}.running_var"
        if self.training:
            mean, var = ops.mean_batch(h), ops.var_batch(h)
            mom = self.bn_momentum
            self.buffers[rm] = (mom * self.buffers[rm] + (1 - mom) * mean.data).astype(h.dtype)
            self.buffers[rv] = (mom * self.buffers[rv] + (1 - mom) * var.data).astype(h.dtype)
        else:
            mean = Tensor(self.buffers[rm], dtype=h.dtype)
            var = Tensor(self.buffers[rv], dtype=h.dtype)
        n = ops.normalize(h, mean, var, BN_EPS)
        gamma = self.fc(f"{name}.gamma", cond, tag="cbn")
        beta = self.fc(f"{name}.beta", cond, tag="cbn")
        if rows is not None:
            gamma, beta = ops.take_rows(gamma, rows), ops.take_rows(beta, rows)
        return ops.add(ops.mul(n, gamma), beta)

    # the three modules --------------------------------------------------------

    def encode(self, images) -> tuple[Tensor, Tensor]:
        """images: (B, H, W, 3) in [0, 1] -> (z: (B, D_global), C: (B, D_local, H/2, W/2))."""
        c = self.config
        arr = images.data if isinstance(images, Tensor) else np.asarray(images)
        if arr.ndim == 3:
            arr = arr[None]
        if arr.shape[1:] != (c.image_size, c.image_size, 3):
            raise TensorError(f"encode: expected images of shape (B, {c.image_size}, {c.image_size}, 3), "
                              f"got {arr.shape}")
        dtype = self.params["enc.stem.w"].dtype
        x = Tensor(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)) * 2.0 - 1.0, dtype=dtype)
        x = ops.relu(self.conv("enc.stem", x, stride=2))
        feats = [x]
        for si, stride in enumerate(c.stage_strides):
            for bi in range(c.blocks_per_stage):
                name = f"enc.s{si}.b{bi}"
                st = stride if bi == 0 else 1
                h = ops.relu(self.conv(f"{name}.conv1", x, stride=st))
                h = self.conv(f"{name}.conv2", h)
                short = self.conv(f"{name}.short", x, stride=st, pad=0) if f"{name}.short.w" in self.params else x
                x = ops.relu(ops.add(h, short))
            feats.append(x)
        z = self.fc("enc.global", ops.global_avg_pool(x))
        size = feats[0].shape[2:]
        ups = [feats[0]] + [ops.bilinear_upsample(f, size=size) for f in feats[1:-1]]
        local = self.conv("enc.local", ops.concat(ups, axis=1), pad=0)
        return z, local

    def sample_local(self, fmap: Tensor, batch_idx, pixels) -> Tensor:
        """Bilinear feature at image pixel positions (pixel-centre convention)."""
        pixels = np.asarray(pixels, dtype=np.float64)
        size = self.config.image_size
        if np.any(pixels < 0) or np.any(pixels > size):
            raise TensorError(f"sample_local: pixel positions outside the {size}x{size} image")
        return ops.bilinear_sample(fmap, batch_idx, pixels * (fmap.shape[3] / size))

    def normalized_pixels(self, pixels) -> np.ndarray:
        return np.asarray(pixels, dtype=np.float64) / self.config.image_size * 2.0 - 1.0

    def mix(self, p_norm, local: Tensor) -> Tensor:
        p = Tensor(p_norm, dtype=local.dtype)
        h = self.fc("mix.in", ops.concat([p, local], axis=1), tag="mixer")
        for bi in range(self.config.mixer_blocks):
            r = self.fc(f"mix.b{bi}.fc1", ops.relu(h), tag="mixer")
            r = self.fc(f"mix.b{bi}.fc2", ops.relu(r), tag="mixer")
            h = ops.add(h, r)
        return h

    def decoder_forward(self, prefix: str, h: Tensor, cond: Tensor, rows: Optional[np.ndarray]) -> Tensor:
        for bi in range(self.config.decoder_blocks):
            r = self.fc(f"{prefix}.b{bi}.fc1", ops.relu(self.cbn(f"{prefix}.b{bi}.cbn1", h, cond, rows)), tag="decoder")
            r = self.fc(f"{prefix}.b{bi}.fc2", ops.relu(self.cbn(f"{prefix}.b{bi}.cbn2", r, cond, rows)), tag="decoder")
            h = ops.add(h, r)
        h = ops.relu(self.cbn(f"{prefix}.final", h, cond, rows))
        self.decoder_forwards += h.shape[0]
        return self.fc(f"{prefix}.out", h, tag="decoder")

    def condition(self, z: Tensor, s, ablation: Ablation) -> Tensor:
        s = np.asarray(s, dtype=np.float64).reshape(-1, 1)
        if s.shape[0] != z.shape[0]:
            raise TensorError(f"condition: {s.shape[0]} scale values for {z.shape[0]} images")
        zt = z if ablation.use_global else ops.zeros_like(z)
        st = Tensor(s if ablation.use_scale else np.zeros_like(s), dtype=z.dtype)
        return ops.concat([zt, st], axis=1)

    def decode(self, y: Tensor, cond: Tensor, batch_idx) -> Tensor:
        return self.decoder_forward("dec", y, cond, np.asarray(batch_idx, dtype=np.int64))

    def forward_rays(self, z: Tensor, fmap: Tensor, batch_idx, pixels, s, ablation: Ablation | None = None) -> Tensor:
        """Mixer + decoder for rays given an already computed encoding."""
        ablation = ablation or Ablation()
        local = self.sample_local(fmap, batch_idx, pixels)
        if not ablation.use_local:
            local = ops.zeros_like(local)
        y = self.mix(self.normalized_pixels(pixels), local)
        return self.decode(y, self.condition(z, s, ablation), batch_idx)

    def forward(self, images, batch_idx, pixels, s, ablation: Ablation | None = None) -> Tensor:
        """Per-ray logits (T, M): one encode, then one decoder pass per ray."""
        z, fmap = self.encode(images)
        return self.forward_rays(z, fmap, batch_idx, pixels, s, ablation)

    # persistence -----------------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {k: p.data for k, p in self.params.items()}
        out.update({f"buffer:{k}": v for k, v in self.buffers.items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if k not in arrays:
                raise KeyError(f"checkpoint is missing parameter {k}")
            if arrays[k].shape != p.shape:
                raise ValueError(f"checkpoint parameter {k} has shape {arrays[k].shape}, expected {p.shape}")
            p.data = np.ascontiguousarray(arrays[k], dtype=p.dtype)
        for k in self.buffers:
            self.buffers[k] = np.array(arrays[f"buffer:{k}"], dtype=self.buffers[k].dtype)


def config_path(ckpt: Path) -> Path:
    ckpt = Path(ckpt)
    return ckpt.with_name(ckpt.name + ".json")


def save_checkpoint(net: RayOccupancyNet, path, meta: dict | None = None) -> None:
    path = Path(path)
    save_tensors(path, net.state_arrays())
    side = {"network": net.config.to_dict(), **(meta or {})}
    config_path(path).write_text(json.dumps(side, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[RayOccupancyNet, dict]:
    path = Path(path)
    arrays = load_tensors(path)
    meta = json.loads(config_path(path).read_text())
    net = RayOccupancyNet(NetworkConfig(**meta["network"]))
    net.load_state_arrays(arrays)
    net.eval()
    return net, meta


def network_gradcheck(config: NetworkConfig | None = None, seed: int = 0, max_coords: int = 2,
                      n_images: int = 2, rays_per_image: int = 4, eps: float = 1e-6,
                      select: str = "largest") -> dict:
    """Finite-difference check of every parameter tensor of a full network.

    Runs in double precision. CBN statistics are frozen: one training-mode pass
    stores the batch statistics as running statistics, then the check runs in
    inference mode so each loss evaluation is a fixed function of the weights.
    By default each tensor is probed at its largest-gradient coordinates.
    Returns {"max_rel_error", "worst_param", "coords"}.
    """
    from .autodiff import gradcheck_report, precision

    config = config or NetworkConfig.desk()
    rng = np.random.default_rng([seed, 99])
    with precision("double"):
        net = RayOccupancyNet(config, seed=rng).to_double()
        img = rng.random((n_images, config.image_size, config.image_size, 3))
        t = n_images * rays_per_image
        bidx = np.repeat(np.arange(n_images), rays_per_image)
        pix = rng.uniform(0.0, config.image_size, size=(t, 2))
        s = rng.uniform(0.5, 1.0, size=n_images)
        targets = (rng.random((t, config.m)) < 0.5).astype(np.float64)
        net.freeze_statistics(img, bidx, pix, s)

        def loss():
            return ops.bce_with_logits(net.forward(img, bidx, pix, s), targets)

        report = gradcheck_report(loss, dict(sorted(net.params.items())), eps=eps, max_coords=max_coords, seed=seed,
                                select=select)
    worst_name = max(report, key=report.get)
    coords = sum(min(p.size, max_coords) for p in net.params.values())
    return {"max_rel_error": report[worst_name], "worst_param": worst_name, "coords": coords}
