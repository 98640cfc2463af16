from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def gradcheck_report(f: Callable[[], Tensor], params: dict[str, Tensor], eps: float = 1e-6,
                     max_coords: int | None = None, seed: int = 0, select: str = "random") -> dict[str, float]:
    """Per-parameter max relative error between analytic and central-difference gradients.

    ``f`` recomputes a scalar from the current values of ``params``. With
    ``max_coords`` only that many randomly chosen coordinates per parameter
    are probed. The relative error uses a 1e-8 denominator floor.

    ``select="largest"`` probes the coordinates with the largest analytic
    gradient magnitude instead of random ones. Central differences carry a
    round-off floor near 1e-16 |f| / eps, so relative error is only resolved
    where the gradient sits well above it.
    """
    if select not in ("random", "largest"):
        raise ValueError(f"select must be 'random' or 'largest', got {select!r}")
    params = {k: p for k, p in params.items() if p.size > 0}
    if not params:
        return {}
    for p in params.values():
        p.grad = None
    backward(f())
    rng = np.random.default_rng(seed)
    out = {}
    with no_grad():
        for name, p in params.items():
            ga = np.zeros(p.size) if p.grad is None else p.grad.reshape(-1).copy()
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                if select == "largest":
                    idx = np.argsort(-np.abs(ga), kind="stable")[:max_coords]
                else:
                    idx = rng.choice(flat.size, size=max_coords, replace=False)
            worst = 0.0
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                fp = f().item()
                flat[i] = orig - eps
                fm = f().item()
                flat[i] = orig
                num = (fp - fm) / (2 * eps)
                a = float(ga[i])
                worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-8))
            out[name] = worst
    return out


def gradcheck(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6,
              max_coords: int | None = None, seed: int = 0) -> float:
    """Max relative error over all ``params``; see :func:`gradcheck_report`."""
    rep = gradcheck_report(f, {str(i): p for i, p in enumerate(params)}, eps, max_coords, seed)
    return max(rep.values(), default=0.0)


def _op_cases(rng: np.random.Generator):
    """One random instance per op kind: (kind, params, loss closure)."""
    from . import ops

    def leaf(*shape, positive=False):
        a = rng.standard_normal(shape)
        if positive:
            a = np.abs(a) + 0.5
        return Tensor(a, requires_grad=True)

    proj: dict = {}

    def weighted(y: Tensor) -> Tensor:
        # fixed random projection per output shape so every coordinate matters
        if y.shape not in proj:
            proj[y.shape] = Tensor(rng.standard_normal(y.shape))
        return ops.sum_all(ops.mul(y, proj[y.shape]))

    b, c = int(rng.integers(2, 6)), int(rng.integers(1, 5))
    n, h, w = int(rng.integers(1, 3)), int(rng.integers(3, 7)), int(rng.integers(3, 7))

    a1, a2 = leaf(b, c), leaf(b, c)
    yield "add", [a1, a2], lambda: weighted(ops.add(a1, a2))
    s1, s2 = leaf(b, c), leaf(b, c)
    yield "sub", [s1, s2], lambda: weighted(ops.sub(s1, s2))
    m1, m2 = leaf(b, c), leaf(b, c)
    yield "mul", [m1, m2], lambda: weighted(ops.mul(ops.add(ops.mul(m1, m2), 0.5), -1.5))
    k = int(rng.integers(1, 5))
    x1, x2, x3 = leaf(b, k), leaf(k, c), leaf(c, 3)
    yield "matmul", [x1, x2, x3], lambda: weighted(ops.matmul(ops.matmul(x1, x2), x3))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    cx, cw, cb = leaf(n, c, h, w), leaf(2, c, 3, 3), leaf(2)
    yield "conv2d", [cx, cw, cb], lambda: weighted(ops.conv2d(cx, cw, cb, stride=stride, pad=pad))
    # keep relu inputs away from the kink
    r = rng.standard_normal((b, c))
    r = np.where(np.abs(r) < 0.05, 0.1, r)
    rx = Tensor(r, requires_grad=True)
    yield "relu", [rx], lambda: weighted(ops.relu(rx))
    sx = leaf(b, c)
    yield "sigmoid", [sx], lambda: weighted(ops.sigmoid(sx))
    tx = leaf(b, c)
    yield "tanh", [tx], lambda: weighted(ops.tanh(tx))
    q1, q2 = leaf(b, c), leaf(b, 2)
    yield "concat", [q1, q2], lambda: weighted(ops.concat([q1, q2], axis=1))
    ux = leaf(n, c, h, w)
    align = bool(rng.integers(0, 2))
    yield "bilinear_upsample", [ux], lambda: weighted(ops.bilinear_upsample(ux, factor=2, align_corners=align))
    fm = leaf(n, c, h, w)
    pts = rng.uniform(0, 1, (7, 2)) * [w, h]
    bidx = rng.integers(0, n, 7)
    yield "bilinear_sample", [fm], lambda: weighted(ops.bilinear_sample(fm, bidx, pts))
    mb = leaf(b, c)
    yield "mean_batch", [mb], lambda: weighted(ops.mean_batch(mb))
    vb = leaf(b, c)
    yield "var_batch", [vb], lambda: weighted(ops.var_batch(vb))
    nx = leaf(b, c)
    yield "normalize", [nx], lambda: weighted(ops.normalize(nx, ops.mean_batch(nx), ops.var_batch(nx)))
    ax, asc, ash = leaf(n, c, h, w), leaf(c), leaf(c)
    yield "affine", [ax, asc, ash], lambda: weighted(ops.affine(ax, asc, ash))
    fx = leaf(n, c, h, w)
    yield "flatten", [fx], lambda: weighted(ops.flatten(fx))
    rsx = leaf(b, c, 2)
    yield "reshape", [rsx], lambda: weighted(ops.reshape(rsx, (2, b * c)))
    smx = leaf(b, c)
    yield "sum_all", [smx], lambda: ops.sum_all(ops.mul(smx, smx))
    mmx = leaf(b, c)
    yield "mean_all", [mmx], lambda: ops.mean_all(ops.mul(mmx, mmx))
    gx = leaf(n, c, h, w)
    yield "global_avg_pool", [gx], lambda: weighted(ops.global_avg_pool(gx))
    fcx, fcw, fcb = leaf(b, k), leaf(k, c), leaf(c)
    yield "fully_connected", [fcx, fcw, fcb], lambda: weighted(ops.fully_connected(fcx, fcw, fcb))
    trx = leaf(b, c)
    tidx = rng.integers(0, b, 2 * b)
    yield "take_rows", [trx], lambda: weighted(ops.take_rows(trx, tidx))
    lx = leaf(b, c)
    tgt = rng.integers(0, 2, (b, c))
    yield "bce_with_logits", [lx], lambda: ops.bce_with_logits(lx, tgt)


OP_KINDS = (
    "add", "sub", "mul", "matmul", "conv2d", "relu", "sigmoid", "tanh", "concat", "bilinear_upsample",
    "bilinear_sample", "mean_batch", "var_batch", "normalize", "affine", "flatten", "global_avg_pool",
    "fully_connected", "take_rows", "bce_with_logits", "reshape", "sum_all", "mean_all",
)


def op_gradcheck_suite(seeds=range(10), eps: float = 1e-6) -> dict[str, float]:
    """Worst relative gradient error per op kind over random shapes, double precision."""
    from .tensor import precision

    worst = {k: 0.0 for k in OP_KINDS}
    with precision("double"):
        for seed in seeds:
            rng = np.random.default_rng(seed)
            for kind, params, fn in _op_cases(rng):
                worst[kind] = max(worst[kind], gradcheck(fn, params, eps=eps, seed=seed))
    return worst
