"""Volumetric IoU, Chamfer-L1 and normal consistency between shapes.

Shapes are triangle meshes or analytic solids. Occupancy comes from
``occupancy_mesh`` / ``Solid.contains``; surface samples are area weighted.
Nearest neighbours use a k-d tree, or exact brute force for small sets.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .mcubes import marching_cubes
from .geometry import regular_grid_points
from .seeding import stream
from .shapes import MeshSolid, Solid, TriMesh

log = logging.getLogger(__name__)

BRUTE_FORCE_BELOW = 5000
BBOX_PAD = 0.05


class MetricError(ValueError):
    pass


def _occupancy_fn(shape):
    if isinstance(shape, TriMesh):
        if shape.is_empty():
            return lambda x: np.zeros(len(x), dtype=bool)
        solid = MeshSolid(shape)  # raises on non-closed input
        return lambda x: solid.contains(x).astype(bool)
    if isinstance(shape, Solid):
        return lambda x: shape.contains(x).astype(bool)
    raise MetricError(f"unsupported shape type {type(shape).__name__}")


def _bounds(shape):
    if isinstance(shape, TriMesh):
        return None if shape.is_empty() else shape.bounds()
    return shape.bounds()


def sample_box(a, b, pad: float = BBOX_PAD) -> np.ndarray | None:
    """Union bounding box of two shapes grown by ``pad`` of its extent on every side."""
    boxes = [x for x in (_bounds(a), _bounds(b)) if x is not None]
    if not boxes:
        return None
    lo = np.min([bx[0] for bx in boxes], axis=0)
    hi = np.max([bx[1] for bx in boxes], axis=0)
    ext = np.maximum(hi - lo, 1e-9)
    return np.stack([lo - pad * ext, hi + pad * ext])


def volumetric_iou(a, b, n_points: int = 100_000, seed: int = 0) -> float:
    """Monte-Carlo IoU over uniform points in the padded union bounding box.

    Two empty shapes have IoU 1 by convention.
    """
    if n_points < 1:
        raise MetricError(f"n_points must be >= 1, got {n_points}")
    occ_a, occ_b = _occupancy_fn(a), _occupancy_fn(b)
    box = sample_box(a, b)
    if box is None:
        return 1.0
    pts = stream(seed, "eval", 1).uniform(box[0], box[1], size=(n_points, 3))
    ia, ib = occ_a(pts), occ_b(pts)
    union = np.count_nonzero(ia | ib)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(ia & ib) / union)


def nearest_distances(query: np.ndarray, ref: np.ndarray, brute: bool | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Euclidean distance from each query point to its nearest ``ref`` point, and that point's index."""
    query = np.asarray(query, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if brute is None:
        brute = len(ref) < BRUTE_FORCE_BELOW
    if not brute:
        d, i = cKDTree(ref).query(query, k=1)
        return d, i
    d = np.empty(len(query))
    idx = np.empty(len(query), dtype=np.int64)
    rr = np.einsum("ij,ij->i", ref, ref)
    step = max(1, 2_000_000 // max(len(ref), 1))
    for lo in range(0, len(query), step):
        q = query[lo:lo + step]
        d2 = np.einsum("ij,ij->i", q, q)[:, None] - 2.0 * q @ ref.T + rr[None]
        j = np.argmin(d2, axis=1)
        idx[lo:lo + step] = j
        d[lo:lo + step] = np.linalg.norm(q - ref[j], axis=1)
    return d, idx


def _surface_samples(mesh: TriMesh, n: int, seed: int):
    # both meshes draw from the same stream: identical meshes give identical samples
    return mesh.sample_surface(n, stream(seed, "eval", 0))


def _diag(mesh: TriMesh | None, other: TriMesh) -> float:
    ref = other if not other.is_empty() else mesh
    if ref is None or ref.is_empty():
        return 0.0
    lo, hi = ref.bounds()
    return float(np.linalg.norm(hi - lo))


def chamfer_l1(a: TriMesh, b: TriMesh, n_surface: int = 30_000, seed: int = 0) -> float:
    """Mean of accuracy and completeness, each a mean Euclidean nearest distance.

    ``b`` is treated as ground truth: if either mesh is empty the result is
    the diagonal of the non-empty one's bounding box (preferring ``b``).
    """
    if a.is_empty() or b.is_empty():
        pen = _diag(a, b)
        log.warning("chamfer_l1: empty mesh, returning bounding-box diagonal %.6f", pen)
        return pen
    pa, _ = _surface_samples(a, n_surface, seed)
    pb, _ = _surface_samples(b, n_surface, seed)
    return float(0.5 * (nearest_distances(pa, pb)[0].mean() + nearest_distances(pb, pa)[0].mean()))


def normal_consistency(a: TriMesh, b: TriMesh, n_surface: int = 30_000, seed: int = 0) -> float:
    """Mean |n . n'| against the nearest sample on the other mesh, averaged over both directions."""
    if a.is_empty() or b.is_empty():
        log.warning("normal_consistency: empty mesh, returning 0")
        return 0.0
    pa, na = _surface_samples(a, n_surface, seed)
    pb, nb = _surface_samples(b, n_surface, seed)
    _, ia = nearest_distances(pa, pb)
    _, ib = nearest_distances(pb, pa)
    ab = np.abs(np.einsum("ij,ij->i", na, nb[ia])).mean()
    ba = np.abs(np.einsum("ij,ij->i", nb, na[ib])).mean()
    return float(np.clip(0.5 * (ab + ba), 0.0, 1.0))


def solid_surface(solid: Solid, n: int = 128) -> TriMesh:
    """Reference surface of an analytic solid from its signed distance."""
    lo, hi = solid.bounds()
    pad = 0.02 * (hi - lo)
    box = np.stack([lo - pad, hi + pad])
    vals = -solid.sdf(regular_grid_points(n, box).reshape(-1, 3)).reshape(n, n, n)
    return marching_cubes(vals, 0.0, box)


@dataclass
class EvalReport:
    iou: float
    chamfer_l1: float
    normal_consistency: float
    n_iou: int
    n_surface: int
    seed: int
    degenerate_faces: int = 0

    def __post_init__(self):
        for k in ("iou", "chamfer_l1", "normal_consistency"):
            if not np.isfinite(getattr(self, k)):
                raise MetricError(f"{k} is not finite")

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(pred: TriMesh, gt, n_iou: int = 100_000, n_surface: int = 30_000, seed: int = 0,
             gt_surface_res: int = 128) -> EvalReport:
    """All three scores; an analytic ``gt`` is meshed for the surface metrics."""
    gt_mesh = gt if isinstance(gt, TriMesh) else solid_surface(gt, gt_surface_res)
    return EvalReport(iou=volumetric_iou(pred, gt, n_iou, seed),
                      chamfer_l1=chamfer_l1(pred, gt_mesh, n_surface, seed),
                      normal_consistency=normal_consistency(pred, gt_mesh, n_surface, seed),
                      n_iou=n_iou, n_surface=n_surface, seed=seed,
                      degenerate_faces=pred.degenerate_faces() if not pred.is_empty() else 0)
