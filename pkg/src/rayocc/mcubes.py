"""Table-driven marching cubes over a regular scalar grid."""

from __future__ import annotations

import numpy as np

from .mc_tables import CORNER_OFFSETS, EDGE_CORNERS, TRI_TABLE
from .shapes import TriMesh

_TABLE = np.full((256, 15), -1, dtype=np.int64)
for _case, _tris in enumerate(TRI_TABLE):
    _TABLE[_case, :len(_tris)] = _tris
_NTRI = np.array([len(t) // 3 for t in TRI_TABLE], dtype=np.int64)
_OFF = np.array(CORNER_OFFSETS, dtype=np.int64)
# each local edge as (start corner offset, axis)
_EDGE_START = np.array([np.minimum(_OFF[a], _OFF[b]) for a, b in EDGE_CORNERS])
_EDGE_AXIS = np.array([int(np.argmax(np.abs(_OFF[a] - _OFF[b]))) for a, b in EDGE_CORNERS])

NUDGE = 1e-12


def marching_cubes(values: np.ndarray, threshold: float, bounds, pad: bool = True) -> TriMesh:
    """Extract the ``values == threshold`` isosurface as a triangle mesh.

    ``values`` is (Nx, Ny, Nz) sampled on the inclusive lattice spanning
    ``bounds = (lo, hi)``. Cells with all corners on one side produce nothing.
    Normals point from the ``values > threshold`` region outward. With ``pad``
    the grid is surrounded by one empty layer so the result is closed.
    An all-empty or all-full field yields an empty mesh.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 3 or min(v.shape) < 2:
        raise ValueError(f"marching_cubes needs a 3D grid with >= 2 samples per axis, got {v.shape}")
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    spacing = (hi - lo) / (np.array(v.shape) - 1)
    f = v - threshold
    if pad:
        f = np.pad(f, 1, constant_values=-threshold if threshold > 0 else -1.0)
        lo = lo - spacing
    f = np.where(np.abs(f) < NUDGE, NUDGE, f)
    inside = f > 0
    nx, ny, nz = f.shape
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for bit, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        case |= inside[dx:nx - 1 + dx, dy:ny - 1 + dy, dz:nz - 1 + dz].astype(np.int64) << bit
    cells = np.flatnonzero((case > 0) & (case < 255))
    if not len(cells):
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    cc = case.reshape(-1)[cells]
    ntri = _NTRI[cc]
    cell_rep = np.repeat(cells, ntri)
    case_rep = np.repeat(cc, ntri)
    k = np.arange(ntri.sum()) - np.repeat(np.cumsum(ntri) - ntri, ntri)
    local = _TABLE[case_rep[:, None], 3 * k[:, None] + np.arange(3)]  # (T, 3) local edge ids
    ci, cj, ck = np.unravel_index(cell_rep, case.shape)
    base = np.stack([ci, cj, ck], axis=1)[:, None, :]
    start = base + _EDGE_START[local]  # (T, 3, 3)
    axis = _EDGE_AXIS[local]
    lin = np.ravel_multi_index((start[..., 0], start[..., 1], start[..., 2]), f.shape)
    key = lin * 3 + axis
    uniq, inv = np.unique(key.reshape(-1), return_inverse=True)
    s_lin, s_axis = uniq // 3, uniq % 3
    s = np.stack(np.unravel_index(s_lin, f.shape), axis=1)
    e = s.copy()
    e[np.arange(len(e)), s_axis] += 1
    f0 = f[s[:, 0], s[:, 1], s[:, 2]]
    f1 = f[e[:, 0], e[:, 1], e[:, 2]]
    t = f0 / (f0 - f1)
    pos = s.astype(np.float64)
    pos[np.arange(len(pos)), s_axis] += t
    verts = lo + pos * spacing
    # table winding faces the inside corners; flip for outward normals
    tris = inv.reshape(-1, 3)[:, ::-1]
    return TriMesh(verts, np.ascontiguousarray(tris))
