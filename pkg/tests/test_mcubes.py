import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial import cKDTree

from rayocc.geometry import regular_grid_points
from rayocc.mcubes import marching_cubes

BOX = np.array([[-0.75] * 3, [0.75] * 3])


def sphere_field(n, r=0.5, tau=None, bounds=BOX):
    d = np.linalg.norm(regular_grid_points(n, bounds), axis=-1) - r
    return (d < 0).astype(float) if tau is None else 1 / (1 + np.exp(d / tau))


def hausdorff_to_sphere(mesh, r):
    pts, _ = mesh.sample_surface(100_000, np.random.default_rng(0))
    pts = np.concatenate([pts, mesh.vertices])
    return float(np.abs(np.linalg.norm(pts, axis=1) - r).max())


@pytest.mark.parametrize("fill", [0.0, 1.0])
def test_constant_field_gives_empty_mesh(fill):
    m = marching_cubes(np.full((8, 8, 8), fill), 0.2, BOX, pad=False)
    assert m.n_triangles == 0


def test_all_zero_padded_is_empty():
    assert marching_cubes(np.zeros((5, 6, 7)), 0.2, BOX).is_empty()


def test_hard_sphere_volume_and_watertight():
    m = marching_cubes(sphere_field(64), 0.5, BOX)
    assert m.volume() == pytest.approx(4 / 3 * np.pi * 0.5 ** 3, rel=0.02)
    assert m.is_closed() and m.is_consistently_oriented()


def test_hard_sphere_at_reconstruction_threshold_is_closed_and_biased_outward():
    m = marching_cubes(sphere_field(64), 0.2, BOX)
    assert m.is_closed()
    # vertices move towards the empty node, so a 0.2 level inflates a hard field
    assert m.volume() > 4 / 3 * np.pi * 0.5 ** 3


def test_full_grid_closes_through_padding():
    m = marching_cubes(np.ones((4, 4, 4)), 0.5, np.array([[0, 0, 0], [1, 1, 1.0]]))
    assert m.is_closed()
    # padding puts the surface half a cell outside the bounds
    np.testing.assert_allclose(m.bounds(), [[-1 / 6] * 3, [7 / 6] * 3], atol=1e-12)
    assert 1.0 < m.volume() < (4 / 3) ** 3


def test_matches_skimage_vertices_and_volume():
    measure = pytest.importorskip("skimage.measure")
    n = 40
    f = sphere_field(n, r=0.47, tau=0.05)
    ours = marching_cubes(f, 0.5, BOX, pad=False)
    spacing = (BOX[1] - BOX[0]) / (n - 1)
    verts, faces, _, _ = measure.marching_cubes(f, 0.5, spacing=tuple(spacing))
    verts = verts + BOX[0]
    d1, _ = cKDTree(verts).query(ours.vertices)
    d2, _ = cKDTree(ours.vertices).query(verts)
    # skimage interpolates in float32
    assert max(d1.max(), d2.max()) < 1e-6
    c = verts[faces]
    ref = abs(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6)
    assert ours.volume() == pytest.approx(ref, rel=1e-6)


def test_hard_field_hausdorff_halves_with_resolution():
    e = [hausdorff_to_sphere(marching_cubes(sphere_field(n, r=0.4321), 0.5, BOX), 0.4321) for n in (32, 64, 128)]
    for a, b in zip(e, e[1:]):
        assert 1.6 <= a / b <= 2.6


def test_smooth_field_converges_at_second_order():
    e = [hausdorff_to_sphere(marching_cubes(sphere_field(n, tau=0.05), 0.5, BOX), 0.5) for n in (16, 32, 64)]
    for a, b in zip(e, e[1:]):
        assert 3.2 <= a / b <= 5.0


@pytest.mark.parametrize("q", [0.3, 0.55])
def test_box_fraction_volume_converges(q):
    bounds = np.array([[0, 0, 0], [2.0, 1.0, 1.0]])
    errs = []
    for n in (32, 64):
        x = regular_grid_points(n, bounds)[..., 0]
        m = marching_cubes((x < q * 2.0).astype(float), 0.5, bounds)
        errs.append(abs(m.volume() - q * 2.0))
    assert errs[1] < errs[0]
    assert errs[1] < 0.05 * q * 2.0


def test_raising_threshold_never_grows_volume():
    rng = np.random.default_rng(4)
    f = sphere_field(32, tau=0.08) + 0.05 * rng.standard_normal((32, 32, 32))
    f[[0, -1]] = 0
    f[:, [0, -1]] = 0
    f[:, :, [0, -1]] = 0
    vols = [marching_cubes(f, t, BOX).volume() for t in (0.1, 0.2, 0.35, 0.5, 0.8, 0.95)]
    tol = 1e-6 * np.prod(BOX[1] - BOX[0])
    assert all(b <= a + tol for a, b in zip(vols, vols[1:]))


def test_values_on_threshold_are_nudged():
    f = np.zeros((6, 6, 6))
    f[2:4, 2:4, 2:4] = 1.0
    f[1, 2:4, 2:4] = 0.2  # exactly on the level
    m = marching_cubes(f, 0.2, BOX)
    assert m.is_closed()
    # nudged vertices sit 1e-12 off the node, so faces shrink but keep positive area
    assert m.degenerate_faces() == 0


def test_rejects_flat_grid():
    with pytest.raises(ValueError):
        marching_cubes(np.zeros((8, 8)), 0.5, BOX)
    with pytest.raises(ValueError):
        marching_cubes(np.zeros((1, 8, 8)), 0.5, BOX)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (6, 5, 7), elements=st.floats(0, 1)), st.floats(0.05, 0.95))
def test_random_fields_give_closed_oriented_meshes(values, threshold):
    m = marching_cubes(values, threshold, BOX)
    assert m.is_closed()
    if not m.is_empty():
        assert m.is_consistently_oriented()
        assert m.volume() > -1e-12
