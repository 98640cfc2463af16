import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rayocc.dataset import (
    DatasetError, GenConfig, RaySamples, generate_dataset, load_dataset, read_ppm, read_rays, write_ppm, write_rays,
)
from rayocc.geometry import Camera
from rayocc.render import render_view
from rayocc.shapes import (
    Box, Cylinder, Difference, Intersection, MeshError, MeshSolid, Rigid, Scaled, Sphere, TriMesh, Union, box_mesh,
    icosphere, load_obj, occupancy_analytic, occupancy_mesh, save_obj, solid_from_dict,
)


def test_sphere_occupancy_trivial():
    s = Sphere(radius=1.0)
    assert occupancy_analytic(s, [[0, 0, 0], [2, 0, 0]]).tolist() == [1, 0]


def test_difference_against_brute_force():
    d = Difference(a=Sphere(radius=1.0), b=Box(half_extents=[0.5, 0.5, 0.5]))
    assert occupancy_analytic(d, [[0, 0, 0], [0, 0, 0.8]]).tolist() == [0, 1]
    x = np.random.default_rng(0).uniform(-1.2, 1.2, (5000, 3))
    brute = (np.linalg.norm(x, axis=1) < 1) & ~np.all(np.abs(x) < 0.5, axis=1)
    np.testing.assert_array_equal(occupancy_analytic(d, x), brute)


@pytest.mark.parametrize("op, rule", [(Union, np.logical_or), (Intersection, np.logical_and),
                                      (Difference, lambda a, b: a & ~b)])
def test_csg_operators_follow_set_rules(op, rule):
    a = Sphere(radius=0.6, center=[0.2, 0, 0])
    b = Cylinder(radius=0.3, half_height=0.8, axis=[0, 1, 0], transform=Rigid(np.eye(3), [-0.1, 0, 0.1]))
    x = np.random.default_rng(1).uniform(-1, 1, (4000, 3))
    got = occupancy_analytic(op(a=a, b=b), x).astype(bool)
    np.testing.assert_array_equal(got, rule(a.contains(x).astype(bool), b.contains(x).astype(bool)))


def test_rigid_transform_moves_the_solid():
    rot = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]])
    b = Box(half_extents=[0.5, 0.1, 0.1], transform=Rigid(rot, [1.0, 0, 0]))
    assert b.contains([[1.0, 0.4, 0.0], [1.4, 0.0, 0.0]]).tolist() == [1, 0]


def test_bad_primitives_rejected():
    with pytest.raises(ValueError):
        Sphere(radius=0.0)
    with pytest.raises(ValueError):
        Box(half_extents=[0.1, -0.1, 0.1])
    with pytest.raises(ValueError):
        Rigid(np.diag([1.0, 1.0, 2.0]))


def test_solid_dict_round_trip():
    s = Scaled(child=Difference(a=Union(a=Sphere(radius=0.4), b=Box(center=[0.2, 0, 0])),
                                b=Cylinder(radius=0.1, half_height=0.5, axis=[0, 0, 1])), factor=0.7,
               transform=Rigid(np.eye(3), [0.1, 0.2, 0.3]))
    x = np.random.default_rng(2).uniform(-1, 1, (2000, 3))
    np.testing.assert_array_equal(solid_from_dict(s.to_dict()).contains(x), s.contains(x))


def test_bounding_sphere_covers_solid():
    s = Union(a=Sphere(radius=0.3, center=[0.4, 0, 0]), b=Box(half_extents=[0.2, 0.3, 0.1], center=[-0.3, 0.1, 0]))
    c, r = s.bounding_sphere()
    x = np.random.default_rng(3).uniform(-1, 1, (20000, 3))
    inside = x[s.contains(x) > 0]
    assert np.all(np.linalg.norm(inside - c, axis=1) <= r + 1e-12)


# meshes --------------------------------------------------------------------------------


def test_icosphere_matches_analytic_sphere():
    mesh = icosphere(1.0, subdivisions=4)
    assert mesh.is_closed() and mesh.is_consistently_oriented()
    rng = np.random.default_rng(0)
    x = rng.uniform(-1.3, 1.3, (30000, 3))
    x = x[np.abs(np.linalg.norm(x, axis=1) - 1) > 0.02][:10000]
    assert len(x) == 10000
    np.testing.assert_array_equal(occupancy_mesh(mesh, x), occupancy_analytic(Sphere(radius=1.0), x))


def test_far_point_skips_casting():
    solid = MeshSolid(box_mesh())
    calls = []
    orig = solid._crossings
    solid._crossings = lambda *a: calls.append(1) or orig(*a)
    assert solid.contains([[10.0, 0, 0]]).tolist() == [0]
    assert not calls


def test_cube_centroid_inside():
    assert occupancy_mesh(box_mesh(center=(0.3, -0.2, 1.0)), [[0.3, -0.2, 1.0]]).tolist() == [1]


def test_queries_on_vertex_aligned_lines_are_robust():
    # points on the lattice of cube edges/vertices projections hit edges head-on
    g = np.linspace(-0.45, 0.45, 7)
    x = np.stack(np.meshgrid(g, g, g), -1).reshape(-1, 3)
    assert occupancy_mesh(box_mesh(), x).all()


def test_non_manifold_mesh_rejected_at_load():
    m = box_mesh()
    with pytest.raises(MeshError):
        MeshSolid(TriMesh(m.vertices, m.triangles[:-1]))


def test_bad_triangle_index_rejected():
    with pytest.raises(MeshError):
        TriMesh(np.zeros((3, 3)), [[0, 1, 3]])


def test_mesh_volume_and_obj_round_trip(tmp_path):
    m = box_mesh(half_extents=(0.5, 0.25, 1.0))
    assert m.volume() == pytest.approx(1.0)
    save_obj(m, tmp_path / "b.obj", comments=("hello",))
    back = load_obj(tmp_path / "b.obj")
    np.testing.assert_array_equal(back.triangles, m.triangles)
    np.testing.assert_allclose(back.vertices, m.vertices)
    assert (tmp_path / "b.obj").read_text().startswith("# hello\n")


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_box_mesh_occupancy_property(a, b, c):
    p = np.array([[a, b, c]]) - 0.5
    inside = occupancy_mesh(box_mesh(half_extents=(0.4, 0.4, 0.4)), p)[0]
    assert inside == int(np.all(np.abs(p) < 0.4))


# rendering -----------------------------------------------------------------------------


def test_empty_scene_is_white():
    cam = Camera.look_at((0, 0, -1.4), f=32.0, width=16, height=16)
    assert np.all(render_view(None, cam) == 1.0)


@pytest.mark.parametrize("d, r", [(1.4, 0.35), (2.0, 0.5)])
def test_sphere_silhouette_radius(d, r):
    w = 64
    cam = Camera.look_at((0, 0, -d), f=64.0, width=w, height=w)
    img = render_view(Sphere(radius=r), cam)
    mask = np.any(img < 1.0, axis=2)
    expect = 64.0 * r / np.sqrt(d * d - r * r)
    yy, xx = np.mgrid[0:w, 0:w] + 0.5
    rad = np.hypot(xx - w / 2, yy - w / 2)
    assert np.all(mask[rad < expect - 1])
    assert not np.any(mask[rad > expect + 1])


def test_rendering_deterministic():
    cam = Camera.look_at((0.3, 0.4, -1.3), f=40.0, width=24, height=24)
    s = Union(a=Sphere(radius=0.3), b=Box(half_extents=[0.2, 0.2, 0.2], center=[0.2, 0, 0]))
    assert render_view(s, cam).tobytes() == render_view(s, cam).tobytes()


@pytest.mark.parametrize("k", [0.7, 1.3])
def test_scaling_scene_and_camera_together_renders_the_same(k):
    s = Union(a=Sphere(radius=0.3, albedo=(0.9, 0.2, 0.2)), b=Box(half_extents=[0.2, 0.2, 0.2], center=[0.25, 0, 0]),
              transform=Rigid(np.eye(3), [0.05, -0.02, 0.0]))
    eye = np.array([0.3, 0.4, -1.3])
    a = render_view(s, Camera.look_at(eye, f=40.0, width=32, height=32))
    b = render_view(Scaled(child=s, factor=k), Camera.look_at(k * eye, f=40.0, width=32, height=32))
    # colours included: primitives are labelled in the scaled frame
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_mesh_and_solid_renders_agree_on_silhouette():
    cam = Camera.look_at((0, 0.3, -1.4), f=40.0, width=32, height=32)
    a = np.any(render_view(Sphere(radius=0.4), cam) < 1, axis=2)
    b = np.any(render_view(icosphere(0.4, 3), cam) < 1, axis=2)
    assert np.mean(a != b) < 0.02


# datasets ------------------------------------------------------------------------------


def test_ppm_and_rays_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (5, 7, 3)).astype(np.uint8)
    write_ppm(tmp_path / "a.ppm", img)
    np.testing.assert_array_equal(np.round(read_ppm(tmp_path / "a.ppm") * 255), img)
    rays = RaySamples(np.float32([[0.5, 1.5], [3.25, 2.0]]), np.uint8([[0, 1, 1], [0, 0, 0]]), 0.63, 2.16, 0.7)
    write_rays(tmp_path / "a.rayo", rays)
    back = read_rays(tmp_path / "a.rayo")
    np.testing.assert_array_equal(back.pixels, rays.pixels)
    np.testing.assert_array_equal(back.bits, rays.bits)
    assert back.s == pytest.approx(0.7)


def test_truncated_ray_file_rejected(tmp_path):
    rays = RaySamples(np.float32([[0.5, 1.5]]), np.uint8([[0, 1, 1]]), 0.63, 2.16, 0.7)
    write_rays(tmp_path / "a.rayo", rays)
    (tmp_path / "a.rayo").write_bytes((tmp_path / "a.rayo").read_bytes()[:-1])
    with pytest.raises(DatasetError, match="size"):
        read_rays(tmp_path / "a.rayo")


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    cfg = GenConfig(scenes=2, views=3, rays=300, samples=24, image_size=32, seed=5)
    root = tmp_path_factory.mktemp("ds")
    generate_dataset(cfg, root)
    return cfg, root, load_dataset(root)


def test_dataset_views_and_bits(small):
    cfg, _, ds = small
    assert len(ds.views) == 6
    for v in ds.views:
        assert v.rays.bits.shape == (300, 24)
        assert set(np.unique(v.rays.bits)) <= {0, 1}
        p = v.rays.pixels
        assert np.all(p >= 0) and np.all(p <= 32)
        assert v.image.shape == (32, 32, 3)


def test_ray_transitions_come_in_pairs(small):
    for v in small[2].views:
        flips = np.abs(np.diff(v.rays.bits.astype(int), axis=1)).sum(axis=1)
        assert np.all(flips % 2 == 0)
        # shape strictly inside the shell: first and last samples are empty
        assert not v.rays.bits[:, [0, -1]].any()


def test_silhouette_matches_occupied_rays(small):
    for v in small[2].views:
        mask = np.any(v.image < 1.0, axis=2)
        p = v.rays.pixels.astype(np.float64)
        hit = v.rays.bits.any(axis=1)
        # pixels at least 2 px from the silhouette boundary must agree
        from scipy.ndimage import binary_dilation, binary_erosion

        inner = binary_erosion(mask, iterations=2)
        outer = ~binary_dilation(mask, iterations=2)
        ij = np.floor(p).astype(int).clip(0, 31)
        rows, cols = ij[:, 1], ij[:, 0]
        assert np.all(hit[inner[rows, cols]])
        assert not np.any(hit[outer[rows, cols]])


def test_regeneration_is_byte_identical(small, tmp_path):
    cfg, root, _ = small
    generate_dataset(cfg, tmp_path)
    for f in sorted(root.iterdir()):
        assert (tmp_path / f.name).read_bytes() == f.read_bytes(), f.name


def test_threaded_generation_matches_serial(small, tmp_path):
    from dataclasses import replace

    cfg, root, _ = small
    generate_dataset(replace(cfg, threads=3), tmp_path)
    for f in sorted(root.iterdir()):
        assert (tmp_path / f.name).read_bytes() == f.read_bytes(), f.name


def test_shape_leaving_shell_names_view(tmp_path):
    with pytest.raises(DatasetError, match="scene 0 view 0"):
        generate_dataset(GenConfig(scenes=1, views=1, rays=4, samples=4, image_size=8, scene_radius=0.9), tmp_path)


def test_scale_with_distance_keeps_apparent_size(tmp_path):
    cfg = GenConfig(scenes=1, views=8, rays=8, samples=4, image_size=48, scene="sphere_box", scene_radius=0.27,
                    scale_with_distance=True, seed=1)
    ds = load_dataset(generate_dataset(cfg, tmp_path))
    areas = [np.mean(np.any(v.image < 1, axis=2)) for v in ds.views]
    ks = [v.object_scale for v in ds.views]
    assert max(ks) / min(ks) > 1.3
    # object scale tracks distance, so the silhouette does not shrink with it
    assert max(areas) / min(areas) < 1.6
    s = [v.s for v in ds.views]
    np.testing.assert_allclose(np.array(ks), np.array(s) / np.mean(cfg.dist_range) * cfg.f_normalized, rtol=1e-6)


def test_distance_levels_share_direction_and_image(tmp_path):
    cfg = GenConfig(scenes=1, views=2, distance_levels=3, rays=16, samples=8, image_size=32, scene="sphere_box",
                    scene_radius=0.27, dist_range=(1.0, 1.8), scale_with_distance=True, seed=2)
    ds = load_dataset(generate_dataset(cfg, tmp_path))
    assert [v.distance_level for v in ds.views] == [0, 1, 2, 0, 1, 2]
    np.testing.assert_allclose([v.camera.object_distance for v in ds.views[:3]], [1.0, 1.4, 1.8])
    for d in (0, 3):
        a, b, c = ds.views[d:d + 3]
        assert a.image.tobytes() == b.image.tobytes() == c.image.tobytes()
        assert a.s < b.s < c.s
        assert not np.array_equal(a.rays.pixels, b.rays.pixels)
    assert ds.views[0].image.tobytes() != ds.views[3].image.tobytes()


def test_negative_distance_levels_rejected(tmp_path):
    with pytest.raises(DatasetError):
        generate_dataset(GenConfig(scenes=1, views=1, distance_levels=-1, rays=4, samples=4, image_size=8), tmp_path)
