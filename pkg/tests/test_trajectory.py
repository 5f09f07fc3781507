import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from handtraj.hand import HandMesh
from handtraj.rig import NUM_VERTICES, default_rig
from handtraj.rotations import IDENTITY_ROT6D
from handtraj.trajectory import (ContactMap, GridBounds, InteractionTrajectory,
                                 VOXEL_RES, compute_grid_bounds,
                                 contact_centroid, contact_centroids,
                                 coordinate_grid, voxelize_contact_point,
                                 zero_heatmap)


def _traj(trans, label="grab"):
    t = len(trans)
    artic = np.tile(IDENTITY_ROT6D, (t, 15, 1))
    rot = np.tile(IDENTITY_ROT6D, (t, 1))
    contacts = np.zeros((t, NUM_VERTICES), dtype=np.uint8)
    return InteractionTrajectory(beta=np.zeros(10), articulation=artic,
                                 rot6d=rot, trans=np.asarray(trans),
                                 contacts=contacts, action_label=label,
                                 object_label="cup", scene_label="kitchen")


def _mesh():
    rig = default_rig()
    return HandMesh(vertices=rig.template.copy(), faces=rig.faces)


def test_contact_centroid_single_vertex():
    mesh = _mesh()
    mask = np.zeros(NUM_VERTICES, dtype=np.uint8)
    mask[123] = 1
    assert np.allclose(contact_centroid(mesh, ContactMap(mask=mask)),
                       mesh.vertices[123])


def test_contact_centroid_two_vertices_mean():
    mesh = _mesh()
    mask = np.zeros(NUM_VERTICES, dtype=np.uint8)
    mask[[5, 400]] = 1
    expected = 0.5 * (mesh.vertices[5] + mesh.vertices[400])
    assert np.allclose(contact_centroid(mesh, ContactMap(mask=mask)), expected)


def test_contact_centroid_empty_mask_is_none():
    assert contact_centroid(_mesh(),
                            ContactMap(mask=np.zeros(NUM_VERTICES))) is None


def test_contact_centroid_in_convex_hull():
    mesh = _mesh()
    rng = np.random.default_rng(0)
    mask = np.zeros(NUM_VERTICES, dtype=np.uint8)
    idx = rng.choice(NUM_VERTICES, size=20, replace=False)
    mask[idx] = 1
    c = contact_centroid(mesh, ContactMap(mask=mask))
    pts = mesh.vertices[idx]
    assert np.all(c >= pts.min(axis=0) - 1e-12)
    assert np.all(c <= pts.max(axis=0) + 1e-12)


def test_contact_centroids_nan_for_empty_steps():
    verts = np.random.default_rng(1).normal(size=(3, NUM_VERTICES, 3))
    contacts = np.zeros((3, NUM_VERTICES), dtype=np.uint8)
    contacts[1, :10] = 1
    out = contact_centroids(verts, contacts)
    assert np.isnan(out[0]).all() and np.isnan(out[2]).all()
    assert np.allclose(out[1], verts[1, :10].mean(axis=0))


def test_grid_bounds_exact_span():
    trans = np.array([[0.0, 0, 0], [1.0, 1, 1], [0.5, 0.2, 0.9]])
    b = compute_grid_bounds([_traj(trans)])
    assert np.allclose(b.min_xyz, 0.0) and np.allclose(b.max_xyz, 1.0)


def test_grid_bounds_union_monotone():
    rng = np.random.default_rng(2)
    a = [_traj(rng.normal(size=(4, 3)))]
    b = [_traj(rng.normal(size=(4, 3)))]
    ba, bb, bu = (compute_grid_bounds(s) for s in (a, b, a + b))
    assert np.allclose(bu.min_xyz, np.minimum(ba.min_xyz, bb.min_xyz))
    assert np.allclose(bu.max_xyz, np.maximum(ba.max_xyz, bb.max_xyz))
    # adding an interior sequence changes nothing
    mid = 0.5 * (bu.min_xyz + bu.max_xyz)
    inner = _traj(np.tile(mid, (4, 1)) + 1e-8 * rng.normal(size=(4, 3)))
    bu2 = compute_grid_bounds(a + b + [inner])
    assert np.allclose(bu2.min_xyz, bu.min_xyz)
    assert np.allclose(bu2.max_xyz, bu.max_xyz)


def test_grid_bounds_empty_rejected():
    with pytest.raises(ValueError):
        compute_grid_bounds([])


def test_grid_bounds_degenerate_axis_padded():
    b = compute_grid_bounds([_traj(np.zeros((3, 3)))])
    assert np.all(b.max_xyz > b.min_xyz)


def test_coordinate_grid_centers():
    b = GridBounds(min_xyz=np.zeros(3), max_xyz=np.full(3, 16.0))
    grid = coordinate_grid(b)
    assert np.allclose(grid[0, 0, 0], [0.5, 0.5, 0.5])
    assert np.allclose(grid[-1, -1, -1], b.max_xyz - b.pitch / 2)
    assert np.allclose(grid.reshape(-1, 3).mean(axis=0),
                       0.5 * (b.min_xyz + b.max_xyz))


def test_heatmap_peak_at_source_voxel():
    b = GridBounds(min_xyz=np.zeros(3), max_xyz=np.full(3, 16.0))
    grid = coordinate_grid(b)
    p = grid[0, 0, 0]
    h = voxelize_contact_point(p, b)
    assert np.unravel_index(np.argmax(h.values), h.values.shape) == (0, 0, 0)
    assert h.values[0, 0, 0] == pytest.approx(1.0)


def test_heatmap_shift_equivariance():
    b = GridBounds(min_xyz=np.zeros(3), max_xyz=np.full(3, 16.0))
    grid = coordinate_grid(b)
    h0 = voxelize_contact_point(grid[5, 8, 8], b).values
    h1 = voxelize_contact_point(grid[6, 8, 8], b).values
    assert np.allclose(h1[1:], h0[:-1], atol=1e-12)


def test_heatmap_symmetry_about_centered_source():
    b = GridBounds(min_xyz=np.zeros(3), max_xyz=np.full(3, 16.0))
    grid = coordinate_grid(b)
    h = voxelize_contact_point(grid[8, 8, 8], b).values
    assert h[7, 8, 8] == pytest.approx(h[9, 8, 8])
    assert h[8, 5, 8] == pytest.approx(h[8, 11, 8])


def test_heatmap_matches_gaussian_formula():
    rng = np.random.default_rng(3)
    b = GridBounds(min_xyz=np.array([-1.0, 0.0, 2.0]),
                   max_xyz=np.array([1.0, 3.0, 2.5]))
    p = rng.uniform(b.min_xyz, b.max_xyz)
    sigma = 1.7
    h = voxelize_contact_point(p, b, sigma_voxels=sigma).values
    centers = coordinate_grid(b)
    expected = np.exp(-0.5 * (((centers - p) / (sigma * b.pitch)) ** 2).sum(-1))
    assert np.allclose(h, expected, atol=1e-12)


def test_heatmap_out_of_bounds_clamps():
    b = GridBounds(min_xyz=np.zeros(3), max_xyz=np.ones(3))
    h = voxelize_contact_point(np.array([10.0, 10.0, 10.0]), b).values
    assert np.unravel_index(np.argmax(h), h.shape) == (15, 15, 15)


def test_heatmap_invalid_inputs():
    b = GridBounds(min_xyz=np.zeros(3), max_xyz=np.ones(3))
    with pytest.raises(ValueError):
        voxelize_contact_point(np.zeros(3), b, sigma_voxels=0.0)
    with pytest.raises(ValueError):
        voxelize_contact_point(np.array([np.nan, 0, 0]), b)
    with pytest.raises(ValueError):
        GridBounds(min_xyz=np.ones(3), max_xyz=np.zeros(3))


def test_zero_heatmap():
    b = GridBounds(min_xyz=np.zeros(3), max_xyz=np.ones(3))
    assert zero_heatmap(b).values.sum() == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_heatmap_argmax_is_source_voxel(seed):
    rng = np.random.default_rng(seed)
    b = GridBounds(min_xyz=np.array([-0.5, -0.5, -0.5]),
                   max_xyz=np.array([0.7, 0.9, 1.1]))
    p = rng.uniform(b.min_xyz, b.max_xyz)
    h = voxelize_contact_point(p, b).values
    voxel = tuple(np.minimum(((p - b.min_xyz) / b.pitch).astype(int),
                             VOXEL_RES - 1))
    assert np.unravel_index(np.argmax(h), h.shape) == voxel
