import numpy as np
import pytest

from handtraj.hand import forward_kinematics
from handtraj.rig import NUM_VERTICES, default_rig
from handtraj.synthetic import GeneratorConfig, generate_dataset
from handtraj.trajectory import ContactMap, contact_centroid
from handtraj.viz import (BASE_COLOR, CONTACT_COLOR, contact_colors,
                          export_trajectory, write_ply)


def _parse_ply(path):
    lines = path.read_text().splitlines()
    assert lines[0] == "ply" and lines[1] == "format ascii 1.0"
    n_verts = int(next(l for l in lines if l.startswith("element vertex"))
                  .split()[-1])
    n_faces = int(next(l for l in lines if l.startswith("element face"))
                  .split()[-1])
    body = lines[lines.index("end_header") + 1:]
    verts, colors = [], []
    for row in body[:n_verts]:
        vals = row.split()
        verts.append([float(x) for x in vals[:3]])
        colors.append([int(x) for x in vals[3:6]])
    faces = [[int(x) for x in row.split()[1:]] for row in body[n_verts:]]
    assert len(faces) == n_faces
    return np.array(verts), np.array(colors), np.array(faces)


@pytest.fixture(scope="module")
def traj():
    ds = generate_dataset(GeneratorConfig(num_sequences=6, horizon=3, seed=0))
    return next(t for t in ds.trajectories if t.contacts[0].sum() > 0)


def test_write_ply_round_trip(tmp_path):
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    faces = np.array([[0, 1, 2]])
    colors = np.array([[255, 0, 0], [0, 255, 0], [0, 0, 255]])
    path = tmp_path / "tri.ply"
    write_ply(path, verts, faces, colors)
    v, c, f = _parse_ply(path)
    assert np.allclose(v, verts)
    assert np.array_equal(c, colors)
    assert np.array_equal(f, faces)
    with pytest.raises(ValueError):
        write_ply(path, verts, faces, colors[:2])


def test_contact_colors():
    mask = np.zeros(5, dtype=np.uint8)
    mask[2] = 1
    colors = contact_colors(mask)
    assert tuple(colors[2]) == CONTACT_COLOR
    assert tuple(colors[0]) == BASE_COLOR


def test_export_writes_both_views_and_marker(tmp_path, traj):
    written = export_trajectory(tmp_path, traj)
    names = {p.name for p in written}
    for t in range(traj.horizon):
        assert f"frame_{t:03d}_cam.ply" in names
        assert f"frame_{t:03d}_alt.ply" in names
    assert "contact_point.ply" in names
    assert len(written) == 2 * traj.horizon + 1


def test_exported_mesh_matches_kinematics(tmp_path, traj):
    rig = default_rig()
    export_trajectory(tmp_path, traj, rig=rig)
    verts, colors, faces = _parse_ply(tmp_path / "frame_000_cam.ply")
    assert verts.shape == (NUM_VERTICES, 3)
    assert faces.shape == rig.faces.shape
    mesh, _ = forward_kinematics(traj.shape_params(), traj.pose_at(0), rig)
    assert np.allclose(verts, mesh.vertices, atol=1e-5)
    contacted = traj.contacts[0] > 0
    assert np.all(colors[contacted] == np.array(CONTACT_COLOR))
    assert np.all(colors[~contacted] == np.array(BASE_COLOR))


def test_alternate_view_is_rotation(tmp_path, traj):
    export_trajectory(tmp_path, traj, alt_view_deg=90.0)
    cam, _, _ = _parse_ply(tmp_path / "frame_000_cam.ply")
    alt, _, _ = _parse_ply(tmp_path / "frame_000_alt.ply")
    assert not np.allclose(cam, alt)
    # pairwise distances to the origin preserved (rigid rotation)
    assert np.allclose(np.linalg.norm(cam, axis=1),
                       np.linalg.norm(alt, axis=1), atol=1e-4)


def test_marker_centered_on_contact_point(tmp_path, traj):
    export_trajectory(tmp_path, traj)
    mverts, _, _ = _parse_ply(tmp_path / "contact_point.ply")
    mesh, _ = forward_kinematics(traj.shape_params(), traj.pose_at(0),
                                 default_rig())
    point = contact_centroid(mesh, ContactMap(mask=traj.contacts[0]))
    assert np.allclose(mverts.mean(axis=0), point, atol=1e-5)


def test_no_marker_without_initial_contact(tmp_path, traj):
    import copy
    quiet = copy.deepcopy(traj)
    quiet.contacts[0] = 0
    written = export_trajectory(tmp_path / "quiet", quiet)
    assert all(p.name != "contact_point.ply" for p in written)
