import numpy as np
import pytest

from assembloid.geometry import Part, Scene
from assembloid.io import PlyError, load_scene, read_ply, save_scene, write_ply

from conftest import random_pose


@pytest.mark.parametrize("binary", [True, False])
def test_ply_round_trip_is_lossless(tmp_path, rng, binary):
    c = rng.standard_normal((57, 3)) * 1e3
    write_ply(tmp_path / "c.ply", c, binary=binary)
    np.testing.assert_array_equal(read_ply(tmp_path / "c.ply"), c)


def test_read_foreign_float_ply_with_extra_properties(tmp_path):
    rec = np.array([(1.5, 2.0, -3.0, 7), (0.25, 0.5, 0.75, 9)],
                   dtype=[("x", "<f4"), ("nx", "<f4"), ("y", "<f4"), ("red", "u1")])
    header = (b"ply\nformat binary_little_endian 1.0\ncomment made elsewhere\nelement vertex 2\n"
              b"property float x\nproperty float nx\nproperty float y\nproperty uchar red\n")
    # z after the other properties, as a separate double column
    rec2 = np.zeros(2, dtype=rec.dtype.descr + [("z", "<f8")])
    for name in rec.dtype.names:
        rec2[name] = rec[name]
    rec2["z"] = [4.0, 5.0]
    (tmp_path / "f.ply").write_bytes(header + b"property double z\nend_header\n" + rec2.tobytes())
    np.testing.assert_array_equal(read_ply(tmp_path / "f.ply"), [[1.5, -3.0, 4.0], [0.25, 0.75, 5.0]])


def test_read_ply_rejects_garbage(tmp_path):
    (tmp_path / "x.ply").write_bytes(b"not a ply")
    with pytest.raises(PlyError):
        read_ply(tmp_path / "x.ply")
    (tmp_path / "y.ply").write_bytes(b"ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(PlyError):
        read_ply(tmp_path / "y.ply")


def test_scene_directory_round_trip(tmp_path, rng):
    parts = tuple(Part(k, rng.standard_normal((8, 3)), random_pose(rng)) for k in range(3))
    scene = Scene(parts, "table")
    save_scene(tmp_path / "s", scene, "scene_0007", seed=3)
    back, manifest = load_scene(tmp_path / "s")
    assert manifest["scene_id"] == "scene_0007" and manifest["seed"] == 3
    assert back.label == "table"
    for a, b in zip(scene.parts, back.parts):
        assert a.id == b.id
        np.testing.assert_array_equal(a.canonical, b.canonical)
        np.testing.assert_array_equal(a.pose.quat, b.pose.quat)
        np.testing.assert_array_equal(a.pose.trans, b.pose.trans)
