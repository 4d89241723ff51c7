import numpy as np
import pytest
from plyfile import PlyData, PlyElement

from engine.exceptions import CameraFileError, PoseError, SceneFormatError
from engine.scene import validate_camera, validate_scene
from engine.scene_io import (PLY_PROPERTIES, CameraSetFile, SyntheticSceneSpec, generate_synthetic, look_at,
                             read_cameras, read_ply, write_cameras, write_ply)
from engine.rasterizer import project


def as_float32(array):
    return array.astype(np.float32).astype(np.float64)


def test_read_one_gaussian(fixtures_dir):
    scene = read_ply(fixtures_dir / "one_gaussian.ply")
    assert scene.count == 1
    assert scene.positions[0].tolist() == [0.5, -0.5, 0.25]
    assert scene.sh_dc[0].tolist() == [0.5, 0.25, -0.5]
    assert np.all(scene.sh_rest == 0.125)
    assert scene.opacity_logits[0, 0] == 0.0
    assert scene.log_scales[0].tolist() == [-2.0, -1.0, -2.0]
    assert scene.rotation_params[0].tolist() == [1.0, 0.0, 0.0, 0.0]


def test_read_empty(fixtures_dir):
    scene = read_ply(fixtures_dir / "empty.ply")
    assert scene.count == 0
    assert validate_scene(scene) == []


def test_write_read_round_trip(small_scene, tmp_path):
    scene, _ = small_scene
    path = tmp_path / "scene.ply"
    write_ply(scene, path)
    loaded = read_ply(path)
    assert loaded.count == scene.count
    for name in ("positions", "rotation_params", "log_scales", "opacity_logits", "sh_dc", "sh_rest"):
        assert np.array_equal(getattr(loaded, name), as_float32(getattr(scene, name)))


def _write_vertex_ply(path, names, dtype="<f4", text=False):
    data = np.zeros(2, dtype=[(n, dtype) for n in names])
    PlyData([PlyElement.describe(data, "vertex")], text=text, byte_order="<").write(str(path))


def test_rejects_missing_properties(tmp_path):
    path = tmp_path / "xyz.ply"
    _write_vertex_ply(path, ["x", "y", "z"])
    with pytest.raises(SceneFormatError) as info:
        read_ply(path)
    assert info.value.prop == "nx"


def test_rejects_ascii_ply(tmp_path, fixtures_dir):
    scene = read_ply(fixtures_dir / "three_gaussians.ply")
    binary = tmp_path / "binary.ply"
    write_ply(scene, binary)
    plydata = PlyData.read(str(binary))
    plydata.text = True
    path = tmp_path / "ascii.ply"
    plydata.write(str(path))
    with pytest.raises(SceneFormatError):
        read_ply(path)


def test_rejects_double_properties(tmp_path):
    path = tmp_path / "double.ply"
    _write_vertex_ply(path, PLY_PROPERTIES, dtype="<f8")
    with pytest.raises(SceneFormatError):
        read_ply(path)


def test_rejects_garbage(tmp_path):
    path = tmp_path / "garbage.ply"
    path.write_bytes(b"not a ply file at all\n")
    with pytest.raises(SceneFormatError):
        read_ply(path)


# ---------------------------------------------------------------- cameras

def test_read_camera_fixture(fixtures_dir):
    cameras = read_cameras(fixtures_dir / "cameras.txt")
    assert len(cameras) == 2
    assert cameras.names == ["front", "back"]
    front, back = cameras.cameras
    assert (front.width, front.height, front.fx, front.cx) == (32, 32, 32.0, 16.0)
    assert np.array_equal(back.rotation, np.diag([-1.0, 1.0, -1.0]))
    assert back.translation.tolist() == [0.0, 0.0, 3.0]


def test_camera_round_trip(small_scene, tmp_path):
    _, cameras = small_scene
    path = tmp_path / "cams.txt"
    write_cameras(cameras, path)
    loaded = read_cameras(path)
    assert loaded.names == cameras.names
    for a, b in zip(loaded.cameras, cameras.cameras):
        assert np.allclose(a.rotation, b.rotation, atol=1e-12)
        assert np.array_equal(a.translation, b.translation)
        assert (a.width, a.height, a.fx, a.fy, a.cx, a.cy) == (b.width, b.height, b.fx, b.fy, b.cx, b.cy)


def _camera_file(tmp_path, *lines, header="SPWZCAM 1"):
    path = tmp_path / "cams.txt"
    path.write_text("\n".join([header, *lines]) + "\n", encoding="utf-8")
    return path


IDENTITY = "1 0 0 0 1 0 0 0 1"


@pytest.mark.parametrize("lines, header", [
    ([f"a 32 32 32 32 16 16 {IDENTITY} 0 0"], "SPWZCAM 1"),
    ([f"a 32 32 32 32 16 16 {IDENTITY} 0 0 3"], "SPWZCAM 2"),
    ([f"a 32 32 32 32 16 16 {IDENTITY} 0 0 3", f"a 32 32 32 32 16 16 {IDENTITY} 0 0 3"], "SPWZCAM 1"),
    ([f"a 0 32 32 32 16 16 {IDENTITY} 0 0 3"], "SPWZCAM 1"),
    ([f"a 32 32 x 32 16 16 {IDENTITY} 0 0 3"], "SPWZCAM 1"),
])
def test_malformed_camera_files(tmp_path, lines, header):
    with pytest.raises(CameraFileError):
        read_cameras(_camera_file(tmp_path, *lines, header=header))


def test_errors_name_the_physical_line(tmp_path):
    path = _camera_file(tmp_path, "# comment", "", f"a 32 32 32 32 16 16 {IDENTITY} 0 0 3",
                        "# another", f"b 32 32 32 32 16 16 {IDENTITY} 0 0")
    with pytest.raises(CameraFileError, match=r"cams\.txt:6: camera entry has 18 fields"):
        read_cameras(path)


def test_non_orthonormal_rotation(tmp_path):
    path = _camera_file(tmp_path, "a 32 32 32 32 16 16 2 0 0 0 1 0 0 0 1 0 0 3")
    with pytest.raises(PoseError) as info:
        read_cameras(path)
    assert info.value.name == "a"


def test_reflection_is_rejected(tmp_path):
    path = _camera_file(tmp_path, "a 32 32 32 32 16 16 1 0 0 0 1 0 0 0 -1 0 0 3")
    with pytest.raises(PoseError):
        read_cameras(path)


def test_nearly_orthonormal_rotation_is_repaired(tmp_path):
    path = _camera_file(tmp_path, "a 32 32 32 32 16 16 1.00001 0 0 0 1 0.00002 0 0 1 0 0 3")
    camera = read_cameras(path).cameras[0]
    assert validate_camera(camera, tol=1e-9) == []


def test_missing_camera_file(tmp_path):
    with pytest.raises(CameraFileError):
        read_cameras(tmp_path / "nope.txt")


# ---------------------------------------------------------------- synthetic scenes

def test_synthetic_scene_is_deterministic(small_spec):
    a, cams_a = generate_synthetic(small_spec)
    b, cams_b = generate_synthetic(small_spec)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.sh_rest, b.sh_rest)
    assert cams_a.names == cams_b.names
    c, _ = generate_synthetic(SyntheticSceneSpec(seed=8, n_gaussians=60, n_cameras=4, width=32, height=32))
    assert not np.array_equal(a.positions, c.positions)


def test_synthetic_scene_ranges(small_scene):
    scene, cameras = small_scene
    assert validate_scene(scene) == []
    assert np.all(scene.positions >= -1.0) and np.all(scene.positions <= 1.0)
    assert np.all(scene.opacities >= 0.3 - 1e-12) and np.all(scene.opacities <= 0.95 + 1e-12)
    assert np.allclose(np.linalg.norm(scene.rotation_params, axis=1), 1.0)
    assert len(cameras) == 4
    assert all(validate_camera(cam) == [] for cam in cameras)


def test_synthetic_scene_respects_sh_degree():
    scene, _ = generate_synthetic(SyntheticSceneSpec(seed=1, n_gaussians=10, sh_degree=1, n_cameras=1))
    rest = scene.sh_rest.reshape(10, 3, 15)
    assert np.all(rest[:, :, 3:] == 0.0)
    assert np.any(rest[:, :, :3] != 0.0)
    assert scene.max_sh_degree == 1


def test_synthetic_spec_validation():
    with pytest.raises(ValueError):
        generate_synthetic(SyntheticSceneSpec(n_gaussians=0))
    with pytest.raises(ValueError):
        generate_synthetic(SyntheticSceneSpec(aabb_min=(0.0, 0.0, 0.0), aabb_max=(1.0, 0.0, 1.0)))


def test_look_at_centers_the_target(three_splats):
    camera = look_at([4.0, 1.0, 2.0], [0.0, 0.0, 0.0], 32, 32, 32.0)
    assert validate_camera(camera) == []
    proj = project(three_splats, camera, 0)
    assert proj.visible
    assert np.allclose(proj.mu2d, [16.0, 16.0])
    assert proj.depth == pytest.approx(np.sqrt(21.0))


def test_camera_set_file_behaves_like_a_list(small_scene):
    _, cameras = small_scene
    assert isinstance(cameras, CameraSetFile)
    assert cameras[0] is cameras.cameras[0]
    assert len(list(cameras)) == len(cameras)
