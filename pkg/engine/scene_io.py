"""
场景与相机的读写，以及确定性的合成场景
PLY 采用社区通用的 3DGS 顶点布局；相机集使用 FORMAT.md 中描述的逐行 SPWZCAM 文本格式
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np
from plyfile import PlyData, PlyElement, PlyParseError

from .exceptions import CameraFileError, PoseError, SceneFormatError
from .prng import SplitMix64
from .scene import Camera, GaussianScene, logit, normalized_rotations

logger = logging.getLogger(__name__)

CAMERA_MAGIC = "SPWZCAM 1"
ORTHO_REPAIR_TOL = 1e-3


def construct_list_of_attributes() -> List[str]:
    l = ['x', 'y', 'z', 'nx', 'ny', 'nz']
    l.extend(f'f_dc_{i}' for i in range(3))
    l.extend(f'f_rest_{i}' for i in range(45))
    l.append('opacity')
    l.extend(f'scale_{i}' for i in range(3))
    l.extend(f'rot_{i}' for i in range(4))
    return l


PLY_PROPERTIES = construct_list_of_attributes()


def read_ply(path) -> GaussianScene:
    """读取二进制小端 3DGS PLY

    Args:
        path: PLY 文件路径

    Returns:
        GaussianScene，mask logit 取默认值
    """
    try:
        plydata = PlyData.read(str(path))
    except PlyParseError as e:
        prop = getattr(e, 'prop', None)
        name = getattr(prop, 'name', None) or str(e)
        raise SceneFormatError(name, f"cannot parse {path}: {e}") from e
    except (ValueError, EOFError) as e:
        raise SceneFormatError("payload", f"cannot parse {path}: {e}") from e

    if plydata.text or plydata.byte_order != '<':
        raise SceneFormatError("format", f"{path} is not binary_little_endian")
    if 'vertex' not in [el.name for el in plydata.elements]:
        raise SceneFormatError("vertex", f"{path} has no vertex element")
    vertex = plydata['vertex']
    dtypes = {p.name: p.val_dtype for p in vertex.properties}
    for name in PLY_PROPERTIES:
        if name not in dtypes:
            raise SceneFormatError(name, f"missing property {name} in {path}")
        if np.dtype(dtypes[name]) != np.dtype('<f4') and np.dtype(dtypes[name]) != np.dtype('f4'):
            raise SceneFormatError(name, f"property {name} must be float32, found {dtypes[name]}")

    data = vertex.data

    def _stack(names):
        if len(data) == 0:
            return np.zeros((0, len(names)), dtype=np.float64)
        return np.stack([np.asarray(data[n], dtype=np.float32) for n in names], axis=1).astype(np.float64)

    scene = GaussianScene.from_arrays(
        positions=_stack(['x', 'y', 'z']),
        rotation_params=_stack([f'rot_{i}' for i in range(4)]),
        log_scales=_stack([f'scale_{i}' for i in range(3)]),
        opacity_logits=_stack(['opacity']),
        sh_dc=_stack([f'f_dc_{i}' for i in range(3)]),
        sh_rest=_stack([f'f_rest_{i}' for i in range(45)]),
    )
    logger.debug(f"read {scene.count} Gaussians from {path}")
    return scene


def write_ply(scene: GaussianScene, path) -> None:
    """Write the scene as float32 PLY; normals are zeros"""
    n = scene.count
    xyz = scene.positions
    normals = np.zeros_like(xyz)
    attributes = np.concatenate(
        (xyz, normals, scene.sh_dc, scene.sh_rest, scene.opacity_logits, scene.log_scales, scene.rotation_params),
        axis=1,
    ).astype(np.float32)

    dtype_full = [(attribute, '<f4') for attribute in PLY_PROPERTIES]
    elements = np.empty(n, dtype=dtype_full)
    for column, name in enumerate(PLY_PROPERTIES):
        elements[name] = attributes[:, column]
    el = PlyElement.describe(elements, 'vertex')
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PlyData([el], text=False, byte_order='<').write(str(path))


@dataclass
class CameraSetFile:
    cameras: List[Camera] = field(default_factory=list)
    names: List[str] = field(default_factory=list)

    def __len__(self):
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)

    def __getitem__(self, index):
        return self.cameras[index]


def _repair_rotation(name: str, rot: np.ndarray) -> np.ndarray:
    deviation = np.max(np.abs(rot.T @ rot - np.eye(3)))
    if deviation > ORTHO_REPAIR_TOL or np.linalg.det(rot) <= 0:
        raise PoseError(name)
    if deviation == 0.0:
        return rot
    u, _, vt = np.linalg.svd(rot)
    repaired = u @ vt
    if deviation > 1e-12:
        logger.debug(f"camera {name}: re-orthonormalized rotation (deviation {deviation:.2e})")
    return repaired


def read_cameras(path) -> CameraSetFile:
    """解析 SPWZCAM 相机文件，出错信息带物理行号"""
    path = Path(path)
    if not path.exists():
        raise CameraFileError(f"camera file not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        # 非空、非注释行的 (物理行号, 内容)
        content = [(lineno, line.strip()) for lineno, line in enumerate(f, start=1)
                   if line.strip() and not line.strip().startswith('#')]

    if not content or content[0][1] != CAMERA_MAGIC:
        where = f"{path}:{content[0][0]}" if content else str(path)
        raise CameraFileError(f"{where}: first line must be '{CAMERA_MAGIC}'")

    result = CameraSetFile()
    for lineno, line in content[1:]:
        where = f"{path}:{lineno}"
        parts = line.split()
        if len(parts) != 19:
            raise CameraFileError(f"{where}: camera entry has {len(parts)} fields, expected 19")
        name = parts[0]
        if name in result.names:
            raise CameraFileError(f"{where}: duplicate camera name '{name}'")
        try:
            width, height = int(parts[1]), int(parts[2])
            fx, fy, cx, cy = (float(v) for v in parts[3:7])
            rot = np.array([float(v) for v in parts[7:16]], dtype=np.float64).reshape(3, 3)
            trans = np.array([float(v) for v in parts[16:19]], dtype=np.float64)
        except ValueError as e:
            raise CameraFileError(f"{where}: camera '{name}': {e}") from e
        if width <= 0 or height <= 0 or fx <= 0 or fy <= 0:
            raise CameraFileError(f"{where}: camera '{name}' has non-positive size or focal length")
        rot = _repair_rotation(name, rot)
        result.cameras.append(Camera(width, height, fx, fy, cx, cy, rot, trans))
        result.names.append(name)
    return result


def write_cameras(camera_set: CameraSetFile, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(CAMERA_MAGIC + "\n")
        f.write("# name width height fx fy cx cy r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz\n")
        for name, cam in zip(camera_set.names, camera_set.cameras):
            values = [cam.fx, cam.fy, cam.cx, cam.cy, *cam.rotation.reshape(-1), *cam.translation]
            f.write(" ".join([name, str(cam.width), str(cam.height)] + [repr(float(v)) for v in values]) + "\n")


@dataclass
class SyntheticSceneSpec:
    seed: int = 42
    n_gaussians: int = 500
    aabb_min: Tuple[float, float, float] = (-1.0, -1.0, -1.0)
    aabb_max: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    sh_degree: int = 3
    n_cameras: int = 8
    width: int = 64
    height: int = 64

    def validate(self):
        if self.n_gaussians < 1:
            raise ValueError("n_gaussians must be >= 1")
        if not all(lo < hi for lo, hi in zip(self.aabb_min, self.aabb_max)):
            raise ValueError("aabb min must be < max on every axis")
        if self.sh_degree not in (0, 1, 2, 3):
            raise ValueError("sh_degree must be in 0..3")


def look_at(eye, target, width, height, focal, up=(0.0, 0.0, 1.0)) -> Camera:
    """World-to-camera pose looking from eye to target (x right, y down, z forward)"""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward], axis=0)
    return Camera(width, height, focal, focal, width / 2.0, height / 2.0, rot, -rot @ eye)


def ring_cameras(center, radius, count, width, height, elevation_deg=20.0) -> CameraSetFile:
    result = CameraSetFile()
    elev = math.radians(elevation_deg)
    for i in range(count):
        theta = 2.0 * math.pi * i / count
        offset = radius * np.array([math.cos(theta) * math.cos(elev), math.sin(theta) * math.cos(elev), math.sin(elev)])
        result.cameras.append(look_at(center + offset, center, width, height, float(width)))
        result.names.append(f"cam{i:03d}")
    return result


def generate_synthetic(spec: SyntheticSceneSpec):
    """生成确定性的小规模场景和环绕它的一圈相机"""
    spec.validate()
    rng = SplitMix64(spec.seed)
    n = spec.n_gaussians
    lo = np.asarray(spec.aabb_min, dtype=np.float64)
    hi = np.asarray(spec.aabb_max, dtype=np.float64)
    diag = float(np.linalg.norm(hi - lo))

    positions = lo + rng.uniform(3 * n).reshape(n, 3) * (hi - lo)
    log_scales = rng.uniform_range(math.log(0.01 * diag), math.log(0.05 * diag), (n, 3))
    rotations = rng.uniform_range(-1.0, 1.0, (n, 4))
    degenerate = np.linalg.norm(rotations, axis=1) < 1e-6
    rotations[degenerate] = (1.0, 0.0, 0.0, 0.0)
    rotations = normalized_rotations(rotations)
    opacities = rng.uniform_range(0.3, 0.95, (n,))
    sh_dc = rng.uniform_range(-1.0, 1.0, (n, 3))
    sh_rest = rng.uniform_range(-0.2, 0.2, (n, 45)).reshape(n, 3, 15)
    sh_rest[:, :, (spec.sh_degree + 1) ** 2 - 1:] = 0.0

    scene = GaussianScene.from_arrays(
        positions=positions,
        rotation_params=rotations,
        log_scales=log_scales,
        opacity_logits=logit(opacities)[:, None],
        sh_dc=sh_dc,
        sh_rest=sh_rest.reshape(n, 45),
        max_sh_degree=spec.sh_degree,
    )
    center = (lo + hi) / 2.0
    cameras = ring_cameras(center, 1.2 * diag, spec.n_cameras, spec.width, spec.height)
    logger.info(f"generated synthetic scene: seed={spec.seed}, N={n}, cameras={spec.n_cameras}")
    return scene, cameras
