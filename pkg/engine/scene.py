"""
Domain types shared by every stage: Gaussian scenes, pinhole cameras and the
scene validator.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .exceptions import DegenerateRotationError

logger = logging.getLogger(__name__)

SH_REST_DIM = 45
SH_COEFFS_PER_CHANNEL = 15
DEFAULT_MASK_LOGIT = 8.0

# field name -> trailing width
PARAM_WIDTHS = {
    "positions": 3,
    "rotation_params": 4,
    "log_scales": 3,
    "opacity_logits": 1,
    "sh_dc": 3,
    "sh_rest": SH_REST_DIM,
    "mask_logits": 1,
}

APPEARANCE_GROUPS = ("sh_dc", "sh_rest", "opacity_logits", "mask_logits")


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


@dataclass
class GaussianScene:
    """Full parameter set of a splat scene

    sh_rest is channel-major: columns [c*15 : (c+1)*15] hold the 15 degree-1..3
    coefficients of channel c. Arrays are float64; stages return new scenes
    instead of mutating one that might be shared with a renderer.
    """
    positions: np.ndarray
    rotation_params: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh_dc: np.ndarray
    sh_rest: np.ndarray
    mask_logits: np.ndarray
    max_sh_degree: int = 3

    @property
    def count(self) -> int:
        return int(self.positions.shape[0])

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits[:, 0])

    @classmethod
    def empty(cls, max_sh_degree: int = 3) -> "GaussianScene":
        return cls.from_arrays(np.zeros((0, 3)), max_sh_degree=max_sh_degree)

    @classmethod
    def from_arrays(cls, positions, rotation_params=None, log_scales=None,
                    opacity_logits=None, sh_dc=None, sh_rest=None,
                    mask_logits=None, max_sh_degree: int = 3) -> "GaussianScene":
        """Build a scene, filling omitted fields with neutral defaults"""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = positions.shape[0]

        def _arr(value, width, default):
            if value is None:
                out = np.full((n, width), default, dtype=np.float64)
                return out
            return np.asarray(value, dtype=np.float64).reshape(n, width)

        rotations = _arr(rotation_params, 4, 0.0)
        if rotation_params is None and n:
            rotations[:, 0] = 1.0
        return cls(
            positions=positions,
            rotation_params=rotations,
            log_scales=_arr(log_scales, 3, 0.0),
            opacity_logits=_arr(opacity_logits, 1, 0.0),
            sh_dc=_arr(sh_dc, 3, 0.0),
            sh_rest=_arr(sh_rest, SH_REST_DIM, 0.0),
            mask_logits=_arr(mask_logits, 1, DEFAULT_MASK_LOGIT),
            max_sh_degree=int(max_sh_degree),
        )

    def copy(self) -> "GaussianScene":
        return replace(self, **{name: getattr(self, name).copy() for name in PARAM_WIDTHS})

    def take(self, indices) -> "GaussianScene":
        """Rows at `indices`, in that order"""
        indices = np.asarray(indices, dtype=np.int64)
        return replace(self, **{name: getattr(self, name)[indices].copy() for name in PARAM_WIDTHS})

    def with_params(self, **params) -> "GaussianScene":
        """Copy with some parameter arrays replaced"""
        updated = {name: np.asarray(value, dtype=np.float64).copy() for name, value in params.items()}
        return replace(self, **updated)

    def aabb(self):
        """(min, max) of positions; zeros for an empty scene"""
        if self.count == 0:
            return np.zeros(3), np.zeros(3)
        return self.positions.min(axis=0), self.positions.max(axis=0)

    def degree3_block(self) -> np.ndarray:
        """Degree-3 coefficients as N x 21 (channel-major, 7 per channel)"""
        rest = self.sh_rest.reshape(-1, 3, SH_COEFFS_PER_CHANNEL)
        return rest[:, :, 8:].reshape(-1, 21)

    def degree12_block(self) -> np.ndarray:
        """Degree-1 and degree-2 coefficients as N x 24 (8 per channel)"""
        rest = self.sh_rest.reshape(-1, 3, SH_COEFFS_PER_CHANNEL)
        return rest[:, :, :8].reshape(-1, 24)


@dataclass
class Camera:
    """Pinhole camera; rotation/translation map world to camera (x right, y down, z forward)"""
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    @property
    def center(self) -> np.ndarray:
        """Camera position in world space"""
        return -self.rotation.T @ self.translation

    def with_translation(self, translation) -> "Camera":
        return replace(self, rotation=self.rotation.copy(), translation=np.asarray(translation, dtype=np.float64))


@dataclass
class Violation:
    field: str
    index: int
    message: str

    def __str__(self):
        return f"{self.field}[{self.index}]: {self.message}"


def _first_bad_row(mask: np.ndarray) -> Optional[int]:
    rows = np.nonzero(mask)[0]
    return int(rows[0]) if rows.size else None


def validate_scene(scene: GaussianScene) -> List[Violation]:
    """Check every scene invariant; returns the violations instead of raising"""
    violations: List[Violation] = []
    n = scene.positions.shape[0] if scene.positions.ndim == 2 else -1

    for name, width in PARAM_WIDTHS.items():
        arr = getattr(scene, name)
        if arr.ndim != 2 or arr.shape[1] != width or arr.shape[0] != n:
            violations.append(Violation(name, 0, f"expected shape ({n}, {width}), got {arr.shape}"))
    if violations:
        return violations

    if scene.max_sh_degree not in (0, 1, 2, 3):
        violations.append(Violation("max_sh_degree", 0, f"degree {scene.max_sh_degree} not in 0..3"))

    for name in PARAM_WIDTHS:
        if name == "log_scales":
            continue
        bad = _first_bad_row(~np.isfinite(getattr(scene, name)).all(axis=1))
        if bad is not None:
            violations.append(Violation(name, bad, "non-finite value"))

    with np.errstate(over="ignore", invalid="ignore"):
        scales = np.exp(scene.log_scales)
    bad = _first_bad_row(~(np.isfinite(scales) & (scales > 0)).all(axis=1))
    if bad is not None:
        violations.append(Violation("log_scales", bad, "exp(log_scale) must be finite and > 0"))

    norms = np.linalg.norm(scene.rotation_params, axis=1)
    bad = _first_bad_row(~(norms > 0))
    if bad is not None:
        violations.append(Violation("rotation_params", bad, "quaternion has zero norm"))
    return violations


def normalized_rotation(scene: GaussianScene, index: int) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of one primitive"""
    q = scene.rotation_params[index]
    norm = float(np.sqrt(np.sum(q * q)))
    if norm == 0.0 or not np.isfinite(norm):
        raise DegenerateRotationError(index)
    return q / norm


def normalized_rotations(rotation_params: np.ndarray) -> np.ndarray:
    """Row-wise normalization, written elementwise so each row is computed independently"""
    q = rotation_params
    norm = np.sqrt(q[:, 0] * q[:, 0] + q[:, 1] * q[:, 1] + q[:, 2] * q[:, 2] + q[:, 3] * q[:, 3])
    return q / norm[:, None]


def quaternion_to_rotmat(q: np.ndarray) -> np.ndarray:
    """(N, 4) unit quaternions [w, x, y, z] to (N, 3, 3) rotation matrices"""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    rot = np.empty((len(q), 3, 3), dtype=np.float64)
    rot[:, 0, 0] = 1 - 2 * (y * y + z * z)
    rot[:, 0, 1] = 2 * (x * y - w * z)
    rot[:, 0, 2] = 2 * (x * z + w * y)
    rot[:, 1, 0] = 2 * (x * y + w * z)
    rot[:, 1, 1] = 1 - 2 * (x * x + z * z)
    rot[:, 1, 2] = 2 * (y * z - w * x)
    rot[:, 2, 0] = 2 * (x * z - w * y)
    rot[:, 2, 1] = 2 * (y * z + w * x)
    rot[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return rot


def validate_camera(camera: Camera, tol: float = 1e-6) -> List[str]:
    problems = []
    if camera.width <= 0 or camera.height <= 0:
        problems.append("width and height must be positive")
    if camera.fx <= 0 or camera.fy <= 0:
        problems.append("fx and fy must be positive")
    r = camera.rotation
    if np.max(np.abs(r.T @ r - np.eye(3))) > tol or abs(np.linalg.det(r) - 1.0) > tol:
        problems.append("rotation is not a proper orthonormal matrix")
    return problems
