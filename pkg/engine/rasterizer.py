"""
CPU reference tile rasterizer.

Projects every Gaussian, sorts the visible ones by depth (ties broken by a
hash of the position bytes), and composites each 16x16 tile front to back.
The backward pass covers the appearance parameters (SH, opacity, mask logits)
and the per-Gaussian squared image Jacobian w.r.t. the splat value g.

All per-Gaussian math is written elementwise and every reduction runs in the
canonical splat order, so permuting the scene arrays gives bit-identical
output.
"""

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import sh
from .exceptions import DegenerateRotationError, DegenerateSplatError, DimensionMismatchError
from .prng import mix64
from .scene import Camera, GaussianScene, quaternion_to_rotmat, sigmoid

logger = logging.getLogger(__name__)

TILE_SIZE = 16
NEAR_PLANE = 0.01
DILATION = 0.3
ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-4
DEFAULT_MASK_THRESHOLD = 0.01


@dataclass
class SplatProjection:
    mu2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    color: np.ndarray
    opacity: float
    visible: bool


@dataclass
class ScreenSplats:
    """Projection of the whole scene into one camera (arrays indexed by scene row)"""
    mean2d: np.ndarray       # N x 2
    cov2d: np.ndarray        # N x 3 (a, b, c) of [[a, b], [b, c]]
    conic: np.ndarray        # N x 3 inverse covariance (a, b, c)
    depth: np.ndarray        # N
    raw_color: np.ndarray    # N x 3, SH + 0.5 before clamping
    color: np.ndarray        # N x 3, clamped at 0
    opacity: np.ndarray      # N
    visible: np.ndarray      # N bool
    radius: np.ndarray       # N int
    rect_min: np.ndarray     # N x 2 tile (x, y), inclusive
    rect_max: np.ndarray     # N x 2 tile (x, y), exclusive
    basis: np.ndarray        # N x 16
    coeffs: np.ndarray       # N x 3 x 16, unmasked
    mask: np.ndarray         # N, hard mask M in {0, 1}
    mask_prob: np.ndarray    # N, sigmoid of the mask logits
    mask_active: bool

    @property
    def count(self) -> int:
        return int(self.depth.shape[0])


@dataclass
class GradBuffers:
    d_sh_dc: np.ndarray
    d_sh_rest: np.ndarray
    d_opacity_logit: np.ndarray
    d_mask_logit: np.ndarray
    g_grad_sq: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "GradBuffers":
        return cls(
            d_sh_dc=np.zeros((n, 3)),
            d_sh_rest=np.zeros((n, 45)),
            d_opacity_logit=np.zeros((n, 1)),
            d_mask_logit=np.zeros((n, 1)),
            g_grad_sq=np.zeros((n, 1)),
        )


@dataclass
class _Tile:
    ids: np.ndarray
    rows: slice
    cols: slice
    px: np.ndarray
    py: np.ndarray


@dataclass
class RenderTape:
    """Forward state kept for a later backward pass"""
    splats: ScreenSplats
    tiles: List[_Tile]
    height: int
    width: int


@dataclass
class RenderOutput:
    color: np.ndarray
    depth: Optional[np.ndarray]
    transmittance: np.ndarray
    grad_buffers: Optional[GradBuffers] = None
    blend_weights: Optional[np.ndarray] = None
    _tape: Optional[RenderTape] = None

    @property
    def has_tape(self) -> bool:
        return self._tape is not None


def canonical_keys(positions: np.ndarray) -> np.ndarray:
    """Per-splat tie-break key: chained SplitMix64 hash of the position float64 bytes"""
    bits = np.ascontiguousarray(positions, dtype=np.float64).view(np.uint64).reshape(-1, 3)
    key = mix64(bits[:, 0])
    key = mix64(key ^ bits[:, 1])
    return mix64(key ^ bits[:, 2])


def _sandwich3(a: np.ndarray, m: np.ndarray) -> np.ndarray:
    """a . m . a^T for stacks of (rows x 3) a and symmetric 3x3 m, elementwise"""
    rows = a.shape[1]
    am = np.empty(a.shape[:2] + (3,), dtype=np.float64)
    for r in range(rows):
        for c in range(3):
            am[:, r, c] = a[:, r, 0] * m[:, 0, c] + a[:, r, 1] * m[:, 1, c] + a[:, r, 2] * m[:, 2, c]
    out = np.empty(a.shape[:1] + (rows, rows), dtype=np.float64)
    for r in range(rows):
        for c in range(rows):
            out[:, r, c] = am[:, r, 0] * a[:, c, 0] + am[:, r, 1] * a[:, c, 1] + am[:, r, 2] * a[:, c, 2]
    return out


def project_all(scene: GaussianScene, camera: Camera, use_mask: bool = True,
                mask_threshold: float = DEFAULT_MASK_THRESHOLD) -> ScreenSplats:
    """Project every Gaussian of the scene into the camera"""
    n = scene.count
    rot_cam = camera.rotation
    t = camera.translation
    p = scene.positions

    tc = [rot_cam[r, 0] * p[:, 0] + rot_cam[r, 1] * p[:, 1] + rot_cam[r, 2] * p[:, 2] + t[r] for r in range(3)]
    tx, ty, tz = tc
    visible = tz > NEAR_PLANE
    tz_safe = np.where(visible, tz, 1.0)

    mean2d = np.stack([camera.fx * tx / tz_safe + camera.cx, camera.fy * ty / tz_safe + camera.cy], axis=1)

    q = scene.rotation_params
    norms = np.sqrt(q[:, 0] * q[:, 0] + q[:, 1] * q[:, 1] + q[:, 2] * q[:, 2] + q[:, 3] * q[:, 3])
    bad = np.nonzero(~(norms > 0))[0]
    if bad.size:
        raise DegenerateRotationError(int(bad[0]))
    rq = quaternion_to_rotmat(q / norms[:, None])
    s2 = np.exp(2.0 * scene.log_scales)
    scaled = rq * s2[:, None, :]
    cov3d = np.empty((n, 3, 3), dtype=np.float64)
    for r in range(3):
        for c in range(3):
            cov3d[:, r, c] = scaled[:, r, 0] * rq[:, c, 0] + scaled[:, r, 1] * rq[:, c, 1] + scaled[:, r, 2] * rq[:, c, 2]

    # T = J . W with the 2x3 perspective Jacobian J
    j00 = camera.fx / tz_safe
    j02 = -camera.fx * tx / (tz_safe * tz_safe)
    j11 = camera.fy / tz_safe
    j12 = -camera.fy * ty / (tz_safe * tz_safe)
    jw = np.empty((n, 2, 3), dtype=np.float64)
    for c in range(3):
        jw[:, 0, c] = j00 * rot_cam[0, c] + j02 * rot_cam[2, c]
        jw[:, 1, c] = j11 * rot_cam[1, c] + j12 * rot_cam[2, c]
    cov2 = _sandwich3(jw, cov3d)
    a = cov2[:, 0, 0] + DILATION
    b = cov2[:, 0, 1]
    c = cov2[:, 1, 1] + DILATION
    det = a * c - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        conic = np.stack([c / det, -b / det, a / det], axis=1)
    visible = visible & (det > 0)

    mid = 0.5 * (a + c)
    lambda1 = mid + np.sqrt(np.maximum(0.1, mid * mid - det))
    radius = np.ceil(3.0 * np.sqrt(lambda1)).astype(np.int64)

    tiles_x = (camera.width + TILE_SIZE - 1) // TILE_SIZE
    tiles_y = (camera.height + TILE_SIZE - 1) // TILE_SIZE
    rect_min = np.stack([
        np.clip(np.floor((mean2d[:, 0] - radius) / TILE_SIZE), 0, tiles_x),
        np.clip(np.floor((mean2d[:, 1] - radius) / TILE_SIZE), 0, tiles_y),
    ], axis=1).astype(np.int64)
    rect_max = np.stack([
        np.clip(np.floor((mean2d[:, 0] + radius + TILE_SIZE - 1) / TILE_SIZE), 0, tiles_x),
        np.clip(np.floor((mean2d[:, 1] + radius + TILE_SIZE - 1) / TILE_SIZE), 0, tiles_y),
    ], axis=1).astype(np.int64)

    center = camera.center
    d = p - center
    dnorm = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2])
    dirs = d / np.where(dnorm > 0, dnorm, 1.0)[:, None]
    degree = scene.max_sh_degree
    basis = sh.sh_basis(dirs, degree)
    coeffs = sh.stack_coefficients(scene.sh_dc, scene.sh_rest)

    mask_prob = sigmoid(scene.mask_logits[:, 0])
    mask_active = use_mask and degree >= 3
    if mask_active:
        mask = (mask_prob > mask_threshold).astype(np.float64)
        effective = coeffs.copy()
        effective[:, :, sh.DEGREE3_COLUMNS] *= mask[:, None, None]
    else:
        mask = np.ones(n, dtype=np.float64)
        effective = coeffs
    raw_color = sh.evaluate(effective, basis) + 0.5

    return ScreenSplats(
        mean2d=mean2d,
        cov2d=np.stack([a, b, c], axis=1),
        conic=conic,
        depth=tz,
        raw_color=raw_color,
        color=np.maximum(raw_color, 0.0),
        opacity=sigmoid(scene.opacity_logits[:, 0]),
        visible=visible,
        radius=radius,
        rect_min=rect_min,
        rect_max=rect_max,
        basis=basis,
        coeffs=coeffs,
        mask=mask,
        mask_prob=mask_prob,
        mask_active=mask_active,
    )


def project(scene: GaussianScene, camera: Camera, index: int,
            mask_threshold: float = DEFAULT_MASK_THRESHOLD) -> SplatProjection:
    """Projection of a single Gaussian"""
    splats = project_all(scene.take([index]), camera, mask_threshold=mask_threshold)
    a, b, c = splats.cov2d[0]
    return SplatProjection(
        mu2d=splats.mean2d[0].copy(),
        cov2d=np.array([[a, b], [b, c]]),
        depth=float(splats.depth[0]),
        color=splats.raw_color[0].copy(),
        opacity=float(splats.opacity[0]),
        visible=bool(splats.visible[0]),
    )


def splat_value(proj: SplatProjection, p) -> float:
    """g = exp(-1/2 (p - mu) Sigma^-1 (p - mu)^T)"""
    cov = np.asarray(proj.cov2d, dtype=np.float64)
    a, b, c = cov[0, 0], cov[0, 1], cov[1, 1]
    det = a * c - b * b
    if not det > 0:
        raise DegenerateSplatError()
    dx = float(p[0]) - float(proj.mu2d[0])
    dy = float(p[1]) - float(proj.mu2d[1])
    power = -0.5 * (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
    return float(np.exp(power))


def _sorted_visible(splats: ScreenSplats, positions: np.ndarray) -> np.ndarray:
    ids = np.nonzero(splats.visible & (splats.rect_max[:, 0] > splats.rect_min[:, 0])
                     & (splats.rect_max[:, 1] > splats.rect_min[:, 1]))[0]
    if ids.size == 0:
        return ids
    keys = canonical_keys(positions[ids])
    return ids[np.lexsort((keys, splats.depth[ids]))]


def _build_tiles(splats: ScreenSplats, order: np.ndarray, width: int, height: int) -> List[_Tile]:
    tiles = []
    tiles_x = (width + TILE_SIZE - 1) // TILE_SIZE
    tiles_y = (height + TILE_SIZE - 1) // TILE_SIZE
    rmin = splats.rect_min[order]
    rmax = splats.rect_max[order]
    for ty in range(tiles_y):
        rows = slice(ty * TILE_SIZE, min((ty + 1) * TILE_SIZE, height))
        in_row = (rmin[:, 1] <= ty) & (ty < rmax[:, 1])
        for tx in range(tiles_x):
            cols = slice(tx * TILE_SIZE, min((tx + 1) * TILE_SIZE, width))
            hit = in_row & (rmin[:, 0] <= tx) & (tx < rmax[:, 0])
            yy, xx = np.mgrid[rows, cols]
            tiles.append(_Tile(ids=order[hit], rows=rows, cols=cols,
                               px=xx.reshape(-1).astype(np.float64), py=yy.reshape(-1).astype(np.float64)))
    return tiles


@dataclass
class _TileState:
    g: np.ndarray           # K x P
    alpha_raw: np.ndarray   # K x P, o * g
    alpha: np.ndarray       # K x P, effective (clamped, skipped and early-stopped zeroed)
    t_before: np.ndarray    # K x P
    weight: np.ndarray      # K x P, alpha * T
    t_final: np.ndarray     # P
    valid: np.ndarray       # K x P, contributions differentiable w.r.t. g


def _splat_falloff(splats: ScreenSplats, ids: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """K x P splat values g of the splats `ids` at the pixel coordinates"""
    dx = px[None, :] - splats.mean2d[ids, 0][:, None]
    dy = py[None, :] - splats.mean2d[ids, 1][:, None]
    ca = splats.conic[ids, 0][:, None]
    cb = splats.conic[ids, 1][:, None]
    cc = splats.conic[ids, 2][:, None]
    power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
    return np.exp(np.minimum(power, 0.0))


def _composite_tile(splats: ScreenSplats, tile: _Tile) -> _TileState:
    ids = tile.ids
    g = _splat_falloff(splats, ids, tile.px, tile.py)
    alpha_raw = splats.opacity[ids][:, None] * g
    alpha = np.minimum(ALPHA_MAX, alpha_raw)
    contributes = alpha >= ALPHA_MIN
    alpha = np.where(contributes, alpha, 0.0)

    keep = np.cumprod(1.0 - alpha, axis=0) >= T_MIN
    alpha = np.where(keep, alpha, 0.0)
    t_after = np.cumprod(1.0 - alpha, axis=0)
    t_before = np.ones_like(t_after)
    t_before[1:] = t_after[:-1]
    weight = alpha * t_before
    t_final = t_after[-1] if len(ids) else np.ones(tile.px.shape[0])
    valid = keep & contributes & (alpha_raw < ALPHA_MAX)
    return _TileState(g=g, alpha_raw=alpha_raw, alpha=alpha, t_before=t_before,
                      weight=weight, t_final=t_final, valid=valid)


def render(scene: GaussianScene, camera: Camera, want_depth: bool = True, want_backward: bool = False,
           loss_grad: Optional[np.ndarray] = None, want_blend_weights: bool = False,
           use_mask: bool = True, mask_threshold: float = DEFAULT_MASK_THRESHOLD) -> RenderOutput:
    """Render one view

    With want_backward the forward tape is kept on the output; if loss_grad is
    given as well the backward pass runs immediately and fills grad_buffers.
    """
    height, width = camera.height, camera.width
    color = np.zeros((height, width, 3), dtype=np.float64)
    depth = np.zeros((height, width), dtype=np.float64) if want_depth else None
    transmittance = np.ones((height, width), dtype=np.float64)
    blend = np.zeros(scene.count, dtype=np.float64) if want_blend_weights else None

    splats = project_all(scene, camera, use_mask=use_mask, mask_threshold=mask_threshold)
    order = _sorted_visible(splats, scene.positions)
    tiles = _build_tiles(splats, order, width, height)

    for tile in tiles:
        if tile.ids.size == 0:
            continue
        state = _composite_tile(splats, tile)
        shape = (tile.rows.stop - tile.rows.start, tile.cols.stop - tile.cols.start)
        w = state.weight
        cols = splats.color[tile.ids]
        pix = (w[:, :, None] * cols[:, None, :]).sum(axis=0)
        color[tile.rows, tile.cols] = pix.reshape(shape + (3,))
        transmittance[tile.rows, tile.cols] = state.t_final.reshape(shape)
        if depth is not None:
            depth[tile.rows, tile.cols] = (w * splats.depth[tile.ids][:, None]).sum(axis=0).reshape(shape)
        if blend is not None:
            blend[tile.ids] += w.sum(axis=1)

    output = RenderOutput(color=color, depth=depth, transmittance=transmittance, blend_weights=blend)
    if want_backward:
        output._tape = RenderTape(splats=splats, tiles=tiles, height=height, width=width)
        if loss_grad is not None:
            backward(output, loss_grad)
    return output


def backward(output: RenderOutput, loss_grad: Optional[np.ndarray]) -> GradBuffers:
    """Gradients of L = sum(loss_grad * color) from a render's tape; also fills g_grad_sq"""
    tape = output._tape
    if tape is None:
        raise ValueError("render was not called with want_backward=True")
    splats = tape.splats
    n = splats.count
    if loss_grad is None:
        loss_grad = np.zeros((tape.height, tape.width, 3))
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    if loss_grad.shape != (tape.height, tape.width, 3):
        raise DimensionMismatchError(loss_grad.shape, (tape.height, tape.width, 3))

    d_color = np.zeros((n, 3), dtype=np.float64)
    d_opacity = np.zeros(n, dtype=np.float64)
    g_grad_sq = np.zeros(n, dtype=np.float64)

    for tile in tape.tiles:
        ids = tile.ids
        if ids.size == 0:
            continue
        state = _composite_tile(splats, tile)
        grad = loss_grad[tile.rows, tile.cols].reshape(-1, 3)
        cols = splats.color[ids]
        w = state.weight

        d_color[ids] += (w[:, :, None] * grad[None, :, :]).sum(axis=1)

        contrib = w[:, :, None] * cols[:, None, :]
        suffix = np.cumsum(contrib[::-1], axis=0)[::-1]
        behind = np.zeros_like(contrib)
        behind[:-1] = suffix[1:]
        dc_dalpha = state.t_before[:, :, None] * cols[:, None, :] - behind / (1.0 - state.alpha)[:, :, None]
        dc_dalpha = np.where(state.valid[:, :, None], dc_dalpha, 0.0)

        dl_dalpha = (dc_dalpha * grad[None, :, :]).sum(axis=2)
        d_opacity[ids] += (dl_dalpha * state.g).sum(axis=1)

        dc_dg = splats.opacity[ids][:, None, None] * dc_dalpha
        g_grad_sq[ids] += (dc_dg * dc_dg).sum(axis=(1, 2))

    grads = _appearance_grads(splats, d_color, d_opacity)
    grads.g_grad_sq = g_grad_sq[:, None]
    output.grad_buffers = grads
    return grads


def _appearance_grads(splats: ScreenSplats, d_color: np.ndarray, d_opacity: np.ndarray) -> GradBuffers:
    n = splats.count
    grads = GradBuffers.zeros(n)
    d_raw = d_color * (splats.raw_color > 0.0)
    basis = splats.basis.copy()
    if splats.mask_active:
        basis[:, sh.DEGREE3_COLUMNS] *= splats.mask[:, None]
    grads.d_sh_dc = d_raw * basis[:, None, 0]
    rest = d_raw[:, :, None] * basis[:, None, 1:]
    grads.d_sh_rest = rest.reshape(n, 45)
    o = splats.opacity
    grads.d_opacity_logit = (d_opacity * o * (1.0 - o))[:, None]
    if splats.mask_active:
        deg3 = splats.coeffs[:, :, sh.DEGREE3_COLUMNS] * splats.basis[:, None, sh.DEGREE3_COLUMNS]
        d_mask = (d_raw * deg3.sum(axis=2)).sum(axis=1)
        s = splats.mask_prob
        grads.d_mask_logit = (d_mask * s * (1.0 - s))[:, None]
    return grads


def render_backward(scene: GaussianScene, camera: Camera, loss_grad: np.ndarray,
                    use_mask: bool = True, mask_threshold: float = DEFAULT_MASK_THRESHOLD) -> RenderOutput:
    return render(scene, camera, want_backward=True, loss_grad=loss_grad,
                  use_mask=use_mask, mask_threshold=mask_threshold)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_ppm(image: np.ndarray, path) -> None:
    """Binary PPM (P6) debug dump"""
    pixels = to_uint8(image)
    height, width = pixels.shape[:2]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def image_digest(image: np.ndarray) -> str:
    """sha256 of the 8-bit quantized image, used by golden fixtures"""
    return hashlib.sha256(to_uint8(image).tobytes()).hexdigest()
