"""
结构化精简：按下标删除高斯，应用或固化三阶 SH 掩码
"""

import logging

import numpy as np

from .scene import SH_COEFFS_PER_CHANNEL, DEFAULT_MASK_LOGIT, GaussianScene, sigmoid

logger = logging.getLogger(__name__)

DEFAULT_MASK_THRESHOLD = 0.01


def prune(scene: GaussianScene, drop) -> GaussianScene:
    """删除 drop 中的行，保留的行维持原有顺序"""
    drop = np.unique(np.asarray(list(drop) if not isinstance(drop, np.ndarray) else drop, dtype=np.int64))
    n = scene.count
    if drop.size and (drop[0] < 0 or drop[-1] >= n):
        bad = drop[0] if drop[0] < 0 else drop[-1]
        raise IndexError(f"prune index {bad} out of range for {n} Gaussians")
    keep = np.ones(n, dtype=bool)
    keep[drop] = False
    pruned = scene.take(np.nonzero(keep)[0])
    logger.debug(f"pruned {drop.size} of {n} Gaussians")
    return pruned


def degree3_mask(scene: GaussianScene, threshold: float = DEFAULT_MASK_THRESHOLD) -> np.ndarray:
    """Hard mask M_n = [sigmoid(m_n) > threshold] as a boolean vector"""
    return sigmoid(scene.mask_logits[:, 0]) > threshold


def masked_sh(scene: GaussianScene, threshold: float = DEFAULT_MASK_THRESHOLD) -> np.ndarray:
    """掩码后的三阶系数 (N x 21)，M=0 的行置零"""
    block = scene.degree3_block()
    return block * degree3_mask(scene, threshold)[:, None]


def bake_mask(scene: GaussianScene, threshold: float = DEFAULT_MASK_THRESHOLD) -> GaussianScene:
    """固化掩码：被屏蔽行的三阶系数清零，mask logit 置为 +/-8"""
    keep = degree3_mask(scene, threshold)
    rest = scene.sh_rest.reshape(-1, 3, SH_COEFFS_PER_CHANNEL).copy()
    rest[~keep, :, 8:] = 0.0
    logits = np.where(keep, DEFAULT_MASK_LOGIT, -DEFAULT_MASK_LOGIT)[:, None]
    return scene.with_params(sh_rest=rest.reshape(-1, 45), mask_logits=logits)


def masked_fraction(scene: GaussianScene, threshold: float = DEFAULT_MASK_THRESHOLD) -> float:
    if scene.count == 0:
        return 0.0
    return float(np.mean(~degree3_mask(scene, threshold)))
