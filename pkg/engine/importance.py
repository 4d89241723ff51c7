"""
Per-Gaussian importance scores used to decide what to prune.

Two score families: the blend-weight (opacity) score, optionally weighted by
normalized volume, and the Hessian approximation, i.e. the squared image
Jacobian w.r.t. each splat value summed over pixels, channels and views.
"""

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, List, Sequence

import numpy as np

from .rasterizer import render
from .scene import Camera, GaussianScene
from .settings import thread_count

logger = logging.getLogger(__name__)

VOLUME_PERCENTILE = 90.0


@dataclass
class ImportanceScores:
    scores: np.ndarray
    kind: str
    views_accumulated: int

    def __len__(self):
        return int(self.scores.shape[0])

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(["index", "score"])
            for i, s in enumerate(self.scores[:, 0]):
                writer.writerow([i, repr(float(s))])


def map_views(cameras: Sequence[Camera], fn: Callable[[Camera], np.ndarray]) -> List[np.ndarray]:
    """Evaluate fn per camera on a thread pool; results come back in camera order"""
    cameras = list(cameras)
    workers = min(thread_count(), len(cameras))
    if workers <= 1:
        return [fn(cam) for cam in cameras]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, cameras))


def _reduce(parts: List[np.ndarray], n: int) -> np.ndarray:
    total = np.zeros(n, dtype=np.float64)
    for part in parts:
        total = total + part
    return total


def _require_cameras(cameras) -> None:
    if len(cameras) < 1:
        raise ValueError("importance scoring needs at least one camera")


def volume_weight(scene: GaussianScene, beta: float) -> np.ndarray:
    """clip(volume / p90(volume), 0, 1) ** beta"""
    if scene.count == 0:
        return np.zeros(0)
    volume = np.exp(scene.log_scales.sum(axis=1))
    ref = np.percentile(volume, VOLUME_PERCENTILE)
    if not ref > 0:
        return np.ones(scene.count)
    return np.clip(volume / ref, 0.0, 1.0) ** beta


def score_opacity(scene: GaussianScene, cameras: Sequence[Camera], beta: float = 0.0,
                  mask_threshold: float = 0.01) -> ImportanceScores:
    """Sum over views and pixels of each Gaussian's blend weight alpha * T"""
    _require_cameras(cameras)

    def _view(cam):
        return render(scene, cam, want_depth=False, want_blend_weights=True,
                      mask_threshold=mask_threshold).blend_weights

    scores = _reduce(map_views(cameras, _view), scene.count)
    if beta > 0:
        scores = scores * volume_weight(scene, beta)
    logger.debug(f"opacity scores over {len(cameras)} views for {scene.count} Gaussians")
    return ImportanceScores(scores[:, None], "opacity", len(cameras))


def score_hessian(scene: GaussianScene, cameras: Sequence[Camera],
                  mask_threshold: float = 0.01) -> ImportanceScores:
    """Sum over views of the squared image Jacobian w.r.t. the splat values"""
    _require_cameras(cameras)

    def _view(cam):
        out = render(scene, cam, want_depth=False, want_backward=True,
                     loss_grad=np.zeros((cam.height, cam.width, 3)), mask_threshold=mask_threshold)
        return out.grad_buffers.g_grad_sq[:, 0]

    scores = _reduce(map_views(cameras, _view), scene.count)
    logger.debug(f"hessian scores over {len(cameras)} views for {scene.count} Gaussians")
    return ImportanceScores(scores[:, None], "hessian", len(cameras))


SCORERS = {
    "opacity": score_opacity,
    "hessian": score_hessian,
}


def compute_scores(kind: str, scene: GaussianScene, cameras: Sequence[Camera], **kwargs) -> ImportanceScores:
    if kind not in SCORERS:
        raise ValueError(f"unknown importance score '{kind}', expected one of {list(SCORERS)}")
    if kind != "opacity":
        kwargs.pop("beta", None)
    return SCORERS[kind](scene, cameras, **kwargs)


def rank_bottom(scores, fraction: float) -> np.ndarray:
    """Indices of the floor(fraction * N) smallest scores, ties to the lower index"""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    values = scores.scores[:, 0] if isinstance(scores, ImportanceScores) else np.asarray(scores, dtype=np.float64).reshape(-1)
    n = values.shape[0]
    # nearest small-denominator fraction, so 0.29 * 100 is 29 and not 28
    count = min(n, int(Fraction(float(fraction)).limit_denominator(10 ** 6) * n))
    order = np.argsort(values, kind="stable")
    return np.sort(order[:count])
