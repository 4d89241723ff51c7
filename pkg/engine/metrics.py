"""
Evaluation metrics: PSNR and SSIM between renders, chamfer distance between
position clouds, plus render timing and peak memory for benchmark rows.
"""

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .exceptions import DimensionMismatchError
from .importance import map_views
from .rasterizer import render
from .scene import Camera, GaussianScene

try:
    import resource
except ImportError:  # not available on Windows
    resource = None

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _same_shape(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(a.shape, b.shape)
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) on the [0, 1] scale; inf for identical images"""
    a, b = _same_shape(a, b)
    diff = a - b
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2D Gaussian window"""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM per channel, averaged over channels

    11x11 Gaussian window (sigma 1.5), symmetric-reflect borders.
    """
    a, b = _same_shape(a, b)
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    height, width = a.shape[:2]
    if height < SSIM_WINDOW or width < SSIM_WINDOW:
        raise DimensionMismatchError((height, width), (SSIM_WINDOW, SSIM_WINDOW),
                                     message=f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    window = gaussian_window()

    def _filter(x):
        return ndimage.correlate(x, window, mode="reflect")

    values = []
    for c in range(a.shape[2]):
        x = a[:, :, c]
        y = b[:, :, c]
        mu_x = _filter(x)
        mu_y = _filter(y)
        var_x = _filter(x * x) - mu_x * mu_x
        var_y = _filter(y * y) - mu_y * mu_y
        cov = _filter(x * y) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
        den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
        values.append(float(np.mean(num / den)))
    return float(np.mean(values))


def chamfer(points_a: np.ndarray, points_b: np.ndarray) -> float:
    """Half the sum of both directed mean nearest-neighbour distances (unsquared L2)"""
    points_a = np.asarray(points_a, dtype=np.float64).reshape(-1, 3)
    points_b = np.asarray(points_b, dtype=np.float64).reshape(-1, 3)
    if points_a.shape[0] == 0 or points_b.shape[0] == 0:
        raise ValueError("chamfer distance needs two non-empty point clouds")
    d_ab, _ = cKDTree(points_b).query(points_a, k=1)
    d_ba, _ = cKDTree(points_a).query(points_b, k=1)
    return 0.5 * (float(np.mean(d_ab)) + float(np.mean(d_ba)))


def peak_memory_mb() -> Optional[float]:
    """Peak resident set size of this process, None where the platform has no getrusage"""
    if resource is None:
        return None
    # ru_maxrss is in kilobytes on Linux
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0


def time_render(scene: GaussianScene, cameras: Sequence[Camera], warm_renders: int = 5) -> float:
    """Mean wall time per frame over warm renders cycling through the cameras"""
    cameras = list(cameras)
    if not cameras or warm_renders <= 0:
        return 0.0
    render(scene, cameras[0], want_depth=False)
    start = time.perf_counter()
    for i in range(warm_renders):
        render(scene, cameras[i % len(cameras)], want_depth=False)
    return (time.perf_counter() - start) / warm_renders


def format_metric(value: Optional[float]) -> str:
    if value is None:
        return ""
    if math.isinf(value):
        return "inf"
    return f"{value:.6f}"


@dataclass
class ViewMetrics:
    view: str
    psnr: float
    ssim: float


@dataclass
class EvalReport:
    views: List[ViewMetrics]
    chamfer: float
    count_a: int
    count_b: int
    frame_time: float = 0.0
    peak_memory_mb: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([v.psnr for v in self.views])) if self.views else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([v.ssim for v in self.views])) if self.views else math.nan

    @property
    def fps(self) -> float:
        return 1.0 / self.frame_time if self.frame_time > 0 else 0.0

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(["view", "psnr", "ssim"])
            for v in self.views:
                writer.writerow([v.view, format_metric(v.psnr), format_metric(v.ssim)])
            writer.writerow(["chamfer", format_metric(self.chamfer), ""])


def evaluate_scenes(scene_a: GaussianScene, scene_b: GaussianScene, cameras: Sequence[Camera],
                    names: Optional[Sequence[str]] = None, warm_renders: int = 5) -> EvalReport:
    """Per-view PSNR/SSIM of renders, chamfer of positions, timing of scene_b"""
    cameras = list(cameras)
    names = list(names) if names is not None else [f"cam{i:03d}" for i in range(len(cameras))]

    def _view(cam):
        img_a = render(scene_a, cam, want_depth=False).color
        img_b = render(scene_b, cam, want_depth=False).color
        return psnr(img_a, img_b), ssim(img_a, img_b)

    views = [ViewMetrics(name, p, s) for name, (p, s) in zip(names, map_views(cameras, _view))]
    if scene_a.count and scene_b.count:
        dist = chamfer(scene_a.positions, scene_b.positions)
    elif scene_a.count == scene_b.count:
        dist = 0.0
    else:
        dist = math.inf
    report = EvalReport(views=views, chamfer=dist, count_a=scene_a.count, count_b=scene_b.count,
                        frame_time=time_render(scene_b, cameras, warm_renders),
                        peak_memory_mb=peak_memory_mb())
    logger.info(f"evaluated {len(views)} views: mean PSNR {format_metric(report.mean_psnr)} dB, "
                f"chamfer {format_metric(dist)}")
    return report
