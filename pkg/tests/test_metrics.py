import csv
import math

import numpy as np
import pytest

from engine.exceptions import DimensionMismatchError
from engine.metrics import EvalReport, ViewMetrics, chamfer, evaluate_scenes, format_metric, gaussian_window, psnr, ssim
from engine.prng import SplitMix64


def noisy_pair(seed=0, shape=(24, 24, 3), noise=0.05):
    rng = SplitMix64(seed)
    image = rng.uniform_range(0.0, 1.0, shape)
    return image, np.clip(image + noise * rng.normal(int(np.prod(shape))).reshape(shape), 0.0, 1.0)


def test_psnr_of_identical_images_is_infinite():
    image = np.full((4, 4, 3), 0.3)
    assert psnr(image, image) == math.inf


@pytest.mark.parametrize("offset, expected", [(0.1, 20.0), (0.01, 40.0), (1.0, 0.0)])
def test_psnr_of_uniform_offsets(offset, expected):
    a = np.zeros((5, 6, 3))
    assert psnr(a, a + offset) == pytest.approx(expected)


def test_psnr_shape_check():
    with pytest.raises(DimensionMismatchError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 4)))


def test_ssim_of_identical_images_is_one():
    image, _ = noisy_pair()
    assert ssim(image, image) == pytest.approx(1.0)


def test_ssim_drops_with_noise():
    image, light = noisy_pair(noise=0.02)
    _, heavy = noisy_pair(noise=0.2)
    assert 0.0 < ssim(image, heavy) < ssim(image, light) < 1.0


def test_ssim_accepts_single_channel():
    image, other = noisy_pair(shape=(16, 16))
    assert ssim(image, other) == pytest.approx(ssim(image[:, :, None], other[:, :, None]))


def test_ssim_needs_a_full_window():
    with pytest.raises(DimensionMismatchError):
        ssim(np.zeros((10, 32, 3)), np.zeros((10, 32, 3)))


def test_gaussian_window_is_normalized():
    window = gaussian_window()
    assert window.shape == (11, 11)
    assert window.sum() == pytest.approx(1.0)
    assert window[5, 5] == window.max()


def test_chamfer():
    a = np.array([[0.0, 0.0, 0.0]])
    b = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 3.0]])
    assert chamfer(a, b) == pytest.approx(1.5)
    assert chamfer(b, a) == pytest.approx(1.5)
    assert chamfer(b, b) == 0.0
    with pytest.raises(ValueError):
        chamfer(a, np.zeros((0, 3)))


@pytest.mark.parametrize("value, text", [(None, ""), (math.inf, "inf"), (1.5, "1.500000"), (0.0, "0.000000")])
def test_format_metric(value, text):
    assert format_metric(value) == text


def test_eval_report_csv(tmp_path):
    report = EvalReport(views=[ViewMetrics("front", math.inf, 1.0), ViewMetrics("back", 30.0, 0.9)],
                        chamfer=0.25, count_a=10, count_b=5, frame_time=0.5)
    path = tmp_path / "eval.csv"
    report.to_csv(path)
    with open(path, newline='', encoding='utf-8') as f:
        rows = list(csv.reader(f))
    assert rows == [["view", "psnr", "ssim"], ["front", "inf", "1.000000"], ["back", "30.000000", "0.900000"],
                    ["chamfer", "0.250000", ""]]
    assert report.fps == 2.0
    assert report.mean_ssim == pytest.approx(0.95)


def test_evaluating_a_scene_against_itself(small_scene):
    scene, cameras = small_scene
    report = evaluate_scenes(scene, scene, cameras.cameras, cameras.names, warm_renders=1)
    assert [v.view for v in report.views] == cameras.names
    assert all(v.psnr == math.inf for v in report.views)
    assert all(v.ssim == pytest.approx(1.0) for v in report.views)
    assert report.chamfer == 0.0
    assert report.frame_time > 0.0


def test_evaluating_a_pruned_scene(small_scene):
    scene, cameras = small_scene
    half = scene.take(np.arange(0, scene.count, 2))
    report = evaluate_scenes(scene, half, cameras.cameras, warm_renders=0)
    assert report.count_b == 30
    assert report.chamfer > 0.0
    assert np.isfinite(report.mean_psnr)
    assert report.views[0].view == "cam000"
    assert report.fps == 0.0


def brute_chamfer(a, b):
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    return 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())


def direct_ssim(a, b):
    window = gaussian_window()
    half = window.shape[0] // 2
    height, width = a.shape[:2]

    def blur(x):
        padded = np.pad(x, half, mode="symmetric")
        out = np.zeros_like(x)
        for dy in range(window.shape[0]):
            for dx in range(window.shape[1]):
                out += window[dy, dx] * padded[dy:dy + height, dx:dx + width]
        return out

    values = []
    for c in range(a.shape[2]):
        x, y = a[:, :, c], b[:, :, c]
        mx, my = blur(x), blur(y)
        vx, vy, cov = blur(x * x) - mx * mx, blur(y * y) - my * my, blur(x * y) - mx * my
        c1, c2 = 0.01 ** 2, 0.03 ** 2
        values.append(np.mean((2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2))))
    return float(np.mean(values))


@pytest.mark.parametrize("seed", range(10))
def test_chamfer_matches_brute_force(seed):
    rng = SplitMix64(seed)
    a = rng.uniform_range(-1.0, 1.0, (17 + seed, 3))
    b = rng.uniform_range(-1.0, 1.0, (9 + 2 * seed, 3))
    assert chamfer(a, b) == pytest.approx(brute_chamfer(a, b), abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_ssim_matches_direct_convolution(seed):
    image, other = noisy_pair(seed=seed, shape=(16, 19, 3), noise=0.1)
    assert ssim(image, other) == pytest.approx(direct_ssim(image, other), abs=1e-9)
