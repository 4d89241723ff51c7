import sys
from pathlib import Path

import numpy as np
import pytest

# add project root to the import path
ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(ROOT))

from engine.scene import Camera, GaussianScene, logit  # noqa: E402
from engine.scene_io import SyntheticSceneSpec, generate_synthetic  # noqa: E402

FIXTURES = ROOT / "fixtures"


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def front_camera():
    """32x32 camera at z = -3 looking down +z at the origin"""
    return Camera(32, 32, 32.0, 32.0, 16.0, 16.0, np.eye(3), np.array([0.0, 0.0, 3.0]))


@pytest.fixture
def back_camera():
    return Camera(32, 32, 32.0, 32.0, 16.0, 16.0, np.diag([-1.0, 1.0, -1.0]), np.array([0.0, 0.0, 3.0]))


@pytest.fixture
def three_splats():
    """Three overlapping, half-transparent Gaussians around the origin"""
    return GaussianScene.from_arrays(
        positions=[[0.0, 0.0, 0.0], [0.15, -0.1, 0.2], [-0.2, 0.1, -0.1]],
        rotation_params=[[1.0, 0.0, 0.0, 0.0], [0.9, 0.1, -0.2, 0.3], [0.7, -0.3, 0.2, 0.1]],
        log_scales=np.log([[0.20, 0.15, 0.10], [0.12, 0.25, 0.15], [0.18, 0.18, 0.30]]),
        opacity_logits=logit([[0.6], [0.5], [0.7]]),
        sh_dc=[[0.4, 0.2, 0.1], [0.1, 0.5, 0.3], [0.3, 0.1, 0.6]],
        sh_rest=np.linspace(-0.05, 0.05, 3 * 45).reshape(3, 45),
    )


@pytest.fixture
def small_spec():
    return SyntheticSceneSpec(seed=7, n_gaussians=60, n_cameras=4, width=32, height=32)


@pytest.fixture
def small_scene(small_spec):
    """(scene, CameraSetFile) of a small deterministic synthetic scene"""
    return generate_synthetic(small_spec)


def make_random_scene(seed, n=None):
    """Small random scene: opacity <= 0.7 keeps every pixel clear of the alpha clamp
    and the early stop; small SH keeps the raw color positive"""
    from engine.prng import SplitMix64
    rng = SplitMix64(seed)
    n = 2 + seed % 5 if n is None else n
    return GaussianScene.from_arrays(
        positions=rng.uniform_range(-0.4, 0.4, (n, 3)),
        rotation_params=rng.normal(4 * n).reshape(n, 4),
        log_scales=np.log(rng.uniform_range(0.08, 0.25, (n, 3))),
        opacity_logits=logit(rng.uniform_range(0.2, 0.7, (n, 1))),
        sh_dc=rng.uniform_range(-0.5, 0.5, (n, 3)),
        sh_rest=rng.uniform_range(-0.02, 0.02, (n, 45)),
        mask_logits=rng.uniform_range(-7.0, 3.0, (n, 1)),
    )


@pytest.fixture
def random_scene():
    return make_random_scene


@pytest.fixture
def splat_jacobian_sq():
    """Central differences on one splat's value g at every pixel:
    sum over pixels and channels of (dC/dg)^2"""
    from engine import rasterizer

    def oracle(scene, camera, index, step=1e-8):
        original = rasterizer._splat_falloff
        images = []
        for sign in (1.0, -1.0):
            def bumped(splats, ids, px, py):
                return original(splats, ids, px, py) + np.where(ids == index, sign * step, 0.0)[:, None]
            with pytest.MonkeyPatch.context() as m:
                m.setattr(rasterizer, "_splat_falloff", bumped)
                images.append(rasterizer.render(scene, camera, want_depth=False).color)
        jac = (images[0] - images[1]) / (2.0 * step)
        return float(np.sum(jac * jac))

    return oracle
