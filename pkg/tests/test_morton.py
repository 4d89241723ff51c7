import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from engine.morton import LEVELS, compact3, interleave, split3, morton_key, morton_keys, morton_sort, quantize_positions
from engine.rasterizer import render
from engine.scene import GaussianScene
from engine.scene_io import SyntheticSceneSpec, generate_synthetic

coords = st.integers(min_value=0, max_value=LEVELS - 1)


@given(coords)
def test_split_then_compact_is_identity(value):
    assert int(compact3(split3(value))) == value


@given(coords, coords, coords)
def test_interleave_recovers_each_axis(qx, qy, qz):
    code = interleave(qx, qy, qz)
    assert int(compact3(code)) == qx
    assert int(compact3(code >> np.uint64(1))) == qy
    assert int(compact3(code >> np.uint64(2))) == qz


def test_bit_positions():
    assert int(interleave(1, 0, 0)) == 1
    assert int(interleave(0, 1, 0)) == 2
    assert int(interleave(0, 0, 1)) == 4
    assert int(interleave(2, 0, 0)) == 8
    top = LEVELS - 1
    assert int(interleave(top, top, top)) == (1 << 63) - 1


def test_quantize_positions_clamps_to_grid():
    q = quantize_positions(np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.5, 0.5, 0.5]]), [0.0] * 3, [1.0] * 3)
    assert q[0].tolist() == [0, 0, 0]
    assert q[1].tolist() == [LEVELS - 1] * 3
    assert q[2].tolist() == [LEVELS // 2] * 3


def test_zero_extent_axis_maps_to_zero():
    q = quantize_positions(np.array([[0.3, 2.0, 1.0], [0.7, 2.0, 1.0]]), [0.3, 2.0, 1.0], [0.7, 2.0, 1.0])
    assert q[:, 1].tolist() == [0, 0]
    assert q[:, 2].tolist() == [0, 0]


def test_morton_key_of_corners():
    aabb = (np.zeros(3), np.ones(3))
    assert morton_key([0.0, 0.0, 0.0], aabb) == 0
    assert morton_key([1.0, 1.0, 1.0], aabb) == (1 << 63) - 1


def test_morton_sort_orders_keys(small_scene):
    scene, _ = small_scene
    ordered, perm = morton_sort(scene)
    assert sorted(perm.tolist()) == list(range(scene.count))
    lo, hi = scene.aabb()
    keys = morton_keys(ordered.positions, lo, hi)
    assert np.all(keys[1:] >= keys[:-1])
    assert np.array_equal(ordered.sh_dc, scene.sh_dc[perm])


def test_morton_sort_is_stable_for_equal_keys():
    scene = GaussianScene.from_arrays(
        positions=[[1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0]],
        opacity_logits=[[0.0], [1.0], [2.0], [3.0]],
    )
    _, perm = morton_sort(scene)
    assert perm.tolist() == [1, 3, 0, 2]


def test_morton_sort_empty():
    ordered, perm = morton_sort(GaussianScene.empty())
    assert ordered.count == 0
    assert perm.size == 0


@pytest.mark.parametrize("q, code", [((1, 1, 1), 7), ((1, 2, 4), 273)])
def test_reference_codes(q, code):
    assert int(interleave(*q)) == code


@pytest.mark.parametrize("seed", range(50))
def test_morton_order_does_not_change_renders(seed):
    scene, cameras = generate_synthetic(SyntheticSceneSpec(seed=seed, n_gaussians=40, n_cameras=2,
                                                           width=32, height=32))
    ordered, _ = morton_sort(scene)
    for camera in cameras:
        assert np.array_equal(render(ordered, camera).color, render(scene, camera).color)
