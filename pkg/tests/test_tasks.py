from pathlib import Path

import pytest

from engine.finetune import Adam
from engine.importance import ImportanceScores
from engine.scheduler import POST, PRE, Pipeline, ReplaceScene, SetRates, StoreArtifact, read_plan_file
from engine.tasks import (build_scheduler, calculate_importance_score, make_task, placeholder_body, prune_task,
                          record_progress, update_lr, wired_task_names)

PLANS = Path(__file__).resolve().parents[1] / "config" / "plans"


def test_wired_names():
    assert wired_task_names() == ["calculate_importance_score", "prune", "record_progress", "update_lr"]


def test_unknown_names_get_a_placeholder():
    task = make_task("reset_opacity", POST)
    assert task.roles == ("iteration",)
    assert task.fn(iteration=4) is None
    assert placeholder_body("x").roles == ("iteration",)


def test_update_lr_decays_exponentially():
    adam = Adam({"sh_dc": 1.0, "mask_logits": 0.5})
    config = {"iterations": 11, "lr_decay_final_ratio": 0.01}
    assert update_lr(0, adam, config).rates == pytest.approx({"sh_dc": 1.0, "mask_logits": 0.5})
    assert update_lr(5, adam, config).rates == pytest.approx({"sh_dc": 0.1, "mask_logits": 0.05})
    assert update_lr(10, adam, config).rates == pytest.approx({"sh_dc": 0.01, "mask_logits": 0.005})
    assert update_lr(50, adam, config).rates == pytest.approx({"sh_dc": 0.01, "mask_logits": 0.005})


def test_update_lr_without_optimizer_or_decay():
    assert update_lr(3, None, {}) is None
    result = update_lr(3, Adam({"sh_dc": 0.2}), {"iterations": 10})
    assert isinstance(result, SetRates)
    assert result.rates == {"sh_dc": 0.2}


def test_importance_task_stores_scores(small_scene):
    scene, cameras = small_scene
    result = calculate_importance_score(scene, cameras.cameras, {"importance": "opacity"})
    assert isinstance(result, StoreArtifact)
    assert result.key == "importance"
    assert isinstance(result.value, ImportanceScores)
    assert len(result.value) == scene.count


def test_prune_task_halves_the_scene(small_scene):
    scene, cameras = small_scene
    replace, clear = prune_task(scene, cameras.cameras, {"prune_fraction": 0.5}, {})
    assert isinstance(replace, ReplaceScene)
    assert replace.scene.count == scene.count // 2
    assert clear == StoreArtifact("importance", None)


def test_record_progress_skips_iterations_without_loss(three_splats):
    assert record_progress(0, three_splats, None, {}) is None


def test_compress_plan_prunes_at_iteration_zero(small_scene):
    scene, cameras = small_scene
    scheduler = build_scheduler(read_plan_file(PLANS / "compress.plan"))
    pipeline = Pipeline(scheduler, config={"prune_fraction": 0.5, "importance": "opacity"})
    result = pipeline.run(scene, cameras.cameras, 2)

    assert result.scene.count == scene.count // 2
    assert result.artifacts["importance"] is None
    names = [(e.stage, e.name) for e in result.events if e.iteration == 0]
    assert names == [(PRE, "update_lr"), ("render", "render"), ("loss", "loss"),
                     (POST, "calculate_importance_score"), (POST, "prune"), (POST, "record_progress"),
                     ("optimizer", "optimizer")]
