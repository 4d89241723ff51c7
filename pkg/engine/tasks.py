"""
计划文件中任务名对应的任务实现
计划文件只写任务名，由 build_scheduler 在这里查找。没有实现的任务名
（densify、reset opacity、anchor 调整等）使用只打日志的占位任务，
这类计划照样可以运行并记录触发。
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

from .importance import compute_scores, rank_bottom
from .pruning import masked_fraction, prune
from .scheduler import PlanEntry, ReplaceScene, SetRates, StoreArtifact, Task, TaskScheduler

logger = logging.getLogger(__name__)


def update_lr(iteration, optimizer, config):
    """学习率指数衰减，最后一次迭代降到 base * lr_decay_final_ratio"""
    if optimizer is None:
        return None
    span = max(1, int(config.get("iterations", 1)) - 1)
    factor = float(config.get("lr_decay_final_ratio", 1.0)) ** (min(iteration, span) / span)
    return SetRates({name: rate * factor for name, rate in optimizer.base_rates.items()})


def calculate_importance_score(scene, cameras, config):
    scores = compute_scores(config.get("importance", "hessian"), scene, cameras,
                            beta=float(config.get("opacity_beta", 0.0)),
                            mask_threshold=float(config.get("mask_threshold", 0.01)))
    logger.info(f"{scores.kind} importance computed over {scores.views_accumulated} views")
    return StoreArtifact("importance", scores)


def prune_task(scene, cameras, config, artifacts):
    scores = artifacts.get("importance")
    if scores is None or len(scores) != scene.count:
        scores = calculate_importance_score(scene, cameras, config).value
    drop = rank_bottom(scores, float(config.get("prune_fraction", 0.5)))
    pruned = prune(scene, drop)
    logger.info(f"pruned {scene.count} -> {pruned.count} Gaussians")
    return [ReplaceScene(pruned), StoreArtifact("importance", None)]


def record_progress(iteration, scene, loss, config):
    if loss is None:
        return None
    row = {
        "iter": iteration,
        "loss": loss.total,
        "distill": loss.distill,
        "mask_loss": loss.mask,
        "masked_fraction": masked_fraction(scene, float(config.get("mask_threshold", 0.01))),
    }
    logger.debug(f"iter {iteration}: loss={loss.total:.6g} distill={loss.distill:.6g} mask={loss.mask:.6g}")
    return StoreArtifact("progress", row, append=True)


@dataclass
class TaskBody:
    roles: Tuple[str, ...]
    fn: Callable


task_registry: Dict[str, TaskBody] = {
    "update_lr": TaskBody(("iteration", "optimizer", "config"), update_lr),
    "calculate_importance_score": TaskBody(("scene", "cameras", "config"), calculate_importance_score),
    "prune": TaskBody(("scene", "cameras", "config", "artifacts"), prune_task),
    "record_progress": TaskBody(("iteration", "scene", "loss", "config"), record_progress),
}


def placeholder_body(name: str) -> TaskBody:
    def _placeholder(iteration):
        logger.debug(f"iteration {iteration}: task '{name}' has no body, skipped")
    return TaskBody(("iteration",), _placeholder)


def make_task(name: str, stage: str) -> Task:
    body = task_registry.get(name) or placeholder_body(name)
    return Task(name=name, stage=stage, roles=body.roles, fn=body.fn)


def build_scheduler(entries: Sequence[PlanEntry], scheduler: Optional[TaskScheduler] = None) -> TaskScheduler:
    scheduler = scheduler or TaskScheduler()
    for entry in entries:
        scheduler.register_task(entry.plan, make_task(entry.name, entry.stage))
    return scheduler


def wired_task_names():
    return sorted(task_registry)
