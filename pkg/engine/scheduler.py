"""
五阶段训练流水线驱动
每次迭代依次执行 pre 阶段任务、渲染、损失、post 阶段任务和优化器更新。
任务按迭代计划注册（Python range 语义），只能拿到自己声明的上下文角色。
"""

import csv
import logging
import signal
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from .exceptions import SchedulerError, TaskFailedError, TaskRegistrationError

logger = logging.getLogger(__name__)

PRE = "pre"
POST = "post"
STAGES = (PRE, POST)

ROLES = frozenset({
    "iteration", "scene", "optimizer", "render_output", "loss", "config", "rng",
    "cameras", "artifacts",
})


@dataclass(frozen=True)
class SchedulePlan:
    """任务触发的迭代集合：range、显式集合或单个迭代"""
    start: int = 0
    stop: int = 0
    step: int = 1
    explicit: Optional[FrozenSet[int]] = None

    def __post_init__(self):
        if self.explicit is None:
            if self.step < 1:
                raise ValueError(f"plan step must be >= 1, got {self.step}")
            if self.start < 0 or self.stop < 0:
                raise ValueError("plan iterations must be >= 0")
        elif any(i < 0 for i in self.explicit):
            raise ValueError("plan iterations must be >= 0")

    @classmethod
    def range(cls, start: int, stop: Optional[int] = None, step: int = 1) -> "SchedulePlan":
        if stop is None:
            start, stop = 0, start
        return cls(start=int(start), stop=int(stop), step=int(step))

    @classmethod
    def at(cls, iteration: int) -> "SchedulePlan":
        return cls(explicit=frozenset({int(iteration)}))

    @classmethod
    def of(cls, iterations: Iterable[int]) -> "SchedulePlan":
        return cls(explicit=frozenset(int(i) for i in iterations))

    def __contains__(self, iteration: int) -> bool:
        if self.explicit is not None:
            return iteration in self.explicit
        return self.start <= iteration < self.stop and (iteration - self.start) % self.step == 0

    def iterations(self, limit: Optional[int] = None) -> List[int]:
        """升序的触发迭代；给出 limit 时只返回小于它的部分"""
        if self.explicit is not None:
            its = sorted(self.explicit)
            return [i for i in its if limit is None or i < limit]
        stop = self.stop if limit is None else min(self.stop, limit)
        return list(range(self.start, stop, self.step))

    def describe(self) -> str:
        if self.explicit is not None:
            return "@" + ",".join(str(i) for i in sorted(self.explicit))
        return f"{self.start} {self.stop} {self.step}"


def plan_contains(plan: SchedulePlan, iteration: int) -> bool:
    return iteration in plan


@dataclass
class Task:
    name: str
    stage: str
    roles: Tuple[str, ...]
    fn: Callable[..., Any]


@dataclass
class Registration:
    id: int
    plan: SchedulePlan
    task: Task


@dataclass(frozen=True)
class Event:
    iteration: int
    stage: str
    name: str


# 任务返回的变更指令，由驱动统一执行

@dataclass
class ReplaceScene:
    scene: Any


@dataclass
class ReplaceParams:
    params: Dict[str, Any]


@dataclass
class SetRates:
    rates: Dict[str, float]


@dataclass
class StoreArtifact:
    key: str
    value: Any
    append: bool = False


@dataclass
class PipelineContext:
    iteration: int = 0
    scene: Any = None
    optimizer: Any = None
    render_output: Any = None
    loss: Any = None
    config: Dict[str, Any] = field(default_factory=dict)
    rng: Any = None
    cameras: Sequence[Any] = ()
    artifacts: Dict[str, Any] = field(default_factory=dict)
    camera: Any = None

    def inject(self, roles: Iterable[str]) -> Dict[str, Any]:
        return {role: getattr(self, role) for role in roles}


class TaskScheduler:
    """(计划, 任务) 注册表，保持注册顺序"""

    def __init__(self):
        self.registrations: List[Registration] = []

    def register_task(self, plan: SchedulePlan, task: Task) -> int:
        if task.stage not in STAGES:
            raise TaskRegistrationError(task.name, f"task '{task.name}' has unknown stage '{task.stage}'")
        unknown = set(task.roles) - ROLES
        if unknown:
            raise TaskRegistrationError(task.name, f"task '{task.name}' requests unknown roles {sorted(unknown)}")
        if task.stage == PRE and "render_output" in task.roles:
            raise TaskRegistrationError(task.name, f"task '{task.name}' needs render_output and must be a post-stage task")
        reg_id = len(self.registrations)
        self.registrations.append(Registration(reg_id, plan, task))
        logger.debug(f"registered {task.stage} task '{task.name}' plan {plan.describe()}")
        return reg_id

    def due(self, stage: str, iteration: int) -> List[Registration]:
        return [r for r in self.registrations if r.task.stage == stage and iteration in r.plan]

    def dry_run(self, total_iterations: int) -> List[Event]:
        """列出一次运行中所有 (迭代, 阶段, 任务) 触发，不做渲染

        Args:
            total_iterations: 总迭代数

        Returns:
            按执行顺序排列的事件列表
        """
        stage_rank = {PRE: 0, POST: 1}
        keyed = []
        for reg in self.registrations:
            for it in reg.plan.iterations(limit=total_iterations):
                keyed.append(((it, stage_rank[reg.task.stage], reg.id), Event(it, reg.task.stage, reg.task.name)))
        keyed.sort(key=lambda pair: pair[0])
        return [event for _, event in keyed]

    def __len__(self):
        return len(self.registrations)


@dataclass
class PipelineResult:
    scene: Any
    events: List[Event]
    artifacts: Dict[str, Any]
    iterations_run: int
    stopped_early: bool = False


class Pipeline:
    """流水线调度器"""

    def __init__(self, scheduler: TaskScheduler, render_fn: Optional[Callable] = None,
                 loss_fn: Optional[Callable] = None, optimizer: Any = None,
                 view_sampler: Optional[Callable] = None, config: Optional[Dict[str, Any]] = None,
                 rng: Any = None, progress: bool = False):
        self.scheduler = scheduler
        self.render_fn = render_fn
        self.loss_fn = loss_fn
        self.optimizer = optimizer
        self.view_sampler = view_sampler
        self.config = config or {}
        self.rng = rng
        self.progress = progress
        self.running = False
        self.iteration = 0
        self._previous_handlers = {}

    def _signal_handler(self, signum, frame):
        logger.info(f"received signal {signum}, stopping after iteration {self.iteration}")
        self.running = False

    def _setup_signal_handlers(self):
        if threading.current_thread() is not threading.main_thread():
            return
        for sig in (signal.SIGINT, signal.SIGTERM):
            self._previous_handlers[sig] = signal.signal(sig, self._signal_handler)

    def _restore_signal_handlers(self):
        for sig, handler in self._previous_handlers.items():
            signal.signal(sig, handler)
        self._previous_handlers = {}

    def _apply(self, ctx: PipelineContext, result: Any) -> None:
        if result is None:
            return
        commands = result if isinstance(result, (list, tuple)) else [result]
        for command in commands:
            if isinstance(command, ReplaceScene):
                previous = ctx.scene.count if ctx.scene is not None else None
                ctx.scene = command.scene
                if self.optimizer is not None and previous != command.scene.count and hasattr(self.optimizer, "reset"):
                    self.optimizer.reset()
            elif isinstance(command, ReplaceParams):
                ctx.scene = ctx.scene.with_params(**command.params)
            elif isinstance(command, SetRates):
                if self.optimizer is None:
                    raise SchedulerError("SetRates returned but the pipeline has no optimizer")
                self.optimizer.rates.update(command.rates)
            elif isinstance(command, StoreArtifact):
                if command.append:
                    ctx.artifacts.setdefault(command.key, []).append(command.value)
                else:
                    ctx.artifacts[command.key] = command.value
            else:
                raise SchedulerError(f"unknown mutation command {type(command).__name__}")

    def _dispatch(self, ctx: PipelineContext, stage: str, events: List[Event]) -> None:
        for reg in self.scheduler.due(stage, ctx.iteration):
            task = reg.task
            events.append(Event(ctx.iteration, stage, task.name))
            try:
                result = task.fn(**ctx.inject(task.roles))
            except Exception as e:
                raise TaskFailedError(ctx.iteration, task.name, e) from e
            self._apply(ctx, result)

    def _run_stage(self, ctx: PipelineContext, name: str, fn: Callable[[], Any]) -> Any:
        try:
            return fn()
        except Exception as e:
            raise TaskFailedError(ctx.iteration, name, e) from e

    def run(self, scene, cameras: Sequence[Any], total_iterations: int) -> PipelineResult:
        if total_iterations < 0:
            raise SchedulerError("total_iterations must be >= 0")
        ctx = PipelineContext(scene=scene, optimizer=self.optimizer, config=self.config,
                              rng=self.rng, cameras=cameras)
        events: List[Event] = []
        self.running = True
        self._setup_signal_handlers()
        completed = 0

        iterator = range(total_iterations)
        if self.progress and total_iterations:
            from tqdm import tqdm
            iterator = tqdm(iterator, desc="pipeline", unit="it")

        try:
            for it in iterator:
                if not self.running:
                    break
                self.iteration = it
                ctx.iteration = it
                ctx.render_output = None
                ctx.loss = None
                ctx.camera = self._pick_camera(ctx)

                self._dispatch(ctx, PRE, events)

                events.append(Event(it, "render", "render"))
                if self.render_fn is not None and ctx.camera is not None:
                    ctx.render_output = self._run_stage(ctx, "render", lambda: self.render_fn(ctx.scene, ctx.camera))

                events.append(Event(it, "loss", "loss"))
                if self.loss_fn is not None:
                    ctx.loss = self._run_stage(ctx, "loss", lambda: self.loss_fn(ctx))

                self._dispatch(ctx, POST, events)

                events.append(Event(it, "optimizer", "optimizer"))
                if self.optimizer is not None and ctx.loss is not None and getattr(ctx.loss, "grads", None) is not None:
                    ctx.scene = self._run_stage(ctx, "optimizer", lambda: self.optimizer.step(ctx.scene, ctx.loss.grads))
                completed = it + 1
        finally:
            stopped_early = self.running is False and completed < total_iterations
            self.running = False
            self._restore_signal_handlers()

        if stopped_early:
            logger.info(f"pipeline stopped early after {completed} of {total_iterations} iterations")
        return PipelineResult(scene=ctx.scene, events=events, artifacts=ctx.artifacts,
                              iterations_run=completed, stopped_early=stopped_early)

    def _pick_camera(self, ctx: PipelineContext):
        if self.view_sampler is not None:
            return self.view_sampler(ctx)
        if not ctx.cameras:
            return None
        return ctx.cameras[ctx.iteration % len(ctx.cameras)]

    def get_status(self) -> dict:
        return {
            "running": self.running,
            "iteration": self.iteration,
            "tasks": len(self.scheduler),
        }


def run_pipeline(scene, cameras, total_iterations: int, scheduler: TaskScheduler,
                 loss_fn: Optional[Callable] = None, optimizer: Any = None, **kwargs) -> PipelineResult:
    return Pipeline(scheduler, loss_fn=loss_fn, optimizer=optimizer, **kwargs).run(scene, cameras, total_iterations)


@dataclass
class PlanEntry:
    stage: str
    name: str
    plan: SchedulePlan


def parse_plan(text: str, source: str = "<plan>") -> List[PlanEntry]:
    """解析计划文件

    每行为 `stage task_name start stop step` 或 `stage task_name @i`，
    `#` 之后的内容为注释
    """
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 3 or parts[0] not in STAGES:
            raise SchedulerError(f"{source}:{lineno}: expected 'pre|post task_name <plan>'")
        stage, name, rest = parts[0], parts[1], parts[2:]
        try:
            if len(rest) == 1 and rest[0].startswith("@"):
                plan = SchedulePlan.of(int(v) for v in rest[0][1:].split(","))
            elif len(rest) == 3:
                plan = SchedulePlan.range(int(rest[0]), int(rest[1]), int(rest[2]))
            else:
                raise ValueError(f"cannot read plan '{' '.join(rest)}'")
        except ValueError as e:
            raise SchedulerError(f"{source}:{lineno}: {e}") from e
        entries.append(PlanEntry(stage, name, plan))
    return entries


def read_plan_file(path) -> List[PlanEntry]:
    path = Path(path)
    if not path.exists():
        raise SchedulerError(f"plan file not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        return parse_plan(f.read(), source=str(path))


def write_plan_file(entries: Sequence[PlanEntry], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for entry in entries:
            f.write(f"{entry.stage} {entry.name} {entry.plan.describe()}\n")


def write_event_log(events: Sequence[Event], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "stage", "task"])
        for event in events:
            writer.writerow([event.iteration, event.stage, event.name])
