import csv
import os
import signal
from collections import Counter
from pathlib import Path

import pytest

from engine.exceptions import SchedulerError, TaskFailedError, TaskRegistrationError
from engine.scene import GaussianScene
from engine.scheduler import (POST, PRE, Event, Pipeline, PlanEntry, ReplaceParams, ReplaceScene, SchedulePlan,
                              SetRates, StoreArtifact, Task, TaskScheduler, parse_plan, read_plan_file,
                              write_event_log, write_plan_file)
from engine.tasks import build_scheduler

PLANS = Path(__file__).resolve().parents[1] / "config" / "plans"


def noop(iteration):
    return None


def task(name, stage=PRE, roles=("iteration",), fn=noop):
    return Task(name=name, stage=stage, roles=roles, fn=fn)


class CountingOptimizer:
    def __init__(self):
        self.base_rates = {"sh_dc": 1.0}
        self.rates = dict(self.base_rates)
        self.steps = 0
        self.resets = 0

    def reset(self):
        self.resets += 1

    def step(self, scene, grads):
        self.steps += 1
        return scene


class Loss:
    grads = {}
    total = distill = mask = 0.0


def test_range_plan_has_python_range_semantics():
    plan = SchedulePlan.range(500, 15000, 100)
    assert plan.iterations() == list(range(500, 15000, 100))
    assert 500 in plan and 600 in plan
    assert 15000 not in plan and 550 not in plan
    assert SchedulePlan.range(3).iterations() == [0, 1, 2]
    assert SchedulePlan.range(5, 5, 1).iterations() == []


def test_explicit_plans():
    assert SchedulePlan.at(7).iterations() == [7]
    plan = SchedulePlan.of([9, 1, 4])
    assert plan.iterations() == [1, 4, 9]
    assert plan.iterations(limit=5) == [1, 4]
    assert plan.describe() == "@1,4,9"


@pytest.mark.parametrize("args", [(0, 10, 0), (-1, 10, 1), (0, -2, 1)])
def test_bad_plans(args):
    with pytest.raises(ValueError):
        SchedulePlan.range(*args)


def test_register_rejects_bad_tasks():
    scheduler = TaskScheduler()
    with pytest.raises(TaskRegistrationError):
        scheduler.register_task(SchedulePlan.range(1), task("x", stage="middle"))
    with pytest.raises(TaskRegistrationError):
        scheduler.register_task(SchedulePlan.range(1), task("x", roles=("iteration", "weather")))
    with pytest.raises(TaskRegistrationError) as err:
        scheduler.register_task(SchedulePlan.range(1), task("peek", roles=("render_output",)))
    assert err.value.task == "peek"
    assert len(scheduler) == 0
    assert scheduler.register_task(SchedulePlan.range(1), task("peek", POST, ("render_output",))) == 0


def test_dry_run_orders_by_iteration_then_stage_then_registration():
    scheduler = TaskScheduler()
    scheduler.register_task(SchedulePlan.range(0, 3, 1), task("late", POST))
    scheduler.register_task(SchedulePlan.at(1), task("b", PRE))
    scheduler.register_task(SchedulePlan.range(0, 3, 2), task("a", PRE))
    events = scheduler.dry_run(3)
    assert events == [
        Event(0, PRE, "a"), Event(0, POST, "late"),
        Event(1, PRE, "b"), Event(1, POST, "late"),
        Event(2, PRE, "a"), Event(2, POST, "late"),
    ]


def test_dry_run_of_the_vanilla_schedule():
    scheduler = build_scheduler(read_plan_file(PLANS / "vanilla_3dgs.plan"))
    counts = Counter(e.name for e in scheduler.dry_run(30000))
    assert counts == {
        "update_lr": 30000,
        "increase_sh_degree": 30,
        "collect_gradient_statistics": 15000,
        "prune_and_densify": 145,
        "reset_opacity": 5,
    }


def test_one_shot_switch_fires_once():
    scheduler = build_scheduler(read_plan_file(PLANS / "hac.plan"))
    fired = [e for e in scheduler.dry_run(30000) if e.name == "switch_to_entropy_training"]
    assert fired == [Event(10001, POST, "switch_to_entropy_training")]


def test_every_shipped_plan_parses():
    for path in sorted(PLANS.glob("*.plan")):
        scheduler = build_scheduler(read_plan_file(path))
        assert len(scheduler) > 0, path.name


def test_pipeline_runs_the_five_stages_in_order():
    scheduler = TaskScheduler()
    scheduler.register_task(SchedulePlan.range(2), task("before"))
    scheduler.register_task(SchedulePlan.range(2), task("after", POST))
    optimizer = CountingOptimizer()
    pipeline = Pipeline(scheduler, render_fn=lambda scene, cam: "image", loss_fn=lambda ctx: Loss(),
                        optimizer=optimizer)
    result = pipeline.run(GaussianScene.empty(), ["cam"], 2)

    assert [(e.stage, e.name) for e in result.events if e.iteration == 1] == [
        (PRE, "before"), ("render", "render"), ("loss", "loss"), (POST, "after"), ("optimizer", "optimizer")]
    assert optimizer.steps == 2
    assert result.iterations_run == 2
    assert not result.stopped_early
    assert pipeline.get_status() == {"running": False, "iteration": 1, "tasks": 2}


def test_tasks_get_only_declared_roles():
    seen = []

    def body(iteration, render_output, config):
        seen.append((iteration, render_output, config["k"]))

    scheduler = TaskScheduler()
    scheduler.register_task(SchedulePlan.of([0, 2]), task("peek", POST, ("iteration", "render_output", "config"), body))
    pipeline = Pipeline(scheduler, render_fn=lambda scene, cam: f"img-{cam}", config={"k": 5})
    pipeline.run(GaussianScene.empty(), ["a", "b"], 3)
    assert seen == [(0, "img-a", 5), (2, "img-a", 5)]


def test_task_failures_carry_iteration_and_name():
    def explode(iteration):
        if iteration == 3:
            raise RuntimeError("boom")

    scheduler = TaskScheduler()
    scheduler.register_task(SchedulePlan.range(10), task("explode", fn=explode))
    with pytest.raises(TaskFailedError) as err:
        Pipeline(scheduler).run(GaussianScene.empty(), [], 10)
    assert err.value.iteration == 3
    assert err.value.task == "explode"
    assert isinstance(err.value.__cause__, RuntimeError)


def test_mutation_commands(three_splats):
    smaller = three_splats.take([0, 1])

    def shrink(scene):
        return [ReplaceScene(smaller), StoreArtifact("log", scene.count, append=True)]

    def brighten(scene):
        return ReplaceParams({"sh_dc": scene.sh_dc + 1.0})

    def slow_down(iteration):
        return SetRates({"sh_dc": 0.5})

    scheduler = TaskScheduler()
    scheduler.register_task(SchedulePlan.at(0), task("shrink", PRE, ("scene",), shrink))
    scheduler.register_task(SchedulePlan.at(1), task("brighten", PRE, ("scene",), brighten))
    scheduler.register_task(SchedulePlan.at(1), task("slow_down", POST, ("iteration",), slow_down))
    optimizer = CountingOptimizer()
    result = Pipeline(scheduler, optimizer=optimizer).run(three_splats, [], 2)

    assert result.scene.count == 2
    assert result.scene.sh_dc == pytest.approx(smaller.sh_dc + 1.0)
    assert result.artifacts["log"] == [3]
    assert optimizer.resets == 1
    assert optimizer.rates == {"sh_dc": 0.5}


def test_set_rates_needs_an_optimizer():
    scheduler = TaskScheduler()
    scheduler.register_task(SchedulePlan.at(0), task("rates", fn=lambda iteration: SetRates({"x": 1.0})))
    with pytest.raises(SchedulerError):
        Pipeline(scheduler).run(GaussianScene.empty(), [], 1)


def test_negative_iteration_count():
    with pytest.raises(SchedulerError):
        Pipeline(TaskScheduler()).run(GaussianScene.empty(), [], -1)


def test_interrupt_stops_after_the_current_iteration():
    def interrupt(iteration):
        if iteration == 2:
            os.kill(os.getpid(), signal.SIGINT)

    previous = signal.getsignal(signal.SIGINT)
    scheduler = TaskScheduler()
    scheduler.register_task(SchedulePlan.range(100), task("interrupt", fn=interrupt))
    result = Pipeline(scheduler).run(GaussianScene.empty(), [], 100)

    assert result.stopped_early
    assert result.iterations_run == 3
    assert signal.getsignal(signal.SIGINT) is previous


@pytest.mark.parametrize("text", [
    "pre update_lr 0 10",
    "middle update_lr 0 10 1",
    "pre update_lr @a",
    "pre update_lr 0 10 0",
    "pre",
])
def test_parse_plan_errors_name_the_line(text):
    with pytest.raises(SchedulerError, match="test.plan:2"):
        parse_plan("# header\n" + text, source="test.plan")


def test_parse_plan_skips_comments():
    entries = parse_plan("\n# only comments\npre update_lr 0 5 1  # trailing\npost prune @3\n")
    assert entries == [PlanEntry(PRE, "update_lr", SchedulePlan.range(0, 5, 1)),
                       PlanEntry(POST, "prune", SchedulePlan.of([3]))]


def test_plan_file_round_trip(tmp_path):
    entries = read_plan_file(PLANS / "speedy_splat.plan")
    path = tmp_path / "copy.plan"
    write_plan_file(entries, path)
    assert read_plan_file(path) == entries


def test_missing_plan_file(tmp_path):
    with pytest.raises(SchedulerError):
        read_plan_file(tmp_path / "absent.plan")


def test_event_log(tmp_path):
    path = tmp_path / "events.csv"
    write_event_log([Event(0, PRE, "update_lr"), Event(0, "render", "render")], path)
    with open(path, newline='', encoding='utf-8') as f:
        rows = list(csv.reader(f))
    assert rows == [["iteration", "stage", "task"], ["0", "pre", "update_lr"], ["0", "render", "render"]]
