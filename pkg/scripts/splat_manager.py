#!/usr/bin/env python3
"""
高斯溅射场景压缩工具
提供命令行接口：gen / compress / decompress / eval / bench / score / prune / finetune / plan
"""

import argparse
import logging
import sys
from pathlib import Path

# 添加项目根目录到Python路径
sys.path.insert(0, str(Path(__file__).parent.parent))

from engine.bundle import read_directory
from engine.exceptions import SplatError, StageError
from engine.metrics import format_metric
from engine.scene_io import read_cameras, read_ply, write_ply
from engine.scheduler import read_plan_file, write_event_log
from engine.settings import dump_config, load_config, setup_logging
from engine.splat_engine import SplatEngine, stage, write_bench_csv
from engine.tasks import build_scheduler

logger = logging.getLogger("splat_manager")


def print_table(title, rows, headers):
    """打印定宽汇总表"""
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h))
              for i, h in enumerate(headers)]
    line = "=" * (sum(widths) + 2 * len(widths))
    print("\n" + line)
    print(title)
    print(line)
    print("  ".join(f"{str(h):<{w}}" for h, w in zip(headers, widths)))
    for row in rows:
        print("  ".join(f"{str(v):<{w}}" for v, w in zip(row, widths)))
    print(line)


def _load_inputs(scene_path, cameras_path):
    with stage("read"):
        return read_ply(scene_path), read_cameras(cameras_path)


def _output(args, default):
    return Path(args.out) if args.out else Path(default)


def cmd_gen(engine, args):
    """生成合成场景"""
    summary = engine.generate(_output(args, "output/gen"))
    print_table("synthetic scene", [
        ["scene", summary.scene_path],
        ["cameras", summary.cameras_path],
        ["gaussians", summary.count],
        ["renders", f"{len(summary.render_paths)} ({summary.nonblack_views} non-black)"],
    ], ["item", "value"])


def cmd_compress(engine, args):
    """打分 -> 剪枝 -> 微调 -> 编码"""
    scene, cameras = _load_inputs(args.scene, args.cameras)
    out_path = _output(args, "output/scene.spwz")
    summary = engine.compress(scene, cameras.cameras, out_path)
    print_table(f"compressed -> {out_path}", [line.split(":", 1) for line in summary.lines()], ["metric", "value"])


def cmd_decompress(engine, args):
    with stage("read"):
        data = Path(args.bundle).read_bytes()
    with stage("decode"):
        info = read_directory(data)
    scene = engine.decompress(data)
    out_path = _output(args, "output/decoded.ply")
    with stage("write"):
        write_ply(scene, out_path)
    print_table(f"decompressed -> {out_path}", [
        ["gaussians", scene.count],
        ["crc", f"ok ({info.crc:08x})"],
        ["bytes", info.size],
    ], ["item", "value"])


def cmd_eval(engine, args):
    with stage("read"):
        scene_a = read_ply(args.scene_a)
        scene_b = read_ply(args.scene_b)
        cameras = read_cameras(args.cameras)
    out_path = _output(args, "output/eval.csv")
    report = engine.evaluate(scene_a, scene_b, cameras, image_dir=out_path.parent / "images")
    report.to_csv(out_path)
    rows = [[v.view, format_metric(v.psnr), format_metric(v.ssim)] for v in report.views]
    print_table(f"evaluation -> {out_path}", rows, ["view", "psnr", "ssim"])
    print(f"chamfer: {format_metric(report.chamfer)}  N: {report.count_a} -> {report.count_b}  "
          f"frame time: {report.frame_time * 1000:.1f} ms  "
          f"peak memory: {format_metric(report.peak_memory_mb)} MB")


def cmd_bench(engine, args):
    scene, cameras = _load_inputs(args.scene, args.cameras)
    rows = engine.bench(scene, cameras)
    out_path = _output(args, "output/bench.csv")
    write_bench_csv(rows, out_path)
    print_table(f"rate-distortion sweep -> {out_path}", [r.as_csv() for r in rows],
                ["config", "bytes", "bpp", "N", "psnr", "ssim", "chamfer", "fps"])


def cmd_score(engine, args):
    scene, cameras = _load_inputs(args.scene, args.cameras)
    scores = engine.score(scene, cameras.cameras)
    out_path = _output(args, "output/scores.csv")
    scores.to_csv(out_path)
    print(f"{scores.kind} scores for {len(scores)} Gaussians over {scores.views_accumulated} views -> {out_path}")


def cmd_prune(engine, args):
    scene, cameras = _load_inputs(args.scene, args.cameras)
    pruned = engine.prune(scene, cameras.cameras)
    out_path = _output(args, "output/pruned.ply")
    with stage("write"):
        write_ply(pruned, out_path)
    print(f"pruned {scene.count} -> {pruned.count} Gaussians -> {out_path}")


def cmd_finetune(engine, args):
    with stage("read"):
        student = read_ply(args.student)
        teacher = read_ply(args.teacher)
        cameras = read_cameras(args.cameras)
    out_path = _output(args, "output/finetuned.ply")
    summary = engine.finetune(student, teacher, cameras.cameras, progress_csv=args.progress_csv)
    with stage("write"):
        write_ply(summary.scene, out_path)
    print(f"fine-tuned {summary.count_after} Gaussians, masked fraction "
          f"{summary.masked_fraction:.4f} -> {out_path}")


def cmd_plan(engine, args):
    """试运行计划文件并写出触发日志"""
    with stage("plan"):
        entries = read_plan_file(args.plan)
        events = build_scheduler(entries).dry_run(args.iterations)
        out_path = _output(args, "output/events.csv")
        write_event_log(events, out_path)
    counts = {}
    for event in events:
        key = (event.stage, event.name)
        counts[key] = counts.get(key, 0) + 1
    rows = [[entry.stage, entry.name, entry.plan.describe(), counts.get((entry.stage, entry.name), 0)]
            for entry in entries]
    print_table(f"{args.plan}: {len(events)} firings in {args.iterations} iterations -> {out_path}",
                rows, ["stage", "task", "plan", "fires"])


COMMANDS = {
    'gen': cmd_gen,
    'compress': cmd_compress,
    'decompress': cmd_decompress,
    'eval': cmd_eval,
    'bench': cmd_bench,
    'score': cmd_score,
    'prune': cmd_prune,
    'finetune': cmd_finetune,
    'plan': cmd_plan,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='YAML configuration file')
    common.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help='override one configuration key (repeatable)')
    common.add_argument('--seed', type=int, help='random seed (overrides config)')
    common.add_argument('--out', help='output file or directory')
    common.add_argument('--dump-config', action='store_true', help='print the resolved configuration and exit')

    parser = argparse.ArgumentParser(
        description="Gaussian splat compression toolkit",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
examples:
  python scripts/splat_manager.py gen --out data/synth
  python scripts/splat_manager.py compress data/synth/scene.ply data/synth/cameras.txt --out scene.spwz
  python scripts/splat_manager.py decompress scene.spwz --out decoded.ply
  python scripts/splat_manager.py eval data/synth/scene.ply decoded.ply data/synth/cameras.txt
  python scripts/splat_manager.py bench data/synth/scene.ply data/synth/cameras.txt --config config/bench_sweep.yaml
  python scripts/splat_manager.py plan config/plans/vanilla_3dgs.plan --iterations 30000
        """
    )
    subparsers = parser.add_subparsers(dest='command', help='available commands')

    subparsers.add_parser('gen', parents=[common], help='generate a synthetic scene')

    p = subparsers.add_parser('compress', parents=[common], help='compress a scene into a bundle')
    p.add_argument('scene')
    p.add_argument('cameras')

    p = subparsers.add_parser('decompress', parents=[common], help='decode a bundle into a PLY')
    p.add_argument('bundle')

    p = subparsers.add_parser('eval', parents=[common], help='compare two scenes')
    p.add_argument('scene_a')
    p.add_argument('scene_b')
    p.add_argument('cameras')

    p = subparsers.add_parser('bench', parents=[common], help='rate-distortion sweep')
    p.add_argument('scene')
    p.add_argument('cameras')

    p = subparsers.add_parser('score', parents=[common], help='importance scores as CSV')
    p.add_argument('scene')
    p.add_argument('cameras')

    p = subparsers.add_parser('prune', parents=[common], help='drop the least important Gaussians')
    p.add_argument('scene')
    p.add_argument('cameras')

    p = subparsers.add_parser('finetune', parents=[common], help='distillation fine-tuning of a student')
    p.add_argument('student')
    p.add_argument('teacher')
    p.add_argument('cameras')
    p.add_argument('--progress-csv', help='write per-iteration progress rows here')

    p = subparsers.add_parser('plan', parents=[common], help='dry-run a schedule plan file')
    p.add_argument('plan')
    p.add_argument('--iterations', type=int, default=30000, help='total training iterations')
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 0

    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        with stage("config"):
            config = load_config(args.config, overrides)
        if args.dump_config:
            print(dump_config(config), end="")
            return 0
        setup_logging(config)
        COMMANDS[args.command](SplatEngine(config), args)
    except KeyboardInterrupt:
        print("\ncancelled")
        return 1
    except SplatError as e:
        if not isinstance(e, StageError):
            e = StageError(args.command, e)
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
