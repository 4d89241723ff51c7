"""
端到端流程编排：合成场景生成，打分 -> 剪枝 -> 微调 -> 编码，解码，
评估以及码率-失真扫描
scripts/splat_manager.py 把每一步做成一个子命令，main 按配置文件跑完整流程
"""

import argparse
import csv
import itertools
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from tqdm import tqdm

from .bundle import EncodeConfig, EncodeResult, decode_bundle, encode_scene
from .exceptions import SplatError, StageError
from .finetune import FinetuneConfig, distill_finetune
from .importance import ImportanceScores, compute_scores, rank_bottom
from .metrics import EvalReport, evaluate_scenes, format_metric
from .pruning import prune
from .rasterizer import render, write_ppm
from .scene import Camera, GaussianScene
from .scene_io import CameraSetFile, SyntheticSceneSpec, generate_synthetic, write_cameras, write_ply
from .settings import load_config, setup_logging

logger = logging.getLogger(__name__)

BENCH_HEADER = ["config", "bytes", "bpp_per_gaussian", "N", "psnr", "ssim", "chamfer", "fps"]


@contextmanager
def stage(name: str):
    """块内的任何异常都转成带阶段名的 StageError"""
    try:
        yield
    except StageError:
        raise
    except (SplatError, ValueError, IndexError, OSError) as e:
        logger.error(f"stage '{name}' failed: {e}")
        raise StageError(name, e) from e


@dataclass
class GenSummary:
    scene_path: Path
    cameras_path: Path
    render_paths: List[Path]
    count: int
    nonblack_views: int


@dataclass
class ReduceSummary:
    scene: GaussianScene
    count_before: int
    count_after: int
    history: List[Dict[str, float]] = field(default_factory=list)

    @property
    def masked_fraction(self) -> float:
        return self.history[-1]["masked_fraction"] if self.history else 0.0


@dataclass
class CompressSummary:
    encoded: EncodeResult
    count_before: int
    count_after: int

    @property
    def size(self) -> int:
        return len(self.encoded.data)

    def lines(self) -> List[str]:
        return [
            f"Gaussians before: {self.count_before}",
            f"Gaussians after:  {self.count_after}",
            f"masked fraction:  {self.encoded.masked_fraction:.4f}",
            f"bundle bytes:     {self.size}",
            f"bits/Gaussian:    {self.encoded.bits_per_gaussian:.3f}",
        ]


@dataclass
class BenchRow:
    config: str
    size: int
    bits_per_gaussian: float
    count: int
    psnr: float
    ssim: float
    chamfer: float
    fps: float

    def as_csv(self) -> List[str]:
        return [self.config, str(self.size), f"{self.bits_per_gaussian:.6f}", str(self.count),
                format_metric(self.psnr), format_metric(self.ssim), format_metric(self.chamfer),
                f"{self.fps:.3f}"]


def write_bench_csv(rows: Sequence[BenchRow], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(BENCH_HEADER)
        for row in rows:
            writer.writerow(row.as_csv())


class SplatEngine:
    """压缩流水线引擎"""

    def __init__(self, config: Dict[str, Any]):
        self.config = config

    @classmethod
    def from_file(cls, config_path: Optional[str] = None, overrides: Sequence[str] = ()) -> "SplatEngine":
        return cls(load_config(config_path, overrides))

    def synthetic_spec(self) -> SyntheticSceneSpec:
        aabb = [float(v) for v in self.config["aabb"]]
        return SyntheticSceneSpec(
            seed=int(self.config["seed"]),
            n_gaussians=int(self.config["n_gaussians"]),
            aabb_min=tuple(aabb[:3]),
            aabb_max=tuple(aabb[3:]),
            sh_degree=int(self.config["sh_degree"]),
            n_cameras=int(self.config["n_cameras"]),
            width=int(self.config["width"]),
            height=int(self.config["height"]),
        )

    def generate(self, out_dir) -> GenSummary:
        """生成合成场景 PLY、相机文件和真值渲染图"""
        out_dir = Path(out_dir)
        with stage("gen"):
            scene, cameras = generate_synthetic(self.synthetic_spec())
            scene_path = out_dir / "scene.ply"
            cameras_path = out_dir / "cameras.txt"
            write_ply(scene, scene_path)
            write_cameras(cameras, cameras_path)
            render_paths = []
            nonblack = 0
            for name, cam in zip(cameras.names, cameras.cameras):
                image = render(scene, cam, want_depth=False).color
                nonblack += int(image.max() > 0.0)
                path = out_dir / "renders" / f"{name}.ppm"
                write_ppm(image, path)
                render_paths.append(path)
        logger.info(f"wrote synthetic scene ({scene.count} Gaussians, {len(cameras)} views) to {out_dir}")
        return GenSummary(scene_path, cameras_path, render_paths, scene.count, nonblack)

    def score(self, scene: GaussianScene, cameras: Sequence[Camera]) -> ImportanceScores:
        with stage("score"):
            return compute_scores(self.config["importance"], scene, cameras,
                                  beta=float(self.config["opacity_beta"]),
                                  mask_threshold=float(self.config["mask_threshold"]))

    def prune(self, scene: GaussianScene, cameras: Sequence[Camera],
              prune_fraction: Optional[float] = None) -> GaussianScene:
        fraction = float(self.config["prune_fraction"] if prune_fraction is None else prune_fraction)
        if fraction == 0.0:
            return scene
        scores = self.score(scene, cameras)
        with stage("prune"):
            return prune(scene, rank_bottom(scores.scores, fraction))

    def finetune(self, student: GaussianScene, teacher: GaussianScene, cameras: Sequence[Camera],
                 progress_csv=None) -> ReduceSummary:
        with stage("finetune"):
            cfg = FinetuneConfig.from_config(self.config)
            result = distill_finetune(student, teacher, cameras, cfg, progress_csv=progress_csv)
        return ReduceSummary(result.scene, teacher.count, result.scene.count, result.history)

    def reduce(self, scene: GaussianScene, cameras: Sequence[Camera],
               prune_fraction: Optional[float] = None) -> ReduceSummary:
        """按重要性剪枝，再以未剪枝场景为教师微调剩余高斯"""
        pruned = self.prune(scene, cameras, prune_fraction)
        summary = self.finetune(pruned, scene, cameras)
        summary.count_before = scene.count
        return summary

    def encode_config(self, **changes) -> EncodeConfig:
        cfg = EncodeConfig.from_config(self.config)
        for key, value in changes.items():
            setattr(cfg, key, value)
        return cfg

    def compress(self, scene: GaussianScene, cameras: Sequence[Camera], out_path=None) -> CompressSummary:
        reduced = self.reduce(scene, cameras)
        with stage("encode"):
            encoded = encode_scene(reduced.scene, self.encode_config())
            if out_path is not None:
                out_path = Path(out_path)
                out_path.parent.mkdir(parents=True, exist_ok=True)
                out_path.write_bytes(encoded.data)
        return CompressSummary(encoded, scene.count, reduced.count_after)

    def decompress(self, data: bytes) -> GaussianScene:
        with stage("decode"):
            return decode_bundle(data)

    def evaluate(self, scene_a: GaussianScene, scene_b: GaussianScene, cameras: CameraSetFile,
                 image_dir=None) -> EvalReport:
        with stage("eval"):
            report = evaluate_scenes(scene_a, scene_b, cameras.cameras, cameras.names,
                                     warm_renders=int(self.config["fps_warm_renders"]))
            if self.config["dump_images"] and image_dir is not None:
                self.dump_images(scene_a, scene_b, cameras, image_dir)
        return report

    def dump_images(self, scene_a: GaussianScene, scene_b: GaussianScene, cameras: CameraSetFile, image_dir) -> None:
        image_dir = Path(image_dir)
        for name, cam in zip(cameras.names, cameras.cameras):
            write_ppm(render(scene_a, cam, want_depth=False).color, image_dir / f"{name}_a.ppm")
            write_ppm(render(scene_b, cam, want_depth=False).color, image_dir / f"{name}_b.ppm")
        logger.info(f"wrote {2 * len(cameras)} debug renders to {image_dir}")

    def bench(self, scene: GaussianScene, cameras: CameraSetFile) -> List[BenchRow]:
        """码率-失真扫描

        Args:
            scene: 输入场景
            cameras: 评估用相机

        Returns:
            每个 (k12, k3) x 属性位宽 x 剪枝比例 组合一行结果
        """
        sweep = list(itertools.product(self.config["sweep_prune"], self.config["sweep_bits"],
                                       zip(self.config["sweep_k12"], self.config["sweep_k3"])))
        reduced_by_fraction: Dict[float, GaussianScene] = {}
        rows = []
        for fraction, bits, (k12, k3) in tqdm(sweep, desc="bench", disable=not self.config["progress"]):
            fraction = float(fraction)
            if fraction not in reduced_by_fraction:
                reduced_by_fraction[fraction] = self.reduce(scene, cameras.cameras, fraction).scene
            label = f"k12={k12};k3={k3};bits={bits};prune={fraction:g}"
            with stage(f"bench {label}"):
                cfg = self.encode_config(k12=int(k12), k3=int(k3), attribute_bits=int(bits))
                data = encode_scene(reduced_by_fraction[fraction], cfg).data
            decoded = self.decompress(data)
            report = self.evaluate(scene, decoded, cameras)
            bpp = 8.0 * len(data) / decoded.count if decoded.count else 0.0
            rows.append(BenchRow(label, len(data), bpp, decoded.count, report.mean_psnr,
                                 report.mean_ssim, report.chamfer, report.fps))
            logger.info(f"{label}: {len(data)} bytes, PSNR {format_metric(report.mean_psnr)}")
        return rows


def main():
    parser = argparse.ArgumentParser(description='Splat compression demo: gen -> compress -> decompress -> eval')
    parser.add_argument('--config', type=str, help='Path to a YAML configuration file')
    parser.add_argument('--set', dest='overrides', action='append', default=[], help='Override a key: key=value')
    parser.add_argument('--out', type=str, default='output/demo', help='Output directory')
    args = parser.parse_args()

    engine = SplatEngine.from_file(args.config, args.overrides)
    setup_logging(engine.config)
    out_dir = Path(args.out)

    gen = engine.generate(out_dir)
    scene, cameras = generate_synthetic(engine.synthetic_spec())
    summary = engine.compress(scene, cameras.cameras, out_dir / "scene.spwz")
    decoded = engine.decompress(summary.encoded.data)
    write_ply(decoded, out_dir / "decoded.ply")
    report = engine.evaluate(scene, decoded, cameras)
    report.to_csv(out_dir / "eval.csv")

    print(f"\nscene: {gen.scene_path} ({gen.count} Gaussians)")
    for line in summary.lines():
        print(line)
    print(f"mean PSNR:        {format_metric(report.mean_psnr)} dB")
    print(f"mean SSIM:        {format_metric(report.mean_ssim)}")
    print(f"chamfer:          {format_metric(report.chamfer)}")


if __name__ == "__main__":
    main()
