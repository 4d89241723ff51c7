"""
剪枝后学生场景的蒸馏微调
学生场景以教师场景的渲染图为监督，视角来自训练相机和伪视角（训练位姿的平移加高斯噪声），
mask logit 上的稀疏损失把三阶 SH 系数挤掉。只优化四组外观参数，几何参数冻结。
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .exceptions import DimensionMismatchError, ShapeMismatchError, UndefinedLossError
from .prng import SplitMix64
from .rasterizer import RenderOutput, backward, render
from .scene import APPEARANCE_GROUPS, Camera, GaussianScene, sigmoid
from .scheduler import POST, PRE, Pipeline, SchedulePlan, TaskScheduler
from .tasks import make_task

logger = logging.getLogger(__name__)

# 配置项 -> 场景参数组
LR_KEYS = {
    "lr_sh_dc": "sh_dc",
    "lr_sh_rest": "sh_rest",
    "lr_opacity": "opacity_logits",
    "lr_mask": "mask_logits",
}


@dataclass
class FinetuneConfig:
    lambda_mask: float = 5e-4
    noise_sigma: Optional[float] = None
    pseudo_prob: float = 0.5
    iterations: int = 2000
    rates: Dict[str, float] = field(default_factory=lambda: {
        "sh_dc": 2.5e-3,
        "sh_rest": 1.25e-4,
        "opacity_logits": 5e-2,
        "mask_logits": 1e-2,
    })
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    mask_threshold: float = 0.01
    seed: int = 42
    lr_decay_final_ratio: float = 1.0
    progress: bool = False

    def __post_init__(self):
        if any(rate < 0 for rate in self.rates.values()):
            raise ValueError("learning rates must be >= 0")
        if self.noise_sigma is not None and self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.pseudo_prob <= 1.0:
            raise ValueError("pseudo_prob must be in [0, 1]")

    @classmethod
    def from_config(cls, config: Dict) -> "FinetuneConfig":
        return cls(
            lambda_mask=float(config["lambda_mask"]),
            noise_sigma=None if config["noise_sigma"] is None else float(config["noise_sigma"]),
            pseudo_prob=float(config["pseudo_prob"]),
            iterations=int(config["iterations"]),
            rates={group: float(config[key]) for key, group in LR_KEYS.items()},
            beta1=float(config["adam_beta1"]),
            beta2=float(config["adam_beta2"]),
            eps=float(config["adam_eps"]),
            mask_threshold=float(config["mask_threshold"]),
            seed=int(config["seed"]),
            lr_decay_final_ratio=float(config["lr_decay_final_ratio"]),
            progress=bool(config.get("progress", False)),
        )

    def as_task_config(self) -> Dict:
        return {
            "iterations": self.iterations,
            "lr_decay_final_ratio": self.lr_decay_final_ratio,
            "mask_threshold": self.mask_threshold,
        }


@dataclass
class OptimizerState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def optimizer_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: OptimizerState,
                   rates: Dict[str, float], beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> Dict[str, np.ndarray]:
    """One Adam update with bias correction; returns new parameter arrays, advances state"""
    state.step += 1
    t = state.step
    updated = {}
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            updated[name] = value
            continue
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != value.shape:
            raise ShapeMismatchError(value.shape, grad.shape)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None or m.shape != value.shape:
            m = np.zeros_like(value)
            v = np.zeros_like(value)
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        updated[name] = value - rates.get(name, 0.0) * m_hat / (np.sqrt(v_hat) + eps)
    return updated


class Adam:
    """只更新指定参数组的 Adam 优化器"""

    def __init__(self, rates: Dict[str, float], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, groups: Sequence[str] = APPEARANCE_GROUPS):
        self.base_rates = dict(rates)
        self.rates = dict(rates)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.groups = tuple(groups)
        self.state = OptimizerState()

    def reset(self):
        self.state = OptimizerState()

    def step(self, scene: GaussianScene, grads: Dict[str, np.ndarray]) -> GaussianScene:
        params = {name: getattr(scene, name) for name in self.groups}
        updated = optimizer_step(params, grads, self.state, self.rates, self.beta1, self.beta2, self.eps)
        return scene.with_params(**updated)


def sample_pseudo_pose(camera: Camera, sigma: float, rng: SplitMix64) -> Camera:
    """采样伪视角：平移的每个分量加 N(0, sigma^2) 噪声，旋转不变"""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    noise = rng.normal(3)
    if sigma == 0:
        return camera.with_translation(camera.translation.copy())
    return camera.with_translation(camera.translation + sigma * noise)


def _check_images(teacher_img: np.ndarray, student_img: np.ndarray) -> None:
    if teacher_img.shape != student_img.shape:
        raise DimensionMismatchError(teacher_img.shape, student_img.shape)


def distill_loss(teacher_img: np.ndarray, student_img: np.ndarray) -> float:
    """Sum of squared differences over all H*W*3 entries divided by H*W"""
    _check_images(teacher_img, student_img)
    height, width = teacher_img.shape[:2]
    diff = teacher_img - student_img
    return float(np.sum(diff * diff) / (height * width))


def distill_grad(teacher_img: np.ndarray, student_img: np.ndarray) -> np.ndarray:
    """Gradient of distill_loss w.r.t. the student image"""
    _check_images(teacher_img, student_img)
    height, width = teacher_img.shape[:2]
    return 2.0 * (student_img - teacher_img) / (height * width)


def mask_loss(scene: GaussianScene) -> float:
    if scene.count == 0:
        raise UndefinedLossError()
    return float(np.mean(sigmoid(scene.mask_logits[:, 0])))


@dataclass
class LossResult:
    total: float
    distill: float
    mask: float
    grads: Dict[str, np.ndarray]


def total_loss(scene: GaussianScene, teacher_img: np.ndarray, student: RenderOutput,
               cfg: FinetuneConfig) -> LossResult:
    """总损失 distill + lambda * mask loss 及外观参数组的梯度

    Args:
        scene: 学生场景
        teacher_img: 教师渲染图
        student: 用 want_backward=True 渲染的学生图
        cfg: 微调配置

    Returns:
        LossResult，含总损失、两项分量和各参数组梯度
    """
    if not isinstance(student, RenderOutput) or not student.has_tape:
        raise ValueError("total_loss needs a student render made with want_backward=True")
    distill = distill_loss(teacher_img, student.color)
    lm = mask_loss(scene)
    buffers = backward(student, distill_grad(teacher_img, student.color))

    s = sigmoid(scene.mask_logits)
    mask_grad = buffers.d_mask_logit + cfg.lambda_mask / scene.count * s * (1.0 - s)
    grads = {
        "sh_dc": buffers.d_sh_dc,
        "sh_rest": buffers.d_sh_rest,
        "opacity_logits": buffers.d_opacity_logit,
        "mask_logits": mask_grad,
    }
    return LossResult(total=distill + cfg.lambda_mask * lm, distill=distill, mask=lm, grads=grads)


@dataclass
class FinetuneResult:
    scene: GaussianScene
    history: List[Dict[str, float]]
    events: list


def default_noise_sigma(scene: GaussianScene) -> float:
    lo, hi = scene.aabb()
    return 0.02 * float(np.linalg.norm(hi - lo))


def distill_finetune(student: GaussianScene, teacher: GaussianScene, cameras: Sequence[Camera],
                     cfg: FinetuneConfig, progress_csv=None) -> FinetuneResult:
    """在调度流水线上以教师渲染图微调学生场景的外观参数"""
    if cfg.iterations <= 0 or student.count == 0:
        return FinetuneResult(scene=student, history=[], events=[])
    if len(cameras) == 0:
        raise ValueError("fine-tuning needs at least one camera")

    sigma = cfg.noise_sigma if cfg.noise_sigma is not None else default_noise_sigma(teacher)
    rng = SplitMix64(cfg.seed)
    cameras = list(cameras)

    def view_sampler(ctx):
        cam = cameras[rng.randint(len(cameras))]
        if rng.uniform(1)[0] < cfg.pseudo_prob:
            cam = sample_pseudo_pose(cam, sigma, rng)
        return cam

    def render_student(scene, cam):
        return render(scene, cam, want_depth=False, want_backward=True, mask_threshold=cfg.mask_threshold)

    def loss_fn(ctx):
        teacher_img = render(teacher, ctx.camera, want_depth=False, mask_threshold=cfg.mask_threshold).color
        return total_loss(ctx.scene, teacher_img, ctx.render_output, cfg)

    scheduler = TaskScheduler()
    full = SchedulePlan.range(cfg.iterations)
    scheduler.register_task(full, make_task("update_lr", PRE))
    scheduler.register_task(full, make_task("record_progress", POST))

    optimizer = Adam(cfg.rates, cfg.beta1, cfg.beta2, cfg.eps)
    pipeline = Pipeline(scheduler, render_fn=render_student, loss_fn=loss_fn, optimizer=optimizer,
                        view_sampler=view_sampler, config=cfg.as_task_config(), rng=rng,
                        progress=cfg.progress)
    logger.info(f"fine-tuning {student.count} Gaussians for {cfg.iterations} iterations (sigma={sigma:.4g})")
    result = pipeline.run(student, cameras, cfg.iterations)

    history = result.artifacts.get("progress", [])
    if progress_csv is not None:
        write_progress_csv(history, progress_csv)
    if history:
        last = history[-1]
        logger.info(f"fine-tune done: loss={last['loss']:.6g}, masked fraction={last['masked_fraction']:.3f}")
    return FinetuneResult(scene=result.scene, history=history, events=result.events)


def run_distill_finetune(student: GaussianScene, teacher: GaussianScene, cameras: Sequence[Camera],
                         cfg: FinetuneConfig) -> GaussianScene:
    return distill_finetune(student, teacher, cameras, cfg).scene


def write_progress_csv(history: Sequence[Dict[str, float]], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(["iter", "loss", "distill", "mask_loss", "masked_fraction"])
        for row in history:
            writer.writerow([row["iter"], repr(row["loss"]), repr(row["distill"]),
                             repr(row["mask_loss"]), repr(row["masked_fraction"])])
