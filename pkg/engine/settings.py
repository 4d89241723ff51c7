"""
配置加载与日志设置
配置是一个扁平的 YAML 映射。优先级：内置默认值 < 配置文件 <
`--set key=value` < 专用命令行参数
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

import yaml

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG: Dict[str, Any] = {
    # 场景生成
    "seed": 42,
    "n_gaussians": 500,
    "aabb": [-1.0, -1.0, -1.0, 1.0, 1.0, 1.0],
    "sh_degree": 3,
    "n_cameras": 8,
    "width": 64,
    "height": 64,
    # 剪枝
    "prune_fraction": 0.5,
    "importance": "hessian",
    "opacity_beta": 0.0,
    # 蒸馏微调
    "iterations": 2000,
    "lambda_mask": 5e-4,
    "noise_sigma": None,
    "pseudo_prob": 0.5,
    "lr_sh_dc": 2.5e-3,
    "lr_sh_rest": 1.25e-4,
    "lr_opacity": 5e-2,
    "lr_mask": 1e-2,
    "lr_decay_final_ratio": 1.0,
    "adam_beta1": 0.9,
    "adam_beta2": 0.999,
    "adam_eps": 1e-8,
    "mask_threshold": 0.01,
    # 编码
    "position_bits": 16,
    "attribute_bits": 8,
    "k12": 256,
    "k3": 256,
    "kmeans_iterations": 30,
    "coder": "rans",
    # 基准扫描
    "sweep_k12": [16, 64, 256],
    "sweep_k3": [16, 64, 256],
    "sweep_bits": [8],
    "sweep_prune": [0.5],
    "fps_warm_renders": 5,
    # 运行时
    "progress": True,
    "log_level": "INFO",
    "log_format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    "log_file": "logs/splat.log",
    "dump_images": False,
}

_CHOICES = {
    "importance": ("opacity", "hessian"),
    "coder": ("rans", "huffman", "arith"),
    "sh_degree": (0, 1, 2, 3),
    "position_bits": (8, 16),
    "attribute_bits": (8, 16),
}


def _check(config: Dict[str, Any]) -> Dict[str, Any]:
    for key, choices in _CHOICES.items():
        if config[key] not in choices:
            raise ConfigError(f"{key} must be one of {list(choices)}, got {config[key]!r}")
    for key in ("prune_fraction", "pseudo_prob"):
        if not 0.0 <= float(config[key]) <= 1.0:
            raise ConfigError(f"{key} must be in [0, 1], got {config[key]!r}")
    for key in ("lambda_mask", "lr_sh_dc", "lr_sh_rest", "lr_opacity", "lr_mask"):
        if float(config[key]) < 0:
            raise ConfigError(f"{key} must be >= 0, got {config[key]!r}")
    if config["noise_sigma"] is not None and float(config["noise_sigma"]) < 0:
        raise ConfigError("noise_sigma must be >= 0")
    if len(config["aabb"]) != 6:
        raise ConfigError("aabb must list 6 numbers: min xyz then max xyz")
    if int(config["k12"]) < 1 or int(config["k3"]) < 1 or max(int(config["k12"]), int(config["k3"])) > 65536:
        raise ConfigError("k12 and k3 must be in 1..65536")
    if len(config["sweep_k12"]) != len(config["sweep_k3"]):
        raise ConfigError("sweep_k12 and sweep_k3 are paired and must have the same length")
    return config


def merge_config(base: Dict[str, Any], updates: Dict[str, Any], source: str = "config") -> Dict[str, Any]:
    merged = dict(base)
    for key, value in (updates or {}).items():
        if key not in DEFAULT_CONFIG:
            raise ConfigError(f"unknown configuration key '{key}' in {source}")
        merged[key] = value
    return merged


def load_config(config_path: Optional[str] = None, overrides: Iterable[str] = ()) -> Dict[str, Any]:
    """加载配置

    Args:
        config_path: 可选的 YAML 配置文件路径
        overrides: `key=value` 形式的覆盖项

    Returns:
        合并并校验后的配置字典
    """
    config = dict(DEFAULT_CONFIG)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with open(path, 'r', encoding='utf-8') as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path} must contain a flat YAML mapping")
        config = merge_config(config, loaded, source=str(path))
    config = apply_overrides(config, overrides)
    return _check(config)


def apply_overrides(config: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    parsed = {}
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        key, raw = item.split("=", 1)
        parsed[key.strip()] = yaml.safe_load(raw)
    return merge_config(config, parsed, source="--set")


def dump_config(config: Dict[str, Any]) -> str:
    return yaml.safe_dump(config, sort_keys=False, default_flow_style=None)


def thread_count() -> int:
    """工作线程数，受 SPWZ_THREADS 限制"""
    default = os.cpu_count() or 1
    raw = os.environ.get("SPWZ_THREADS")
    if not raw:
        return default
    try:
        return max(1, min(default, int(raw)))
    except ValueError:
        logger.warning(f"ignoring non-integer SPWZ_THREADS={raw!r}")
        return default


def setup_logging(config: Dict[str, Any]) -> None:
    """设置日志（控制台 + 文件）"""
    log_level = getattr(logging, str(config.get("log_level", "INFO")).upper(), logging.INFO)
    log_format = config.get("log_format", DEFAULT_CONFIG["log_format"])

    root_logger = logging.getLogger()
    if getattr(root_logger, "_splat_configured", False):
        root_logger.setLevel(log_level)
        return

    handlers = [logging.StreamHandler()]
    log_file = config.get("log_file")
    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_path, encoding='utf-8'))

    for handler in handlers:
        handler.setLevel(log_level)
        handler.setFormatter(logging.Formatter(log_format))
        root_logger.addHandler(handler)
    root_logger.setLevel(log_level)
    root_logger._splat_configured = True
