import logging
from pathlib import Path

import pytest
import yaml

from engine.exceptions import ConfigError
from engine.settings import DEFAULT_CONFIG, apply_overrides, dump_config, load_config, merge_config, thread_count

ROOT = Path(__file__).resolve().parents[1]


def test_shipped_default_file_matches_builtin_defaults():
    with open(ROOT / "config" / "default_config.yaml", encoding='utf-8') as f:
        assert yaml.safe_load(f) == DEFAULT_CONFIG


@pytest.mark.parametrize("name", ["default_config.yaml", "bench_sweep.yaml", "near_lossless.yaml"])
def test_shipped_configs_load(name):
    config = load_config(str(ROOT / "config" / name))
    assert set(config) == set(DEFAULT_CONFIG)


def test_overrides_are_parsed_as_yaml():
    config = apply_overrides(DEFAULT_CONFIG, ["k12=64", "noise_sigma=0.05", "coder=huffman", "sweep_bits=[8, 16]"])
    assert config["k12"] == 64
    assert config["noise_sigma"] == 0.05
    assert config["coder"] == "huffman"
    assert config["sweep_bits"] == [8, 16]
    assert DEFAULT_CONFIG["k12"] == 256


def test_file_then_overrides(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("k12: 32\nk3: 32\n", encoding='utf-8')
    config = load_config(str(path), ["k3=8"])
    assert (config["k12"], config["k3"]) == (32, 8)


@pytest.mark.parametrize("overrides", [
    ["colour=red"],
    ["k12"],
    ["coder=zstd"],
    ["prune_fraction=1.5"],
    ["lr_mask=-1"],
    ["position_bits=12"],
    ["k3=0"],
    ["sweep_k12=[1, 2]"],
])
def test_bad_settings(overrides):
    with pytest.raises(ConfigError):
        load_config(None, overrides)


def test_bad_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.yaml"))
    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n", encoding='utf-8')
    with pytest.raises(ConfigError):
        load_config(str(listing))


def test_merge_names_the_source():
    with pytest.raises(ConfigError, match="run.yaml"):
        merge_config(DEFAULT_CONFIG, {"colour": 1}, source="run.yaml")


def test_dump_round_trips():
    assert yaml.safe_load(dump_config(DEFAULT_CONFIG)) == DEFAULT_CONFIG


@pytest.mark.parametrize("raw, expected", [("1", 1), ("0", 1), ("junk", None)])
def test_thread_count(monkeypatch, raw, expected):
    monkeypatch.setenv("SPWZ_THREADS", raw)
    assert thread_count() >= 1
    if expected is not None:
        assert thread_count() == expected


def test_logger_names_follow_modules():
    from engine import bundle, finetune
    assert bundle.logger.name == "engine.bundle"
    assert finetune.logger is logging.getLogger("engine.finetune")
