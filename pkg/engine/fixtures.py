"""
黄金测试数据校验
fixtures/manifest.yaml 列出每个测试数据的输入文件及其 sha256、要重跑的命令和期望结果。
校验只读取仓库内的文件，不访问网络。
"""

import hashlib
import logging
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import yaml

from .bundle import EncodeConfig, decode_bundle, encode_scene, read_directory
from .exceptions import FixtureMismatchError, SplatError
from .rasterizer import image_digest, render
from .scene import PARAM_WIDTHS, GaussianScene
from .scene_io import read_cameras, read_ply, write_ply
from .settings import DEFAULT_CONFIG, merge_config

logger = logging.getLogger(__name__)

DEFAULT_MANIFEST = "fixtures/manifest.yaml"


@dataclass
class GoldenFixture:
    id: str
    command: str
    inputs: Dict[str, str]
    expected: Dict[str, Any] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)
    output: Optional[str] = None

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "GoldenFixture":
        return cls(
            id=str(raw["id"]),
            command=str(raw["command"]),
            inputs={str(k): str(v) for k, v in (raw.get("inputs") or {}).items()},
            expected=dict(raw.get("expected") or {}),
            config=dict(raw.get("config") or {}),
            output=raw.get("output"),
        )


@dataclass
class FixtureResult:
    fixture_id: str
    passed: bool
    diff: str = ""


@dataclass
class FixtureReport:
    results: List[FixtureResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> List[FixtureResult]:
        return [r for r in self.results if not r.passed]

    def raise_for_failures(self) -> None:
        if self.failures:
            first = self.failures[0]
            raise FixtureMismatchError(first.fixture_id, first.diff)


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_manifest(manifest_path=DEFAULT_MANIFEST) -> List[GoldenFixture]:
    with open(manifest_path, 'r', encoding='utf-8') as f:
        raw = yaml.safe_load(f) or {}
    return [GoldenFixture.from_dict(item) for item in raw.get("fixtures", [])]


def _first_input(fixture: GoldenFixture, suffix: str, root: Path) -> Path:
    for name in fixture.inputs:
        if name.endswith(suffix):
            return root / name
    raise FixtureMismatchError(fixture.id, f"no '{suffix}' input listed")


def _scene_diff(a: GaussianScene, b: GaussianScene, tol: float) -> Optional[str]:
    if a.count != b.count:
        return f"count {a.count} != {b.count}"
    for name in PARAM_WIDTHS:
        left, right = getattr(a, name), getattr(b, name)
        err = float(np.max(np.abs(left - right))) if left.size else 0.0
        if err > tol:
            return f"{name} differs by {err:.3g} (tolerance {tol:g})"
    return None


def _check_ply_roundtrip(fixture, root) -> Optional[str]:
    path = _first_input(fixture, ".ply", root)
    scene = read_ply(path)
    if scene.count != int(fixture.expected.get("count", scene.count)):
        return f"count {scene.count}, expected {fixture.expected['count']}"
    with tempfile.TemporaryDirectory() as tmp:
        copy = Path(tmp) / "roundtrip.ply"
        write_ply(scene, copy)
        return _scene_diff(scene, read_ply(copy), 0.0)


def _check_cameras(fixture, root) -> Optional[str]:
    cameras = read_cameras(_first_input(fixture, ".txt", root))
    if len(cameras) != int(fixture.expected.get("count", len(cameras))):
        return f"{len(cameras)} cameras, expected {fixture.expected['count']}"
    names = fixture.expected.get("names")
    if names is not None and list(cameras.names) != list(names):
        return f"camera names {cameras.names}, expected {names}"
    return None


def _encode(fixture, root) -> bytes:
    config = merge_config(DEFAULT_CONFIG, fixture.config, source=f"fixture {fixture.id}")
    scene = read_ply(_first_input(fixture, ".ply", root))
    return encode_scene(scene, EncodeConfig.from_config(config)).data


def _check_encode(fixture, root) -> Optional[str]:
    data = _encode(fixture, root)
    if "bytes" in fixture.expected and len(data) != int(fixture.expected["bytes"]):
        return f"bundle of {len(data)} bytes, expected {fixture.expected['bytes']}"
    digest = hashlib.sha256(data).hexdigest()
    if digest != fixture.expected.get("sha256", digest):
        return f"bundle sha256 {digest}, expected {fixture.expected['sha256']}"
    return None


def _render_digests(scene: GaussianScene, fixture, root) -> Dict[str, str]:
    return {name: image_digest(render(scene, cam).color) for name, cam in zip(*_cameras_of(fixture, root))}


def _check_decode(fixture, root) -> Optional[str]:
    data = _first_input(fixture, ".spwz", root).read_bytes()
    info = read_directory(data)
    if "crc" in fixture.expected and info.crc != int(fixture.expected["crc"]):
        return f"crc {info.crc:08x}, expected {int(fixture.expected['crc']):08x}"
    decoded = decode_bundle(data)
    if decoded.count != int(fixture.expected.get("count", decoded.count)):
        return f"decoded {decoded.count} Gaussians, expected {fixture.expected['count']}"

    reference = encode_scene(read_ply(_first_input(fixture, ".ply", root))).reference
    diff = _scene_diff(decoded, reference, float(fixture.expected.get("max_abs_error", 0.0)))
    if diff:
        return f"decoded scene vs encoder reference: {diff}"
    digests = _render_digests(decoded, fixture, root)
    for name, want in (fixture.expected.get("render_sha256") or {}).items():
        got = digests.get(name)
        if got is None:
            return f"no camera '{name}' to render"
        if got != want:
            return f"render of view '{name}' sha256 {got[:12]}, expected {want[:12]}"
    return None


def _cameras_of(fixture, root):
    try:
        cameras = read_cameras(_first_input(fixture, ".txt", root))
    except FixtureMismatchError:
        return [], []
    return cameras.names, cameras.cameras


# 命令 -> 检查函数
CHECKS: Dict[str, Callable[[GoldenFixture, Path], Optional[str]]] = {
    "ply-roundtrip": _check_ply_roundtrip,
    "read-cameras": _check_cameras,
    "encode": _check_encode,
    "decode": _check_decode,
}


def verify_fixture(fixture: GoldenFixture, root: Path) -> FixtureResult:
    for name, digest in fixture.inputs.items():
        path = root / name
        if not path.exists():
            return FixtureResult(fixture.id, False, f"input {name} missing")
        actual = sha256_file(path)
        if actual != digest:
            return FixtureResult(fixture.id, False, f"input {name} sha256 {actual[:12]}, expected {digest[:12]}")
    check = CHECKS.get(fixture.command)
    if check is None:
        return FixtureResult(fixture.id, False, f"unknown fixture command '{fixture.command}'")
    try:
        diff = check(fixture, root)
    except SplatError as e:
        diff = f"{type(e).__name__}: {e}"
    return FixtureResult(fixture.id, diff is None, diff or "")


def verify_fixtures(manifest_path=DEFAULT_MANIFEST, root=None) -> FixtureReport:
    """重新运行 manifest 中的全部检查并比较结果"""
    manifest_path = Path(manifest_path)
    root = Path(root) if root is not None else manifest_path.resolve().parent.parent
    report = FixtureReport()
    for fixture in load_manifest(manifest_path):
        result = verify_fixture(fixture, root)
        if result.passed:
            logger.info(f"fixture {fixture.id}: ok")
        else:
            logger.error(f"fixture {fixture.id}: {result.diff}")
        report.results.append(result)
    return report


def regenerate_fixtures(manifest_path=DEFAULT_MANIFEST, root=None) -> List[str]:
    """重写派生数据

    重新生成 encode 类测试数据的输出文件，并刷新 manifest 中的文件哈希和
    decode 类测试数据的渲染哈希

    Returns:
        写出的文件列表
    """
    manifest_path = Path(manifest_path)
    root = Path(root) if root is not None else manifest_path.resolve().parent.parent
    text = manifest_path.read_text(encoding='utf-8')
    written = []
    for fixture in load_manifest(manifest_path):
        if fixture.command == "encode" and fixture.output:
            data = _encode(fixture, root)
            out = root / fixture.output
            old = sha256_file(out) if out.exists() else None
            out.write_bytes(data)
            new = hashlib.sha256(data).hexdigest()
            if old and old != new:
                text = text.replace(old, new)
            written.append(fixture.output)
            logger.info(f"fixture {fixture.id}: wrote {fixture.output} ({len(data)} bytes)")
        elif fixture.command == "decode":
            decoded = decode_bundle(_first_input(fixture, ".spwz", root).read_bytes())
            digests = _render_digests(decoded, fixture, root)
            for name, old in (fixture.expected.get("render_sha256") or {}).items():
                if name in digests and digests[name] != old:
                    text = text.replace(old, digests[name])
                    logger.info(f"fixture {fixture.id}: render of '{name}' is now {digests[name][:12]}")
    manifest_path.write_text(text, encoding='utf-8')
    return written
