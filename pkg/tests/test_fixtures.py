import shutil

import pytest

from engine.exceptions import FixtureMismatchError
from engine.fixtures import load_manifest, regenerate_fixtures, sha256_file, verify_fixtures


@pytest.fixture
def corpus_copy(tmp_path, fixtures_dir):
    shutil.copytree(fixtures_dir, tmp_path / "fixtures")
    return tmp_path / "fixtures"


def test_manifest_lists_every_check(fixtures_dir):
    commands = {f.command for f in load_manifest(fixtures_dir / "manifest.yaml")}
    assert commands == {"ply-roundtrip", "read-cameras", "encode", "decode"}


def test_checked_in_corpus_verifies(fixtures_dir):
    report = verify_fixtures(fixtures_dir / "manifest.yaml")
    assert [r.diff for r in report.failures] == []
    assert report.passed
    report.raise_for_failures()


def test_tampered_bundle_is_reported(corpus_copy):
    bundle = corpus_copy / "golden_n1.spwz"
    data = bytearray(bundle.read_bytes())
    data[200] ^= 0xFF
    bundle.write_bytes(bytes(data))

    report = verify_fixtures(corpus_copy / "manifest.yaml")
    assert [r.fixture_id for r in report.failures] == ["golden_bundle_decode"]
    assert "sha256" in report.failures[0].diff
    with pytest.raises(FixtureMismatchError):
        report.raise_for_failures()


def test_missing_input_is_reported(corpus_copy):
    (corpus_copy / "cameras.txt").unlink()
    report = verify_fixtures(corpus_copy / "manifest.yaml")
    assert {r.fixture_id for r in report.failures} == {"cameras_parse", "golden_bundle_decode"}


def test_regenerate_is_stable(corpus_copy):
    before = sha256_file(corpus_copy / "golden_n1.spwz")
    manifest = (corpus_copy / "manifest.yaml").read_text(encoding='utf-8')
    written = regenerate_fixtures(corpus_copy / "manifest.yaml")
    assert written == ["fixtures/golden_n1.spwz"]
    assert sha256_file(corpus_copy / "golden_n1.spwz") == before
    assert (corpus_copy / "manifest.yaml").read_text(encoding='utf-8') == manifest


FRONT_RENDER = "41f629e1e7377ec28482ed2b60f267ddcccb0bb7680a5724e401a783c6b70e5b"


def test_decode_fixture_pins_render_hashes(fixtures_dir):
    decode = next(f for f in load_manifest(fixtures_dir / "manifest.yaml") if f.command == "decode")
    assert set(decode.expected["render_sha256"]) == {"front", "back"}
    assert decode.expected["render_sha256"]["front"] == FRONT_RENDER


def test_render_hash_mismatch_is_reported_and_regenerated(corpus_copy):
    manifest = corpus_copy / "manifest.yaml"
    original = manifest.read_text(encoding='utf-8')
    manifest.write_text(original.replace(FRONT_RENDER, "0" * 64), encoding='utf-8')

    report = verify_fixtures(manifest)
    assert [r.fixture_id for r in report.failures] == ["golden_bundle_decode"]
    assert "render of view 'front'" in report.failures[0].diff

    regenerate_fixtures(manifest)
    assert manifest.read_text(encoding='utf-8') == original
    assert verify_fixtures(manifest).passed
