#!/usr/bin/env python3
"""
黄金测试数据管理工具
verify: 重新运行 fixtures/manifest.yaml 中的所有检查
regenerate: 重写派生的测试数据并更新 manifest 中的哈希
"""

import argparse
import sys
from pathlib import Path

# 添加项目根目录到Python路径
sys.path.insert(0, str(Path(__file__).parent.parent))

from engine.exceptions import SplatError
from engine.fixtures import DEFAULT_MANIFEST, regenerate_fixtures, verify_fixtures
from engine.settings import DEFAULT_CONFIG, setup_logging


def cmd_verify(args):
    report = verify_fixtures(args.manifest)
    print("\n" + "=" * 72)
    print(f"{'fixture':<28} {'status':<8} detail")
    print("=" * 72)
    for result in report.results:
        status = "ok" if result.passed else "FAIL"
        print(f"{result.fixture_id:<28} {status:<8} {result.diff}")
    print("=" * 72)
    print(f"passed: {len(report.results) - len(report.failures)}/{len(report.results)}")
    return 0 if report.passed else 1


def cmd_regenerate(args):
    written = regenerate_fixtures(args.manifest)
    for path in written:
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Golden fixture tool")
    subparsers = parser.add_subparsers(dest='command', help='available commands')
    for name, help_text in (('verify', 'check every fixture'), ('regenerate', 'rewrite derived fixtures')):
        p = subparsers.add_parser(name, help=help_text)
        p.add_argument('--manifest', default=DEFAULT_MANIFEST, help='fixture manifest path')
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 0

    setup_logging({**DEFAULT_CONFIG, "log_file": None, "log_level": "WARNING"})
    try:
        if args.command == 'verify':
            return cmd_verify(args)
        return cmd_regenerate(args)
    except (SplatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
