#!/usr/bin/env python3
"""
命令行入口
analyze | l0 | oracle | verify | resolve-check
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional

# 添加项目根目录到 Python 路径
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from loguru import logger

from engine import __version__
from engine.action_model import principal_orbit_dimension
from engine.harness import (
    analyze,
    compute_L0,
    emit_report,
    resolve_check,
    run_oracle_sweep,
    stage,
    verify_pipeline,
    write_certificates,
    write_sweep_csv,
)
from engine.settings import NumericsSettings, configure_logging, load_run_config, load_settings
from shared.errors import AsymptoticsError
from shared.models import RunConfig, SweepRow

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="矩映射振荡积分的奇异等变渐近分析")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "analyze": "校验作用、计算 κ、分层并构建迷向树",
        "l0": "计算领头系数 L₀",
        "oracle": "在 μ 网格上计算 I(μ)",
        "verify": "完整流水线并给出判定",
        "resolve-check": "奇点解消数值证书",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path, help="运行配置（JSON 或 YAML）")
        p.add_argument("--out", type=Path, default=None, help="输出目录，默认取配置中的 output.directory")
        p.add_argument("--seed", type=int, default=None, help="覆盖配置中的随机种子")
        p.add_argument("--threads", type=int, default=None, help="工作线程数（只影响耗时）")
        p.add_argument("--settings", type=Path, default=None, help="运行时 YAML 配置，默认 engine/config.yaml")
    return parser


def _apply_overrides(config: RunConfig, seed: Optional[int]) -> RunConfig:
    if seed is None:
        return config
    return config.model_copy(update={"seed": seed})


def run(argv: Optional[List[str]] = None) -> int:
    """解析参数并执行子命令，返回退出码"""
    args = build_parser().parse_args(argv)
    settings: NumericsSettings = load_settings(args.settings)
    if args.threads is not None:
        settings = settings.model_copy(update={"threads": args.threads})
    configure_logging(settings)

    try:
        config = _apply_overrides(load_run_config(args.config), args.seed)
        out_dir = args.out or Path(config.output.directory)
        out_dir.mkdir(parents=True, exist_ok=True)

        if args.command == "analyze":
            record = analyze(config, settings)
            (out_dir / "analysis.json").write_text(record.model_dump_json(indent=2), encoding="utf-8")
            logger.info(f"✅ κ = {record.kappa}，{len(record.branches)} 个分支")
            return EXIT_OK if record.validation.ok else EXIT_FAILED

        if args.command == "l0":
            with stage("stratify"):
                kappa = principal_orbit_dimension(config.action, config.kappa_samples, config.seed, settings)
            with stage("l0"):
                result = compute_L0(config, kappa, args.threads, settings)
            (out_dir / "l0.json").write_text(result.model_dump_json(indent=2), encoding="utf-8")
            return EXIT_OK

        if args.command == "oracle":
            with stage("oracle"):
                estimates = run_oracle_sweep(config, args.threads, settings)
            rows = [SweepRow(mu=e.mu, re_I=e.re, im_I=e.im, err_estimate=e.err_estimate, method=e.method) for e in estimates]
            write_sweep_csv(rows, out_dir / "sweep.csv")
            return EXIT_OK

        if args.command == "resolve-check":
            with stage("certificates"):
                certificates = resolve_check(config, settings=settings)
            write_certificates(certificates, out_dir / "certificates")
            return EXIT_OK if all(c.passed for c in certificates) else EXIT_FAILED

        report = verify_pipeline(config, args.threads, settings)
        emit_report(report, out_dir)
        return EXIT_OK if report.passed else EXIT_FAILED

    except AsymptoticsError as e:
        logger.error(f"❌ {e}")
        return EXIT_ERROR


def main() -> None:
    print(f"""
╔══════════════════════════════════════════════════╗
║     📐 Moment-Map Asymptotics Engine  v{__version__}     ║
╠══════════════════════════════════════════════════╣
║  子命令: analyze | l0 | oracle | verify          ║
║          resolve-check                           ║
╚══════════════════════════════════════════════════╝
    """)
    sys.exit(run())


if __name__ == "__main__":
    main()
