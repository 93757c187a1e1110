"""
端到端流水线：分层 → κ → L₀ → 振荡积分扫描 → 领头项拟合 → 报告
"""
import math
import platform
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np
import pandas as pd
import pydantic
import scipy
from loguru import logger

from engine import __version__
from engine.action_model import (
    principal_orbit_dimension,
    stratify_sample,
    structured_samples,
    validate_action,
)
from engine.critical import integrate_L0
from engine.oracle import amplitude_mass, eval_I, eval_I_semianalytic_so2, is_planar_rotation
from engine.resolution import build_isotropy_tree, certify_branch
from engine.settings import NumericsSettings, get_settings
from shared.errors import (
    AsymptoticRegimeError,
    AsymptoticsError,
    PreconditionViolation,
    StageError,
    UnsupportedDepthError,
)
from shared.models import (
    AnalysisRecord,
    AsymptoticsReport,
    BranchCertificate,
    FitResult,
    IntegralEstimate,
    IsotropyBranch,
    L0Result,
    Provenance,
    RunConfig,
    SweepRow,
    Tolerances,
)
from shared.utils import config_hash

SWEEP_COLUMNS = ["mu", "re_I", "im_I", "err_estimate", "method"]


@contextmanager
def stage(name: str) -> Iterator[None]:
    """把阶段内的错误包装为 StageError"""
    try:
        yield
    except StageError:
        raise
    except AsymptoticsError as e:
        logger.error(f"❌ 阶段 {name} 失败: {e}")
        raise StageError(name, e) from e


def provenance(config: RunConfig) -> Provenance:
    return Provenance(
        config_hash=config_hash(config.model_dump(mode="json")),
        seed=config.seed,
        versions={
            "engine": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
            "pydantic": pydantic.VERSION,
        },
    )


# ============ 拟合 ============

def fit_leading_term(
    mu_values: Sequence[float],
    I_values: Sequence[complex],
    kappa: int,
    err_estimates: Optional[Sequence[float]] = None,
    tolerances: Optional[Tolerances] = None,
) -> FitResult:
    """
    Re I(μ)/(2πμ)^κ 对 L₀ + c₁μ 的最小二乘，并对 log|I| ~ log μ 做无约束指数拟合

    Args:
        mu_values: μ 值
        I_values: 对应的 I(μ)
        kappa: 声明的 κ
        err_estimates: 求积误差估计，给出时做渐近区间检查
        tolerances: 容差设置

    Returns:
        拟合结果（residual 为 I 尺度上的最大残差）

    Raises:
        PreconditionViolation: 少于 4 个点
        AsymptoticRegimeError: 残差超过求积误差的 regime_factor 倍
    """
    tolerances = tolerances or Tolerances()
    mu = np.asarray(mu_values, dtype=float)
    values = np.asarray(I_values, dtype=complex)
    if mu.size < 4:
        raise PreconditionViolation(f"拟合至少需要 4 个 μ 点，当前 {mu.size}")

    scale = (2.0 * math.pi * mu) ** kappa
    design = np.stack([np.ones_like(mu), mu], axis=1)
    (L0, c1), *_ = np.linalg.lstsq(design, values.real / scale, rcond=None)
    residual = float(np.max(np.abs(values.real - scale * (L0 + c1 * mu))))
    magnitude = np.abs(values)
    exponent = float(np.polyfit(np.log(mu), np.log(np.maximum(magnitude, 1e-300)), 1)[0])
    logger.info(f"📈 拟合: L₀ = {L0:.6e}, c₁ = {c1:.4e}, 指数 {exponent:.4f}（κ = {kappa}）")

    if err_estimates is not None:
        allowed = tolerances.regime_factor * float(np.max(err_estimates))
        if residual > allowed:
            raise AsymptoticRegimeError(
                f"拟合残差 {residual:.3e} 超过允许值 {allowed:.3e}：μ 尚未进入渐近区间，请减小 mu_grid.min"
            )
    return FitResult(
        L0_fitted=float(L0),
        next_order_coeff=float(c1),
        residual=residual,
        exponent=exponent,
        n_points=int(mu.size),
    )


# ============ 各阶段 ============

def run_oracle_sweep(
    config: RunConfig,
    threads: Optional[int] = None,
    settings: Optional[NumericsSettings] = None,
) -> List[IntegralEstimate]:
    """在 mu_grid 上逐点计算 I(μ)"""
    estimates: List[IntegralEstimate] = []
    for mu in config.mu_grid.values():
        est = eval_I(config.action, config.amplitude, mu, config.oracle, threads, settings)
        logger.info(f"🌊 I({mu:.4g}) = {est.re:+.6e} {est.im:+.3e}i  (err {est.err_estimate:.1e})")
        estimates.append(est)
    return estimates


def compute_L0(
    config: RunConfig,
    kappa: int,
    threads: Optional[int] = None,
    settings: Optional[NumericsSettings] = None,
) -> L0Result:
    result = integrate_L0(config.action, config.amplitude, kappa, config.surface, config.seed, threads, settings)
    nonzero = [s for s in result.signatures if s != 0]
    if nonzero:
        logger.warning(f"⚠️ 观测到非零横截符号差 {nonzero}，领头项带相位因子 e^(iπσ/4)")
    return result


def resolve_check(
    config: RunConfig,
    kappa: Optional[int] = None,
    settings: Optional[NumericsSettings] = None,
) -> List[BranchCertificate]:
    """对迷向树的每个分支运行奇点解消证书"""
    settings = settings or get_settings()
    kappa = principal_orbit_dimension(config.action, config.kappa_samples, config.seed, settings) if kappa is None else kappa
    branches = build_isotropy_tree(config.action, kappa, config.seed, settings)
    return [certify_branch(branch, config.resolve, config.seed, settings) for branch in branches]


def _branch_summary(branch: IsotropyBranch) -> Dict[str, object]:
    return {
        "label": branch.label(),
        "N": branch.N,
        "kappa": branch.kappa,
        "numerical_data": branch.numerical_data(),
        "predicted_exponents": branch.predicted_exponents(),
        "alpha_charts": any(lv.d >= 1 for lv in branch.levels),
    }


def analyze(config: RunConfig, settings: Optional[NumericsSettings] = None) -> AnalysisRecord:
    """
    校验作用、计算 κ、对结构化样本分层并构建迷向树

    Returns:
        分析记录
    """
    settings = settings or get_settings()
    action = config.action
    with stage("validate"):
        report = validate_action(action, settings)
    with stage("stratify"):
        kappa = principal_orbit_dimension(action, config.kappa_samples, config.seed, settings)
        strata = stratify_sample(action, structured_samples(action, seed=config.seed, settings=settings), settings)
    notes: List[str] = []
    branches: List[Dict[str, object]] = []
    with stage("isotropy_tree"):
        try:
            branches = [_branch_summary(b) for b in build_isotropy_tree(action, kappa, config.seed, settings)]
        except UnsupportedDepthError as e:
            notes.append(str(e))
    return AnalysisRecord(
        action=action.name,
        validation=report,
        kappa=kappa,
        strata=[
            {"label": sig.label(), "samples": len(s.representatives), "hull_dim": int(s.hull.shape[0])}
            for sig, s in strata.items()
        ],
        branches=branches,
        notes=notes,
    )


# ============ 完整流水线 ============

def verify_pipeline(
    config: RunConfig,
    threads: Optional[int] = None,
    settings: Optional[NumericsSettings] = None,
) -> AsymptoticsReport:
    """
    分层 → κ → L₀ → 振荡积分扫描 → 拟合，并给出判定

    判定：PASS_EXPONENT、PASS_L0、PASS_IMAG；L₀ 参考值为 0 时改为 PASS_NULL；
    SO(2)/ℝ² 上附带 PASS_SEMIANALYTIC，开启 resolve 时附带 PASS_CERTIFICATES。

    Args:
        config: 运行配置
        threads: 工作线程数，只影响耗时

    Returns:
        验证报告

    Raises:
        StageError: 任一阶段失败，携带阶段名
    """
    settings = settings or get_settings()
    action, amplitude, tol = config.action, config.amplitude, config.tolerances
    notes: List[str] = []
    verdicts: Dict[str, bool] = {}
    logger.info(f"🚀 验证流水线: {action.name or '?'}，seed = {config.seed}")

    with stage("validate"):
        validation = validate_action(action, settings)
        if not validation.ok:
            raise PreconditionViolation(f"群作用无效: {validation.violations}")

    with stage("stratify"):
        kappa = principal_orbit_dimension(action, config.kappa_samples, config.seed, settings)
        strata = stratify_sample(action, structured_samples(action, seed=config.seed, settings=settings), settings)
        notes.append(f"strata: {[sig.label() for sig in strata]}")
        try:
            branches = build_isotropy_tree(action, kappa, config.seed, settings)
            for branch in branches:
                summary = _branch_summary(branch)
                notes.append(
                    f"branch {summary['label']}: κ={kappa}, exponents={summary['predicted_exponents']}, "
                    f"alpha_charts={summary['alpha_charts']}"
                )
        except UnsupportedDepthError as e:
            branches = []
            notes.append(str(e))

    with stage("l0"):
        l0 = compute_L0(config, kappa, threads, settings)

    mass = amplitude_mass(amplitude)
    L0_semi: Optional[float] = None
    if config.semianalytic and is_planar_rotation(action):
        with stage("semianalytic"):
            semi = eval_I_semianalytic_so2(action, amplitude, config.mu_grid.min, settings=settings)
            L0_semi = semi.slope / (2.0 * math.pi)
            if l0.L0 != 0.0:
                verdicts["PASS_SEMIANALYTIC"] = abs(L0_semi - l0.L0) <= tol.l0_rel_tol * abs(l0.L0)

    with stage("oracle"):
        estimates = run_oracle_sweep(config, threads, settings)
    table = [
        SweepRow(mu=e.mu, re_I=e.re, im_I=e.im, err_estimate=e.err_estimate, method=e.method) for e in estimates
    ]
    smallest = estimates[-1]

    fit = None
    imag_ratio = None
    if l0.n_accepted == 0 or l0.L0 == 0.0:
        verdicts["PASS_NULL"] = abs(smallest.value) <= tol.null_rel_tol * mass
        notes.append(f"null test: |I({smallest.mu:.4g})| = {abs(smallest.value):.3e}, mass = {mass:.3e}")
    else:
        with stage("fit"):
            chosen = estimates[-config.fit_points:]
            fit = fit_leading_term(
                [e.mu for e in chosen],
                [e.value for e in chosen],
                kappa,
                [e.err_estimate for e in chosen],
                tol,
            )
        verdicts["PASS_EXPONENT"] = abs(fit.exponent - kappa) <= tol.fit_exponent_tol
        verdicts["PASS_L0"] = abs(fit.L0_fitted - l0.L0) <= tol.l0_rel_tol * abs(l0.L0)
        imag_ratio = abs(smallest.im) / max(abs(smallest.value), 1e-300)
        verdicts["PASS_IMAG"] = imag_ratio <= tol.imag_ratio_max
        imag = np.abs([e.im for e in chosen])
        if np.all(imag > 0):
            slope = float(np.polyfit(np.log([e.mu for e in chosen]), np.log(imag), 1)[0])
            notes.append(f"|Im I| exponent {slope:.3f}")

    certificates: List[BranchCertificate] = []
    if config.resolve.enabled:
        with stage("certificates"):
            certificates = [certify_branch(b, config.resolve, config.seed, settings) for b in branches]
        verdicts["PASS_CERTIFICATES"] = all(c.passed for c in certificates)

    report = AsymptoticsReport(
        kappa_declared=kappa,
        kappa_fitted=fit.exponent if fit else None,
        L0_reference=l0.L0,
        L0_reference_stderr=l0.stderr_estimate,
        L0_fitted=fit.L0_fitted if fit else None,
        next_order_coeff=fit.next_order_coeff if fit else None,
        fit_residual=fit.residual if fit else None,
        L0_semianalytic=L0_semi,
        imag_ratio=imag_ratio,
        amplitude_mass=mass,
        table=table,
        verdicts=verdicts,
        notes=notes,
        certificates=certificates,
        provenance=provenance(config),
        config=config,
    )
    failed = [k for k, v in verdicts.items() if not v]
    if failed:
        logger.warning(f"⚠️ 未通过: {failed}")
    else:
        logger.info(f"✅ 全部通过: {sorted(verdicts)}")
    return report


# ============ 输出 ============

def write_sweep_csv(rows: Sequence[SweepRow], path: Path) -> Path:
    frame = pd.DataFrame([row.model_dump() for row in rows], columns=SWEEP_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def write_certificates(certificates: Sequence[BranchCertificate], directory: Path) -> List[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for index, cert in enumerate(certificates):
        path = directory / f"branch_{index}.json"
        path.write_text(cert.model_dump_json(indent=2), encoding="utf-8")
        paths.append(path)
    return paths


def emit_report(report: AsymptoticsReport, out_dir: Path, formats: Sequence[str] = ("json", "csv")) -> List[Path]:
    """
    写出 report.json、sweep.csv 与 certificates/*.json

    Args:
        report: 验证报告
        out_dir: 输出目录
        formats: 需要的格式

    Returns:
        写出的文件路径

    Raises:
        OSError: 路径不可写
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    if "json" in formats:
        path = out_dir / "report.json"
        path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
        written.append(path)
    if "csv" in formats:
        written.append(write_sweep_csv(report.table, out_dir / "sweep.csv"))
    if report.certificates:
        written.extend(write_certificates(report.certificates, out_dir / "certificates"))
    logger.info(f"💾 报告已写入 {out_dir}（{len(written)} 个文件）")
    return written
