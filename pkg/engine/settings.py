"""
运行时配置
YAML 默认值 + 环境变量覆盖（前缀 MMASYM_，可写在 .env 中）
"""
import json
import sys
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml
from loguru import logger
from pydantic import ValidationError
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from shared.errors import ConfigError
from shared.models import RunConfig

DEFAULT_CONFIG_PATH = Path(__file__).parent / "config.yaml"


class NumericsSettings(BaseSettings):
    """数值阈值与运行时参数"""
    rank_rtol: float = 1e-10
    skew_tol: float = 1e-12
    bracket_tol: float = 1e-10
    crit_tol: float = 1e-9
    omega_tol: float = 1e-8
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    singular_margin: float = 1e-2
    kernel_rtol: float = 1e-8
    chart_kernel_rtol: float = 1e-6
    fd_step: float = 1e-5
    fd_hess_step: float = 1e-4
    grad_zero_tol: float = 1e-9
    chart_T: float = 0.9
    shard_size: int = 65536
    slab_t_factor: float = 2.5
    fourier_table_kmax: float = 800.0
    fourier_table_step: float = 0.01
    fourier_table_nodes: int = 2048
    fourier_tail_tol: float = 1e-12
    threads: int = 1
    log_level: str = "INFO"
    log_format: str = "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}"
    log_file: str = ""
    log_rotation: str = "00:00"
    log_retention: str = "7 days"

    model_config = SettingsConfigDict(env_prefix="MMASYM_", env_file=".env", extra="ignore")

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        # 环境变量优先于 YAML 传入的初始化参数
        return env_settings, dotenv_settings, init_settings


def _flatten_yaml(raw: Dict[str, Any]) -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    flat.update(raw.get("numerics", {}) or {})
    flat.update(raw.get("runtime", {}) or {})
    for key, value in (raw.get("logging", {}) or {}).items():
        flat[f"log_{key}"] = value
    return flat


def load_settings(path: Optional[Path] = None) -> NumericsSettings:
    """
    加载运行时配置

    Args:
        path: YAML 文件路径，默认 engine/config.yaml

    Returns:
        NumericsSettings 实例
    """
    config_path = Path(path) if path else DEFAULT_CONFIG_PATH
    raw: Dict[str, Any] = {}
    if config_path.exists():
        with open(config_path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    return NumericsSettings(**_flatten_yaml(raw))


@lru_cache(maxsize=1)
def get_settings() -> NumericsSettings:
    """进程级默认配置"""
    return load_settings()


def configure_logging(settings: NumericsSettings) -> None:
    """按配置重建 loguru 输出"""
    logger.remove()
    logger.add(
        sys.stdout,
        format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {message}",
        level=settings.log_level,
        colorize=True,
    )
    if settings.log_file:
        logger.add(
            settings.log_file,
            rotation=settings.log_rotation,
            retention=settings.log_retention,
            format=settings.log_format,
            level="DEBUG",
        )


def load_run_config(path: Path) -> RunConfig:
    """
    读取运行配置（.json 用 json，其余按 YAML）

    Args:
        path: 配置文件路径

    Returns:
        校验后的 RunConfig
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"配置文件不存在: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f) if path.suffix.lower() == ".json" else yaml.safe_load(f)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"配置文件解析失败: {e}") from e
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(p) for p in first.get("loc", ()))
        raise ConfigError(f"配置字段 {field} 无效: {first.get('msg')}") from e
