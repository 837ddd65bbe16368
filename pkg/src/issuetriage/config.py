"""Configuration: TOML file, environment overrides, safe defaults.

Secrets (API token, webhook secret) can live in the file for local use
but the environment variables ISSUETRIAGE_TOKEN and
ISSUETRIAGE_WEBHOOK_SECRET always win, so deployments never need
credentials on disk.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from issuetriage.analyzers import (
    DEFAULT_MAX_SUGGESTIONS,
    DEFAULT_THRESHOLD,
    DEFAULT_TITLE_WEIGHT,
    DEFAULT_TOP_K,
    DUPLICATE_ANALYZER_ID,
    LOCALIZATION_ANALYZER_ID,
    SEVERITY_ANALYZER_ID,
)
from issuetriage.forge import DEFAULT_WEB_BASE, MAX_PAGE_SIZE, RetryPolicy
from issuetriage.plugins import DEFAULT_DEADLINE_SECONDS
from issuetriage.webhook import DEFAULT_QUEUE_LIMIT

TOKEN_ENV = "ISSUETRIAGE_TOKEN"
SECRET_ENV = "ISSUETRIAGE_WEBHOOK_SECRET"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ForgeConfig:
    base_url: str = "https://forge.example/api"
    web_base: str = DEFAULT_WEB_BASE
    token: str = ""
    webhook_secret: str = ""


@dataclass(frozen=True)
class GatewayConfig:
    host: str = "127.0.0.1"
    port: int = 8040
    queue_limit: int = DEFAULT_QUEUE_LIMIT


@dataclass(frozen=True)
class AnalyzerConfig:
    duplicate_id: str = DUPLICATE_ANALYZER_ID
    severity_id: str = SEVERITY_ANALYZER_ID
    localization_id: str = LOCALIZATION_ANALYZER_ID
    threshold: float = DEFAULT_THRESHOLD
    max_suggestions: int = DEFAULT_MAX_SUGGESTIONS
    title_weight: int = DEFAULT_TITLE_WEIGHT
    pool_size: int = 1
    top_k: int = DEFAULT_TOP_K
    consensus_runs: int = 1
    deadline_seconds: float = DEFAULT_DEADLINE_SECONDS


@dataclass(frozen=True)
class AppConfig:
    storage_path: str = "issuetriage.db"
    severity_model_path: str | None = None
    page_size: int = 100
    forge: ForgeConfig = field(default_factory=ForgeConfig)
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    analyzers: AnalyzerConfig = field(default_factory=AnalyzerConfig)
    retry: RetryPolicy = field(default_factory=RetryPolicy)


def _section(data: Mapping[str, Any], name: str) -> Mapping[str, Any]:
    value = data.get(name, {})
    if not isinstance(value, Mapping):
        raise ConfigError(f"[{name}] must be a table")
    return value


def _build(data: Mapping[str, Any]) -> AppConfig:
    storage = _section(data, "storage")
    forge = _section(data, "forge")
    gateway = _section(data, "gateway")
    analyzers = _section(data, "analyzers")
    retry = _section(data, "retry")
    severity = _section(data, "severity")
    try:
        return AppConfig(
            storage_path=str(storage.get("path", AppConfig.storage_path)),
            severity_model_path=(
                str(severity["model_path"]) if "model_path" in severity else None
            ),
            page_size=int(data.get("page_size", AppConfig.page_size)),
            forge=ForgeConfig(
                base_url=str(forge.get("base_url", ForgeConfig.base_url)),
                web_base=str(forge.get("web_base", ForgeConfig.web_base)),
                token=str(forge.get("token", "")),
                webhook_secret=str(forge.get("webhook_secret", "")),
            ),
            gateway=GatewayConfig(
                host=str(gateway.get("host", GatewayConfig.host)),
                port=int(gateway.get("port", GatewayConfig.port)),
                queue_limit=int(gateway.get("queue_limit", GatewayConfig.queue_limit)),
            ),
            analyzers=AnalyzerConfig(
                duplicate_id=str(analyzers.get("duplicate_id", AnalyzerConfig.duplicate_id)),
                severity_id=str(analyzers.get("severity_id", AnalyzerConfig.severity_id)),
                localization_id=str(
                    analyzers.get("localization_id", AnalyzerConfig.localization_id)
                ),
                threshold=float(analyzers.get("threshold", AnalyzerConfig.threshold)),
                max_suggestions=int(
                    analyzers.get("max_suggestions", AnalyzerConfig.max_suggestions)
                ),
                title_weight=int(analyzers.get("title_weight", AnalyzerConfig.title_weight)),
                pool_size=int(analyzers.get("pool_size", AnalyzerConfig.pool_size)),
                top_k=int(analyzers.get("top_k", AnalyzerConfig.top_k)),
                consensus_runs=int(
                    analyzers.get("consensus_runs", AnalyzerConfig.consensus_runs)
                ),
                deadline_seconds=float(
                    analyzers.get("deadline_seconds", AnalyzerConfig.deadline_seconds)
                ),
            ),
            retry=RetryPolicy(
                initial_delay=float(retry.get("initial_delay", 1.0)),
                multiplier=float(retry.get("multiplier", 2.0)),
                max_delay=float(retry.get("max_delay", 60.0)),
                max_attempts=int(retry.get("max_attempts", 6)),
            ),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad configuration value: {exc}") from exc


def _validate(config: AppConfig) -> AppConfig:
    if not 1 <= config.page_size <= MAX_PAGE_SIZE:
        raise ConfigError(f"page_size must be in [1, {MAX_PAGE_SIZE}], got {config.page_size}")
    if config.analyzers.consensus_runs < 1:
        raise ConfigError("analyzers.consensus_runs must be >= 1")
    if config.gateway.queue_limit < 1:
        raise ConfigError("gateway.queue_limit must be >= 1")
    return config


def load_config(path: Path | str | None = None, env: Mapping[str, str] | None = None) -> AppConfig:
    """Read TOML config (all keys optional) and apply env overrides."""
    environ = os.environ if env is None else env
    data: Mapping[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    config = _validate(_build(data))
    token = environ.get(TOKEN_ENV)
    secret = environ.get(SECRET_ENV)
    if token or secret:
        config = replace(
            config,
            forge=replace(
                config.forge,
                token=token if token else config.forge.token,
                webhook_secret=secret if secret else config.forge.webhook_secret,
            ),
        )
    return config
