"""Analysis configuration and its key-value file format.

A config file is INI-style text read with :mod:`configparser`. The section
header is optional for analysis configs; a bare file of ``key = value``
lines is treated as the ``[analysis]`` section. List values are comma
separated::

    data = cohort.csv
    outcome = y
    treatment = z
    covariates = age, bmi, score
    subgroups = race, age_group
    tilting = ow
    ps_model = post-lasso
    seed = 20240101
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigError

TILTINGS = ("ipw", "ow")
PS_MODELS = ("logistic-main", "logistic-full", "lasso", "post-lasso", "external")
VARIANCE_METHODS = ("sandwich", "bootstrap")
LAMBDA_RULES = ("min", "1se")


@dataclass(frozen=True)
class AnalysisConfig:
    outcome: str
    treatment: str
    covariates: tuple[str, ...]
    subgroups: tuple[str, ...]
    seed: int
    tilting: str = "ow"
    ps_model: str = "post-lasso"
    ps_column: str | None = None
    variance: str = "sandwich"
    bootstrap_B: int = 1000
    ci_level: float = 0.95
    cv_folds: int = 10
    n_lambda: int = 100
    lambda_ratio: float = 1e-4
    lambda_rule: str = "min"
    standardize: bool = True
    clip_propensity: float | None = None
    thresholds: tuple[float, ...] = (0.05, 0.10, 0.20)
    data: str | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.tilting not in TILTINGS:
            raise ConfigError(f"tilting must be one of {TILTINGS}, got {self.tilting!r}")
        if self.ps_model not in PS_MODELS:
            raise ConfigError(f"ps_model must be one of {PS_MODELS}, got {self.ps_model!r}")
        if self.ps_model == "external" and not self.ps_column:
            raise ConfigError("ps_model=external requires ps_column")
        if self.variance not in VARIANCE_METHODS:
            raise ConfigError(f"variance must be one of {VARIANCE_METHODS}")
        if self.lambda_rule not in LAMBDA_RULES:
            raise ConfigError(f"lambda_rule must be one of {LAMBDA_RULES}")
        if self.variance == "bootstrap" and self.bootstrap_B < 100:
            raise ConfigError("bootstrap_B must be at least 100")
        if not 0 < self.ci_level < 1:
            raise ConfigError("ci_level must lie in (0, 1)")
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be at least 2")
        if self.clip_propensity is not None and not 0 < self.clip_propensity < 0.5:
            raise ConfigError("clip_propensity must lie in (0, 0.5)")
        if list(self.thresholds) != sorted(self.thresholds):
            raise ConfigError("thresholds must be increasing")
        if not self.covariates:
            raise ConfigError("at least one covariate is required")

    def replace(self, **changes) -> AnalysisConfig:
        return dataclasses.replace(self, **changes)

    def snapshot(self) -> dict:
        out = dataclasses.asdict(self)
        out.pop("extra")
        for key, value in out.items():
            if isinstance(value, tuple):
                out[key] = list(value)
        return out


def split_list(value: str) -> tuple[str, ...]:
    return tuple(item.strip() for item in value.split(",") if item.strip())


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def read_sections(path: str | Path, default_section: str = "analysis") -> dict[str, dict[str, str]]:
    """Read an INI-style file into ``{section: {key: raw value}}``."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    meaningful = [ln.strip() for ln in text.splitlines() if ln.strip() and ln.strip()[0] not in "#;"]
    if not meaningful or not meaningful[0].startswith("["):
        text = f"[{default_section}]\n" + text
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return {name: dict(parser[name]) for name in parser.sections()}


def config_from_mapping(raw: dict[str, str], base_dir: Path | None = None) -> AnalysisConfig:
    raw = dict(raw)
    for key in ("outcome", "treatment", "covariates", "subgroups"):
        if key not in raw:
            raise ConfigError(f"config is missing required key {key!r}")
    if "seed" not in raw:
        raise ConfigError("config must set a seed; no implicit random seed is used")

    kwargs: dict = {}
    try:
        kwargs["outcome"] = raw.pop("outcome").strip()
        kwargs["treatment"] = raw.pop("treatment").strip()
        kwargs["covariates"] = split_list(raw.pop("covariates"))
        kwargs["subgroups"] = split_list(raw.pop("subgroups"))
        kwargs["seed"] = int(raw.pop("seed"))
        for key in ("tilting", "ps_model", "variance", "lambda_rule"):
            if key in raw:
                kwargs[key] = raw.pop(key).strip().lower()
        if "ps_column" in raw:
            kwargs["ps_column"] = raw.pop("ps_column").strip()
        for key in ("bootstrap_B", "cv_folds", "n_lambda"):
            if key in raw:
                kwargs[key] = int(raw.pop(key))
        for key in ("ci_level", "lambda_ratio"):
            if key in raw:
                kwargs[key] = float(raw.pop(key))
        if "clip_propensity" in raw:
            value = raw.pop("clip_propensity").strip()
            kwargs["clip_propensity"] = None if value.lower() in ("", "none") else float(value)
        if "standardize" in raw:
            kwargs["standardize"] = _parse_bool(raw.pop("standardize"))
        if "thresholds" in raw:
            kwargs["thresholds"] = tuple(float(v) for v in split_list(raw.pop("thresholds")))
        if "data" in raw:
            data = Path(raw.pop("data").strip())
            if base_dir is not None and not data.is_absolute():
                data = base_dir / data
            kwargs["data"] = str(data)
    except ValueError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    kwargs["extra"] = raw
    return AnalysisConfig(**kwargs)


def load_config(path: str | Path) -> AnalysisConfig:
    sections = read_sections(path)
    if "analysis" not in sections:
        raise ConfigError(f"{path}: no [analysis] section")
    return config_from_mapping(sections["analysis"], base_dir=Path(path).resolve().parent)
