"""
Experiment configuration: flat UTF-8 `key=value` files validated by pydantic.

    # band graph, neighborhood selection
    family=band
    method=ns
    criteria=cv,ebic
    n_list=250,1000
    p_list=25

Unknown keys are rejected; list keys take comma-separated values.
"""

from pathlib import Path
from typing import List, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ggm.exceptions import ConfigError
from ggm.services.selection_criteria import CRITERIA

LIST_KEYS = ("criteria", "n_list", "p_list")


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    family: Literal["band", "er", "sf", "knn", "identity"] = "band"
    method: Literal["ns", "glasso"] = "ns"
    criteria: List[str] = Field(default_factory=lambda: ["cv", "ebic"])
    n_list: List[int] = Field(default_factory=lambda: [250, 1000, 4000])
    p_list: List[int] = Field(default_factory=lambda: [25, 50])
    reps: int = Field(default=20, ge=1)
    K: int = Field(default=5, ge=2)
    gamma: float = Field(default=0.5, ge=0.0)
    rule: Literal["and", "or"] = "or"
    seed: int = Field(default=0, ge=0)
    wall_time_budget: float = Field(default=600.0, gt=0)
    grid_size: int = Field(default=100, ge=2)
    output_path: str = "results/simulate.csv"
    threads: int = Field(default=1, ge=1)
    cv_refit: bool = False

    @field_validator("method", "rule", "family", mode="before")
    @classmethod
    def _lower(cls, value):
        return value.strip().lower() if isinstance(value, str) else value

    @field_validator("criteria")
    @classmethod
    def _known_criteria(cls, value):
        value = [c.strip().lower() for c in value]
        unknown = sorted(set(value) - set(CRITERIA))
        if unknown:
            raise ValueError(f"unknown criteria {unknown}; expected a subset of {list(CRITERIA)}")
        if not value:
            raise ValueError("at least one criterion is required")
        return value

    @field_validator("n_list", "p_list")
    @classmethod
    def _positive(cls, value):
        if not value or any(v < 1 for v in value):
            raise ValueError("must be a nonempty list of positive integers")
        return value

    @model_validator(mode="after")
    def _folds_fit(self):
        if "cv" in self.criteria and min(self.n_list) < self.K:
            raise ValueError(f"every n must be >= K={self.K} for cross-validation")
        if min(self.p_list) < 3:
            raise ValueError("graphs need p >= 3")
        return self


def parse_config_text(text):
    """Raw {key: value} pairs from config text; list keys are split on commas."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = [v.strip() for v in value.split(",") if v.strip()] if key in LIST_KEYS else value
    return raw


def build_config(raw, **overrides):
    """Validate raw pairs plus non-None overrides into an ExperimentConfig."""
    merged = dict(raw)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**merged)
    except ValidationError as exc:
        raise ConfigError(f"invalid experiment config: {exc}") from exc


def read_config_file(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text)


def load_config(path, **overrides):
    return build_config(read_config_file(path), **overrides)


def dump_config(config):
    """key=value text that load_config reads back to an equal config."""
    lines = []
    for key, value in config.model_dump().items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"
