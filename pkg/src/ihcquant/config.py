"""Pipeline configuration: defaults, JSON loading, and content hashing.

Every tunable lives here with its default; a JSON config file may
override any subset. Unknown keys are rejected by name so typos fail
loudly instead of silently running with defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigInvalid
from .nuclei import DetectorConfig
from .stain import StainThresholds


@dataclass(frozen=True)
class TissueConfig:
    white_threshold: int = 230
    min_saturation: int = 25


@dataclass(frozen=True)
class PatchConfig:
    size: int = 512
    halo: int = 64
    min_tissue_frac: float = 1e-4

    def __post_init__(self):
        if self.size < 32:
            raise ConfigInvalid(f"patches.size too small: {self.size}")
        if not 0 < self.halo < self.size:
            raise ConfigInvalid(
                f"patches.halo must be in (0, size), got {self.halo}"
            )
        if not 0.0 <= self.min_tissue_frac <= 1.0:
            raise ConfigInvalid(
                f"patches.min_tissue_frac must be in [0,1], got "
                f"{self.min_tissue_frac}"
            )


@dataclass(frozen=True)
class ClusterConfig:
    enabled: bool = True
    eps_px: float = 100.0
    min_size: int = 6
    mode: str = "stained_only"

    def __post_init__(self):
        if self.eps_px <= 0:
            raise ConfigInvalid(f"cluster.eps_px must be positive, got "
                                f"{self.eps_px}")
        if self.min_size < 1:
            raise ConfigInvalid(f"cluster.min_size must be >= 1, got "
                                f"{self.min_size}")
        if self.mode not in ("stained_only", "all"):
            raise ConfigInvalid(f"cluster.mode must be 'stained_only' or "
                                f"'all', got {self.mode!r}")


@dataclass(frozen=True)
class ScoringConfig:
    # PS bin upper edges for scores 1..4; None means the standard bins
    # 1%, 10%, 1/3, 2/3 (kept exact as rationals downstream).
    ps_bin_edges: tuple | None = None


@dataclass(frozen=True)
class Her2Config:
    n_trees: int = 100
    max_depth: int = 12
    features_per_split: int | str = "sqrt"
    ring_completeness_frac: float = 0.9
    ring_dilation_px: int = 2
    ratio_cap: float = 100.0
    slide_mode: str = "pool"

    def __post_init__(self):
        if self.slide_mode not in ("pool", "vote"):
            raise ConfigInvalid(f"her2.slide_mode must be 'pool' or 'vote', "
                                f"got {self.slide_mode!r}")
        if not 0.0 < self.ring_completeness_frac <= 1.0:
            raise ConfigInvalid("her2.ring_completeness_frac must be in (0,1]")


@dataclass(frozen=True)
class PipelineConfig:
    tissue: TissueConfig = field(default_factory=TissueConfig)
    patches: PatchConfig = field(default_factory=PatchConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    stain: StainThresholds = field(default_factory=StainThresholds)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    her2: Her2Config = field(default_factory=Her2Config)
    workers: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigInvalid(f"workers must be >= 1, got {self.workers}")


_SECTIONS = {
    "tissue": TissueConfig,
    "patches": PatchConfig,
    "detector": DetectorConfig,
    "stain": StainThresholds,
    "cluster": ClusterConfig,
    "scoring": ScoringConfig,
    "her2": Her2Config,
}


def _build_section(name: str, cls, overrides: dict):
    if not isinstance(overrides, dict):
        raise ConfigInvalid(f"section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in overrides:
        if key not in known:
            raise ConfigInvalid(f"unknown key {name}.{key}")
    fixed = {k: tuple(v) if isinstance(v, list) else v
             for k, v in overrides.items()}
    try:
        return cls(**fixed)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"bad value in section {name!r}: {exc}") from exc


def config_from_dict(payload: dict) -> PipelineConfig:
    if not isinstance(payload, dict):
        raise ConfigInvalid("config root must be a JSON object")
    kwargs = {}
    for key, value in payload.items():
        if key == "workers":
            kwargs["workers"] = value
        elif key in _SECTIONS:
            kwargs[key] = _build_section(key, _SECTIONS[key], value)
        else:
            raise ConfigInvalid(f"unknown key {key}")
    try:
        return PipelineConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(str(exc)) from exc


def load_config(path: str | Path | None) -> PipelineConfig:
    """Defaults, optionally overridden by a JSON file."""
    if path is None:
        return PipelineConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigInvalid(f"config file not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(payload)


def config_to_dict(cfg: PipelineConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_hash(cfg: PipelineConfig) -> str:
    """Stable content hash of the effective configuration."""
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True,
                           separators=(",", ":"), default=list)
    return hashlib.sha256(canonical.encode()).hexdigest()
