"""Layered run configuration: defaults < config file < environment < flags.

The resolved configuration is immutable for the duration of a run and its
fingerprint goes into the run manifest.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


@dataclass
class SegmenterConfig:
    """Thresholds and detector parameters for video segmentation.

    threshold_1: segments shorter than this (seconds) are merged as transitions.
    threshold_2: segments longer than this (seconds) get slide re-detection.
    threshold_3: SSIM at or above this means same slide without a VLM check.
    threshold_4: SSIM at or below this means different slides without a VLM check.
    n_sample: re-detection frame sampling interval (seconds).
    """

    threshold_1: float = 3.0
    threshold_2: float = 60.0
    threshold_3: float = 0.9
    threshold_4: float = 0.65
    n_sample: float = 60.0
    sample_fps: float = 4.0
    adaptive_threshold: float = 1.0
    min_content_val: float = 10.0
    detector_window: int = 2

    def __post_init__(self):
        if not 0 < self.threshold_1 < self.threshold_2:
            raise ValueError("require 0 < threshold_1 < threshold_2")
        if not 0 <= self.threshold_4 < self.threshold_3 <= 1:
            raise ValueError("require 0 <= threshold_4 < threshold_3 <= 1")
        if self.n_sample <= 0:
            raise ValueError("n_sample must be positive")
        if self.sample_fps <= 0:
            raise ValueError("sample_fps must be positive")


@dataclass
class RetryPolicy:
    max_attempts: int = 5
    backoff_factor: float = 2.0
    backoff_initial: float = 1.0
    backoff_cap: float = 60.0


@dataclass
class ModelConfig:
    """Endpoints and sampling settings for the four remote capabilities."""

    vlm_url: str = ""
    vlm_model: str = ""
    llm_url: str = ""
    llm_model: str = ""
    asr_url: str = ""
    asr_model: str = ""
    embed_url: str = ""
    embed_model: str = ""
    api_key: str = ""
    temperature: float = 0.0
    max_tokens: int = 800
    retry: RetryPolicy = field(default_factory=RetryPolicy)


@dataclass
class CriticConfig:
    """Bounds for the iterative critic reflection loop."""

    n_max: int = 10
    terminate_token: str = "TERMINATE!!!"

    def __post_init__(self):
        if self.n_max < 2:
            raise ValueError("n_max must be at least 2")


@dataclass
class FeatureFlags:
    knowledge: bool = False
    asr_correction: bool = False
    critic: bool = False

    @classmethod
    def parse(cls, spec: str) -> "FeatureFlags":
        """Parse a comma list like 'knowledge,asr,critic' (empty = baseline)."""
        names = {n.strip() for n in spec.split(",") if n.strip()}
        aliases = {"asr": "asr_correction", "asr_correction": "asr_correction",
                   "knowledge": "knowledge", "critic": "critic"}
        flags = cls()
        for name in names:
            if name not in aliases:
                raise ValueError(f"unknown feature: {name}")
            setattr(flags, aliases[name], True)
        return flags

    def as_dict(self) -> dict[str, bool]:
        return {"knowledge": self.knowledge,
                "asr_correction": self.asr_correction,
                "critic": self.critic}


@dataclass
class RunConfig:
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    critic: CriticConfig = field(default_factory=CriticConfig)
    features: FeatureFlags = field(default_factory=FeatureFlags)
    correction_threshold: int = 5
    similarity_threshold: float = 0.7
    retrieval_top_k: int = 10
    qa_top_k: int = 5
    jobs: int = 1


_ENV_MAP = {
    "PREMIND_VLM_URL": ("model", "vlm_url"),
    "PREMIND_VLM_MODEL": ("model", "vlm_model"),
    "PREMIND_LLM_URL": ("model", "llm_url"),
    "PREMIND_LLM_MODEL": ("model", "llm_model"),
    "PREMIND_ASR_URL": ("model", "asr_url"),
    "PREMIND_ASR_MODEL": ("model", "asr_model"),
    "PREMIND_EMBED_URL": ("model", "embed_url"),
    "PREMIND_EMBED_MODEL": ("model", "embed_model"),
    "PREMIND_API_KEY": ("model", "api_key"),
    "PREMIND_SAMPLE_FPS": ("segmenter", "sample_fps"),
}


def _apply_tree(cfg: RunConfig, tree: dict) -> None:
    for section, values in tree.items():
        if not hasattr(cfg, section):
            raise ValueError(f"unknown config section: {section}")
        target = getattr(cfg, section)
        if not dataclasses.is_dataclass(target):
            setattr(cfg, section, values)
            continue
        for key, value in values.items():
            if key == "retry" and isinstance(value, dict):
                for rk, rv in value.items():
                    setattr(target.retry, rk, rv)
                continue
            if not hasattr(target, key):
                raise ValueError(f"unknown config key: {section}.{key}")
            setattr(target, key, value)


def load_config(path: str | None = None, env: dict | None = None,
                overrides: dict | None = None) -> RunConfig:
    """Resolve a RunConfig. `overrides` uses the same {section: {key: value}}
    tree as the TOML file and wins over everything."""
    cfg = RunConfig()
    if path:
        with open(path, "rb") as fh:
            _apply_tree(cfg, tomllib.load(fh))
    env = os.environ if env is None else env
    for var, (section, key) in _ENV_MAP.items():
        if var in env and env[var] != "":
            current = getattr(getattr(cfg, section), key)
            value: object = env[var]
            if isinstance(current, float):
                value = float(env[var])
            elif isinstance(current, int) and not isinstance(current, bool):
                value = int(env[var])
            setattr(getattr(cfg, section), key, value)
    if overrides:
        _apply_tree(cfg, overrides)
    # Re-validate invariants after mutation.
    SegmenterConfig(**{f.name: getattr(cfg.segmenter, f.name)
                       for f in dataclasses.fields(SegmenterConfig)})
    CriticConfig(n_max=cfg.critic.n_max, terminate_token=cfg.critic.terminate_token)
    return cfg


def config_dict(cfg: RunConfig, redact: bool = True) -> dict:
    """Plain-dict view of the config; secrets redacted unless told otherwise."""
    tree = dataclasses.asdict(cfg)
    if redact and tree["model"]["api_key"]:
        tree["model"]["api_key"] = "***"
    return tree


def config_fingerprint(cfg: RunConfig) -> str:
    """Stable hash of the resolved configuration (secrets excluded)."""
    canon = json.dumps(config_dict(cfg, redact=True), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()
