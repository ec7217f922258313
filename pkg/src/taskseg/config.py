"""Run configuration with file < environment < flag precedence.

Values start at the dataclass defaults, a JSON config file overrides
them, ``TASKSEG_*`` environment variables override the file, and
explicit command-line flags override everything.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping, Optional, Tuple

from .attention import AttentionMode
from .errors import ContractViolation
from .prompts import PostProcessMode
from .refinement import ReweightBase, SegmentInput, SelectionNorm

ENV_PREFIX = "TASKSEG_"


@dataclass(frozen=True)
class RunConfig:
    task_prompt: str = "the camouflaged animal"
    synonyms: Tuple[str, ...] = ("hidden animal", "concealed animal")
    chains: int = 3
    threshold: float = 0.90
    upsample_factor: float = 2.0
    w_pic: float = 0.3
    iterations: int = 6
    attention_mode: AttentionMode = AttentionMode.KKV
    post_mode: PostProcessMode = PostProcessMode.MAX_IOU_BOX
    reweight_base: ReweightBase = ReweightBase.ORIGINAL
    segment_input: SegmentInput = SegmentInput.WEIGHTED
    selection_norm: SelectionNorm = SelectionNorm.L1
    backend: str = "mock"
    dataset_root: Optional[Path] = None
    out: Optional[Path] = None
    seed: int = 0
    save_trace: bool = False
    workers: int = 1
    mock_grid_side: int = 8
    mock_channels: int = 32
    mock_layers: int = 4
    mock_delta: int = 2
    mock_radius_frac: float = 0.08

    def __post_init__(self):
        object.__setattr__(self, "synonyms", tuple(self.synonyms))
        object.__setattr__(self, "attention_mode", AttentionMode(self.attention_mode))
        object.__setattr__(self, "post_mode", PostProcessMode(self.post_mode))
        object.__setattr__(self, "reweight_base", ReweightBase(self.reweight_base))
        object.__setattr__(self, "segment_input", SegmentInput(self.segment_input))
        object.__setattr__(self, "selection_norm", SelectionNorm(self.selection_norm))
        if self.dataset_root is not None:
            object.__setattr__(self, "dataset_root", Path(self.dataset_root))
        if self.out is not None:
            object.__setattr__(self, "out", Path(self.out))
        if self.chains < 1:
            raise ContractViolation("chains must be >= 1")
        if self.workers < 1:
            raise ContractViolation("workers must be >= 1")
        if not all(isinstance(s, str) and s for s in self.synonyms):
            raise ContractViolation("synonyms must be non-empty strings")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw):
    """Parse a string (or JSON scalar) into the field's python type."""
    if name not in _FIELD_TYPES:
        raise ContractViolation(f"unknown config key {name!r}")
    if name == "synonyms":
        if isinstance(raw, str):
            parts = [p.strip() for p in raw.split(",")]
            return tuple(p for p in parts if p)
        return tuple(str(s) for s in raw)
    if name in ("dataset_root", "out"):
        return Path(raw) if raw is not None else None
    if name == "save_trace":
        if isinstance(raw, bool):
            return raw
        lowered = str(raw).strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ContractViolation(f"cannot read {raw!r} as a boolean")
    if name in ("chains", "iterations", "seed", "workers", "mock_grid_side",
                "mock_channels", "mock_layers", "mock_delta"):
        return int(raw)
    if name in ("threshold", "upsample_factor", "w_pic", "mock_radius_frac"):
        return float(raw)
    return str(raw)


def _read_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ContractViolation(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise ContractViolation(f"config file {path} must hold a JSON object")
    return data


def _read_env(env: Mapping[str, str]) -> dict:
    found = {}
    for key, value in env.items():
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX):].lower()
        if name not in _FIELD_TYPES:
            raise ContractViolation(f"unknown environment override {key}")
        found[name] = value
    return found


def load_config(config_file=None, env: Optional[Mapping[str, str]] = None,
                overrides: Optional[dict] = None) -> RunConfig:
    """Merge the three sources in increasing precedence and validate."""
    merged = {}
    if config_file is not None:
        for name, value in _read_file(config_file).items():
            merged[name] = _coerce(name, value)
    env_map = os.environ if env is None else env
    for name, value in _read_env(env_map).items():
        merged[name] = _coerce(name, value)
    for name, value in (overrides or {}).items():
        merged[name] = _coerce(name, value)
    return RunConfig(**merged)
