"""Engine-wide configuration with a stable hash for provenance tracking."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields


@dataclass
class EngineConfig:
    seed: int = 7

    # graph index defaults
    hnsw_m: int = 16
    hnsw_ef_construction: int = 200

    # scalar statistics
    stats_bins: int = 100
    stats_refresh_fraction: float = 0.10

    # correlation encoder
    encoder_sample_fraction: float = 0.10
    encoder_sample_cap: int = 50_000
    encoder_numeric_bins: int = 10
    frozen_hidden: tuple = (64, 64)
    trainable_hidden: tuple = (64,)
    trainable_out: int = 16
    ae_hidden: int = 64
    encoder_lr: float = 0.05
    encoder_epochs: int = 120
    encoder_batch: int = 64
    ae_lr: float = 0.05
    ae_epochs: int = 150
    ae_batch: int = 64
    finetune_lr_scale: float = 0.3
    finetune_epochs: int = 25

    # query featurisation
    probe_k: int = 64
    probe_ef: int = 64

    # plan rewriter
    planner_hidden: tuple = (64, 32)
    planner_lr: float = 0.03
    planner_epochs: int = 400
    planner_batch: int = 32
    param_hidden: tuple = (64, 32)
    param_lr: float = 0.02
    param_epochs: int = 400
    param_batch: int = 32

    # deterministic cost units used to label training examples; the ratio
    # reflects that one graph-node visit costs far more wall time than one
    # row of a vectorised sequential scan in this implementation
    cost_seq_row: float = 1.0
    cost_graph_visit: float = 40.0

    def hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def merged(self, overrides: dict) -> "EngineConfig":
        """Return a copy with ``overrides`` applied to matching fields."""
        valid = {f.name: f for f in fields(self)}
        current = asdict(self)
        for key, raw in overrides.items():
            if key not in valid:
                raise KeyError(f"unknown config key: {key}")
            current[key] = _coerce(current[key], raw)
        return EngineConfig(**{k: _retuple(v) for k, v in current.items()})


def _coerce(template, raw):
    if isinstance(raw, str):
        if isinstance(template, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(template, int):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
        if isinstance(template, (tuple, list)):
            return tuple(int(x) for x in raw.replace(",", " ").split())
        return raw
    return raw


def _retuple(value):
    return tuple(value) if isinstance(value, list) else value


def load_config_file(path) -> dict:
    """Parse a flat ``key = value`` file, ignoring blanks and # comments."""
    overrides = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{line_no}: expected key = value")
            key, _, value = stripped.partition("=")
            overrides[key.strip()] = value.strip()
    return overrides
