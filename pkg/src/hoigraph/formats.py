"""Feature files, label files and run configuration.

Feature file (little-endian): magic ``HPFM``, u32 version (1), u32 B,
u32 N, u32 D, then B*N*D float32 values in row-major order.

Label file: one ``<sample_index> <0|1>`` line per sample.

Run config: ``key = value`` lines; ``#`` starts a comment. Per-layer
overrides use a ``layer<i>.`` prefix, e.g. ``layer1.degree_cap = 4``; layer i
reads the i-th feature file given on the command line.
"""
from __future__ import annotations

import configparser
import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bank import ScheduleState
from .errors import (
    ConfigurationError,
    DataError,
    FormatError,
    MagicMismatchError,
    TruncatedFileError,
    VersionMismatchError,
)
from .fcm import FcmConfig
from .pipeline import LayerConfig

FEATURE_MAGIC = b"HPFM"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sIIII")


def features_to_bytes(features) -> bytes:
    arr = np.asarray(features)
    if arr.ndim != 3:
        raise DataError(f"features must be (B, N, D), got shape {arr.shape}")
    b, n, d = arr.shape
    return _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, b, n, d) + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def features_from_bytes(data: bytes) -> np.ndarray:
    """Decode a feature file into a float32 array of shape (B, N, D)."""
    if len(data) < _FEATURE_HEADER.size:
        raise TruncatedFileError(_FEATURE_HEADER.size, len(data))
    magic, version, b, n, d = _FEATURE_HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise MagicMismatchError(FEATURE_MAGIC, magic)
    if version != FEATURE_VERSION:
        raise VersionMismatchError(FEATURE_VERSION, version)
    expected = _FEATURE_HEADER.size + 4 * b * n * d
    if len(data) < expected:
        raise TruncatedFileError(expected, len(data))
    if len(data) > expected:
        raise FormatError(f"trailing data: expected {expected} bytes, got {len(data)}")
    arr = np.frombuffer(data, dtype="<f4", offset=_FEATURE_HEADER.size).reshape(b, n, d)
    if not np.all(np.isfinite(arr)):
        raise DataError("feature file contains non-finite values")
    return arr.astype(np.float32)


def write_features(path, features) -> None:
    Path(path).write_bytes(features_to_bytes(features))


def read_features(path) -> np.ndarray:
    return features_from_bytes(Path(path).read_bytes())


def read_features_csv(path) -> np.ndarray:
    """Import a single-sample CSV with header ``node,dim0,dim1,...``.

    Returns shape (1, N, D). Rows are placed by their ``node`` index.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0].strip() != "node":
        raise FormatError("CSV header must start with 'node'")
    dims = len(rows[0]) - 1
    if dims < 1:
        raise FormatError("CSV needs at least one dim column")
    body = [r for r in rows[1:] if r]
    out = np.full((len(body), dims), np.nan, dtype=np.float32)
    try:
        for r in body:
            idx = int(r[0])
            if len(r) != dims + 1 or not 0 <= idx < len(body):
                raise FormatError(f"bad CSV row: {r}")
            out[idx] = [float(v) for v in r[1:]]
    except ValueError as exc:
        raise FormatError(f"bad CSV value: {exc}") from exc
    if np.isnan(out).any():
        raise FormatError("CSV node indices must cover 0..N-1 exactly once")
    return out[None]


def read_labels(path, n_samples: int) -> np.ndarray:
    """Parse a label file; every sample in [0, n_samples) must be labeled once."""
    labels = np.full(n_samples, -1, dtype=np.int64)
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1] not in ("0", "1"):
            raise FormatError(f"label line {lineno}: expected '<index> <0|1>', got {line!r}")
        try:
            idx = int(parts[0])
        except ValueError:
            raise FormatError(f"label line {lineno}: bad index {parts[0]!r}") from None
        if not 0 <= idx < n_samples:
            raise ConfigurationError(f"label index {idx} outside [0, {n_samples})")
        if labels[idx] != -1:
            raise ConfigurationError(f"duplicate label for sample {idx}")
        labels[idx] = int(parts[1])
    missing = np.flatnonzero(labels < 0)
    if missing.size:
        raise ConfigurationError(
            f"{missing.size} of {n_samples} samples have no label (first missing: {missing[0]})"
        )
    return labels


def write_labels(path, labels) -> None:
    Path(path).write_text("".join(f"{i} {int(y)}\n" for i, y in enumerate(labels)), encoding="utf-8")


# ---------------------------------------------------------------- run config

_LAYER_KEYS = {
    "k": "int?", "degree_cap": "int?", "beta1": "float", "beta2": "float",
    "m": "float", "max_iters": "int", "epsilon": "float", "convergence_tol": "float",
    "perturb_sigma": "float", "kmeans_iters": "int",
}
_RUN_KEYS = {
    "mu": "float", "gamma": "float", "tau_start": "float",
    "warm_start_epoch": "int", "alignment_switch_epoch": "int", "total_epochs": "int",
    "seed": "int", "batch_size": "int",
}


def _convert(key, raw, kind):
    raw = raw.strip()
    if kind.endswith("?") and raw.lower() in ("none", ""):
        return None
    try:
        return int(raw) if kind.startswith("int") else float(raw)
    except ValueError:
        raise ConfigurationError(f"config key {key!r}: cannot parse {raw!r} as {kind.rstrip('?')}") from None


@dataclass
class RunConfig:
    layer_defaults: dict = field(default_factory=dict)
    layer_overrides: dict = field(default_factory=dict)  # layer id -> dict
    mu: float = 0.9
    gamma: float = 0.5
    tau_start: float = 0.1
    warm_start_epoch: int = 5
    alignment_switch_epoch: int = 20
    total_epochs: int = 100
    seed: int = 0
    batch_size: int = 96

    def layer_config(self, layer_id: int) -> LayerConfig:
        vals = {**self.layer_defaults, **self.layer_overrides.get(layer_id, {})}
        fcm_keys = ("m", "max_iters", "epsilon", "convergence_tol")
        fcm_cfg = FcmConfig(**{k: vals.pop(k) for k in fcm_keys if k in vals})
        return LayerConfig(fcm=fcm_cfg, layer_id=layer_id, **vals)

    def schedule_state(self) -> ScheduleState:
        return ScheduleState(0, self.warm_start_epoch, self.alignment_switch_epoch,
                             self.total_epochs, self.tau_start)


def parse_run_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines. Unknown keys are rejected."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",),
                                       delimiters=("=",), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from None
    cfg = RunConfig()
    for key, raw in parser["run"].items():
        if key.startswith("layer") and "." in key:
            prefix, sub = key.split(".", 1)
            try:
                lid = int(prefix[len("layer"):])
            except ValueError:
                raise ConfigurationError(f"unknown config key {key!r}") from None
            if sub not in _LAYER_KEYS:
                raise ConfigurationError(f"unknown config key {key!r}")
            cfg.layer_overrides.setdefault(lid, {})[sub] = _convert(key, raw, _LAYER_KEYS[sub])
        elif key in _LAYER_KEYS:
            cfg.layer_defaults[key] = _convert(key, raw, _LAYER_KEYS[key])
        elif key in _RUN_KEYS:
            setattr(cfg, key, _convert(key, raw, _RUN_KEYS[key]))
        else:
            raise ConfigurationError(f"unknown config key {key!r}")
    if cfg.batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    for lid in {0, *cfg.layer_overrides}:
        cfg.layer_config(lid)  # validate eagerly
    cfg.schedule_state()
    return cfg


def read_run_config(path) -> RunConfig:
    return parse_run_config(Path(path).read_text(encoding="utf-8"))
