"""Prototype bank: long-term memory of class-aware and global centroids.

A bank holds, per hypergraph layer, three K x D prototype sets (positive
= bona fide, negative = spoof, global) plus the layer's attention weights.
Prototype arrays are kept in float32, the precision of the bank file, so
an in-memory bank and its saved copy behave identically.

Label convention: y = 1 is bona fide (positive), y = 0 is spoof (negative).
"""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import softmax

from .amplifier import AttentionWeights
from .errors import (
    BankNotInitializedError,
    ConfigurationError,
    FormatError,
    MagicMismatchError,
    ShapeError,
    TruncatedFileError,
    VersionMismatchError,
)

# ceil(K / 5), i.e. 20% of the slots, go to the global prototypes
GLOBAL_SLOT_DIVISOR = 5
# cosine of identical vectors can land an ulp below 1; the gate absorbs that
GATE_ATOL = 1e-12


def cosine_matrix(A, B) -> np.ndarray:
    """Pairwise cosine similarity of the rows of A and B; zero rows give 0."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    num = A @ B.T
    den = np.outer(na, nb)
    return np.clip(np.divide(num, den, out=np.zeros_like(num), where=den > 0), -1.0, 1.0)


def cosine(a, b) -> float:
    return float(cosine_matrix(a, b)[0, 0])


def greedy_match(similarity) -> np.ndarray:
    """Greedy bijection maximizing similarity one pair at a time.

    Repeatedly takes the largest entry among unmatched rows/columns (lowest
    row, then column, on ties). Returns ``perm`` with ``perm[k] = j``. This
    is not the optimal assignment in general.
    """
    S = np.array(similarity, dtype=np.float64)
    k = S.shape[0]
    if S.shape != (k, k):
        raise ShapeError("similarity", (k, k), S.shape)
    perm = np.full(k, -1, dtype=np.int64)
    for _ in range(k):
        r, c = np.unravel_index(np.argmax(S), S.shape)
        perm[r] = c
        S[r, :] = -np.inf
        S[:, c] = -np.inf
    return perm


# ---------------------------------------------------------------- schedule

class InitSource(enum.Enum):
    KMEANS = "kmeans"
    PROTOTYPE = "prototype"


class Alignment(enum.Enum):
    SOFT = "soft"
    SLOT = "slot"


@dataclass
class ScheduleState:
    current_epoch: int = 0
    warm_start_epoch: int = 5
    alignment_switch_epoch: int = 20
    total_epochs: int = 100
    tau_start: float = 0.1

    def __post_init__(self):
        if not 0 <= self.warm_start_epoch <= self.alignment_switch_epoch <= self.total_epochs:
            raise ConfigurationError(
                "schedule requires warm_start_epoch <= alignment_switch_epoch <= total_epochs, got "
                f"{self.warm_start_epoch}, {self.alignment_switch_epoch}, {self.total_epochs}"
            )


@dataclass(frozen=True)
class PhaseConfig:
    init_source: InitSource
    alignment: Alignment
    tau: float
    prototypes_frozen: bool = False

    @property
    def gating(self) -> bool:
        return self.tau != -math.inf


def gate_threshold(state: ScheduleState, epoch: int) -> float:
    """Linear decay from tau_start at the warm-start epoch to 0 at total_epochs."""
    if epoch < state.warm_start_epoch:
        return -math.inf
    span = state.total_epochs - state.warm_start_epoch
    frac = 1.0 if span <= 0 else min(1.0, (epoch - state.warm_start_epoch) / span)
    return state.tau_start * (1.0 - frac)


def schedule(state: ScheduleState, epoch: int, evaluation: bool = False) -> PhaseConfig:
    """Phase of training at ``epoch``.

    Before the warm-start epoch: K-Means init, soft alignment, no gating.
    Afterwards prototype init, soft alignment until the switch epoch and
    slot alignment from then on. Evaluation freezes the prototypes and
    disables gating.
    """
    if epoch < 0:
        raise ConfigurationError(f"epoch must be >= 0, got {epoch}")
    if evaluation:
        return PhaseConfig(InitSource.PROTOTYPE, Alignment.SOFT, -math.inf, True)
    if epoch < state.warm_start_epoch:
        return PhaseConfig(InitSource.KMEANS, Alignment.SOFT, -math.inf)
    alignment = Alignment.SOFT if epoch < state.alignment_switch_epoch else Alignment.SLOT
    return PhaseConfig(InitSource.PROTOTYPE, alignment, gate_threshold(state, epoch))


# ---------------------------------------------------------------- bank state

def _f32(a):
    if a is None:
        return None
    out = np.array(a, dtype=np.float32)
    if out.ndim != 2:
        raise ShapeError("prototypes", "(K, D)", out.shape)
    return out


@dataclass(eq=False)
class LayerBank:
    """Prototype sets of one layer. All three are None until bootstrap."""

    positive: np.ndarray | None = None
    negative: np.ndarray | None = None
    glob: np.ndarray | None = None
    attention: AttentionWeights | None = None

    def __post_init__(self):
        self.positive = _f32(self.positive)
        self.negative = _f32(self.negative)
        self.glob = _f32(self.glob)
        sets = [s for s in (self.positive, self.negative, self.glob) if s is not None]
        if sets and len(sets) != 3:
            raise ConfigurationError("positive, negative and global prototypes must be set together")
        if sets and not (sets[0].shape == sets[1].shape == sets[2].shape):
            raise ShapeError("prototypes", sets[0].shape, [s.shape for s in sets])
        if sets and not all(np.all(np.isfinite(s)) for s in sets):
            raise ConfigurationError("prototypes must be finite")

    @property
    def initialized(self) -> bool:
        return self.glob is not None

    @property
    def k(self):
        return None if self.glob is None else self.glob.shape[0]

    @property
    def dim(self):
        if self.glob is not None:
            return self.glob.shape[1]
        return None if self.attention is None else self.attention.dim

    def require(self):
        if not self.initialized:
            raise BankNotInitializedError()
        return self


@dataclass(eq=False)
class PrototypeBank:
    """Layer banks keyed by layer id plus the shared EMA and schedule state."""

    layers: dict = field(default_factory=dict)
    mu: float = 0.9
    gamma: float = 0.5
    schedule: ScheduleState = field(default_factory=ScheduleState)

    def __post_init__(self):
        for name in ("mu", "gamma"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {v}")

    def layer(self, layer_id: int) -> LayerBank:
        try:
            return self.layers[layer_id]
        except KeyError:
            raise ConfigurationError(f"bank has no layer {layer_id}") from None

    def ensure_layer(self, layer_id: int, dim: int, seed: int = 0) -> LayerBank:
        if layer_id not in self.layers:
            self.layers[layer_id] = LayerBank(attention=AttentionWeights.seeded(dim, seed + layer_id))
        return self.layers[layer_id]


# ---------------------------------------------------------------- gating / selection

def gate(batch_features, layer: LayerBank, tau: float):
    """Cosine between the grand mean of batch node features and the mean
    global prototype. Returns ``(passed, s)`` with passed = s >= tau, up to
    ``GATE_ATOL`` of rounding noise."""
    layer.require()
    X = np.asarray(batch_features, dtype=np.float64)
    s = cosine(X.reshape(-1, X.shape[-1]).mean(axis=0), layer.glob.astype(np.float64).mean(axis=0))
    return bool(s >= tau - GATE_ATOL), s


@dataclass(frozen=True)
class Eval:
    pass


@dataclass(frozen=True)
class Train:
    pos_count: int
    neg_count: int


def slot_counts(k: int, pos_count: int, neg_count: int):
    """(global, positive, negative) slot counts for training-mode selection.

    ceil(0.2 K) global slots; the rest split pos:neg with the minority
    count rounded half up and the remainder given to the majority class
    (negative on a tie).
    """
    if pos_count < 0 or neg_count < 0 or pos_count + neg_count <= 0:
        raise ConfigurationError(f"need a positive sample count, got {pos_count}:{neg_count}")
    n_glob = -(-k // GLOBAL_SLOT_DIVISOR)
    rest = k - n_glob
    total = pos_count + neg_count
    if pos_count <= neg_count:
        n_pos = math.floor(rest * pos_count / total + 0.5)
        n_neg = rest - n_pos
    else:
        n_neg = math.floor(rest * neg_count / total + 0.5)
        n_pos = rest - n_neg
    return n_glob, n_pos, n_neg


def select_init_centroids(layer: LayerBank, k: int, mode=Eval(), seed=0, perturb_sigma: float = 1e-3):
    """Centroids injected into FCM.

    Eval: the global prototypes. Train: the first ceil(0.2 K) global
    prototypes followed by rows sampled with replacement from the positive
    and negative sets in proportion to the batch class counts. Gaussian
    noise of scale ``perturb_sigma`` is added to every slot.
    """
    if not layer.initialized:
        raise BankNotInitializedError()
    if k != layer.k:
        raise ShapeError("centroid count", layer.k, k)
    rng = np.random.default_rng(seed)
    if isinstance(mode, Eval):
        C = layer.glob.astype(np.float64)
    elif isinstance(mode, Train):
        n_glob, n_pos, n_neg = slot_counts(k, mode.pos_count, mode.neg_count)
        C = np.concatenate([
            layer.glob[:n_glob],
            layer.positive[rng.integers(0, k, n_pos)],
            layer.negative[rng.integers(0, k, n_neg)],
        ]).astype(np.float64)
    else:
        raise ConfigurationError(f"unknown selection mode {mode!r}")
    if perturb_sigma > 0:
        C = C + rng.normal(0.0, perturb_sigma, C.shape)
    return C


# ---------------------------------------------------------------- centroid estimation

def label_aware_centroids(X, U, y: int, m: float = 2.0, epsilon: float = 1e-8):
    """Class-conditional centroids of one sample.

    w+ = (y u)^m, c+_k = sum_n w+_nk x_n / (sum_n w+_nk + eps); the negative
    side uses 1 - y. Returns ``(c_pos, c_neg, alpha_pos, alpha_neg)`` where
    alpha are the column sums of w.
    """
    if y not in (0, 1):
        raise ConfigurationError(f"labels must be 0 or 1, got {y!r}")
    X = np.asarray(X, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    out = []
    for gate_value in (y, 1 - y):
        W = (gate_value * U) ** m
        alpha = W.sum(axis=0)
        out.append(((W.T @ X) / (alpha + epsilon)[:, None], alpha))
    (c_pos, a_pos), (c_neg, a_neg) = out
    return c_pos, c_neg, a_pos, a_neg


@dataclass
class BatchCentroids:
    """Per-sample FCM centroids and class-conditional centroids of a batch."""

    centroids: np.ndarray  # B x K x D
    positive: np.ndarray  # B x K x D
    negative: np.ndarray  # B x K x D
    alpha_pos: np.ndarray  # B x K
    alpha_neg: np.ndarray  # B x K
    labels: np.ndarray  # B

    @classmethod
    def from_samples(cls, features, memberships, centroids, labels, m=2.0, epsilon=1e-8):
        parts = [label_aware_centroids(X, U, int(y), m, epsilon)
                 for X, U, y in zip(features, memberships, labels)]
        return cls(
            np.asarray(centroids, dtype=np.float64),
            np.stack([p[0] for p in parts]),
            np.stack([p[1] for p in parts]),
            np.stack([p[2] for p in parts]),
            np.stack([p[3] for p in parts]),
            np.asarray(labels),
        )

    def __post_init__(self):
        if self.centroids.ndim != 3 or self.centroids.shape[0] == 0:
            raise ShapeError("batch centroids", "(B>=1, K, D)", self.centroids.shape)

    @property
    def global_mean(self):
        return self.centroids.mean(axis=0)

    def class_means(self, epsilon=1e-8):
        """alpha-weighted means over the batch for both classes."""
        def wmean(c, a):
            return np.einsum("bk,bkd->kd", a, c) / (a.sum(axis=0) + epsilon)[:, None]
        return wmean(self.positive, self.alpha_pos), wmean(self.negative, self.alpha_neg)


@dataclass
class AlignedCentroids:
    glob: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    permutation: np.ndarray | None = None
    # per-slot class evidence; a slot with zero weight keeps its prototype
    weight_pos: np.ndarray | None = None
    weight_neg: np.ndarray | None = None


def soft_align(batch: BatchCentroids, layer: LayerBank, epsilon: float = 1e-8) -> AlignedCentroids:
    """Batch means reordered by greedy cosine matching against the global
    prototypes; the same permutation is applied to both class sets."""
    layer.require()
    g = batch.global_mean
    pos, neg = batch.class_means(epsilon)
    perm = greedy_match(cosine_matrix(layer.glob, g))
    return AlignedCentroids(
        g[perm], pos[perm], neg[perm], perm,
        batch.alpha_pos.sum(axis=0)[perm], batch.alpha_neg.sum(axis=0)[perm],
    )


def slot_align(batch: BatchCentroids, layer: LayerBank, epsilon: float = 1e-8) -> AlignedCentroids:
    """Soft slot assignment of every flattened batch centroid.

    a_mk = softmax_k cos(c_m, p_k); slot k is the a-weighted mean of all
    centroids, averaged with the plain batch mean. Class sets reuse a_mk,
    additionally weighted by each sample's class evidence alpha.
    """
    layer.require()
    B, K, D = batch.centroids.shape
    flat = batch.centroids.reshape(B * K, D)
    a = softmax(cosine_matrix(flat, layer.glob), axis=1)
    slotted = (a.T @ flat) / a.sum(axis=0)[:, None]
    mean_pos, mean_neg = batch.class_means(epsilon)

    def slot_class(cc, alpha, mean):
        w = a * alpha.reshape(B * K)[:, None]
        slotted_c = (w.T @ cc.reshape(B * K, D)) / (w.sum(axis=0) + epsilon)[:, None]
        return (slotted_c + mean) / 2.0

    return AlignedCentroids(
        (slotted + batch.global_mean) / 2.0,
        slot_class(batch.positive, batch.alpha_pos, mean_pos),
        slot_class(batch.negative, batch.alpha_neg, mean_neg),
        None,
        batch.alpha_pos.sum(axis=0), batch.alpha_neg.sum(axis=0),
    )


# ---------------------------------------------------------------- updates

def ema_update(layer: LayerBank, aligned: AlignedCentroids, mu: float = 0.9, gamma: float = 0.5) -> LayerBank:
    """EMA of class sets first, then the global set mixed with the neutral
    prototype 0.5 (P+ + P-) of the updated class sets."""
    layer.require()
    if aligned.glob.shape != layer.glob.shape:
        raise ShapeError("aligned centroids", layer.glob.shape, aligned.glob.shape)
    P_pos = layer.positive.astype(np.float64)
    P_neg = layer.negative.astype(np.float64)
    P_g = layer.glob.astype(np.float64)
    target_pos = np.asarray(aligned.positive, dtype=np.float64)
    target_neg = np.asarray(aligned.negative, dtype=np.float64)
    if aligned.weight_pos is not None:
        target_pos = np.where((aligned.weight_pos > 0)[:, None], target_pos, P_pos)
    if aligned.weight_neg is not None:
        target_neg = np.where((aligned.weight_neg > 0)[:, None], target_neg, P_neg)
    new_pos = mu * target_pos + (1.0 - mu) * P_pos
    new_neg = mu * target_neg + (1.0 - mu) * P_neg
    neutral = 0.5 * (new_pos + new_neg)
    new_g = mu * (gamma * np.asarray(aligned.glob, dtype=np.float64) + (1.0 - gamma) * neutral) + (1.0 - mu) * P_g
    return replace(layer, positive=new_pos, negative=new_neg, glob=new_g)


def bootstrap(layer: LayerBank, batch_centroids) -> LayerBank:
    """Initialize all three sets with the batch-mean centroids."""
    if layer.initialized:
        raise ConfigurationError("prototype bank is already initialized")
    if isinstance(batch_centroids, BatchCentroids):
        mean = batch_centroids.global_mean
    else:
        arr = np.asarray(batch_centroids, dtype=np.float64)
        mean = arr.mean(axis=0) if arr.ndim == 3 else arr
    return replace(layer, positive=mean, negative=mean, glob=mean)


# ---------------------------------------------------------------- persistence

MAGIC = b"HPPB"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")
_TRAILER = struct.Struct("<ffIIIIf")


def _exact_float(v) -> float:
    # shortest decimal that maps back to the same float32, so 0.9 stays 0.9
    return float(str(np.float32(v)))


def bank_file_size(k: int, dim: int, n_layers: int) -> int:
    return _HEADER.size + n_layers * 4 * (3 * k * dim + dim) + _TRAILER.size


def to_bytes(bank: PrototypeBank) -> bytes:
    ids = sorted(bank.layers)
    if ids != list(range(len(ids))):
        raise ConfigurationError(f"layer ids must be 0..L-1 to be saved, got {ids}")
    if not ids:
        raise ConfigurationError("bank has no layers")
    layers = [bank.layers[i].require() for i in ids]
    k, dim = layers[0].glob.shape
    for i, lb in zip(ids, layers):
        if lb.glob.shape != (k, dim):
            raise ConfigurationError(
                f"all layers in a bank file share K and D; layer {i} has {lb.glob.shape}, expected {(k, dim)}"
            )
    parts = [_HEADER.pack(MAGIC, VERSION, k, dim, len(layers))]
    for lb in layers:
        w = lb.attention.w if lb.attention is not None else np.zeros(dim, dtype=np.float32)
        for arr in (lb.positive, lb.negative, lb.glob, w):
            parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    s = bank.schedule
    parts.append(_TRAILER.pack(bank.mu, bank.gamma, s.current_epoch, s.warm_start_epoch,
                               s.alignment_switch_epoch, s.total_epochs, s.tau_start))
    return b"".join(parts)


def from_bytes(data: bytes, source: str = "bytes") -> PrototypeBank:
    if len(data) < _HEADER.size:
        raise TruncatedFileError(_HEADER.size, len(data))
    magic, version, k, dim, n_layers = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MagicMismatchError(MAGIC, magic)
    if version != VERSION:
        raise VersionMismatchError(VERSION, version)
    expected = bank_file_size(k, dim, n_layers)
    if len(data) < expected:
        raise TruncatedFileError(expected, len(data))
    if len(data) > expected:
        raise FormatError(f"trailing data: expected {expected} bytes, got {len(data)}")
    off = _HEADER.size
    layers = {}
    for i in range(n_layers):
        arrs = []
        for count in (k * dim, k * dim, k * dim, dim):
            arrs.append(np.frombuffer(data, dtype="<f4", count=count, offset=off).astype(np.float32))
            off += 4 * count
        pos, neg, glob, w = arrs
        layers[i] = LayerBank(pos.reshape(k, dim), neg.reshape(k, dim), glob.reshape(k, dim),
                              AttentionWeights(w, provenance=f"{source}:layer{i}"))
    mu, gamma, cur, warm, switch, total, tau = _TRAILER.unpack_from(data, off)
    return PrototypeBank(
        layers, _exact_float(mu), _exact_float(gamma),
        ScheduleState(cur, warm, switch, total, _exact_float(tau)),
    )


def save(bank: PrototypeBank, path) -> None:
    Path(path).write_bytes(to_bytes(bank))


def load(path) -> PrototypeBank:
    return from_bytes(Path(path).read_bytes(), source=str(path))
