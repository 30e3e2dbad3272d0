"""Hypergraph layer forward pass, prototype learning loop and gap scoring."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import amplifier, bank as pb, fcm, hypergraph
from .bank import Alignment, InitSource, LayerBank, PhaseConfig, PrototypeBank
from .errors import BankNotInitializedError, ConfigurationError, DataError, ShapeError
from .hypergraph import CardinalityHistogram

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LayerConfig:
    """Hyperparameters of one hypergraph layer.

    ``k=None`` means round(0.5 N) hyperedges for N input nodes.
    """

    k: int | None = None
    degree_cap: int | None = None
    beta1: float = 0.9
    beta2: float = 0.6
    fcm: fcm.FcmConfig = field(default_factory=fcm.FcmConfig)
    layer_id: int = 0
    perturb_sigma: float = 1e-3
    kmeans_iters: int = 10

    def __post_init__(self):
        if self.k is not None and self.k < 1:
            raise ConfigurationError(f"K must be >= 1, got {self.k}")
        if self.degree_cap is not None and self.degree_cap < 2:
            raise ConfigurationError(f"degree cap must be >= 2, got {self.degree_cap}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {v}")

    def n_edges(self, n_nodes: int) -> int:
        return self.k if self.k is not None else max(1, round(0.5 * n_nodes))


@dataclass
class ForwardOutput:
    features: np.ndarray  # X''
    membership: np.ndarray
    centroids: np.ndarray
    alpha: np.ndarray
    cardinality: CardinalityHistogram
    gated_out: bool
    fcm_result: fcm.FcmResult
    aggregated: np.ndarray  # X'

    def diagnostics(self):
        return {
            "objective": self.fcm_result.objective,
            "iterations": self.fcm_result.iterations_run,
            "converged": self.fcm_result.converged,
            "alpha_max": float(self.alpha.max()),
            "gated_out": self.gated_out,
            "cardinality": self.cardinality.to_dict(),
        }


def derive_seed(*parts: int) -> int:
    """Independent, order-free seed for one unit of work."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def haggn_forward(X, layer: LayerBank, cfg: LayerConfig, phase: PhaseConfig, seed: int = 0,
                  selection=pb.Eval(), gated_out: bool = False) -> ForwardOutput:
    """One hypergraph layer: FCM hyperedges, residual aggregation, amplification.

    Initial centroids come from K-Means or from the prototype bank as the
    phase dictates; evaluation phases always draw from the global set.
    """
    X = fcm.as_features(X)
    n, dim = X.shape
    k = cfg.n_edges(n)
    if layer.attention is None:
        raise ConfigurationError("layer has no attention weights")
    if phase.init_source is InitSource.KMEANS:
        init = fcm.KMeansCentroids(seed, cfg.kmeans_iters)
    else:
        if not layer.initialized:
            raise BankNotInitializedError()
        mode = pb.Eval() if phase.prototypes_frozen else selection
        init = fcm.InjectedCentroids(pb.select_init_centroids(layer, k, mode, seed, cfg.perturb_sigma))
    res = fcm.run(X, k, init, cfg.fcm)
    H = hypergraph.build(res.membership, res.centroids, cfg.degree_cap)
    Xp = hypergraph.aggregate(X, H, cfg.beta1)
    A = amplifier.fuse(amplifier.structural_affinity(H.incidence), amplifier.feature_affinity(Xp), cfg.beta2)
    Xpp, alpha = amplifier.amplify(A, Xp, layer.attention)
    return ForwardOutput(Xpp, res.membership, res.centroids, alpha,
                         hypergraph.effective_cardinalities(H), gated_out, res, Xp)


def _map(fn, items, threads):
    if threads == 1 or len(items) < 2:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads or None) as ex:
        return list(ex.map(fn, items))


def forward_batch(features, layer: LayerBank, cfg: LayerConfig, phase: PhaseConfig, seeds,
                  labels=None, threads: int = 1):
    """Gate a batch and run every sample through the layer.

    Returns ``(outputs, passed, score)``; the score is NaN when gating is
    off or the bank is still empty.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3:
        raise ShapeError("batch features", "(B, N, D)", features.shape)
    passed, score = True, math.nan
    if phase.gating and layer.initialized:
        passed, score = pb.gate(features, layer, phase.tau)
    selection = pb.Eval()
    if labels is not None and not phase.prototypes_frozen:
        pos = int(np.sum(labels))
        selection = pb.Train(pos, len(labels) - pos)
    outputs = _map(
        lambda b: haggn_forward(features[b], layer, cfg, phase, seeds[b], selection, not passed),
        list(range(features.shape[0])), threads,
    )
    return outputs, passed, score


@dataclass
class EpochStats:
    epoch: int
    batches: int = 0
    skipped_batches: int = 0
    gate_passed: int = 0
    gate_rejected: int = 0
    gate_scores: list = field(default_factory=list)
    objective_trace: list = field(default_factory=list)  # mean final J per batch and layer
    cardinality: dict = field(default_factory=dict)  # layer_id -> CardinalityHistogram
    bank_drift: dict = field(default_factory=dict)  # layer_id -> mean L2 change of global rows

    @property
    def gate_pass_rate(self):
        total = self.gate_passed + self.gate_rejected
        return self.gate_passed / total if total else math.nan

    @property
    def mean_objective(self):
        return float(np.mean(self.objective_trace)) if self.objective_trace else math.nan

    def to_dict(self):
        return {
            "epoch": self.epoch,
            "batches": self.batches,
            "skipped_batches": self.skipped_batches,
            "gate_pass_rate": self.gate_pass_rate,
            "gate_scores": self.gate_scores,
            "mean_objective": self.mean_objective,
            "objective_trace": self.objective_trace,
            "cardinality": {str(k): h.to_dict() for k, h in sorted(self.cardinality.items())},
            "bank_drift": {str(k): v for k, v in sorted(self.bank_drift.items())},
        }


def _check_labels(labels, b):
    labels = np.asarray(labels)
    if labels.shape != (b,):
        raise ShapeError("labels", (b,), labels.shape)
    if not np.all((labels == 0) | (labels == 1)):
        raise DataError("labels must be 0 (spoof) or 1 (bona fide)")
    return labels.astype(np.int64)


def train_epoch(batches, bank: PrototypeBank, epoch: int, configs, seed: int = 0, threads: int = 1):
    """Run one epoch of prototype learning.

    ``batches`` yields ``(features, labels)``; features is a (B, N, D) array
    shared by all layers or a dict keyed by layer id. For every batch and
    layer: schedule, gate, forward, label-aware centroids, alignment, EMA.
    The first batch seen by an empty layer bootstraps it. Returns a new
    bank and the epoch statistics; the input bank is not modified.
    """
    configs = [configs] if isinstance(configs, LayerConfig) else list(configs)
    out = PrototypeBank(dict(bank.layers), bank.mu, bank.gamma, replace(bank.schedule))
    stats = EpochStats(epoch)
    start = {}
    for bi, (features, labels) in enumerate(batches):
        stats.batches += 1
        for cfg in configs:
            lid = cfg.layer_id
            X = features[lid] if isinstance(features, dict) else features
            X = np.asarray(X, dtype=np.float64)
            if X.ndim != 3:
                raise ShapeError("batch features", "(B, N, D)", X.shape)
            if X.shape[0] == 0:
                stats.skipped_batches += 1
                log.warning("skipping empty batch %d", bi)
                continue
            y = _check_labels(labels, X.shape[0])
            layer = out.ensure_layer(lid, X.shape[2], seed)
            if layer.initialized and lid not in start:
                start[lid] = layer.glob.copy()

            phase = pb.schedule(out.schedule, epoch)
            if not layer.initialized and phase.init_source is InitSource.PROTOTYPE:
                phase = PhaseConfig(InitSource.KMEANS, phase.alignment, -math.inf)
            seeds = [derive_seed(seed, lid, epoch, bi, b) for b in range(X.shape[0])]
            outputs, passed, score = forward_batch(X, layer, cfg, phase, seeds, y, threads)

            stats.objective_trace.append(float(np.mean([o.fcm_result.objective for o in outputs])))
            hist = stats.cardinality.get(lid)
            for o in outputs:
                hist = o.cardinality if hist is None else hist.merge(o.cardinality)
            stats.cardinality[lid] = hist
            if not math.isnan(score):
                stats.gate_scores.append(score)
            if not passed:
                stats.gate_rejected += 1
                continue
            stats.gate_passed += 1

            batch_c = pb.BatchCentroids.from_samples(
                X, [o.membership for o in outputs], [o.centroids for o in outputs], y,
                cfg.fcm.m, cfg.fcm.epsilon,
            )
            if not layer.initialized:
                layer = pb.bootstrap(layer, batch_c)
                start[lid] = layer.glob.copy()
            align = pb.soft_align if phase.alignment is Alignment.SOFT else pb.slot_align
            layer = pb.ema_update(layer, align(batch_c, layer, cfg.fcm.epsilon), out.mu, out.gamma)
            out.layers[lid] = layer

    for lid, g0 in start.items():
        g1 = out.layers[lid].glob
        stats.bank_drift[lid] = float(np.mean(np.linalg.norm(g1.astype(np.float64) - g0, axis=1)))
    out.schedule.current_epoch = epoch + 1
    return out, stats


def bootstrap_bank(bank: PrototypeBank, features, configs, seed: int = 0, threads: int = 1) -> PrototypeBank:
    """Initialize empty layers from one batch with K-Means-seeded FCM."""
    configs = [configs] if isinstance(configs, LayerConfig) else list(configs)
    out = PrototypeBank(dict(bank.layers), bank.mu, bank.gamma, replace(bank.schedule))
    phase = PhaseConfig(InitSource.KMEANS, Alignment.SOFT, -math.inf)
    for cfg in configs:
        X = np.asarray(features[cfg.layer_id] if isinstance(features, dict) else features, dtype=np.float64)
        layer = out.ensure_layer(cfg.layer_id, X.shape[2], seed)
        if layer.initialized:
            continue
        seeds = [derive_seed(seed, cfg.layer_id, 0, 0, b) for b in range(X.shape[0])]
        outputs, _, _ = forward_batch(X, layer, cfg, phase, seeds, None, threads)
        out.layers[cfg.layer_id] = pb.bootstrap(layer, np.stack([o.centroids for o in outputs]))
    return out


# ---------------------------------------------------------------- gap scores

@dataclass(frozen=True)
class GapScore:
    s_bp: float
    s_bn: float
    s_sp: float
    s_sn: float

    @property
    def gap(self) -> float:
        return (self.s_bp + self.s_sn - self.s_bn - self.s_sp) / 2.0


def gap_score(centroids, layer: LayerBank) -> GapScore:
    """Relative closeness of a sample's centroids to the two class banks.

    Centroids are paired to prototype rows by greedy cosine matching, once
    against the positive bank (bona fide hypothesis) and once against the
    negative bank (spoof hypothesis). Under each pairing the mean cosine
    to the hypothesis' own bank and to the other bank is taken:

    s_bp, s_bn: positive-derived pairing, vs positive / negative bank
    s_sp, s_sn: negative-derived pairing, vs negative / positive bank

    so gap > 0 means the sample sits nearer the bona fide prototypes, and
    swapping the two banks flips its sign.
    """
    layer.require()
    C = np.asarray(centroids, dtype=np.float64)
    if C.shape != layer.glob.shape:
        raise ShapeError("sample centroids", layer.glob.shape, C.shape)

    def paired(ref):
        perm = pb.greedy_match(pb.cosine_matrix(ref, C))
        Cp = C[perm]
        return (float(np.mean(np.diag(pb.cosine_matrix(Cp, layer.positive)))),
                float(np.mean(np.diag(pb.cosine_matrix(Cp, layer.negative)))))

    bp, bn = paired(layer.positive)
    sn, sp = paired(layer.negative)  # vs positive, vs negative
    return GapScore(s_bp=bp, s_bn=bn, s_sp=sp, s_sn=sn)


def gap_classify(gaps):
    """Two-means threshold on 1-D gap scores.

    Returns ``(labels, threshold)``; label 1 (bona fide) iff gap >= threshold,
    where the threshold is the midpoint of the two cluster centres.
    """
    g = np.asarray(gaps, dtype=np.float64).ravel()
    if g.size < 2 or np.unique(g).size < 2:
        raise DataError("gap classification needs at least two distinct gap values")
    C, _ = fcm.kmeans(g[:, None], 2, iters=100, init=[[g.min()], [g.max()]])
    threshold = float(C.mean())
    return (g >= threshold).astype(np.int64), threshold


def gap_summary(gaps_per_layer) -> np.ndarray:
    """(mean, std) of each layer's gap scores, concatenated."""
    return np.concatenate([[np.mean(g), np.std(g)] for g in gaps_per_layer])


def dataset_similarity(summaries) -> np.ndarray:
    """Pairwise cosine similarity of per-dataset summary vectors (unit diagonal)."""
    S = np.asarray(list(summaries.values()) if isinstance(summaries, dict) else summaries, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] < 2:
        raise DataError("need summary vectors for at least two datasets")
    M = pb.cosine_matrix(S, S)
    M = (M + M.T) / 2.0
    np.fill_diagonal(M, 1.0)
    return M
