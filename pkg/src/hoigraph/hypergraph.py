"""Hypergraph built from FCM memberships, and hyperedge-to-node aggregation."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ShapeError


@dataclass
class Hypergraph:
    """Soft incidence (N x K) plus hyperedge centroids (K x D).

    ``degree_cap`` is None for a degree-free hypergraph. ``empty_rows``
    flags nodes that lost every membership to capping.
    """

    incidence: np.ndarray
    centroids: np.ndarray
    degree_cap: int | None = None
    empty_rows: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.empty_rows is None:
            self.empty_rows = np.zeros(self.incidence.shape[0], dtype=bool)

    @property
    def n_nodes(self):
        return self.incidence.shape[0]

    @property
    def n_edges(self):
        return self.incidence.shape[1]


@dataclass
class CardinalityHistogram:
    counts: dict
    total_hyperedges: int
    n_nodes: int

    def to_dict(self):
        return {
            "n_nodes": self.n_nodes,
            "total": self.total_hyperedges,
            "counts": {str(c): n for c, n in sorted(self.counts.items())},
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        return cls({int(c): int(n) for c, n in d["counts"].items()}, int(d["total"]), int(d["n_nodes"]))

    def merge(self, other: CardinalityHistogram) -> CardinalityHistogram:
        counts = Counter(self.counts)
        counts.update(other.counts)
        return CardinalityHistogram(dict(counts), self.total_hyperedges + other.total_hyperedges,
                                    max(self.n_nodes, other.n_nodes))

    @property
    def max_cardinality(self):
        return max(self.counts) if self.counts else 0

    def fraction_at_least(self, c):
        if not self.total_hyperedges:
            return 0.0
        return sum(n for card, n in self.counts.items() if card >= c) / self.total_hyperedges


def build(U, C, degree_cap: int | None = None) -> Hypergraph:
    """Wrap memberships as a hypergraph, optionally capping hyperedge degree.

    With a cap, every column keeps its ``degree_cap`` largest entries (lower
    node index wins ties) and rows are renormalized over what survives.
    """
    U = np.asarray(U, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if U.ndim != 2 or C.ndim != 2 or U.shape[1] != C.shape[0]:
        raise ShapeError("membership/centroids", "(N, K) and (K, D)", (U.shape, C.shape))
    if degree_cap is None:
        return Hypergraph(U, C, None)
    if degree_cap < 2:
        raise ConfigurationError(f"degree cap must be >= 2, got {degree_cap}")

    # stable sort on the negated column puts lower indices first among ties
    order = np.argsort(-U, axis=0, kind="stable")
    keep = np.zeros_like(U, dtype=bool)
    np.put_along_axis(keep, order[:degree_cap], True, axis=0)
    capped = np.where(keep, U, 0.0)
    rowsum = capped.sum(axis=1, keepdims=True)
    empty = rowsum[:, 0] <= 0
    capped = np.divide(capped, rowsum, out=np.zeros_like(capped), where=~empty[:, None])
    return Hypergraph(capped, C, degree_cap, empty)


def effective_cardinalities(H: Hypergraph) -> CardinalityHistogram:
    """Count, per hyperedge, the nodes whose incidence strictly exceeds 1/D_eff.

    D_eff is the degree cap, or N for a degree-free hypergraph.
    """
    d_eff = H.degree_cap if H.degree_cap is not None else H.n_nodes
    cards = (H.incidence > 1.0 / d_eff).sum(axis=0)
    return CardinalityHistogram(dict(Counter(int(c) for c in cards)), H.n_edges, H.n_nodes)


def aggregate(X, H: Hypergraph, beta1: float = 0.9) -> np.ndarray:
    """Residual fusion x'_i = beta1 x_i + (1 - beta1) sum_k u_ik c_k."""
    if not 0.0 <= beta1 <= 1.0:
        raise ConfigurationError(f"beta1 must lie in [0, 1], got {beta1}")
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != H.n_nodes or X.shape[1] != H.centroids.shape[1]:
        raise ShapeError("features", (H.n_nodes, H.centroids.shape[1]), X.shape)
    return beta1 * X + (1.0 - beta1) * (H.incidence @ H.centroids)
