"""Relational artifact amplification.

Structural (U U^T) and feature (X' X'^T / sqrt(D)) self-similarities are
fused into a row-stochastic operator A, which then propagates
attention-scaled relational evidence back to the nodes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from .errors import ConfigurationError, ShapeError


@dataclass(frozen=True)
class AttentionWeights:
    """Per-layer attention vector w_alpha (length D). Not trained here."""

    w: np.ndarray
    provenance: str = "explicit"

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float32).ravel()
        if not np.all(np.isfinite(w)):
            raise ConfigurationError("attention weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @classmethod
    def seeded(cls, dim: int, seed: int = 0) -> AttentionWeights:
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal(dim) / np.sqrt(dim), provenance=f"seed:{seed}")

    @classmethod
    def zeros(cls, dim: int) -> AttentionWeights:
        return cls(np.zeros(dim), provenance="zeros")

    @property
    def dim(self):
        return self.w.shape[0]


def structural_affinity(U) -> np.ndarray:
    U = np.asarray(U, dtype=np.float64)
    return U @ U.T


def feature_affinity(Xp) -> np.ndarray:
    Xp = np.asarray(Xp, dtype=np.float64)
    return (Xp @ Xp.T) / np.sqrt(Xp.shape[1])


def fuse(Ac, Af, beta2: float = 0.6) -> np.ndarray:
    """Row-wise softmax of beta2 * Ac + (1 - beta2) * Af."""
    if not 0.0 <= beta2 <= 1.0:
        raise ConfigurationError(f"beta2 must lie in [0, 1], got {beta2}")
    Ac = np.asarray(Ac, dtype=np.float64)
    Af = np.asarray(Af, dtype=np.float64)
    if Ac.shape != Af.shape or Ac.ndim != 2 or Ac.shape[0] != Ac.shape[1]:
        raise ShapeError("affinities", "two equal (N, N) matrices", (Ac.shape, Af.shape))
    return softmax(beta2 * Ac + (1.0 - beta2) * Af, axis=1)


def amplify(A, Xp, weights: AttentionWeights):
    """Return ``(X'', alpha)``.

    Z = A X', alpha = softmax over nodes of Z w, X'' = A^T ((1 + alpha) * Z)
    with row i of Z scaled by 1 + alpha_i.
    """
    A = np.asarray(A, dtype=np.float64)
    Xp = np.asarray(Xp, dtype=np.float64)
    n, d = Xp.shape
    if A.shape != (n, n):
        raise ShapeError("operator", (n, n), A.shape)
    if weights.dim != d:
        raise ShapeError("attention weights", (d,), weights.w.shape)
    Z = A @ Xp
    alpha = softmax(Z @ weights.w.astype(np.float64))
    return A.T @ ((1.0 + alpha)[:, None] * Z), alpha
