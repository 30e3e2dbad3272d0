"""O-information of discrete and Gaussian systems.

Total correlation C = sum_i H(X_i) - H(X), dual total correlation
B = H(X) - sum_i H(X_i | X_-i), and Omega = C - B. Omega > 0 means the
system is redundancy-dominated, Omega < 0 synergy-dominated.

Everything is reported in bits. Discrete systems are exact plug-in
computations over a fully specified joint pmf; Gaussian systems use the
closed-form differential entropy of covariance sub-blocks.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, DataError, HoiGraphError, NormalizationError, NotPositiveDefiniteError

MAX_OUTCOMES = 2 ** 20
LN2 = math.log(2.0)


class Verdict(str, enum.Enum):
    REDUNDANCY = "Redundancy"
    SYNERGY = "Synergy"
    NEUTRAL = "Neutral"


def entropy_discrete(pmf, tol: float = 1e-9) -> float:
    """Shannon entropy in bits, with 0 log 0 = 0."""
    p = np.asarray(pmf, dtype=np.float64).ravel()
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise NormalizationError("pmf entries must be finite and non-negative")
    if abs(p.sum() - 1.0) > tol:
        raise NormalizationError(f"pmf sums to {p.sum():.12g}, not 1")
    nz = p[p > 0]
    return float(-np.sum(nz * np.log2(nz)))


def gaussian_entropy(cov) -> float:
    """Differential entropy of a k-variate Gaussian in bits:
    0.5 log2((2 pi e)^k det cov)."""
    S = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    k = S.shape[0]
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("covariance block is not positive definite") from None
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return 0.5 * (k * math.log(2 * math.pi * math.e) + logdet) / LN2


class DiscreteSystem:
    """Joint pmf over n discrete variables.

    ``pmf`` is the dense table in mixed-radix order: the first variable is
    the most significant digit, i.e. ``pmf.reshape(cards)`` indexes
    ``[x_1, ..., x_n]``.
    """

    kind = "discrete"
    tol = 1e-9

    def __init__(self, cards, pmf):
        cards = [int(c) for c in cards]
        if len(cards) < 2 or min(cards) < 1:
            raise DataError(f"need at least 2 variables with positive cardinality, got {cards}")
        size = math.prod(cards)
        if size > MAX_OUTCOMES:
            raise ConfigurationError(f"{size} joint outcomes exceed the limit of {MAX_OUTCOMES}")
        p = np.asarray(pmf, dtype=np.float64).ravel()
        if p.size != size:
            raise DataError(f"pmf has {p.size} entries, cardinalities {cards} require {size}")
        entropy_discrete(p)  # validates
        self.cards = cards
        self.table = p.reshape(cards)

    @property
    def n_vars(self):
        return len(self.cards)

    def entropy(self, subset) -> float:
        subset = tuple(sorted(subset))
        drop = tuple(i for i in range(self.n_vars) if i not in subset)
        return entropy_discrete(self.table.sum(axis=drop))


class GaussianSystem:
    kind = "gaussian"
    tol = 1e-6

    def __init__(self, cov):
        S = np.asarray(cov, dtype=np.float64)
        if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] < 2:
            raise DataError(f"covariance must be square with n >= 2, got shape {S.shape}")
        if not np.all(np.isfinite(S)):
            raise DataError("covariance contains non-finite values")
        if np.max(np.abs(S - S.T)) > 1e-9:
            raise NotPositiveDefiniteError("covariance is not symmetric")
        gaussian_entropy(S)  # validates positive definiteness
        self.cov = S

    @property
    def n_vars(self):
        return self.cov.shape[0]

    def entropy(self, subset) -> float:
        idx = sorted(subset)
        return gaussian_entropy(self.cov[np.ix_(idx, idx)])


@dataclass
class InfoReport:
    n_vars: int
    h_joint: float
    h_marginals: list
    h_complements: list  # H(X_-i)
    h_conditionals: list  # H(X_i | X_-i)
    total_correlation: float
    dual_total_correlation: float
    omega: float  # C - B
    omega_expanded: float  # (n-2) H + sum_i [H(X_i) - H(X_-i)]
    verdict: Verdict
    small_system: bool  # n < 3
    units: str = "bits"

    def to_dict(self):
        d = asdict(self)
        d["verdict"] = self.verdict.value
        return d


def _entropies(system):
    n = system.n_vars
    joint = system.entropy(range(n))
    marg = [system.entropy([i]) for i in range(n)]
    comp = [system.entropy([j for j in range(n) if j != i]) for i in range(n)]
    return joint, marg, comp


def total_correlation(system) -> float:
    joint, marg, _ = _entropies(system)
    return sum(marg) - joint


def dual_total_correlation(system) -> float:
    joint, _, comp = _entropies(system)
    return joint - sum(joint - c for c in comp)


def o_information(system, tol: float | None = None) -> InfoReport:
    """C, B and Omega by both routes, with a verdict.

    ``tol`` defaults to 1e-9 for discrete and 1e-6 for Gaussian systems.
    """
    tol = system.tol if tol is None else tol
    n = system.n_vars
    joint, marg, comp = _entropies(system)
    cond = [joint - c for c in comp]
    C = sum(marg) - joint
    B = joint - sum(cond)
    omega = C - B
    expanded = (n - 2) * joint + sum(m - c for m, c in zip(marg, comp))
    if omega > tol:
        verdict = Verdict.REDUNDANCY
    elif omega < -tol:
        verdict = Verdict.SYNERGY
    else:
        verdict = Verdict.NEUTRAL
    if n < 3:
        warnings.warn("O-information of fewer than 3 variables is degenerate", stacklevel=2)
    return InfoReport(n, joint, marg, comp, cond, C, B, omega, expanded, verdict, n < 3)


def system_from_dict(d: dict):
    """Build a system from its JSON description.

    ``{"type": "discrete", "cards": [...], "pmf": [...]}`` or
    ``{"type": "gaussian", "cov": [[...], ...]}``.
    """
    if not isinstance(d, dict) or "type" not in d:
        raise DataError("system description must be an object with a 'type' field")
    try:
        if d["type"] == "discrete":
            return DiscreteSystem(d["cards"], d["pmf"])
        if d["type"] == "gaussian":
            return GaussianSystem(d["cov"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, HoiGraphError):
            raise
        raise DataError(f"malformed system description: {exc}") from exc
    raise DataError(f"unknown system type {d['type']!r}")
