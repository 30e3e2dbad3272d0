"""Fuzzy C-Means clustering.

Each cluster is one hyperedge: the N x K membership matrix is the soft
incidence matrix of the hypergraph and the K x D centroids are the
hyperedge representations.

All functions are pure and operate on float64 arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.special import softmax

from .errors import ConfigurationError, DataError, InvalidFuzzifierError, ShapeError


@dataclass(frozen=True)
class FcmConfig:
    """Parameters of one FCM run.

    ``m`` and ``max_iters`` default to 2 and 5. ``convergence_tol`` is an
    absolute threshold on the change of the objective between iterations.
    """

    m: float = 2.0
    max_iters: int = 5
    epsilon: float = 1e-8
    convergence_tol: float = 1e-4

    def __post_init__(self):
        if not self.m > 1:
            raise InvalidFuzzifierError(self.m)
        if self.max_iters < 0:
            raise ConfigurationError(f"max_iters must be >= 0, got {self.max_iters}")
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.convergence_tol > 0:
            raise ConfigurationError(
                f"convergence_tol must be > 0, got {self.convergence_tol}"
            )


@dataclass(frozen=True)
class RandomMembership:
    seed: int = 0


@dataclass(frozen=True)
class KMeansCentroids:
    seed: int = 0
    kmeans_iters: int = 10


@dataclass(frozen=True)
class InjectedCentroids:
    centroids: np.ndarray


InitStrategy = Union[RandomMembership, KMeansCentroids, InjectedCentroids]


@dataclass
class FcmResult:
    membership: np.ndarray
    centroids: np.ndarray
    objective_trace: list = field(default_factory=list)
    iterations_run: int = 0
    converged: bool = False

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def as_features(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ShapeError("features", "(N>=1, D>=1)", X.shape)
    if not np.all(np.isfinite(X)):
        raise DataError("features contain non-finite values")
    return X


def _check_m(m):
    if not m > 1:
        raise InvalidFuzzifierError(m)


def update_centroids(X, U, m: float) -> np.ndarray:
    """Membership-weighted mean of the node features for every cluster.

    A cluster whose weights all vanish gets the global mean of ``X``.
    """
    _check_m(m)
    X = np.asarray(X, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2 or U.shape[0] != X.shape[0]:
        raise ShapeError("membership", f"({X.shape[0]}, K)", U.shape)
    W = U ** m
    wsum = W.sum(axis=0)
    C = np.empty((U.shape[1], X.shape[1]))
    alive = wsum > np.finfo(np.float64).tiny
    C[alive] = (W[:, alive].T @ X) / wsum[alive, None]
    C[~alive] = X.mean(axis=0)
    return C


def distances(X, C) -> np.ndarray:
    """Euclidean distances, shape (N, K)."""
    diff = X[:, None, :] - C[None, :, :]
    return np.sqrt(np.einsum("nkd,nkd->nk", diff, diff))


def update_membership(X, C, m: float, epsilon: float = 1e-8) -> np.ndarray:
    """Recompute memberships from centroids.

    u_ij = 1 / sum_k (d_ij / d_ik)^(2/(m-1)), with d = ||x - c|| + epsilon.
    Evaluated as a softmax of -2/(m-1) * log d, which stays finite for m
    close to one where the plain ratio powers overflow.
    """
    _check_m(m)
    X = np.asarray(X, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[1] != X.shape[1]:
        raise ShapeError("centroids", f"(K, {X.shape[1]})", C.shape)
    d = distances(X, C) + epsilon
    return softmax(-(2.0 / (m - 1.0)) * np.log(d), axis=1)


def objective(X, U, C, m: float) -> float:
    """J = sum_i sum_k u_ik^m ||x_i - c_k||^2."""
    X = np.asarray(X, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if U.shape != (X.shape[0], C.shape[0]):
        raise ShapeError("membership", (X.shape[0], C.shape[0]), U.shape)
    if C.shape[1] != X.shape[1]:
        raise ShapeError("centroids", (C.shape[0], X.shape[1]), C.shape)
    d = distances(X, C)
    return float(np.sum(U ** m * d * d))


def random_membership(n: int, k: int, seed) -> np.ndarray:
    """Uniform positive draws per row, normalized to sum to one."""
    rng = np.random.default_rng(seed)
    U = rng.uniform(np.finfo(np.float64).eps, 1.0, size=(n, k))
    return U / U.sum(axis=1, keepdims=True)


def farthest_point_seeds(X, k: int, seed) -> np.ndarray:
    """Seed row chosen at random, then repeatedly the point farthest from
    all chosen seeds (lowest index on ties)."""
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(X.shape[0]))]
    dmin = np.linalg.norm(X - X[chosen[0]], axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(dmin))
        chosen.append(nxt)
        dmin = np.minimum(dmin, np.linalg.norm(X - X[nxt], axis=1))
    return X[chosen].copy()


def kmeans(X, k: int, seed=0, iters: int = 10, init=None):
    """Lloyd's algorithm.

    Returns ``(centroids, labels)``. Empty clusters keep their previous
    centroid. Stops early once assignments no longer change.
    """
    X = np.asarray(X, dtype=np.float64)
    C = farthest_point_seeds(X, k, seed) if init is None else np.array(init, dtype=np.float64)
    labels = np.argmin(distances(X, C), axis=1)
    for _ in range(iters):
        for j in range(k):
            members = labels == j
            if members.any():
                C[j] = X[members].mean(axis=0)
        new = np.argmin(distances(X, C), axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
    return C, labels


def run(X, k: int, init: InitStrategy | None = None, cfg: FcmConfig | None = None) -> FcmResult:
    """Alternate centroid and membership updates starting from ``init``.

    Stops after ``cfg.max_iters`` iterations or once the objective changes
    by less than ``cfg.convergence_tol``. ``objective_trace[0]`` is the
    objective of the initial state.
    """
    cfg = cfg or FcmConfig()
    init = init if init is not None else RandomMembership()
    X = as_features(X)
    n, dim = X.shape
    if not 1 <= k <= n:
        raise ConfigurationError(f"number of clusters K={k} must satisfy 1 <= K <= N={n}")

    if isinstance(init, RandomMembership):
        U = random_membership(n, k, init.seed)
        C = update_centroids(X, U, cfg.m)
    elif isinstance(init, KMeansCentroids):
        C, _ = kmeans(X, k, init.seed, init.kmeans_iters)
        U = update_membership(X, C, cfg.m, cfg.epsilon)
    elif isinstance(init, InjectedCentroids):
        C = np.array(init.centroids, dtype=np.float64)
        if C.shape != (k, dim):
            raise ShapeError("injected centroids", (k, dim), C.shape)
        if not np.all(np.isfinite(C)):
            raise DataError("injected centroids contain non-finite values")
        U = update_membership(X, C, cfg.m, cfg.epsilon)
    else:
        raise ConfigurationError(f"unknown init strategy {init!r}")

    trace = [objective(X, U, C, cfg.m)]
    converged = False
    it = 0
    while it < cfg.max_iters:
        C = update_centroids(X, U, cfg.m)
        U = update_membership(X, C, cfg.m, cfg.epsilon)
        trace.append(objective(X, U, C, cfg.m))
        it += 1
        if abs(trace[-1] - trace[-2]) < cfg.convergence_tol:
            converged = True
            break
    return FcmResult(U, C, trace, it, converged)
