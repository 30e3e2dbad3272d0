"""Independent reference implementations used to produce expected values.

Nothing here imports the package under test. Each oracle takes a
different route from the production code: direct minimization instead of
alternating updates, explicit loops instead of vectorized algebra, full
enumeration instead of marginal tables.
"""
import itertools
import math

import numpy as np
from scipy.optimize import minimize


# ---------------------------------------------------------------- FCM

def fcm_reduced_objective(flat_c, X, k, m):
    """min over U of the FCM objective for fixed centroids.

    For fixed C the optimal memberships give
    J*(C) = sum_i (sum_k d_ik^(-2/(m-1)))^(-(m-1)).
    """
    C = flat_c.reshape(k, X.shape[1])
    total = 0.0
    for x in X:
        s = 0.0
        for c in C:
            d2 = float(np.sum((x - c) ** 2))
            s += max(d2, 1e-300) ** (-1.0 / (m - 1.0))
        total += s ** (-(m - 1.0))
    return total


def fcm_optimum(X, k, m=2.0, starts=None):
    """Global FCM optimum by multi-start Nelder-Mead on the reduced objective."""
    X = np.asarray(X, dtype=float)
    rng = np.random.default_rng(0)
    if starts is None:
        starts = [X[rng.choice(len(X), k, replace=False)] for _ in range(20)]
    best = None
    for c0 in starts:
        res = minimize(
            fcm_reduced_objective, np.ravel(c0), args=(X, k, m),
            method="Nelder-Mead",
            options={"xatol": 1e-13, "fatol": 1e-15, "maxiter": 20000, "maxfev": 40000},
        )
        if best is None or res.fun < best.fun:
            best = res
    C = best.x.reshape(k, X.shape[1])
    order = np.argsort(C[:, 0])
    return C[order], best.fun


def farthest_first(X, k, start=0):
    """Maxmin seeding by explicit loops: start at row ``start``, then add
    the row farthest from every chosen seed."""
    X = np.asarray(X, dtype=float)
    chosen = [start]
    while len(chosen) < k:
        best, bi = -1.0, -1
        for i in range(len(X)):
            d = min(math.dist(X[i], X[c]) for c in chosen)
            if d > best:
                best, bi = d, i
        chosen.append(bi)
    return X[chosen].copy()


def lloyd_kmeans(X, k, seed, iters=100, init=None):
    """Plain-loop Lloyd's algorithm; random distinct-point seeding unless
    ``init`` centroids are given."""
    rng = np.random.default_rng(seed)
    X = np.asarray(X, dtype=float)
    C = X[rng.choice(len(X), k, replace=False)].copy() if init is None else np.array(init, dtype=float)
    labels = [-1] * len(X)
    for _ in range(iters):
        new = []
        for x in X:
            best, bj = math.inf, -1
            for j, c in enumerate(C):
                d = sum((a - b) ** 2 for a, b in zip(x, c))
                if d < best:
                    best, bj = d, j
            new.append(bj)
        if new == labels:
            break
        labels = new
        for j in range(k):
            pts = [X[i] for i in range(len(X)) if labels[i] == j]
            if pts:
                C[j] = np.mean(pts, axis=0)
    return np.array(labels)


def canonical_partition(labels):
    """Relabel clusters by order of first appearance."""
    mapping = {}
    out = []
    for lab in labels:
        mapping.setdefault(int(lab), len(mapping))
        out.append(mapping[int(lab)])
    return out


# ---------------------------------------------------------------- linear algebra

def naive_matmul(a, b):
    n, p = len(a), len(b[0])
    inner = len(b)
    out = [[0.0] * p for _ in range(n)]
    for i in range(n):
        for j in range(p):
            s = 0.0
            for t in range(inner):
                s += a[i][t] * b[t][j]
            out[i][j] = s
    return np.array(out)


def naive_softmax(v):
    mx = max(v)
    e = [math.exp(x - mx) for x in v]
    s = sum(e)
    return [x / s for x in e]


def naive_cos(a, b):
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0 or nb == 0:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def naive_amplify(A, Xp, w):
    A = np.asarray(A, dtype=float).tolist()
    Xp = np.asarray(Xp, dtype=float).tolist()
    n, d = len(Xp), len(Xp[0])
    Z = naive_matmul(A, Xp).tolist()
    scores = [sum(Z[i][j] * w[j] for j in range(d)) for i in range(n)]
    alpha = naive_softmax(scores)
    scaled = [[(1 + alpha[i]) * Z[i][j] for j in range(d)] for i in range(n)]
    At = [[A[j][i] for j in range(n)] for i in range(n)]
    return naive_matmul(At, scaled), np.array(alpha)


def naive_fuse(Ac, Af, beta2):
    n = len(Ac)
    return np.array([
        naive_softmax([beta2 * Ac[i][j] + (1 - beta2) * Af[i][j] for j in range(n)])
        for i in range(n)
    ])


def naive_slot_align(centroids, positive, negative, alpha_pos, alpha_neg, P_g, eps=1e-8):
    """Straight-line slot alignment over explicit loops.

    centroids/positive/negative: B x K x D; alpha_*: B x K; P_g: K x D.
    """
    B, K, D = np.shape(centroids)
    flat = [(b, k) for b in range(B) for k in range(K)]
    a = []
    for b, k in flat:
        a.append(naive_softmax([naive_cos(centroids[b][k], P_g[j]) for j in range(K)]))
    mean_g = [[sum(centroids[b][k][d] for b in range(B)) / B for d in range(D)] for k in range(K)]

    def class_mean(cc, al):
        out = []
        for k in range(K):
            den = sum(al[b][k] for b in range(B)) + eps
            out.append([sum(al[b][k] * cc[b][k][d] for b in range(B)) / den for d in range(D)])
        return out

    mean_p = class_mean(positive, alpha_pos)
    mean_n = class_mean(negative, alpha_neg)
    g, p, n = [], [], []
    for j in range(K):
        wsum = sum(a[m][j] for m in range(len(flat)))
        slot = [sum(a[m][j] * centroids[b][k][d] for m, (b, k) in enumerate(flat)) / wsum
                for d in range(D)]
        g.append([(slot[d] + mean_g[j][d]) / 2 for d in range(D)])
        for cc, al, mean, out in ((positive, alpha_pos, mean_p, p), (negative, alpha_neg, mean_n, n)):
            den = sum(a[m][j] * al[b][k] for m, (b, k) in enumerate(flat)) + eps
            slot_c = [sum(a[m][j] * al[b][k] * cc[b][k][d] for m, (b, k) in enumerate(flat)) / den
                      for d in range(D)]
            out.append([(slot_c[d] + mean[j][d]) / 2 for d in range(D)])
    return np.array(g), np.array(p), np.array(n)



def naive_fcm_from_centroids(X, C, m, iters, eps=1e-8):
    """FCM with the ratio-form membership update, explicit loops, fixed
    iteration count (no convergence test). Returns (U, C)."""
    X = np.asarray(X, dtype=float)
    C = np.array(C, dtype=float)
    n, k = X.shape[0], C.shape[0]

    def memb(C):
        d = [[math.dist(X[i], C[j]) + eps for j in range(k)] for i in range(n)]
        return np.array([[1.0 / sum((d[i][j] / d[i][l]) ** (2 / (m - 1)) for l in range(k))
                          for j in range(k)] for i in range(n)])

    U = memb(C)
    for _ in range(iters):
        W = U ** m
        C = np.array([sum(W[i, j] * X[i] for i in range(n)) / sum(W[:, j]) for j in range(k)])
        U = memb(C)
    return U, C


def naive_forward(X, C0, w, m=2.0, iters=5, beta1=0.9, beta2=0.6):
    """Degree-free layer composed stage by stage from the loop oracles."""
    X = np.asarray(X, dtype=float)
    U, C = naive_fcm_from_centroids(X, C0, m, iters)
    Xp = beta1 * X + (1 - beta1) * naive_matmul(U.tolist(), C.tolist())
    Ac = naive_matmul(U.tolist(), U.T.tolist())
    Af = naive_matmul(Xp.tolist(), Xp.T.tolist()) / math.sqrt(X.shape[1])
    A = naive_fuse(Ac.tolist(), Af.tolist(), beta2)
    return naive_amplify(A, Xp, list(w))

# ---------------------------------------------------------------- information theory

def enumerate_entropies(outcomes_probs, n):
    """Entropies (bits) of the joint, each marginal and each leave-one-out
    subset, from an explicit list of (outcome tuple, probability)."""
    def H(idx):
        table = {}
        for o, p in outcomes_probs:
            key = tuple(o[i] for i in idx)
            table[key] = table.get(key, 0.0) + p
        return -sum(p * math.log2(p) for p in table.values() if p > 0)

    full = tuple(range(n))
    joint = H(full)
    marg = [H((i,)) for i in range(n)]
    loo = [H(tuple(j for j in range(n) if j != i)) for i in range(n)]
    return joint, marg, loo


def xor_triplet():
    return [((a, b, a ^ b), 0.25) for a, b in itertools.product((0, 1), repeat=2)]
