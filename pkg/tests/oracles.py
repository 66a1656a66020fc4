"""Independent reference implementations used by unit and acceptance tests."""

import math

import numpy as np

from mammovssm.ssm import SsmParams


def expm_oracle(M, terms=30):
    """Scaling and squaring with a plain Taylor series."""
    norm = np.max(np.sum(np.abs(M), axis=1))
    s = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0 else 0
    X = M / (2 ** s)
    E = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms):
        term = term @ X / k
        E = E + term
    for _ in range(s):
        E = E @ E
    return E


def zoh_oracle(A, B, delta):
    """Discretization from the oracle exponential via the inverse formula."""
    n = A.shape[0]
    M = delta * A
    E = expm_oracle(M)
    return E, np.linalg.inv(M) @ (E - np.eye(n)) @ (delta * B)


def random_lti(rng, n=4, d_in=2, d_out=3, full=False):
    if full:
        Q = rng.standard_normal((n, n))
        A = -np.eye(n) * rng.uniform(0.5, 2.0) + 0.3 * (Q - Q.T) + 0.1 * Q
    else:
        A = -rng.uniform(0.1, 3.0, size=n)
    return SsmParams(A=A, B=rng.standard_normal((n, d_in)), C=rng.standard_normal((d_out, n)),
                     delta=rng.uniform(0.01, 0.5))


def straight_line_scan(sp, seq):
    """Token-by-token selective scan written without vectorization."""
    L, d = seq.shape
    r, n = sp.dt_rank, sp.state
    Wx, bx = sp.x_proj.weight.data, sp.x_proj.bias.data
    Wdt, bdt = sp.dt_proj.weight.data, sp.dt_proj.bias.data
    A = -np.log1p(np.exp(sp.a_raw.data))
    h = np.zeros((d, n))
    out = np.zeros((L, d))
    for t in range(L):
        p = Wx @ seq[t] + bx
        delta = np.log1p(np.exp(Wdt @ p[:r] + bdt))
        Bt, Ct = p[r:r + n], p[r + n:]
        for c in range(d):
            for k in range(n):
                z = delta[c] * A[c, k]
                h[c, k] = np.exp(z) * h[c, k] + (np.exp(z) - 1) / z * delta[c] * Bt[k] * seq[t, c]
            out[t, c] = h[c] @ Ct
    return out


def reference_ss2d(grid, scans):
    H, W, d = grid.shape
    merged = np.zeros_like(grid)
    # row-major forward / reverse
    cells = [(i, j) for i in range(H) for j in range(W)]
    cols = [(i, j) for j in range(W) for i in range(H)]
    for k, visit in enumerate([cells, cells[::-1], cols, cols[::-1]]):
        seq = np.array([grid[i, j] for i, j in visit])
        y = straight_line_scan(scans[k], seq)
        for t, (i, j) in enumerate(visit):
            merged[i, j] += y[t]
    return merged


def pair_count_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def confusion_f1(preds, labels, k):
    total = 0.0
    for c in range(k):
        tp = sum(1 for p, y in zip(preds, labels) if p == c and y == c)
        fp = sum(1 for p, y in zip(preds, labels) if p == c and y != c)
        fn = sum(1 for p, y in zip(preds, labels) if p != c and y == c)
        total += 0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)
    return total / k
