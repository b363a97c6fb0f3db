"""Independent oracles the test suite checks the library against.

Everything here is deliberately naive: explicit loops, pair counting,
central finite differences.  None of it shares code with the package.
"""

import numpy as np

FD_H = 1e-5


def mixed_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a-b| / max(|a|, |b|, 1e-8), the gradient-check error measure."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom))


def numerical_grad(f, x: np.ndarray, h: float = FD_H) -> np.ndarray:
    """Central finite differences of the scalar-valued f() w.r.t. x in place."""
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def naive_reduce_mean(x: np.ndarray, axes: tuple) -> np.ndarray:
    keep = [d for d in range(x.ndim) if d not in axes]
    out_shape = [x.shape[d] for d in keep]
    out = np.zeros(out_shape if out_shape else (1,))
    count = int(np.prod([x.shape[d] for d in axes]))
    for idx in np.ndindex(*x.shape):
        out_idx = tuple(idx[d] for d in keep)
        out[out_idx if out_idx else (0,)] += x[idx]
    return out / count


def naive_conv3d(x, w, b, stride=(1, 1, 1), padding=(1, 1, 1)):
    """Direct nested-loop 3D cross-correlation with zero padding."""
    n, cin, d, h, wd = x.shape
    cout, _, k, _, _ = w.shape
    sd, sh, sw = stride
    pd, ph, pw = padding
    od = (d + 2 * pd - k) // sd + 1
    oh = (h + 2 * ph - k) // sh + 1
    ow = (wd + 2 * pw - k) // sw + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
    y = np.zeros((n, cout, od, oh, ow))
    for ni in range(n):
        for co in range(cout):
            for zi in range(od):
                for yi in range(oh):
                    for xi in range(ow):
                        acc = 0.0
                        for ci in range(cin):
                            for a in range(k):
                                for bb in range(k):
                                    for cc in range(k):
                                        acc += (xp[ni, ci, zi * sd + a, yi * sh + bb, xi * sw + cc]
                                                * w[co, ci, a, bb, cc])
                        y[ni, co, zi, yi, xi] = acc + b[co]
    return y


def auc_pair_counting(scores, truth) -> float:
    """O(n^2) pair count: wins + half-ties over positive/negative pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(bool)
    pos, neg = scores[truth], scores[~truth]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def fit_logistic(x: np.ndarray, y: np.ndarray, steps: int = 500, lr: float = 0.5):
    """Plain gradient-descent logistic regression; returns a score function."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xb = np.concatenate([x, np.ones((len(x), 1))], axis=1)
    w = np.zeros(xb.shape[1])
    for _ in range(steps):
        z = xb @ w
        p = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
        w -= lr * xb.T @ (p - y) / len(y)
    return lambda q: 1.0 / (1.0 + np.exp(-np.clip(
        np.concatenate([np.asarray(q, dtype=np.float64), np.ones((len(q), 1))], axis=1) @ w,
        -500, 500)))
