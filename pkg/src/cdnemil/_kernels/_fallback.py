"""Pure numpy implementations of the hot kernels.

Every function here has a compiled twin in ``_ckernels.pyx`` with the same
signature and results (to rounding).
"""
import numpy as np
from scipy.spatial.distance import pdist


def softmax_rows(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(y, gy):
    dot = (gy * y).sum(axis=1, keepdims=True)
    return y * (gy - dot)


def center_std(z, mu):
    """Per-column root mean square deviation from ``mu`` with a K-1 divisor."""
    k = z.shape[0]
    d = z - mu
    return np.sqrt((d * d).sum(axis=0) / (k - 1))


def center_std_backward(z, mu, std, gstd):
    k = z.shape[0]
    scale = np.zeros_like(std)
    nz = std > 0.0
    # zero deviation: subgradient 0
    scale[nz] = gstd[nz] / ((k - 1) * std[nz])
    gz = (z - mu) * scale
    gmu = -gz.sum(axis=0)
    return gz, gmu


def auroc(scores, labels):
    """Mann-Whitney AUROC with midranks for ties. ``labels`` is 0/1."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = scores.shape[0]
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    # doubled midranks are integers, which keeps the rank sum exact
    starts = np.flatnonzero(np.r_[True, sorted_scores[1:] != sorted_scores[:-1]])
    ends = np.r_[starts[1:], n]
    doubled = np.repeat(starts + ends + 1, ends - starts)
    ranks2 = np.empty(n, dtype=np.int64)
    ranks2[order] = doubled
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = n - n_pos
    u2 = int(ranks2[pos].sum()) - n_pos * (n_pos + 1)
    return u2 / (2.0 * n_pos * n_neg)


def mean_pairwise_distance(x):
    if x.shape[0] < 2:
        return 0.0
    return float(pdist(x).mean())
