"""Bag-level metrics and embedding diagnostics.

``bag_diagnostics`` reports, per bag, the mean projected instance embedding
(its center), the mean per-dimension deviation around the learnable center
and the attention weights. The summary condenses these into the spread of
negative-bag centers (mean pairwise Euclidean distance) and the per-class
mean deviation.
"""
import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from . import autodiff as ad
from .cdne import project
from .errors import ContractError, UndefinedMetricError
from .model import attention_pool, classify, map_instances

log = logging.getLogger(__name__)


def auroc(scores, labels):
    """Area under the ROC curve, ties credited one half."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ContractError("scores and labels differ in length")
    if not np.all((labels == 0) | (labels == 1)):
        raise ContractError("labels must be 0/1")
    n_pos = int((labels == 1).sum())
    if n_pos == 0 or n_pos == labels.size:
        raise UndefinedMetricError("AUROC needs both classes")
    return float(_kernels.auroc(scores, labels.astype(np.int64)))


def accuracy(predictions, labels):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ContractError("predictions and labels differ in length")
    if predictions.size == 0:
        raise ContractError("accuracy of an empty set")
    return float(np.mean(predictions == labels))


def predict(model, dataset):
    """Per-bag class probabilities (N x C) and attention weights."""
    probs, weights = [], []
    with ad.no_grad():
        for bag in dataset.bags:
            emb = map_instances(model, bag.instances)
            pooled, w = attention_pool(model, emb)
            logits = classify(model, pooled).values[0]
            p = np.exp(logits - logits.max())
            probs.append(p / p.sum())
            weights.append(w.values[0])
    return np.array(probs).reshape(len(dataset), -1), weights


def classification_metrics(probs, labels, negative_class=0):
    """AUROC and accuracy from bag probabilities.

    Binary: the score is the probability of the non-negative class.
    Multi-class: macro one-vs-rest AUROC. AUROC is None when undefined.
    """
    labels = np.asarray(labels)
    acc = accuracy(np.argmax(probs, axis=1), labels)
    c = probs.shape[1]
    try:
        if c == 2:
            pos = 1 - negative_class
            auc = auroc(probs[:, pos], (labels == pos).astype(np.int64))
        else:
            auc = float(np.mean([auroc(probs[:, k], (labels == k).astype(np.int64))
                                 for k in range(c)]))
    except UndefinedMetricError:
        auc = None
    return {"auroc": auc, "accuracy": acc}


def evaluate(model, dataset):
    probs, _ = predict(model, dataset)
    return classification_metrics(probs, dataset.labels, dataset.negative_class)


@dataclass
class BagDiagnostics:
    bag_id: str
    label: int
    center: np.ndarray
    mean_std: float | None
    attention: np.ndarray
    coords: np.ndarray | None = None


def _deviation(z, mu):
    if z.shape[0] < 2:
        return None
    return float(_kernels.center_std(z, mu).mean())


def bag_diagnostics(model, head, dataset, center=None):
    """Diagnostics for every bag plus a summary dict.

    With a head, embeddings are projected by the head of the negative class
    and deviations are taken around its learned center. Without a head the
    raw instance embeddings are used and the center defaults to the mean
    embedding of the dataset's negative-class instances.
    """
    neg = dataset.negative_class
    head_index = 0
    if head is not None and head.num_heads > 1:
        head_index = neg
    projected = []
    attention = []
    with ad.no_grad():
        for bag in dataset.bags:
            emb = map_instances(model, bag.instances)
            _, w = attention_pool(model, emb)
            z = project(head, head_index, emb).values if head is not None else emb.values
            projected.append(z)
            attention.append(w.values[0])
    if center is None:
        if head is not None:
            center = head.centers[head_index].values
        else:
            rows = [z for z, b in zip(projected, dataset.bags) if b.label == neg]
            center = np.concatenate(rows).mean(axis=0) if rows else np.zeros(projected[0].shape[1])
    center = np.asarray(center, dtype=np.float64)

    diags = [BagDiagnostics(bag.id, bag.label, z.mean(axis=0), _deviation(z, center), w, bag.coords)
             for bag, z, w in zip(dataset.bags, projected, attention)]
    summary = summarize(diags, dataset.num_classes, neg)
    all_z = np.concatenate(projected)
    scale = float(np.sqrt(((all_z - center) ** 2).sum(axis=1).mean()))
    summary["embedding_scale"] = scale
    disp = summary["negative_center_dispersion"]
    summary["negative_center_dispersion_normalized"] = disp / scale if scale > 0 else 0.0
    return diags, summary


def summarize(diags, num_classes, negative_class=0):
    """Per-class mean deviation, negative-center dispersion and their gap."""
    per_class = {}
    for c in range(num_classes):
        vals = [d.mean_std for d in diags if d.label == c and d.mean_std is not None]
        per_class[str(c)] = float(np.mean(vals)) if vals else None
    neg_centers = np.array([d.center for d in diags if d.label == negative_class])
    dispersion = float(_kernels.mean_pairwise_distance(neg_centers)) if len(neg_centers) > 1 else 0.0
    others = [d.mean_std for d in diags if d.label != negative_class and d.mean_std is not None]
    neg_std = per_class[str(negative_class)]
    gap = None
    if others and neg_std is not None:
        gap = float(np.mean(others)) - neg_std
    return {
        "per_class_mean_std": per_class,
        "negative_center_dispersion": dispersion,
        "std_gap_positive_minus_negative": gap,
    }


def principal_axes(points, n_axes=2, tol=1e-9, max_iter=10_000, seed=0):
    """Leading eigenvectors of the centered covariance by power iteration.

    Returns ``(axes, variances, projections)`` where ``axes`` is n x M and
    ``projections`` the centered points in those coordinates.
    """
    x = np.asarray(points, dtype=np.float64)
    x = x - x.mean(axis=0)
    cov = x.T @ x / max(len(x) - 1, 1)
    rng = np.random.default_rng(seed)
    axes, variances = [], []
    work = cov.copy()
    for _ in range(min(n_axes, cov.shape[0])):
        v = rng.standard_normal(cov.shape[0])
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(max_iter):
            w = work @ v
            norm = np.linalg.norm(w)
            if norm == 0.0:
                break
            w /= norm
            done = np.linalg.norm(w - v) < tol
            v = w
            if done:
                break
        lam = float(v @ work @ v)
        axes.append(v)
        variances.append(lam)
        work = work - lam * np.outer(v, v)
    axes = np.array(axes)
    return axes, np.array(variances), x @ axes.T


def write_summary(path, summary, metrics=None):
    """Write the diagnostics summary JSON (sorted keys, stable bytes)."""
    out = dict(summary)
    if metrics is not None:
        out["auroc"] = metrics.get("auroc")
        out["accuracy"] = metrics.get("accuracy")
    Path(path).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def export_attention(diags, out_dir):
    """Write ``<bag_id>.csv`` with columns k, x, y, attention_weight.

    Bags without coordinates are skipped with a warning. Returns the list of
    written paths.
    """
    out_dir = Path(out_dir)
    written, skipped = [], []
    for d in diags:
        if d.coords is None:
            skipped.append(d.bag_id)
            continue
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"{d.bag_id}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "x", "y", "attention_weight"])
            for k, ((x, y), a) in enumerate(zip(d.coords, d.attention)):
                w.writerow([k, int(x), int(y), repr(float(a))])
        written.append(path)
    if skipped:
        log.warning("no coords for bags, attention not exported: %s", ", ".join(skipped))
    return written


def read_attention(path):
    """Inverse of one exported attention CSV: ``(coords, weights)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    coords = np.array([[int(r["x"]), int(r["y"])] for r in rows], dtype=np.int64).reshape(-1, 2)
    weights = np.array([float(r["attention_weight"]) for r in rows])
    return coords, weights
