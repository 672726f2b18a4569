"""Compact and debiased negative embedding (CDNE) auxiliary objective.

Instance embeddings of a bag are projected to M dimensions and their
per-dimension deviation around a learnable center is measured as

    std_m = sqrt( sum_k (z_km - c_m)**2 / (K - 1) )

Negative bags are pulled together by ``mean_m std_m`` (shared center across
all negative bags, which removes per-bag offsets). Positive bags are pushed
apart by ``mean_m relu(thr - std_m)``, which rules out the trivial solution
of a collapsed projection.
"""
import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError, ValidationError
from .model import map_instances

log = logging.getLogger(__name__)


class CdneHead:
    """Projection layers and learnable centers, one per head.

    A binary head (``num_heads == 1``) models the negative class only. In
    multi-class mode there is one head per class.
    """

    def __init__(self, projections, centers, thr=1.0, lambda_neg=10.0, lambda_pos=3.0, rng=None):
        if len(projections) != len(centers) or not projections:
            raise ValidationError("need one center per projection")
        for (w, b), c in zip(projections, centers):
            if w.shape[1] != c.shape[0] or b.shape != c.shape:
                raise ValidationError("center width must equal projection output width")
        if thr < 0 or lambda_neg < 0 or lambda_pos < 0:
            raise ValidationError("thr, lambda_neg and lambda_pos must be >= 0")
        self.projections = projections
        self.centers = centers
        self.thr = float(thr)
        self.lambda_neg = float(lambda_neg)
        self.lambda_pos = float(lambda_pos)
        self._rng = rng if rng is not None else np.random.default_rng(0)

    @classmethod
    def init(cls, rng, embed_dim, proj_dim=128, num_heads=1, thr=1.0,
             lambda_neg=10.0, lambda_pos=3.0):
        bound = 1.0 / np.sqrt(embed_dim)
        projections, centers = [], []
        for i in range(num_heads):
            w = ad.parameter(rng.uniform(-bound, bound, (embed_dim, proj_dim)), name=f"proj{i}_w")
            b = ad.parameter(rng.uniform(-bound, bound, proj_dim), name=f"proj{i}_b")
            projections.append((w, b))
            centers.append(ad.parameter(np.zeros(proj_dim), name=f"center{i}"))
        return cls(projections, centers, thr, lambda_neg, lambda_pos, rng)

    @property
    def num_heads(self):
        return len(self.projections)

    @property
    def embed_dim(self):
        return self.projections[0][0].shape[0]

    @property
    def proj_dim(self):
        return self.projections[0][0].shape[1]

    def parameters(self):
        out = []
        for (w, b), c in zip(self.projections, self.centers):
            out.extend([w, b, c])
        return out


@dataclass
class CdneComponents:
    """Unweighted loss components of one bag, for logging."""

    l_neg: float | None = None
    l_pos: float | None = None
    skipped: bool = False
    reason: str = ""


def _check_head_index(head, i):
    if not 0 <= i < head.num_heads:
        raise ContractError(f"head index {i} outside [0, {head.num_heads})")


def project(head, head_index, embeddings):
    """Apply projection ``head_index`` row-wise: K x E -> K x M."""
    _check_head_index(head, head_index)
    w, b = head.projections[head_index]
    out = ad.matmul(embeddings, w)
    return ad.add(out, ad.broadcast_row(b, out.shape[0]))


def center_deviation(head, head_index, projected):
    """Per-dimension deviation around the head's center (length-M tensor)."""
    _check_head_index(head, head_index)
    return ad.center_std(projected, head.centers[head_index])


def loss_neg(head, head_index, projected):
    """Mean per-dimension deviation around the center.

    Returns None when the bag has fewer than two instances (the K-1
    divisor is undefined); callers treat that as "not applicable".
    """
    if projected.shape[0] < 2:
        return None
    return ad.mean_all(center_deviation(head, head_index, projected))


def loss_pos(head, head_index, projected):
    """Mean hinge ``relu(thr - std_m)``; None for bags with K < 2."""
    if projected.shape[0] < 2:
        return None
    std = center_deviation(head, head_index, projected)
    thr = ad.constant(np.full(std.shape, head.thr))
    return ad.mean_all(ad.relu(ad.sub(thr, std)))


def loss_cdne_binary(head, bag_label, projected, negative_class=0):
    """Weighted auxiliary loss for a binary head.

    Negative bags contribute ``lambda_neg * L_neg``, every other bag
    ``lambda_pos * L_pos``. Returns ``(weighted, components)``; ``weighted``
    is None when the bag was skipped.
    """
    if head.num_heads != 1:
        raise ContractError("binary CDNE loss needs exactly one head")
    if projected.shape[0] < 2:
        return None, CdneComponents(skipped=True, reason="fewer than 2 instances")
    if bag_label == negative_class:
        l = loss_neg(head, 0, projected)
        return ad.scalar_mul(l, head.lambda_neg), CdneComponents(l_neg=l.item())
    l = loss_pos(head, 0, projected)
    return ad.scalar_mul(l, head.lambda_pos), CdneComponents(l_pos=l.item())


def loss_cdne_multiclass(head, bag_label, embeddings):
    """Pull toward the bag's own class center, push away under every other head.

    ``components.l_pos`` is the unweighted sum over the other heads, so the
    weighted total is ``lambda_neg * l_neg + lambda_pos * l_pos``.
    """
    if head.num_heads < 2:
        raise ContractError("multi-class CDNE needs one head per class (>= 2); use the binary loss")
    _check_head_index(head, bag_label)
    if embeddings.shape[0] < 2:
        return None, CdneComponents(skipped=True, reason="fewer than 2 instances")
    total = None
    l_neg_value, l_pos_value = 0.0, 0.0
    for i in range(head.num_heads):
        z = project(head, i, embeddings)
        if i == bag_label:
            l = loss_neg(head, i, z)
            term = ad.scalar_mul(l, head.lambda_neg)
            l_neg_value = l.item()
        else:
            l = loss_pos(head, i, z)
            term = ad.scalar_mul(l, head.lambda_pos)
            l_pos_value += l.item()
        total = term if total is None else ad.add(total, term)
    return total, CdneComponents(l_neg=l_neg_value, l_pos=l_pos_value)


def loss_overall(mil, cdne_weighted):
    """``L_MIL`` plus the weighted auxiliary term (if any)."""
    if cdne_weighted is None:
        return mil
    return ad.add(mil, cdne_weighted)


def bag_cdne_loss(head, bag_label, embeddings, negative_class=0):
    """Dispatch to the binary or multi-class loss for one bag."""
    if head.num_heads == 1:
        return loss_cdne_binary(head, bag_label, project(head, 0, embeddings), negative_class)
    return loss_cdne_multiclass(head, bag_label, embeddings)


def init_centers(head, model, bags, negative_class=0):
    """Set each center to the mean projected embedding of its class's bags.

    Runs one forward pass without recording. Head 0 of a binary head takes
    the negative class; head ``c`` of a multi-class head takes class ``c``.
    A class without bags gets a small random center from the head's own
    generator.
    """
    with ad.no_grad():
        for i in range(head.num_heads):
            cls = negative_class if head.num_heads == 1 else i
            rows = [project(head, i, map_instances(model, b.instances)).values
                    for b in bags if b.label == cls]
            if rows:
                head.centers[i].values[...] = np.concatenate(rows, axis=0).mean(axis=0)
            else:
                log.warning("no bags of class %d for center init; using random center", cls)
                head.centers[i].values[...] = head._rng.normal(0.0, 0.01, head.proj_dim)
