"""Finite-difference checks over every op, both MIL variants and the CDNE losses."""
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .cdne import CdneHead, bag_cdne_loss, loss_neg, loss_overall, loss_pos, project
from .data import Bag
from .model import MilModel, attention_pool, classify, map_instances, mil_loss


@dataclass
class CheckReport:
    name: str
    max_rel_error: float
    passed: bool


def _op_check(name, fn, inputs, rng, h, tol):
    params = [ad.parameter(x, name=f"{name}[{i}]") for i, x in enumerate(inputs)]
    with ad.no_grad():
        shape = fn(*params).shape
    cot = ad.constant(rng.normal(size=shape))

    def f():
        return ad.sum_all(ad.elementwise_mul(fn(*params), cot))

    return ad.grad_check(f, params, h=h, tol=tol)


def _op_cases(rng):
    u = lambda *s: rng.uniform(-2, 2, size=s)
    pos = lambda *s: rng.uniform(0.2, 2, size=s)
    return [
        ("matmul", ad.matmul, [u(3, 4), u(4, 2)]),
        ("add", ad.add, [u(3, 2), u(3, 2)]),
        ("sub", ad.sub, [u(3, 2), u(3, 2)]),
        ("elementwise_mul", ad.elementwise_mul, [u(3, 2), u(3, 2)]),
        ("scalar_mul", lambda a: ad.scalar_mul(a, 0.7), [u(2, 3)]),
        ("relu", ad.relu, [u(4, 3)]),
        ("tanh", ad.tanh, [u(4, 3)]),
        ("sigmoid", ad.sigmoid, [u(4, 3)]),
        ("softmax_rows", ad.softmax_rows, [u(3, 4)]),
        ("log_softmax_rows", ad.log_softmax_rows, [u(2, 4)]),
        ("mean_all", ad.mean_all, [u(3, 3)]),
        ("sum_all", ad.sum_all, [u(3, 3)]),
        ("sqrt_elementwise", ad.sqrt_elementwise, [pos(3, 3)]),
        ("sum_axis", lambda a: ad.sum_axis(a, 0), [u(4, 3)]),
        ("broadcast_row", lambda a: ad.broadcast_row(a, 3), [u(4)]),
        ("transpose", ad.transpose, [u(2, 3)]),
        ("center_std", ad.center_std, [u(5, 3), u(3)]),
    ]


def micro_setup(variant, rng, num_heads=1):
    """A tiny model, head and two bags (one per class) for end-to-end checks."""
    model = MilModel.init(rng, input_dim=3, hidden_dim=4, embed_dim=3, attn_dim=2,
                          num_classes=2, variant=variant)
    head = CdneHead.init(rng, embed_dim=3, proj_dim=3, num_heads=num_heads, thr=1.5,
                         lambda_neg=10.0, lambda_pos=3.0)
    for c in head.centers:
        c.values[...] = rng.normal(size=c.shape)
    bags = [Bag("neg", 0, rng.normal(size=(3, 3))), Bag("pos", 1, rng.normal(size=(4, 3)) + 1.0)]
    return model, head, bags


def full_loss(model, head, bags, with_cdne=True):
    total = None
    for bag in bags:
        emb = map_instances(model, bag.instances)
        pooled, _ = attention_pool(model, emb)
        loss = mil_loss(classify(model, pooled), bag.label)
        if with_cdne:
            weighted, _ = bag_cdne_loss(head, bag.label, emb, 0)
            loss = loss_overall(loss, weighted)
        total = loss if total is None else ad.add(total, loss)
    return total


def run_suite(h=1e-6, tol=1e-4, seed=0):
    """Run every check; returns a list of :class:`CheckReport`."""
    rng = np.random.default_rng(seed)
    reports = []

    def add(name, results):
        worst = max(r.max_rel_error for r in results)
        reports.append(CheckReport(name, worst, all(r.passed for r in results)))

    for name, fn, inputs in _op_cases(rng):
        add(f"op:{name}", _op_check(name, fn, inputs, rng, h, tol))

    for variant in ("attention", "gated_attention"):
        model, head, bags = micro_setup(variant, rng)
        add(f"mil:{variant}", ad.grad_check(lambda: full_loss(model, head, bags, False),
                                            model.parameters(), h=h, tol=tol))
        params = model.parameters() + head.parameters()
        add(f"mil+cdne:{variant}", ad.grad_check(lambda: full_loss(model, head, bags),
                                                 params, h=h, tol=tol))

    model, head, bags = micro_setup("attention", rng)
    neg_bag, pos_bag = bags
    params = model.parameters() + head.parameters()

    def l_neg():
        return loss_neg(head, 0, project(head, 0, map_instances(model, neg_bag.instances)))

    def l_pos():
        return loss_pos(head, 0, project(head, 0, map_instances(model, pos_bag.instances)))

    def composite():
        return ad.add(ad.scalar_mul(l_neg(), head.lambda_neg), ad.scalar_mul(l_pos(), head.lambda_pos))

    add("cdne:loss_neg", ad.grad_check(l_neg, params, h=h, tol=tol))
    add("cdne:loss_pos", ad.grad_check(l_pos, params, h=h, tol=tol))
    add("cdne:weighted_sum", ad.grad_check(composite, params, h=h, tol=tol))

    model, head, bags = micro_setup("gated_attention", rng, num_heads=2)
    add("cdne:multiclass", ad.grad_check(lambda: full_loss(model, head, bags),
                                         model.parameters() + head.parameters(), h=h, tol=tol))
    return reports


def format_report(reports):
    lines = []
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{status} {r.name:<28} max_rel_error={r.max_rel_error:.3e}")
    return "\n".join(lines)
