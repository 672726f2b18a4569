"""Training loop, run configuration and k-fold cross-validation.

One optimizer step per bag. All randomness of a fold comes from
``SeedSequence(seed, spawn_key=(fold,))``: one child stream initializes the
MIL model and shuffles bags, a second initializes the CDNE head, so
attaching or detaching the head never changes the model's stream.
"""
import copy
import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .cdne import CdneHead, bag_cdne_loss, init_centers, loss_overall
from .data import SyntheticSpec, generate_synthetic, kfold_split, load_dataset
from .diagnostics import bag_diagnostics, evaluate
from .errors import NumericError, ValidationError
from .model import MilModel, attention_pool, classify, map_instances, mil_loss
from .optim import Optimizer

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# configuration

@dataclass
class OptimizerConfig:
    kind: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class ModelConfig:
    variant: str = "attention"
    hidden_dim: int = 256
    embed_dim: int = 128
    attn_dim: int = 64
    proj_dim: int = 128


@dataclass
class CdneConfig:
    enabled: bool = True
    thr: float = 1.0
    lambda_neg: float = 10.0
    lambda_pos: float = 3.0
    multiclass: bool = False


@dataclass
class DatasetSource:
    """Either a manifest path or an inline synthetic spec."""

    manifest: str | None = None
    synthetic: SyntheticSpec | None = None

    def load(self, base_dir="."):
        if self.manifest is not None:
            path = Path(self.manifest)
            if not path.is_absolute():
                path = Path(base_dir) / path
            return load_dataset(path)
        return generate_synthetic(self.synthetic)


@dataclass
class RunConfig:
    seed: int = 0
    epochs: int = 100
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    cdne: CdneConfig = field(default_factory=CdneConfig)
    folds: int = 5
    select_best_epoch: bool = False
    dataset: DatasetSource | None = None
    test_dataset: DatasetSource | None = None

    def validate(self):
        if self.epochs < 1:
            raise ValidationError("epochs: must be >= 1")
        if self.learning_rate < 0:
            raise ValidationError("learning_rate: must be >= 0")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay: must be >= 0")
        if self.optimizer.kind not in ("sgd", "adam"):
            raise ValidationError(f"optimizer.kind: unknown optimizer {self.optimizer.kind!r}")
        if self.model.variant not in ("attention", "gated_attention"):
            raise ValidationError(f"model.variant: unknown variant {self.model.variant!r}")
        for name in ("hidden_dim", "embed_dim", "attn_dim", "proj_dim"):
            if getattr(self.model, name) < 1:
                raise ValidationError(f"model.{name}: must be >= 1")
        for name in ("thr", "lambda_neg", "lambda_pos"):
            if getattr(self.cdne, name) < 0:
                raise ValidationError(f"cdne.{name}: must be >= 0")
        if self.folds < 2:
            raise ValidationError("folds: must be >= 2")
        return self

    def to_dict(self):
        d = asdict(self)
        for key in ("dataset", "test_dataset"):
            src = d[key]
            if src is not None:
                d[key] = {k: v for k, v in src.items() if v is not None}
        return d

    def with_updates(self, **cdne_updates):
        cfg = copy.deepcopy(self)
        for k, v in cdne_updates.items():
            setattr(cfg.cdne, k, v)
        return cfg


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValidationError(f"{path}.{unknown[0]}: unknown key")
    return cls(**data)


def _source(data, path):
    if data is None:
        return None
    src = _build(DatasetSource, data, path)
    if (src.manifest is None) == (src.synthetic is None):
        raise ValidationError(f"{path}: give exactly one of 'manifest' or 'synthetic'")
    if src.synthetic is not None:
        try:
            src.synthetic = SyntheticSpec.from_dict(src.synthetic)
            src.synthetic.validate()
        except ValidationError as exc:
            raise ValidationError(f"{path}.synthetic: {exc}") from None
    return src


def config_from_dict(data):
    """Build a RunConfig from parsed JSON, rejecting unknown keys."""
    data = dict(data)
    sub = {
        "optimizer": (OptimizerConfig, "optimizer"),
        "model": (ModelConfig, "model"),
        "cdne": (CdneConfig, "cdne"),
    }
    for key, (cls, path) in sub.items():
        if key in data:
            data[key] = _build(cls, data[key], path)
    for key in ("dataset", "test_dataset"):
        if key in data:
            data[key] = _source(data[key], key)
    return _build(RunConfig, data, "config").validate()


def load_config(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# training

@dataclass
class EpochRecord:
    epoch: int
    l_mil: float
    l_neg: float | None
    l_pos: float | None
    l_overall: float
    val_auroc: float | None
    val_accuracy: float | None
    mean_std: list
    skipped: int


@dataclass
class TrainLog:
    num_classes: int
    records: list = field(default_factory=list)

    def columns(self):
        return (["epoch", "l_mil", "l_neg", "l_pos", "l_overall", "val_auroc", "val_accuracy"]
                + [f"mean_std_class{c}" for c in range(self.num_classes)] + ["skipped"])

    def rows(self):
        for r in self.records:
            yield ([r.epoch, r.l_mil, r.l_neg, r.l_pos, r.l_overall, r.val_auroc, r.val_accuracy]
                   + list(r.mean_std) + [r.skipped])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for row in self.rows():
            w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
        return buf.getvalue()

    def write_csv(self, path):
        Path(path).write_text(self.to_csv(), encoding="utf-8")


@dataclass
class TrainedModel:
    model: MilModel
    head: CdneHead | None

    def parameters(self):
        params = self.model.parameters()
        if self.head is not None:
            params += self.head.parameters()
        return params


def _streams(seed, fold):
    ss = np.random.SeedSequence(seed, spawn_key=(fold,))
    model_ss, head_ss = ss.spawn(2)
    return np.random.default_rng(model_ss), np.random.default_rng(head_ss)


def build_model(config, train, fold=0):
    """Initialize model (and head, when enabled) for ``train``."""
    model_rng, head_rng = _streams(config.seed, fold)
    m = config.model
    model = MilModel.init(model_rng, train.feature_dim, m.hidden_dim, m.embed_dim,
                          m.attn_dim, train.num_classes, m.variant)
    head = None
    if config.cdne.enabled:
        heads = train.num_classes if config.cdne.multiclass else 1
        head = CdneHead.init(head_rng, m.embed_dim, m.proj_dim, heads, config.cdne.thr,
                             config.cdne.lambda_neg, config.cdne.lambda_pos)
        init_centers(head, model, train.bags, train.negative_class)
    return TrainedModel(model, head), model_rng


def _mean(values):
    return float(np.mean(values)) if values else None


def _validation_record(trained, val):
    """Validation metrics and per-class mean deviation (None when undefined)."""
    if val is None or len(val) == 0:
        return None, None, [None] * (trained.model.num_classes)
    metrics = evaluate(trained.model, val)
    _, summary = bag_diagnostics(trained.model, trained.head, val)
    stds = [summary["per_class_mean_std"][str(c)] for c in range(val.num_classes)]
    return metrics["auroc"], metrics["accuracy"], stds


def train_fold(config, train, val=None, fold=0):
    """Train one model on ``train``; returns ``(TrainedModel, TrainLog)``."""
    counts = train.class_counts()
    if len(train) == 0 or np.any(counts == 0):
        raise ValidationError(f"training set needs every class; counts={counts.tolist()}")
    trained, rng = build_model(config, train, fold)
    model, head = trained.model, trained.head
    opt = Optimizer(trained.parameters(), config.optimizer.kind, config.learning_rate,
                    config.weight_decay, config.optimizer.beta1, config.optimizer.beta2,
                    config.optimizer.eps)
    neg = train.negative_class
    tlog = TrainLog(train.num_classes)
    best = None

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        l_mil, l_neg, l_pos, l_all = [], [], [], []
        skipped = 0
        for i in order:
            bag = train.bags[i]
            opt.zero_grad()
            try:
                with ad.Tape():
                    emb = map_instances(model, bag.instances)
                    pooled, _ = attention_pool(model, emb)
                    loss_mil = mil_loss(classify(model, pooled), bag.label)
                    weighted = None
                    if head is not None:
                        weighted, comps = bag_cdne_loss(head, bag.label, emb, neg)
                        if comps.skipped:
                            skipped += 1
                        if comps.l_neg is not None:
                            l_neg.append(comps.l_neg)
                        if comps.l_pos is not None:
                            l_pos.append(comps.l_pos)
                    total = loss_overall(loss_mil, weighted)
                    ad.backward(total)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, bag {bag.id!r}: {exc}") from exc
            opt.step()
            l_mil.append(loss_mil.item())
            l_all.append(total.item())
        if skipped:
            log.info("epoch %d: CDNE skipped for %d bags with K < 2", epoch, skipped)
        auc, acc, stds = _validation_record(trained, val)
        tlog.records.append(EpochRecord(epoch, _mean(l_mil), _mean(l_neg), _mean(l_pos),
                                        _mean(l_all), auc, acc, stds, skipped))
        if config.select_best_epoch and auc is not None and (best is None or auc > best[0]):
            best = (auc, [p.values.copy() for p in trained.parameters()])

    if best is not None:
        for p, v in zip(trained.parameters(), best[1]):
            p.values[...] = v
    return trained, tlog


# ---------------------------------------------------------------------------
# cross-validation

@dataclass
class FoldResult:
    fold: int
    auroc: float | None
    accuracy: float
    test_auroc: float | None = None
    test_accuracy: float | None = None
    log: TrainLog | None = None
    trained: TrainedModel | None = None


def _run_fold(args):
    config, dataset, test, fold, train_idx, val_idx, keep_model = args
    train, val = dataset.subset(train_idx), dataset.subset(val_idx)
    trained, tlog = train_fold(config, train, val, fold)
    metrics = evaluate(trained.model, val)
    res = FoldResult(fold, metrics["auroc"], metrics["accuracy"], log=tlog)
    if test is not None:
        tm = evaluate(trained.model, test)
        res.test_auroc, res.test_accuracy = tm["auroc"], tm["accuracy"]
    if keep_model:
        res.trained = trained
    return res


def _stats(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


def run_cv(config, dataset, test_dataset=None, jobs=1, keep_models=False):
    """Stratified k-fold CV; returns a report dict with per-fold results.

    Per-fold entries carry ``FoldResult`` objects under ``"fold_results"``;
    everything else is JSON-serializable.
    """
    config.validate()
    splits = kfold_split(dataset, config.folds, config.seed)
    tasks = [(config, dataset, test_dataset, f, tr, va, keep_models)
             for f, (tr, va) in enumerate(splits)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, tasks))
    else:
        results = [_run_fold(t) for t in tasks]
    return cv_report(results, test_dataset is not None)


def cv_report(results, with_test=False):
    auc_mean, auc_std = _stats([r.auroc for r in results])
    acc_mean, acc_std = _stats([r.accuracy for r in results])
    report = {
        "folds": [{"fold": r.fold, "auroc": r.auroc, "accuracy": r.accuracy} for r in results],
        "auroc_mean": auc_mean, "auroc_std": auc_std,
        "accuracy_mean": acc_mean, "accuracy_std": acc_std,
    }
    if with_test:
        for entry, r in zip(report["folds"], results):
            entry["test_auroc"] = r.test_auroc
            entry["test_accuracy"] = r.test_accuracy
        report["test_auroc_mean"], report["test_auroc_std"] = _stats([r.test_auroc for r in results])
        report["test_accuracy_mean"], report["test_accuracy_std"] = _stats(
            [r.test_accuracy for r in results])
    report["fold_results"] = results
    return report


def json_report(report):
    """The report without in-memory objects, as stable JSON text."""
    clean = {k: v for k, v in report.items() if k != "fold_results"}
    return json.dumps(clean, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# replicates and ablation

ABLATION_GRIDS = {
    "lambda_neg": [0.0, 1.0, 10.0, 100.0, 1000.0],
    "lambda_pos": [0.0, 0.3, 3.0, 30.0, 300.0],
    "thr": [0.25, 0.5, 1.0, 2.0, 4.0],
}


def reseeded(config, offset):
    """Copy of ``config`` with the run seed and synthetic dataset seeds shifted.

    Replicates then differ in both the model initialization and the drawn
    data. Manifest datasets are left as they are.
    """
    cfg = copy.deepcopy(config)
    cfg.seed += offset
    for src in (cfg.dataset, cfg.test_dataset):
        if src is not None and src.synthetic is not None:
            src.synthetic.seed += offset
    return cfg


def load_sources(config, base_dir="."):
    if config.dataset is None:
        raise ValidationError("dataset: required")
    train = config.dataset.load(base_dir)
    test = config.test_dataset.load(base_dir) if config.test_dataset is not None else None
    return train, test


def run_ablation(config, axis, values, seeds=(0,), jobs=1, base_dir="."):
    """One CV run per (value, seed offset); rows averaged over seeds.

    Returns a list of dicts with ``value``, ``auroc_mean``,
    ``accuracy_mean`` and, when a test set is configured, the test means.
    """
    if axis not in ABLATION_GRIDS:
        raise ValidationError(f"axis: expected one of {sorted(ABLATION_GRIDS)}, got {axis!r}")
    if not values:
        raise ValidationError("values: empty list")
    rows = []
    for value in values:
        if value < 0:
            raise ValidationError(f"values: {axis} must be >= 0, got {value}")
        per_seed = []
        for offset in seeds:
            cfg = reseeded(config.with_updates(**{axis: float(value)}), offset)
            train, test = load_sources(cfg, base_dir)
            per_seed.append(run_cv(cfg, train, test, jobs=jobs))
        row = {"value": float(value)}
        for key in ("auroc_mean", "accuracy_mean", "test_auroc_mean", "test_accuracy_mean"):
            row[key] = _stats([r.get(key) for r in per_seed])[0]
        rows.append(row)
    return rows


def ablation_csv(rows):
    keys = ["value", "auroc_mean", "accuracy_mean"]
    if any(r["test_auroc_mean"] is not None for r in rows):
        keys += ["test_auroc_mean", "test_accuracy_mean"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    for r in rows:
        w.writerow(["" if r[k] is None else repr(r[k]) for k in keys])
    return buf.getvalue()


def delta_csv(baseline, cdne):
    """Side-by-side table of two CV reports with the CDNE minus baseline delta."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "baseline", "cdne", "delta"])
    for key in ("auroc_mean", "accuracy_mean", "test_auroc_mean", "test_accuracy_mean"):
        a, b = baseline.get(key), cdne.get(key)
        if a is None and b is None:
            continue
        delta = b - a if a is not None and b is not None else None
        w.writerow([key] + ["" if v is None else repr(v) for v in (a, b, delta)])
    return buf.getvalue()
