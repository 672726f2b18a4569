import json

import numpy as np
import pytest

from cdnemil.data import Bag, Dataset, SyntheticSpec, generate_synthetic
from cdnemil.errors import NumericError, ValidationError
from cdnemil.train import (CdneConfig, FoldResult, ModelConfig, RunConfig, config_from_dict,
                           cv_report, json_report, run_cv, train_fold)

SMALL = ModelConfig(hidden_dim=8, embed_dim=4, attn_dim=3, proj_dim=4)


def _data(seed=0, n=4):
    return generate_synthetic(SyntheticSpec(num_bags_per_class=n, k_min=3, k_max=6,
                                            feature_dim=5, seed=seed))


def _cfg(**kw):
    base = dict(seed=0, epochs=3, learning_rate=1e-2, model=SMALL, folds=2)
    base.update(kw)
    return RunConfig(**base)


def _values(trained):
    return [p.values.copy() for p in trained.model.parameters()]


def test_zero_lr_keeps_initial_parameters():
    ds = _data()
    cfg = _cfg(learning_rate=0.0, weight_decay=0.0)
    trained, _ = train_fold(cfg, ds)
    init, _ = train_fold(_cfg(epochs=1, learning_rate=0.0, weight_decay=0.0), ds)
    for a, b in zip(_values(trained), _values(init)):
        np.testing.assert_array_equal(a, b)


def test_repeat_runs_bitwise_identical():
    ds = _data()
    a, la = train_fold(_cfg(), ds, ds)
    b, lb = train_fold(_cfg(), ds, ds)
    for x, y in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(x.values, y.values)
    assert la.to_csv() == lb.to_csv()


@pytest.mark.parametrize("variant", ["attention", "gated_attention"])
def test_zero_weights_match_plain_run(variant):
    ds = _data(1)
    model = ModelConfig(variant=variant, hidden_dim=8, embed_dim=4, attn_dim=3, proj_dim=4)
    zero = _cfg(model=model, cdne=CdneConfig(lambda_neg=0.0, lambda_pos=0.0))
    plain = _cfg(model=model, cdne=CdneConfig(enabled=False))
    a, _ = train_fold(zero, ds)
    b, _ = train_fold(plain, ds)
    for x, y in zip(_values(a), _values(b)):
        np.testing.assert_array_equal(x, y)


def test_training_reduces_loss():
    ds = _data(2, n=6)
    _, tlog = train_fold(_cfg(epochs=30, cdne=CdneConfig(enabled=False)), ds)
    assert tlog.records[-1].l_mil < tlog.records[0].l_mil


def test_log_columns_and_blanks():
    ds = _data()
    _, tlog = train_fold(_cfg(cdne=CdneConfig(enabled=False), epochs=1), ds)
    header, row = tlog.to_csv().splitlines()
    assert header.split(",") == ["epoch", "l_mil", "l_neg", "l_pos", "l_overall", "val_auroc",
                                 "val_accuracy", "mean_std_class0", "mean_std_class1", "skipped"]
    assert row.split(",")[2:7] == ["", "", row.split(",")[4], "", ""]


def test_singleton_bags_are_skipped_and_counted():
    rng = np.random.default_rng(0)
    bags = [Bag("a", 0, rng.normal(size=(1, 3))), Bag("b", 0, rng.normal(size=(3, 3))),
            Bag("c", 1, rng.normal(size=(2, 3)))]
    _, tlog = train_fold(_cfg(epochs=2), Dataset(bags, 3, 2))
    assert [r.skipped for r in tlog.records] == [1, 1]


def test_non_finite_aborts_with_context():
    ds = _data()
    ds.bags[0].instances[0, 0] = 1e308
    with pytest.raises(NumericError, match="epoch 1, bag"), np.errstate(over="ignore", invalid="ignore"):
        train_fold(_cfg(learning_rate=1e300), ds)


def test_missing_class_rejected():
    ds = _data()
    with pytest.raises(ValidationError):
        train_fold(_cfg(), ds.subset([0, 1]))


def test_cv_two_folds_on_four_bags():
    ds = _data(n=2)
    report = run_cv(_cfg(epochs=1), ds)
    assert len(report["folds"]) == 2
    aucs = [f["auroc"] for f in report["folds"]]
    assert report["auroc_mean"] == pytest.approx(np.mean(aucs))
    json.loads(json_report(report))


def test_cv_report_statistics():
    results = [FoldResult(0, 0.8, 0.7), FoldResult(1, 0.9, 0.9), FoldResult(2, 0.7, 0.8)]
    report = cv_report(results)
    assert report["auroc_mean"] == pytest.approx(0.8)
    assert report["auroc_std"] == pytest.approx(np.std([0.8, 0.9, 0.7]))
    assert report["accuracy_mean"] == pytest.approx(0.8)


def test_config_validation():
    with pytest.raises(ValidationError, match="cdne.bogus: unknown key"):
        config_from_dict({"cdne": {"bogus": 1}})
    with pytest.raises(ValidationError, match="epochs"):
        config_from_dict({"epochs": 0})
    with pytest.raises(ValidationError, match="dataset"):
        config_from_dict({"dataset": {}})
    cfg = config_from_dict({"dataset": {"synthetic": {"seed": 3}}, "cdne": {"thr": 0.5}})
    assert cfg.dataset.synthetic.seed == 3 and cfg.cdne.thr == 0.5
    assert config_from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
