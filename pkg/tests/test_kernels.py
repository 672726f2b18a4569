import numpy as np
import pytest

from cdnemil import _kernels

BACKENDS = _kernels.available_backends()


@pytest.fixture(params=sorted(BACKENDS))
def kern(request):
    return BACKENDS[request.param]


def test_active_backend_listed():
    assert _kernels.BACKEND in BACKENDS


def test_softmax(kern):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 7)) * 30
    y = kern.softmax_rows(x)
    ref = np.exp(x - x.max(axis=1, keepdims=True))
    np.testing.assert_allclose(y, ref / ref.sum(axis=1, keepdims=True), rtol=1e-13)
    gy = rng.normal(size=y.shape)
    gx = kern.softmax_rows_backward(y, gy)
    ref = np.stack([(np.diag(r) - np.outer(r, r)) @ g for r, g in zip(y, gy)])
    np.testing.assert_allclose(gx, ref, rtol=1e-12, atol=1e-15)


def test_center_std(kern):
    rng = np.random.default_rng(1)
    z, mu = rng.normal(size=(6, 4)), rng.normal(size=4)
    std = kern.center_std(z, mu)
    np.testing.assert_allclose(std, np.sqrt(((z - mu) ** 2).sum(0) / 5), rtol=1e-14)
    g = rng.normal(size=4)
    gz, gmu = kern.center_std_backward(z, mu, std, g)
    np.testing.assert_allclose(gz, (z - mu) * g / (5 * std), rtol=1e-13)
    np.testing.assert_allclose(gmu, -gz.sum(0), rtol=1e-13)


def test_center_std_zero_subgradient(kern):
    z = np.ones((3, 2))
    std = kern.center_std(z, np.ones(2))
    gz, gmu = kern.center_std_backward(z, np.ones(2), std, np.ones(2))
    assert np.all(std == 0) and np.all(gz == 0) and np.all(gmu == 0)


def test_auroc_and_dispersion(kern):
    assert kern.auroc(np.array([0.1, 0.4, 0.35, 0.8]), np.array([0, 0, 1, 1])) == 0.75
    assert kern.auroc(np.array([0.5, 0.5]), np.array([0, 1])) == 0.5
    x = np.array([[0.0, 0.0], [3.0, 4.0], [0.0, 4.0]])
    assert kern.mean_pairwise_distance(x) == pytest.approx(4.0, abs=1e-15)
    assert kern.mean_pairwise_distance(x[:1]) == 0.0


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")
def test_backends_agree():
    c, p = BACKENDS["cython"], BACKENDS["python"]
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = rng.normal(size=(int(rng.integers(1, 6)), int(rng.integers(1, 9))))
        np.testing.assert_allclose(c.softmax_rows(x), p.softmax_rows(x), rtol=1e-14)
        z, mu = rng.normal(size=(5, 3)), rng.normal(size=3)
        np.testing.assert_allclose(c.center_std(z, mu), p.center_std(z, mu), rtol=1e-14)
        s = rng.integers(0, 4, size=30).astype(float)
        lab = np.r_[0, 1, rng.integers(0, 2, size=28)]
        assert c.auroc(s, lab) == p.auroc(s, lab)
        pts = rng.normal(size=(7, 3))
        assert c.mean_pairwise_distance(pts) == pytest.approx(p.mean_pairwise_distance(pts), rel=1e-14)
