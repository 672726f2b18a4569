import numpy as np
import pytest

from cdnemil import autodiff as ad
from cdnemil.errors import ContractError, ValidationError
from cdnemil.optim import Optimizer, adam_step, optimizer_step, sgd_step


def test_sgd_example():
    assert sgd_step(np.array(1.0), np.array(1.0), 0.1) == pytest.approx(0.9)


def test_adam_first_step_bounded_by_lr():
    rng = np.random.default_rng(0)
    for _ in range(50):
        theta, g = rng.normal(size=5), rng.normal(size=5) * 10 ** rng.uniform(-3, 3)
        new, _, _ = adam_step(theta, g, np.zeros(5), np.zeros(5), 1, lr=1e-3)
        assert np.all(np.abs(new - theta) <= 1e-3 + 1e-12)


def test_sgd_quadratic_converges():
    theta = ad.parameter(np.array([1.0]))
    opt = Optimizer([theta], "sgd", lr=0.1)
    for _ in range(100):
        opt.zero_grad()
        with ad.Tape():
            ad.backward(ad.sum_all(ad.elementwise_mul(theta, theta)))
        opt.step()
    assert theta.values[0] == pytest.approx(0.8 ** 100, rel=1e-12)


def test_zero_lr_keeps_params():
    theta = np.array([0.3, -2.0])
    for kind in ("sgd", "adam"):
        new, _ = optimizer_step(kind, [theta], [np.ones(2)], None, {"lr": 0.0})
        np.testing.assert_array_equal(new[0], theta)


def test_errors():
    with pytest.raises(ContractError):
        optimizer_step("sgd", [np.zeros(2)], [np.zeros(3)], None, {"lr": 0.1})
    with pytest.raises(ContractError):
        optimizer_step("sgd", [np.zeros(2)], [], None, {"lr": 0.1})
    _, state = optimizer_step("adam", [np.zeros(2)], [np.ones(2)], None, {"lr": 0.1})
    with pytest.raises(ContractError):
        optimizer_step("adam", [np.zeros(3)], [np.ones(3)], state, {"lr": 0.1})
    with pytest.raises(ValidationError):
        optimizer_step("rmsprop", [np.zeros(2)], [np.ones(2)], None, {"lr": 0.1})
    with pytest.raises(ValidationError):
        Optimizer([], lr=-1.0)
