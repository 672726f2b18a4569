"""SGD and Adam over lists of parameter tensors."""
import numpy as np

from .errors import ContractError, ValidationError


def sgd_step(theta, grad, lr, weight_decay=0.0):
    return theta - lr * (grad + weight_decay * theta)


def adam_step(theta, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """One bias-corrected Adam update; ``t`` is the 1-based step count.

    Weight decay is added to the gradient (L2 form). Returns
    ``(theta, m, v)``.
    """
    g = grad + weight_decay * theta
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


def optimizer_step(kind, params, grads, state, hyper):
    """Functional update of a list of arrays.

    ``state`` is ``None`` on the first call; the returned state must be fed
    back unchanged. ``hyper`` holds ``lr`` and optionally ``weight_decay``,
    ``beta1``, ``beta2``, ``eps``.
    """
    if len(params) != len(grads):
        raise ContractError("params and grads differ in length")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ContractError(f"param shape {np.shape(p)} != grad shape {np.shape(g)}")
    lr = hyper["lr"]
    wd = hyper.get("weight_decay", 0.0)
    if kind == "sgd":
        return [sgd_step(p, g, lr, wd) for p, g in zip(params, grads)], state
    if kind == "adam":
        if state is None:
            state = {"t": 0, "m": [np.zeros_like(p) for p in params],
                     "v": [np.zeros_like(p) for p in params]}
        for p, m in zip(params, state["m"]):
            if np.shape(p) != np.shape(m):
                raise ContractError("optimizer state does not match params")
        t = state["t"] + 1
        out, ms, vs = [], [], []
        for p, g, m, v in zip(params, grads, state["m"], state["v"]):
            p, m, v = adam_step(p, g, m, v, t, lr, hyper.get("beta1", 0.9),
                                hyper.get("beta2", 0.999), hyper.get("eps", 1e-8), wd)
            out.append(p)
            ms.append(m)
            vs.append(v)
        return out, {"t": t, "m": ms, "v": vs}
    raise ValidationError(f"unknown optimizer {kind!r}")


class Optimizer:
    """In-place optimizer over parameter tensors (leaves of the tape)."""

    def __init__(self, params, kind="adam", lr=1e-4, weight_decay=0.0,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        if lr < 0:
            raise ValidationError("learning rate must be >= 0")
        self.params = list(params)
        self.kind = kind
        self.hyper = {"lr": lr, "weight_decay": weight_decay,
                      "beta1": beta1, "beta2": beta2, "eps": eps}
        self.state = None

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        values = [p.values for p in self.params]
        grads = [p.grad for p in self.params]
        new, self.state = optimizer_step(self.kind, values, grads, self.state, self.hyper)
        for p, v in zip(self.params, new):
            p.values[...] = v
