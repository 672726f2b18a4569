"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat N]

Times each kernel on bag-sized inputs, then one training epoch with each
backend swapped in.
"""
import argparse
import timeit

import numpy as np

from cdnemil import _kernels
from cdnemil.data import SyntheticSpec, generate_synthetic
from cdnemil.train import ModelConfig, RunConfig, train_fold


def kernel_cases(rng):
    logits = rng.normal(size=(1, 2000))
    y = _kernels._fallback.softmax_rows(logits)
    z, mu = rng.normal(size=(2000, 128)), rng.normal(size=128)
    std = _kernels._fallback.center_std(z, mu)
    scores, labels = rng.normal(size=5000), rng.integers(0, 2, size=5000)
    centers = rng.normal(size=(200, 128))
    return {
        "softmax_rows 1x2000": lambda k: k.softmax_rows(logits),
        "softmax_rows_backward 1x2000": lambda k: k.softmax_rows_backward(y, logits),
        "center_std 2000x128": lambda k: k.center_std(z, mu),
        "center_std_backward 2000x128": lambda k: k.center_std_backward(z, mu, std, mu),
        "auroc n=5000": lambda k: k.auroc(scores, labels),
        "mean_pairwise_distance 200x128": lambda k: k.mean_pairwise_distance(centers),
    }


def time_epoch(backend, repeat):
    ds = generate_synthetic(SyntheticSpec(num_bags_per_class=10, k_min=50, k_max=200, feature_dim=64))
    cfg = RunConfig(epochs=1, learning_rate=1e-3,
                    model=ModelConfig(hidden_dim=64, embed_dim=32, attn_dim=16, proj_dim=32))
    saved = _kernels._impl
    _kernels._impl = backend
    try:
        return min(timeit.repeat(lambda: train_fold(cfg, ds), number=1, repeat=repeat))
    finally:
        _kernels._impl = saved


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    backends = _kernels.available_backends()
    names = sorted(backends)
    print(f"active backend: {_kernels.BACKEND}")
    print(f"{'kernel':<34}" + "".join(f"{n + ' (us)':>16}" for n in names))
    for label, fn in kernel_cases(np.random.default_rng(0)).items():
        cells = []
        for n in names:
            t = timeit.Timer(lambda: fn(backends[n]))
            number, _ = t.autorange()
            cells.append(min(t.repeat(args.repeat, number)) / number * 1e6)
        print(f"{label:<34}" + "".join(f"{c:>16.1f}" for c in cells))
    cells = [time_epoch(backends[n], args.repeat) for n in names]
    print(f"{'train epoch (20 bags)':<34}" + "".join(f"{c * 1e6:>16.0f}" for c in cells))


if __name__ == "__main__":
    main()
