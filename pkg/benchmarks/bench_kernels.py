"""Time the compiled and NumPy fitting kernels on simulation-sized problems.

    python benchmarks/bench_kernels.py [--repeat 200]

Also times one full replicate of the estimator grid under each backend.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from overlapdr import kernels
from overlapdr.datagen import PRESETS, make_dataset
from overlapdr.models import build_design


def _time(fn, repeat):
    fn()  # warm up
    best = min(timeit.repeat(fn, number=1, repeat=repeat))
    return best * 1e6


def bench_kernels(repeat: int) -> list[tuple]:
    rows = []
    backends = [("python", kernels.get_backend("python"))]
    if kernels.compiled_available():
        backends.append(("compiled", kernels.get_backend("compiled")))
    for n in (100, 500, 2000):
        data = make_dataset(PRESETS["p40_d3"], n, np.random.default_rng(n))
        X = build_design(data.x)
        z, y = data.z, data.y_obs
        for name, mod in backends:
            rows.append(("logistic_irls", n, name, _time(lambda: mod.logistic_irls(X, z), repeat)))
            rows.append(("ols_qr", n, name, _time(lambda: mod.ols_qr(X, y), repeat)))
    return rows


def bench_replicate(repeat: int) -> list[tuple]:
    """Whole-grid evaluation (7 specs x 11 cells) with the kernels swapped in."""
    from overlapdr.estimators import DEFAULT_GRID, FitCache, evaluate_cell
    from overlapdr.models import MODEL_SPECS

    data = make_dataset(PRESETS["p40_d3"], 500, np.random.default_rng(0))

    def one():
        cache = FitCache(data.x, data.z, data.y_obs)
        for spec in MODEL_SPECS.values():
            for cfg in DEFAULT_GRID:
                evaluate_cell(cfg, spec, cache)

    # models looks the kernels up as module attributes, so swapping them here is enough
    rows = []
    saved = (kernels.logistic_irls, kernels.ols_qr)
    names = ["python"] + (["compiled"] if kernels.compiled_available() else [])
    try:
        for name in names:
            mod = kernels.get_backend(name)
            kernels.logistic_irls, kernels.ols_qr = mod.logistic_irls, mod.ols_qr
            rows.append(("replicate_grid", 500, name, _time(one, max(repeat // 10, 5))))
    finally:
        kernels.logistic_irls, kernels.ols_qr = saved
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)
    rows = bench_kernels(args.repeat) + bench_replicate(args.repeat)
    print(f"{'kernel':<16}{'n':>6}  {'backend':<10}{'best (us)':>12}")
    for kernel, n, name, us in rows:
        print(f"{kernel:<16}{n:>6}  {name:<10}{us:>12.1f}")
    by = {(k, n, b): us for k, n, b, us in rows}
    print()
    for k, n, b, _ in rows:
        if b == "compiled":
            print(f"{k} n={n}: compiled is {by[(k, n, 'python')] / by[(k, n, b)]:.1f}x faster")


if __name__ == "__main__":
    main()
