"""Benchmark the compiled weighted least-squares kernel against the NumPy
fallback, on the raw batched solve and on a full factorization fit.

Run from the repository root:

    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from devmf._kernels import _wls_numpy

try:
    from devmf._kernels import _wls_cython
except ImportError:
    _wls_cython = None

from devmf.engine import DataMatrix, ModelSpec, dmf_fit
from devmf.families import get_family, get_link
from devmf.simlab import NormalLaw, SimDesign, simulate_dmf


def time_fn(fn, repeats=5):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_solvers():
    print(f"{'task':<34}{'numpy':>12}{'cython':>12}{'speedup':>10}")
    cases = [
        ("solve 1000 rows, k=20, q=5", 1000, 20, 5),
        ("solve 500 rows, k=50, q=20", 500, 50, 20),
        ("solve 500 rows, k=50, q=50", 500, 50, 50),
        ("solve 5000 rows, k=100, q=10", 5000, 100, 10),
    ]
    for name, m, k, q in cases:
        rng = np.random.default_rng(0)
        design = rng.normal(size=(k, q))
        z = rng.normal(size=(m, k))
        w = rng.uniform(0.1, 2.0, size=(m, k))
        t_np = time_fn(lambda: _wls_numpy.batched_wls(design, z, w, 1e-10))
        if _wls_cython is None:
            print(f"{name:<34}{t_np * 1e3:>10.2f}ms{'n/a':>12}{'':>10}")
            continue
        t_cy = time_fn(lambda: _wls_cython.batched_wls(design, z, w, 1e-10))
        a = _wls_numpy.batched_wls(design, z, w, 1e-10)
        b = _wls_cython.batched_wls(design, z, w, 1e-10)
        assert np.max(np.abs(a - b)) < 1e-8, "backends disagree"
        print(f"{name:<34}{t_np * 1e3:>10.2f}ms{t_cy * 1e3:>10.2f}ms"
              f"{t_np / t_cy:>9.1f}x")


def bench_full_fit():
    import devmf._kernels as kernels

    design = SimDesign(name="bench", family="negbin", link="log", n=1000, p=20,
                       rank=5, score_law=NormalLaw(1.0, 0.32),
                       loading_law=NormalLaw(0.0, 0.32), center=0.5, phi=5.0,
                       seed=1)
    data, _, _ = simulate_dmf(design, 0)
    spec = ModelSpec(get_family("negbin", phi=5.0), get_link("log"), 5)

    impls = [("numpy", _wls_numpy)]
    if _wls_cython is not None:
        impls.append(("cython", _wls_cython))
    results = {}
    saved = kernels._impl
    try:
        for name, impl in impls:
            kernels._impl = impl
            results[name] = time_fn(lambda: dmf_fit(data, spec), repeats=3)
    finally:
        kernels._impl = saved
    line = ", ".join(f"{k} {v:.2f}s" for k, v in results.items())
    if len(results) == 2:
        line += f", speedup {results['numpy'] / results['cython']:.1f}x"
    print(f"\nfull fit (1000x20 counts, rank 5): {line}")


if __name__ == "__main__":
    print(f"active backend: {__import__('devmf').backend_name()}\n")
    bench_solvers()
    bench_full_fit()
