"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Times the per-cell negative-binomial terms (log density, score, curvature,
Fisher weight) on panel-sized inputs, the interval quantile search, and one
full fit of the bundled example with each backend.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from areal_epi import _kernels_py

try:
    from areal_epi import _kernels as _kernels_c
except ImportError:
    _kernels_c = None

FIT_SNIPPET = """
import time
from areal_epi.cli import RunConfig, bundled_example_config, load_inputs
from areal_epi import fit, kernels
cfg = RunConfig.load(bundled_example_config())
inp = load_inputs(cfg)
t = time.perf_counter()
fit(cfg.spec, inp.panel, inp.cov, inp.weights, cfg.fit_options)
print(kernels.BACKEND, time.perf_counter() - t)
"""


def cells(n, rng):
    y = rng.negative_binomial(5, 0.05, n).astype(float)
    mu = np.maximum(y * rng.uniform(0.5, 1.5, n), 0.1)
    psi = np.full(n, 0.2)
    return y, mu, psi


def best(stmt, repeat):
    return min(timeit.repeat(stmt, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--no-fit", action="store_true", help="skip the end-to-end fit timing")
    args = ap.parse_args()
    if _kernels_c is None:
        sys.exit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<32}{'python':>12}{'cython':>12}{'speedup':>10}")
    for n in (107 * 30, 50 * 60, 10**5):
        y, mu, psi = cells(n, rng)
        tp = best(lambda: _kernels_py.nb_terms(y, mu, psi), args.repeat)
        tc = best(lambda: _kernels_c.nb_terms(y, mu, psi), args.repeat)
        print(f"{f'nb_terms n={n}':<32}{tp * 1e3:>10.2f}ms{tc * 1e3:>10.2f}ms{tp / tc:>9.1f}x")
    for mu_scale in (10.0, 1000.0):
        mu = rng.uniform(0.5, 2.0, 107) * mu_scale
        psi = np.full(107, 0.2)
        tp = best(lambda: _kernels_py.nb_quantile(mu, psi, 0.9), args.repeat)
        tc = best(lambda: _kernels_c.nb_quantile(mu, psi, 0.9), args.repeat)
        print(f"{f'nb_quantile R=107 mu~{mu_scale:g}':<32}{tp * 1e3:>10.2f}ms{tc * 1e3:>10.2f}ms"
              f"{tp / tc:>9.1f}x")
    if args.no_fit:
        return
    times = {}
    for pure in ("1", "0"):
        env = dict(os.environ, AREAL_EPI_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", FIT_SNIPPET], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        times[out[0]] = float(out[1])
    print(f"{'fit, bundled example':<32}{times['python']:>11.2f}s{times['cython']:>11.2f}s"
          f"{times['python'] / times['cython']:>9.1f}x")


if __name__ == "__main__":
    main()
