"""Timing comparison of the compiled kernels against the pure-NumPy fallback.

Run `python3 benchmarks/bench_kernels.py` from the repository root. When the
compiled extension is importable the script re-executes itself once with
PROX_PURE_PYTHON=1 and prints both columns; otherwise it reports the pure
backend alone.
"""

import json
import os
import subprocess
import sys
import time

import numpy as np

from proxsmooth import kernel_backend
from proxsmooth._kernels import gaussian_chain, posterior_moments, quad_chain
from proxsmooth.priors import GaussianPrior, builtin_quadrature_prior
from proxsmooth.prox import ProxProblem, Schedule, run_prox_iteration

REPEATS = 3


def _best(fn):
    times = []
    for _ in range(REPEATS):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def _bench_gaussian_chain():
    d, n = 10, 20000
    rng = np.random.Generator(np.random.Philox(0))
    lam = np.geomspace(1.0, 1e-2, d)
    yc = rng.standard_normal(d)
    trace = np.empty((n + 1, d))

    def run():
        trace[0] = yc
        gaussian_chain(lam, yc, 1.0, 0, trace)

    return f"gaussian_chain d={d} n={n}", _best(run)


def _bench_quad_chain(sech):
    n = 4000
    trace = np.empty(n + 1)

    def run():
        trace[0] = 1.5
        status = quad_chain(sech.potential, sech.x_lo, sech.grid_step, 1.5,
                            0.5, 0, trace, 16.0, 6.0, 1e6)
        assert status == -1

    return f"quad_chain n={n}", _best(run)


def _bench_posterior_moments(sech):
    queries = np.linspace(-2.0, 2.0, 2000)
    sigma_sq = 0.09
    h = sech.grid_step
    half = 16.0 * 0.3

    def run():
        for z in queries:
            i_lo = max(0, int(np.ceil((z - half - sech.x_lo) / h)))
            i_hi = min(sech.n_grid - 1,
                       int(np.floor((z + half - sech.x_lo) / h)))
            posterior_moments(sech.potential, sech.x_lo, h, i_lo, i_hi, z,
                              sigma_sq)

    return f"posterior_moments x{len(queries)}", _best(run)


def _bench_end_to_end():
    prior = GaussianPrior.from_diagonal(np.zeros(10), np.geomspace(1, 1e-2, 10))
    prob = ProxProblem(prior, np.full(10, 2.0), 1.0)
    sched = Schedule.paper_default(1.0)

    def run():
        run_prox_iteration(prob, sched, 10000, reference=None)

    return "run_prox_iteration gaussian d=10 n=10000", _best(run)


def collect():
    sech = builtin_quadrature_prior("sech", sigma_min=0.1)
    rows = [
        _bench_gaussian_chain(),
        _bench_quad_chain(sech),
        _bench_posterior_moments(sech),
        _bench_end_to_end(),
    ]
    return {name: secs for name, secs in rows}


def main():
    mine = collect()
    if "--inner" in sys.argv:
        print(json.dumps(mine))
        return 0

    columns = {kernel_backend: mine}
    if kernel_backend == "compiled":
        env = dict(os.environ, PROX_PURE_PYTHON="1")
        out = subprocess.run([sys.executable, os.path.abspath(__file__),
                              "--inner"],
                             env=env, capture_output=True, text=True,
                             check=True)
        columns["pure"] = json.loads(out.stdout)

    names = list(mine)
    width = max(len(n) for n in names)
    header = f"{'benchmark':<{width}}" + "".join(
        f"  {b:>12}" for b in columns)
    if len(columns) == 2:
        header += f"  {'speedup':>8}"
    print(header)
    for name in names:
        line = f"{name:<{width}}"
        for b in columns:
            line += f"  {columns[b][name] * 1e3:>10.2f}ms"
        if len(columns) == 2:
            line += f"  {columns['pure'][name] / columns['compiled'][name]:>7.1f}x"
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
