"""Compare the compiled and pure-Python/numpy backends per hot kernel.

Run as: python3 bench/benchmark_kernels.py

Two kernels have a compiled variant:

* cell sweep (sequential greedy reassignment): compiled is the default
  backend; the pure-Python loop is the fallback selected by
  DETFUSE_NO_NUMBA=1.
* Clayton cell-mass grid: the shipped implementation is vectorized
  numpy (elementwise pow over the grid); the scalar compiled loop is
  kept for comparison only, because it measures slower.

The likelihood group aggregation (stacked matrix products) is reported
numpy-only: its work is already inside BLAS gemms, which a scalar
compiled loop cannot beat.
"""

import time

import numpy as np

from detfuse._kernels import (
    HAS_NUMBA,
    _clayton_grid_jit,
    sweep_cells,
)
from detfuse.copulas import CopulaFamily, CopulaModel, clayton_density_grid
from detfuse.estimation import LoglikEvaluator
from detfuse.models import HypothesisParams, ParamVector, Scenario
from detfuse.quantizers import (
    HistogramGroup,
    QuantizedHistogram,
    QuantizerBank,
    SensorGrid,
    count_outcomes,
)


def timeit(fn, repeats=30) -> float:
    """Median wall time in seconds over `repeats` calls (after warmup)."""
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def reference_setup():
    grid = SensorGrid(0.0, 60.0, 0.5)
    pv = ParamVector(
        0.8,
        HypothesisParams(None, ((3.0, 4.0), (5.0, 4.0))),
        HypothesisParams(2.1316, ((5.0, 4.0), (7.0, 4.0))),
        free=("p0", "h1_dep"),
    )
    scen = Scenario(
        CopulaModel(CopulaFamily.INDEPENDENCE),
        CopulaModel(CopulaFamily.CLAYTON),
        pv,
    )
    bank = QuantizerBank.from_indicators(
        [grid, grid], [[(3.0, -60.0)], [(-3.0, 60.0)]]
    )
    return grid, scen, bank


def bench_clayton(grid):
    mids = grid.midpoints()
    u = np.clip(mids / (mids.max() + 1.0), 1e-6, 1 - 1e-6)
    w = np.full(u.size, grid.delta)
    rows = []
    t_np = timeit(lambda: np.outer(w, w) * clayton_density_grid(u, u, 2.1316))
    rows.append(("clayton_grid", "numpy (shipped)", t_np, 1.0))
    if HAS_NUMBA:
        out = np.empty((u.size, u.size))
        t_nb = timeit(lambda: _clayton_grid_jit(u, u, 2.1316, w, w, out))
        rows.append(("clayton_grid", "numba scalar loop", t_nb, t_np / t_nb))
    return rows


def bench_sweep(bank):
    rng = np.random.default_rng(0)
    M = bank.grids[0].n_cells
    n_out = bank.n_outcomes
    a0 = rng.dirichlet(np.ones(n_out), size=M)
    a1 = rng.dirichlet(np.ones(n_out), size=M)
    c0 = rng.uniform(size=n_out)
    c1 = rng.uniform(size=n_out)
    combine = np.arange(n_out, dtype=np.int64).reshape(2, 2)

    def run(force_python):
        assign = rng.integers(0, 2, size=M).astype(np.int64)
        sweep_cells(assign, a0, a1, c0, c1, combine, force_python=force_python)

    rows = []
    t_py = timeit(lambda: run(True), repeats=10)
    if HAS_NUMBA:
        t_nb = timeit(lambda: run(False), repeats=10)
        rows.append(("cell_sweep", "numba (shipped)", t_nb, 1.0))
        rows.append(("cell_sweep", "pure python", t_py, t_nb / t_py))
    else:
        rows.append(("cell_sweep", "pure python (shipped)", t_py, 1.0))
    return rows


def bench_loglik(scen, bank):
    rng = np.random.default_rng(1)
    mix = scen.mixture()
    groups = []
    for j in range(1, 6):
        y, _ = mix.sample(500, rng)
        groups.append(HistogramGroup(j, 500, bank, count_outcomes(bank, y)))
    ev = LoglikEvaluator(scen, QuantizedHistogram(groups))
    vals = np.array([0.8, 2.1316])
    t = timeit(lambda: ev.loglik(vals))
    return [("loglik_eval", "numpy gemm (shipped)", t, 1.0)]


def main():
    grid, scen, bank = reference_setup()
    rows = []
    rows += bench_clayton(grid)
    rows += bench_sweep(bank)
    rows += bench_loglik(scen, bank)
    print(f"numba available: {HAS_NUMBA}")
    print(f"{'kernel':<14} {'backend':<22} {'median':>10}   {'vs shipped':>10}")
    for kernel, backend, t, ratio in rows:
        print(f"{kernel:<14} {backend:<22} {t * 1e6:9.1f}us   {ratio:9.2f}x")


if __name__ == "__main__":
    main()
