"""Numerical kernels with a numba fast path and a pure-Python fallback.

The backend is chosen once at import: numba is used when importable and
the ``DETFUSE_NO_NUMBA`` environment variable is unset (or "0");
otherwise everything runs through the fallback implementations, which
execute the same statements in the same order, so both backends make
bit-identical decisions.

Only the Gauss-Seidel cell sweep ships as the default jitted kernel: it
is irreducibly sequential (each accepted move changes the state the next
candidate is scored against) and gains roughly two orders of magnitude
from compilation. The Clayton cell-mass grid, by contrast, is faster
through vectorized numpy than through a scalar jitted loop on typical
hardware (the work is pow-bound and SIMD-saturated already), so the
jitted grid variant below exists for benchmarking, not as a default;
see bench/benchmark_kernels.py.
"""

from __future__ import annotations

import os

import numpy as np

_flag = os.environ.get("DETFUSE_NO_NUMBA", "").strip()
_DISABLED = _flag not in ("", "0")

if not _DISABLED:
    try:
        from numba import njit

        HAS_NUMBA = True
    except ImportError:
        HAS_NUMBA = False
else:
    HAS_NUMBA = False


def _sweep_cells_impl(assign, a0, a1, c0, c1, combine):
    """One Gauss-Seidel pass over the cells of a single sensor.

    assign : (n_cells,) int64, current local code per cell, updated in place
    a0, a1 : (n_cells, n_other) float64
        Per-cell mass against each joint code of the other sensors,
        under H0 and H1 (window-truncated, unnormalized).
    c0, c1 : (n_outcomes,) float64
        Per-outcome cost weights per unit of a0 / a1 mass under the
        current fusion rule.
    combine : (n_local, n_other) int64
        Global outcome for (candidate local code, other-sensors code).

    For each cell the exact Bayes-cost change of every candidate code is
    evaluated with everything else fixed; a move is accepted only on a
    strict decrease, ties keep the incumbent, and equal improvements go
    to the lowest candidate code. Returns the number of changed cells.
    """
    n_cells = assign.shape[0]
    n_local, n_other = combine.shape
    n_changes = 0
    for m in range(n_cells):
        cur = assign[m]
        best = cur
        best_delta = 0.0
        for cand in range(n_local):
            if cand == cur:
                continue
            delta = 0.0
            for o in range(n_other):
                u_old = combine[cur, o]
                u_new = combine[cand, o]
                delta += (c0[u_new] - c0[u_old]) * a0[m, o]
                delta += (c1[u_new] - c1[u_old]) * a1[m, o]
            if delta < best_delta:
                best_delta = delta
                best = cand
        if best != cur:
            assign[m] = best
            n_changes += 1
    return n_changes


def _clayton_grid_impl(u1, u2, theta, w1, w2, out):
    """Scalar-loop Clayton cell-mass grid (benchmark variant).

    Writes density(u1_i, u2_j) * w1_i * w2_j into out. Nonfinite powers
    (possible deep in the joint tail for large theta) are zeroed, like
    the vectorized default path.
    """
    n1 = u1.shape[0]
    n2 = u2.shape[0]
    e1 = -theta
    e2 = -2.0 - 1.0 / theta
    for i in range(n1):
        t1 = u1[i] ** e1
        f1 = t1 ** ((1.0 + theta) / theta) * (1.0 + theta) * w1[i]
        for j in range(n2):
            t2 = u2[j] ** e1
            val = f1 * t2 ** ((1.0 + theta) / theta) * (t1 + t2 - 1.0) ** e2
            out[i, j] = val if np.isfinite(val) else 0.0
    return out


if HAS_NUMBA:
    _sweep_cells_jit = njit(cache=True)(_sweep_cells_impl)
    _clayton_grid_jit = njit(cache=True)(_clayton_grid_impl)
else:
    _sweep_cells_jit = None
    _clayton_grid_jit = None


def sweep_cells(assign, a0, a1, c0, c1, combine, force_python: bool = False) -> int:
    """Dispatch one cell sweep to the active backend."""
    impl = _sweep_cells_impl if (force_python or not HAS_NUMBA) else _sweep_cells_jit
    return impl(assign, a0, a1, c0, c1, combine)
