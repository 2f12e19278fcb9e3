"""Hot inner-loop kernels with numba and pure-numpy backends.

The backend is chosen once at import time: numba when importable, unless the
environment variable ABREU_NUMBA is set to "0" (then the numpy fallbacks run).
Both backends execute the same arithmetic in the same order, so results are
bit-identical either way.
"""

import os

import numpy as np

_want_numba = os.environ.get("ABREU_NUMBA", "1") != "0"
_HAVE_NUMBA = False
if _want_numba:
    try:
        from numba import njit

        _HAVE_NUMBA = True
    except ImportError:
        _HAVE_NUMBA = False


def backend_name():
    return "numba" if _HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# 1D discrete Legendre conjugate on a line of samples.
#
# Given samples (xs[i], fs[i]) with xs strictly increasing and targets ys
# ascending, computes vals[j] = max_i (xs[i]*ys[j] - fs[i]) and the smallest
# maximizing index.  The numba path builds the lower convex hull and sweeps a
# monotone pointer (O(N+M)); the fallback scans all pairs.  The smallest
# argmax always sits on a hull vertex, so both agree exactly.


def _conjugate_line_py(xs, fs, ys):
    vals_all = ys[:, None] * xs[None, :] - fs[None, :]
    arg = np.argmax(vals_all, axis=1)
    vals = vals_all[np.arange(len(ys)), arg]
    return vals, arg.astype(np.int64)


def _conjugate_line_seq(xs, fs, ys):  # pragma: no cover - numba source
    n = xs.shape[0]
    m = ys.shape[0]
    hull = np.empty(n, np.int64)
    nh = 0
    for i in range(n):
        # pop while the middle point is not a strict convex turn
        while nh >= 2:
            a = hull[nh - 2]
            b = hull[nh - 1]
            cr = (xs[b] - xs[a]) * (fs[i] - fs[a]) - (xs[i] - xs[a]) * (fs[b] - fs[a])
            if cr <= 0.0:
                nh -= 1
            else:
                break
        hull[nh] = i
        nh += 1
    vals = np.empty(m, np.float64)
    arg = np.empty(m, np.int64)
    p = 0
    for j in range(m):
        y = ys[j]
        while p + 1 < nh:
            cur = y * xs[hull[p]] - fs[hull[p]]
            nxt = y * xs[hull[p + 1]] - fs[hull[p + 1]]
            if nxt > cur:
                p += 1
            else:
                break
        vals[j] = y * xs[hull[p]] - fs[hull[p]]
        arg[j] = hull[p]
    return vals, arg


# ---------------------------------------------------------------------------
# Cyclic Dykstra sweeps projecting onto the discrete convexity cone
# (nonnegative second differences along both axes and both diagonals).
#
# Constraints are pre-grouped so triples within one group are disjoint; the
# group order is fixed, which keeps the sweep deterministic.  lam carries the
# Dykstra correction scalar per constraint (direction (1,-2,1), |a|^2 = 6).


def _dykstra_sweeps_py(u, centers, strides, group_ptr, lam, fixed_idx, fixed_vals, n_sweeps):
    ngroups = len(strides)
    for _ in range(n_sweeps):
        for g in range(ngroups):
            lo, hi = group_ptr[g], group_ptr[g + 1]
            if hi == lo:
                continue
            s = strides[g]
            k = centers[lo:hi]
            lg = lam[lo:hi]
            ym = u[k - s] + lg
            yc = u[k] - 2.0 * lg
            yp = u[k + s] + lg
            beta = (ym - 2.0 * yc + yp) / 6.0
            c = np.minimum(beta, 0.0)
            u[k - s] = ym - c
            u[k] = yc + 2.0 * c
            u[k + s] = yp - c
            lam[lo:hi] = c
        u[fixed_idx] = fixed_vals


def _dykstra_sweeps_seq(u, centers, strides, group_ptr, lam, fixed_idx, fixed_vals, n_sweeps):  # pragma: no cover
    ngroups = len(strides)
    for _ in range(n_sweeps):
        for g in range(ngroups):
            s = strides[g]
            for t in range(group_ptr[g], group_ptr[g + 1]):
                k = centers[t]
                lg = lam[t]
                ym = u[k - s] + lg
                yc = u[k] - 2.0 * lg
                yp = u[k + s] + lg
                beta = (ym - 2.0 * yc + yp) / 6.0
                c = beta if beta < 0.0 else 0.0
                u[k - s] = ym - c
                u[k] = yc + 2.0 * c
                u[k + s] = yp - c
                lam[t] = c
        for t in range(fixed_idx.shape[0]):
            u[fixed_idx[t]] = fixed_vals[t]


if _HAVE_NUMBA:
    conjugate_line = njit(cache=True)(_conjugate_line_seq)
    dykstra_sweeps = njit(cache=True)(_dykstra_sweeps_seq)
else:
    conjugate_line = _conjugate_line_py
    dykstra_sweeps = _dykstra_sweeps_py

# reference implementations, importable regardless of backend (benchmarks, tests)
conjugate_line_py = _conjugate_line_py
dykstra_sweeps_py = _dykstra_sweeps_py
conjugate_line_seq = _conjugate_line_seq
dykstra_sweeps_seq = _dykstra_sweeps_seq
