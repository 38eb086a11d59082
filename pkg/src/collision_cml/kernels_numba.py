"""JIT-compiled twins of :mod:`collision_cml.kernels_numpy`."""
from __future__ import annotations

import numpy as np
from numba import njit, prange

from .kernels_numpy import DITHER_SCALE


@njit(cache=True)
def _branch(los, v):
    # last index with los[k] <= v; los is short, linear scan beats bisection
    k = 0
    for j in range(1, los.shape[0]):
        if los[j] <= v:
            k = j
        else:
            break
    return k


@njit(cache=True)
def _clip01(v):
    if v < 0.0:
        return 0.0
    if v > 1.0:
        return 1.0
    return v


@njit(cache=True)
def map_eval(x, los, slopes, intercepts):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        k = _branch(los, x[i])
        out[i] = _clip01(slopes[k] * x[i] + intercepts[k])
    return out


@njit(cache=True)
def _interval_index(v, ivl_lo, ivl_hi):
    for k in range(ivl_lo.shape[0]):
        if ivl_lo[k] < v and v < ivl_hi[k]:
            return k
    return -1


@njit(cache=True)
def _couple(y, ivl_lo, ivl_hi, nbr, excluded, m, out, codes):
    n_sites = y.shape[0]
    n_dir = nbr.shape[1]
    for i in range(n_sites):
        m[i] = _interval_index(y[i], ivl_lo, ivl_hi)
    for i in range(n_sites):
        out[i] = y[i]
        codes[i] = 0
        mi = m[i]
        if mi < 0 or mi >= n_dir or excluded[i]:
            continue
        p = nbr[i, mi]
        if p < 0 or excluded[p]:
            continue
        if m[p] == (mi ^ 1):
            out[i] = y[p]
            codes[i] = mi + 1


@njit(cache=True)
def lattice_chunk(x, los, slopes, intercepts, ivl_lo, ivl_hi, nbr, excluded, dither_u, out_states, out_codes):
    n_steps = out_states.shape[0]
    n_sites = out_states.shape[1]
    dither = dither_u.shape[0] > 0
    y = np.empty(n_sites)
    m = np.empty(n_sites, dtype=np.int64)
    cur = x.copy()
    for t in range(n_steps):
        for i in range(n_sites):
            k = _branch(los, cur[i])
            s = slopes[k]
            v = s * cur[i] + intercepts[k]
            if dither:
                v += s * (dither_u[t, i] * DITHER_SCALE)
            y[i] = _clip01(v)
        _couple(y, ivl_lo, ivl_hi, nbr, excluded, m, out_states[t], out_codes[t])
        for i in range(n_sites):
            cur[i] = out_states[t, i]
    return cur


@njit(cache=True)
def coupling_once(y, ivl_lo, ivl_hi, nbr, excluded, out, out_codes):
    m = np.empty(y.shape[0], dtype=np.int64)
    _couple(y, ivl_lo, ivl_hi, nbr, excluded, m, out, out_codes)


@njit(cache=True)
def corr_accumulate(a_ext, b_new, n_hist, tb0, t_total, n_batches, Sab, Sa, Sb, N):
    n_rows = b_new.shape[0]
    n_sites = b_new.shape[1]
    max_lag = Sab.shape[1] - 1
    for rb in range(n_rows):
        for n in range(max_lag + 1):
            t = tb0 + rb - n
            ra = n_hist + rb - n
            if t < 0 or ra < 0:
                continue
            batch = (t * n_batches) // t_total
            sab = 0.0
            sa = 0.0
            sb = 0.0
            for s in range(n_sites):
                av = a_ext[ra, s]
                bv = b_new[rb, s]
                sab += av * bv
                sa += av
                sb += bv
            Sab[batch, n] += sab
            Sa[batch, n] += sa
            Sb[batch, n] += sb
            N[batch, n] += n_sites


@njit(cache=True, parallel=True)
def coupling_rows(Y, ivl_lo, ivl_hi, nbr, excluded, out):
    # rows are independent states; each thread gets its own scratch
    n_sites = Y.shape[1]
    for r in prange(Y.shape[0]):
        m = np.empty(n_sites, dtype=np.int64)
        codes = np.empty(n_sites, dtype=np.int8)
        _couple(Y[r], ivl_lo, ivl_hi, nbr, excluded, m, out[r], codes)
