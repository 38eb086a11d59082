"""Reference kernels written with vectorized numpy only.

Every function here has a twin of the same signature in
:mod:`collision_cml.kernels_numba`; the two must agree on every input.
"""
from __future__ import annotations

import numpy as np

# Width of the sub-resolution interval that a double in [0.5, 1) stands for.
DITHER_SCALE = 2.0 ** -53


def map_eval(x, los, slopes, intercepts):
    idx = np.searchsorted(los, x, side="right") - 1
    np.clip(idx, 0, len(los) - 1, out=idx)
    y = slopes[idx] * x + intercepts[idx]
    return np.clip(y, 0.0, 1.0)


def _interval_index(y, ivl_lo, ivl_hi):
    m = np.full(y.shape, -1, dtype=np.int64)
    for k in range(len(ivl_lo)):
        m[(y > ivl_lo[k]) & (y < ivl_hi[k])] = k
    return m


def lattice_chunk(x, los, slopes, intercepts, ivl_lo, ivl_hi, nbr, excluded, dither_u, out_states, out_codes):
    """Advance ``out_states.shape[0]`` steps of ``F = Phi o F0``.

    ``nbr[i, m]`` is the site reached from ``i`` along direction ``m``
    (directions ordered ``+e1, -e1, +e2, ...`` so ``m ^ 1`` is the opposite
    one), or -1 where no such site exists.  ``out_codes[t, i]`` is ``m + 1``
    when site ``i`` took its value from ``nbr[i, m]`` at step ``t``, else 0.
    Sites flagged in ``excluded`` never collide.  An empty ``dither_u``
    disables dithering.
    """
    n_steps, n_sites = out_states.shape
    ar = np.arange(n_sites)
    dither = dither_u.shape[0] > 0
    n_dir = nbr.shape[1]
    x = x.copy()
    for t in range(n_steps):
        idx = np.searchsorted(los, x, side="right") - 1
        np.clip(idx, 0, len(los) - 1, out=idx)
        s = slopes[idx]
        y = s * x + intercepts[idx]
        if dither:
            y += s * (dither_u[t] * DITHER_SCALE)
        np.clip(y, 0.0, 1.0, out=y)
        m = _interval_index(y, ivl_lo, ivl_hi)
        hit = (m >= 0) & (m < n_dir) & ~excluded
        mm = np.where(hit, m, 0)
        partner = np.where(hit, nbr[ar, mm], -1)
        hit &= partner >= 0
        pp = np.where(hit, partner, 0)
        hit &= (m[pp] == (mm ^ 1)) & ~excluded[pp]
        x = np.where(hit, y[pp], y)
        out_states[t] = x
        out_codes[t] = np.where(hit, mm + 1, 0)
    return x


def coupling_once(y, ivl_lo, ivl_hi, nbr, excluded, out, out_codes):
    """One application of the collision map to ``y`` (no local map)."""
    n_sites = y.shape[0]
    ar = np.arange(n_sites)
    n_dir = nbr.shape[1]
    m = _interval_index(y, ivl_lo, ivl_hi)
    hit = (m >= 0) & (m < n_dir) & ~excluded
    mm = np.where(hit, m, 0)
    partner = np.where(hit, nbr[ar, mm], -1)
    hit &= partner >= 0
    pp = np.where(hit, partner, 0)
    hit &= (m[pp] == (mm ^ 1)) & ~excluded[pp]
    out[:] = np.where(hit, y[pp], y)
    out_codes[:] = np.where(hit, mm + 1, 0)


def corr_accumulate(a_ext, b_new, n_hist, tb0, t_total, n_batches, Sab, Sa, Sb, N):
    """Accumulate lagged products ``a[t] * b[t + n]`` into per-batch sums.

    ``a_ext[r]`` holds ``a`` at time ``tb0 - n_hist + r``; ``b_new[r]`` holds
    ``b`` at time ``tb0 + r``.  Pairs are binned by the batch of ``t``.
    """
    n_rows, n_sites = b_new.shape
    max_lag = Sab.shape[1] - 1
    for n in range(max_lag + 1):
        r0 = max(0, n - n_hist, n - tb0)
        if r0 >= n_rows:
            continue
        rb = np.arange(r0, n_rows)
        ra = n_hist + rb - n
        t = tb0 + rb - n
        batch = (t * n_batches) // t_total
        a_rows = a_ext[ra]
        b_rows = b_new[rb]
        Sab[:, n] += np.bincount(batch, weights=np.einsum("ij,ij->i", a_rows, b_rows), minlength=n_batches)
        Sa[:, n] += np.bincount(batch, weights=a_rows.sum(axis=1), minlength=n_batches)
        Sb[:, n] += np.bincount(batch, weights=b_rows.sum(axis=1), minlength=n_batches)
        N[:, n] += np.bincount(batch, minlength=n_batches) * n_sites


def coupling_rows(Y, ivl_lo, ivl_hi, nbr, excluded, out):
    """:func:`coupling_once` applied independently to every row of ``Y``."""
    n_rows, n_sites = Y.shape
    n_dir = nbr.shape[1]
    m = np.full(Y.shape, -1, dtype=np.int64)
    for k in range(len(ivl_lo)):
        m[(Y > ivl_lo[k]) & (Y < ivl_hi[k])] = k
    hit = (m >= 0) & (m < n_dir) & ~excluded[None, :]
    mm = np.where(hit, m, 0)
    partner = np.where(hit, nbr[np.arange(n_sites)[None, :], mm], -1)
    hit &= partner >= 0
    pp = np.where(hit, partner, 0)
    rows = np.arange(n_rows)[:, None]
    hit &= (m[rows, pp] == (mm ^ 1)) & ~excluded[pp]
    out[:] = np.where(hit, Y[rows, pp], Y)
