"""Independent reference implementations used as test oracles.

They follow the definitions literally and favour clarity over speed.
"""
from __future__ import annotations

import numpy as np


def in_interval(v: float, lo: float, hi: float) -> bool:
    return lo < v < hi


def neighbor(site: tuple[int, ...], m: int, sides: tuple[int, ...]) -> tuple[int, ...]:
    """Periodic neighbour of ``site`` in direction ``m`` (``+e1, -e1, +e2, ...``)."""
    q = list(site)
    k = m // 2
    q[k] = (q[k] + (1 if m % 2 == 0 else -1)) % sides[k]
    return tuple(q)


def partner(x: np.ndarray, site, lows, eps):
    """The site that ``site`` collides with, or None."""
    sides = x.shape
    for m in range(2 * len(sides)):
        j = neighbor(site, m, sides)
        lo_v, lo_w = lows[m], lows[m ^ 1]
        if in_interval(x[site], lo_v, lo_v + eps) and in_interval(x[j], lo_w, lo_w + eps):
            return j
    return None


def brute_phi(x: np.ndarray, lows, eps) -> np.ndarray:
    """Collision map: x_i becomes x_{i+v} when x_i is in A_v and x_{i+v} in A_{-v}."""
    out = x.copy()
    for site in np.ndindex(x.shape):
        j = partner(x, site, lows, eps)
        if j is not None:
            out[site] = x[j]
    return out


def brute_phi_decoupled(x: np.ndarray, lows, eps, i) -> np.ndarray:
    """Case-wise one-site decoupling: site i and its would-be partner keep their values."""
    out = brute_phi(x, lows, eps)
    out[i] = x[i]
    j = partner(x, i, lows, eps)
    if j is not None:
        out[j] = x[j]
    return out


def riemann_tv(c: np.ndarray, refine: int) -> float:
    """Integral of |h| as a midpoint Riemann sum on a grid ``refine`` times finer."""
    f = c
    for axis in range(c.ndim):
        f = np.repeat(f, refine, axis=axis)
    return float(np.abs(f).sum()) / f.size


def mc_pushforward(c: np.ndarray, fn, n_samples: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo histogram of the push-forward of a non-negative grid density.

    Returns the estimated cell masses and their binomial standard errors.
    """
    n, k = c.shape[0], c.ndim
    p = c.ravel() / c.sum()
    cells = rng.choice(p.size, size=n_samples, p=p)
    idx = np.array(np.unravel_index(cells, c.shape)).T
    pts = (idx + rng.random((n_samples, k))) / n
    img = fn(pts)
    tgt = np.minimum((img * n).astype(int), n - 1)
    flat = np.ravel_multi_index(tuple(tgt.T), c.shape)
    q = np.bincount(flat, minlength=p.size) / n_samples
    return q.reshape(c.shape), np.sqrt(q * (1 - q) / n_samples).reshape(c.shape)
