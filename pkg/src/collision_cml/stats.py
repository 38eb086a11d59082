"""Trajectory estimators: space-time correlations, exponential fits,
collision frequencies and occupation histograms."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import _accel
from .lattice import LatticeGeometry, Simulation, TrajectorySummary
from .measure_bv import GridDensity

DEFAULT_BATCHES = 50


class InsufficientData(ValueError):
    pass


def _bump(u: np.ndarray) -> np.ndarray:
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside] ** 2))
    return out


@dataclass(frozen=True)
class Observable:
    """Local observable: a product over ``support`` of a one-site function.

    ``support`` holds site offsets relative to the base site.  Kinds:
    ``coordinate`` (x), ``centered_coordinate`` (x - 1/2), ``smooth_bump``
    (a C-infinity bump of height 1 at ``center`` with half-width ``width``)
    and ``constant`` (1).
    """

    support: tuple[tuple[int, ...], ...] = ((0,),)
    kind: str = "centered_coordinate"
    center: float = 0.5
    width: float = 0.25

    def __post_init__(self) -> None:
        if not self.support:
            raise ValueError("an observable needs a nonempty support")
        if self.kind not in ("coordinate", "centered_coordinate", "smooth_bump", "constant"):
            raise ValueError(f"unknown observable kind {self.kind!r}")
        if self.kind == "smooth_bump" and not self.width > 0:
            raise ValueError("bump width must be positive")

    @classmethod
    def at(cls, kind: str = "centered_coordinate", offset: int | Sequence[int] = 0, **kw) -> "Observable":
        off = (int(offset),) if np.isscalar(offset) else tuple(int(o) for o in offset)
        return cls(support=(off,), kind=kind, **kw)

    def _single(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "coordinate":
            return x
        if self.kind == "centered_coordinate":
            return x - 0.5
        if self.kind == "smooth_bump":
            return _bump((x - self.center) / self.width)
        return np.ones_like(x)

    def values(self, states: np.ndarray, geom: LatticeGeometry) -> np.ndarray:
        """``out[t, s]`` is the observable translated to base site ``s`` at time ``t``."""
        out = None
        for off in self.support:
            if len(off) != geom.dimension:
                raise ValueError(f"support offset {off} does not match lattice dimension {geom.dimension}")
            cols = states[:, geom.shift_index(off)] if any(off) else states
            f = self._single(cols)
            out = f if out is None else out * f
        return out

    def to_dict(self) -> dict:
        return {"support": [list(s) for s in self.support], "kind": self.kind, "center": self.center, "width": self.width}


@dataclass
class CorrelationSeries:
    lags: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    n_samples: int
    offset: tuple[int, ...] = (0,)

    def rows(self) -> list[tuple]:
        return [(self.offset, int(n), float(v), float(e)) for n, v, e in zip(self.lags, self.values, self.stderr)]


@dataclass
class ExpFit:
    rate: float
    intercept: float
    r_squared: float
    noise_floor: int
    lags_used: list[int] = field(default_factory=list)
    ok: bool = True
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "rate": self.rate,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "noise_floor": self.noise_floor,
            "lags_used": self.lags_used,
            "ok": self.ok,
            "reason": self.reason,
        }


# --------------------------------------------------------------------------
# trajectory sources


def _source(source, geom: LatticeGeometry | None):
    """Return ``(geometry, total steps, chunk iterator)`` for an array or a Simulation."""
    if isinstance(source, Simulation):
        g = source.geom

        def it() -> Iterator[tuple[int, np.ndarray]]:
            for t0, states, _ in source.chunks():
                yield t0, states

        return g, source.n_steps, it
    arr = np.asarray(source, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    arr = arr.reshape(arr.shape[0], -1)
    if geom is None:
        n = arr.shape[1]
        geom = LatticeGeometry.chain(n) if n >= 3 else LatticeGeometry(1, (n,), "open")
    if arr.shape[1] != geom.n_sites:
        raise ValueError("trajectory width does not match the geometry")

    def it() -> Iterator[tuple[int, np.ndarray]]:
        step = 65536
        for t0 in range(0, arr.shape[0], step):
            yield t0, arr[t0:t0 + step]

    return geom, arr.shape[0], it


def space_time_correlation(
    source,
    phi: Observable,
    psi: Observable,
    max_lag: int,
    offsets: Iterable[int | Sequence[int]] = (0,),
    *,
    geom: LatticeGeometry | None = None,
    n_batches: int = DEFAULT_BATCHES,
    base_sites: Sequence[int] | None = None,
) -> dict[tuple[int, ...], CorrelationSeries]:
    """Estimate ``C(j, n) = E[phi(x_t) psi(x_{t+n}) at offset j] - E[phi] E[psi]``.

    The average runs over time and over all base sites (translation
    invariance) unless ``base_sites`` restricts it.  Standard errors come from
    ``n_batches`` contiguous time batches.
    """
    g, total, chunks = _source(source, geom)
    if max_lag < 0:
        raise ValueError("max_lag must be non-negative")
    if total < 100 * max(max_lag, 1):
        raise InsufficientData(f"{total} samples is fewer than 100 x max_lag = {100 * max(max_lag, 1)}")
    offs = [((int(o),) if np.isscalar(o) else tuple(int(v) for v in o)) for o in offsets]
    shifts = [g.shift_index(o) for o in offs]
    cols = None if base_sites is None else np.array([g.flat(s) for s in base_sites])
    B = int(n_batches)
    L = max_lag + 1
    acc = [tuple(np.zeros((B, L)) for _ in range(3)) + (np.zeros((B, L), dtype=np.int64),) for _ in offs]
    a_hist = np.empty((0, g.n_sites if cols is None else len(cols)))
    for t0, states in chunks():
        a = phi.values(states, g)
        b = psi.values(states, g)
        if cols is not None:
            a = a[:, cols]
        a = np.ascontiguousarray(a)
        a_ext = np.vstack([a_hist, a]) if len(a_hist) else a
        for (Sab, Sa, Sb, N), sh in zip(acc, shifts):
            bj = b[:, sh] if cols is None else b[:, sh[cols]]
            _accel.corr_accumulate(a_ext, np.ascontiguousarray(bj), len(a_hist), t0, total, B, Sab, Sa, Sb, N)
        a_hist = a_ext[len(a_ext) - min(max_lag, len(a_ext)):] if max_lag else a_hist
    out = {}
    lags = np.arange(L)
    for o, (Sab, Sa, Sb, N) in zip(offs, acc):
        Nt = N.sum(axis=0).astype(float)
        C = Sab.sum(axis=0) / Nt - (Sa.sum(axis=0) / Nt) * (Sb.sum(axis=0) / Nt)
        with np.errstate(invalid="ignore", divide="ignore"):
            Cb = Sab / N - (Sa / N) * (Sb / N)
        err = np.empty(L)
        for n in range(L):
            cb = Cb[N[:, n] > 0, n]
            err[n] = cb.std(ddof=1) / np.sqrt(len(cb)) if len(cb) > 1 else np.inf
        out[o] = CorrelationSeries(lags, C, err, int(total), o)
    return out


def time_correlation(source, phi: Observable, psi: Observable, max_lag: int, **kw) -> CorrelationSeries:
    d = space_time_correlation(source, phi, psi, max_lag, offsets=[0], **kw)
    return next(iter(d.values()))


def fit_exponential(series: CorrelationSeries, min_lags: int = 4) -> ExpFit:
    """Least-squares line through ``(n, log|C(n)|)`` above the ``3 stderr`` floor.

    ``noise_floor`` is the first lag from which every estimate stays within
    three standard errors of zero; only lags below it with a significant
    estimate enter the fit.  Too few usable lags gives ``ok=False``.
    """
    C = np.asarray(series.values, dtype=float)
    err = np.asarray(series.stderr, dtype=float)
    lags = np.asarray(series.lags)
    signif = np.abs(C) > 3.0 * err
    above = np.flatnonzero(signif)
    floor = int(lags[above[-1]] + 1) if len(above) else int(lags[0])
    use = [int(n) for n, s in zip(lags, signif) if s and n < floor and C[lags == n][0] != 0]
    if len(use) < min_lags:
        return ExpFit(float("nan"), float("nan"), float("nan"), floor, use, False, "insufficient decay range")
    x = np.array(use, dtype=float)
    y = np.log(np.abs(C[np.isin(lags, use)]))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return ExpFit(float(slope), float(intercept), min(max(r2, 0.0), 1.0), floor, use)


def collision_rate(source, window: int | None = None, geom: LatticeGeometry | None = None) -> tuple[float, float]:
    """Collisions per ordered adjacent pair ``(i, i + e_k)`` per step, with binomial stderr.

    ``window`` limits the count to the first ``window`` steps.
    """
    if isinstance(source, Simulation):
        g = source.geom
        counts = []
        for _, _, codes in source.chunks():
            counts.append(np.count_nonzero(codes, axis=1) // 2)
        per_step = np.concatenate(counts) if counts else np.zeros(0, dtype=np.int64)
    elif isinstance(source, TrajectorySummary):
        if geom is None:
            raise ValueError("a geometry is needed to normalize a trajectory summary")
        g, per_step = geom, source.collisions_per_step
    else:
        raise TypeError("collision_rate needs a Simulation or a TrajectorySummary")
    if window is not None:
        per_step = per_step[: int(window)]
    pairs = g.n_sites * g.dimension
    trials = len(per_step) * pairs
    if trials == 0:
        raise InsufficientData("no steps to count")
    p = float(per_step.sum()) / trials
    return p, float(np.sqrt(max(p * (1 - p), 0.0) / trials))


def marginal_histogram(
    source, sites: Sequence[int], n_cells: int, *, geom: LatticeGeometry | None = None, translate: bool = False
) -> GridDensity:
    """Occupation histogram of the joint values at ``sites`` on the product grid.

    With ``translate`` the histogram pools every translate of ``sites``.
    """
    g, _, chunks = _source(source, geom)
    idx = [g.flat(s) for s in sites]
    if not 1 <= len(idx) <= 3:
        raise ValueError("marginal histograms cover 1 to 3 sites")
    k = len(idx)
    counts = np.zeros(n_cells ** k, dtype=np.int64)
    if translate:
        base = [g.multi(i) for i in idx]
        groups = [g.shift_index(b) for b in base]
    for _, states in chunks():
        cells = np.minimum((states * n_cells).astype(np.int64), n_cells - 1)
        if translate:
            cols = [cells[:, gi] for gi in groups]
        else:
            cols = [cells[:, i] for i in idx]
        flat = np.ravel_multi_index(tuple(c.ravel() for c in cols), (n_cells,) * k)
        counts += np.bincount(flat, minlength=n_cells ** k)
    total = counts.sum()
    dens = counts.astype(float) / total * n_cells ** k
    return GridDensity(dens.reshape((n_cells,) * k), probability=True)


def decreasing_until_floor(values: Sequence[float], stderr: Sequence[float]) -> tuple[bool, int]:
    """Whether ``|values|`` strictly decreases while it stays above ``3 stderr``.

    Returns ``(decreasing, floor)`` where ``floor`` is the first index at or
    below the noise floor (``len(values)`` if none is).
    """
    v = np.abs(np.asarray(values, dtype=float))
    e = np.asarray(stderr, dtype=float)
    floor = len(v)
    for j in range(len(v)):
        if not v[j] > 3.0 * e[j]:
            floor = j
            break
    ok = bool(np.all(np.diff(v[:floor]) < 0)) if floor > 1 else True
    return ok, floor
