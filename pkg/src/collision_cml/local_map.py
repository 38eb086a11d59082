"""Single-site piecewise affine expanding maps of the unit interval."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _accel

_GRID_TOL = 1e-9


@dataclass(frozen=True)
class Branch:
    lo: float
    hi: float
    slope: float
    intercept: float

    def image(self) -> tuple[float, float]:
        a = self.slope * self.lo + self.intercept
        b = self.slope * self.hi + self.intercept
        return (min(a, b), max(a, b))


@dataclass(frozen=True)
class PiecewiseAffineMap:
    """Uniformly expanding map ``T`` with affine branches on ``[lo, hi)``.

    Branches are ordered and tile ``[0, 1)``; the point 1 belongs to the
    closure of the last branch.  ``lambda_min`` is validated against the
    slopes at construction.
    """

    branches: tuple[Branch, ...]
    lambda_min: float
    name: str = "custom"
    _los: np.ndarray = field(init=False, repr=False, compare=False)
    _slopes: np.ndarray = field(init=False, repr=False, compare=False)
    _intercepts: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.branches:
            raise ValueError("a map needs at least one branch")
        prev_hi = 0.0
        for b in self.branches:
            if abs(b.lo - prev_hi) > 1e-12:
                raise ValueError(f"branch domains must tile [0,1): gap or overlap at {b.lo}")
            if not b.hi > b.lo:
                raise ValueError(f"empty branch domain [{b.lo}, {b.hi})")
            lo_img, hi_img = b.image()
            if lo_img < -1e-12 or hi_img > 1 + 1e-12:
                raise ValueError(f"branch on [{b.lo}, {b.hi}) maps outside [0,1]")
            prev_hi = b.hi
        if abs(prev_hi - 1.0) > 1e-12:
            raise ValueError("branch domains must end at 1")
        slopes = np.array([abs(b.slope) for b in self.branches])
        if not self.lambda_min > 1.0:
            raise ValueError(f"lambda_min must exceed 1, got {self.lambda_min}")
        if np.any(slopes < self.lambda_min * (1 - 1e-12)):
            raise ValueError("some branch is less expanding than lambda_min")
        object.__setattr__(self, "_los", np.array([b.lo for b in self.branches]))
        object.__setattr__(self, "_slopes", np.array([b.slope for b in self.branches]))
        object.__setattr__(self, "_intercepts", np.array([b.intercept for b in self.branches]))

    @classmethod
    def from_branches(cls, branches: Iterable[Sequence[float]], name: str = "custom") -> "PiecewiseAffineMap":
        bs = tuple(Branch(*map(float, b)) for b in branches)
        lam = min(abs(b.slope) for b in bs) if bs else 0.0
        return cls(bs, lam, name)

    @property
    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Branch left endpoints, slopes and intercepts, for the kernels."""
        return self._los, self._slopes, self._intercepts

    def to_records(self) -> list[list[float]]:
        return [[b.lo, b.hi, b.slope, b.intercept] for b in self.branches]


def full_branch_map(n_branches: int, name: str | None = None) -> PiecewiseAffineMap:
    """``x -> n x mod 1``."""
    n = int(n_branches)
    bs = [(k / n, (k + 1) / n, float(n), -float(k)) for k in range(n)]
    return PiecewiseAffineMap.from_branches(bs, name or f"times{n}")


def doubling_map() -> PiecewiseAffineMap:
    return full_branch_map(2, "doubling")


def decimal_map() -> PiecewiseAffineMap:
    return full_branch_map(10, "decimal")


PRESETS = {"doubling": doubling_map, "decimal": decimal_map}


def preset(name: str) -> PiecewiseAffineMap:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown map preset {name!r}; known: {sorted(PRESETS)}") from None


def branch_index(tmap: PiecewiseAffineMap, x: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(tmap._los, x, side="right") - 1
    return np.clip(idx, 0, len(tmap.branches) - 1)


def eval(tmap: PiecewiseAffineMap, x):  # noqa: A001 - mirrors the operation name
    """Evaluate ``T(x)`` for a scalar or array ``x`` in ``[0, 1]``."""
    arr = np.asarray(x, dtype=float)
    if np.any(~((arr >= 0.0) & (arr <= 1.0))):
        raise ValueError("map argument outside [0, 1]")
    out = _accel.map_eval(arr.ravel(), *tmap.arrays).reshape(arr.shape)
    if out.ndim == 0:
        return float(out)
    return out


def preimages(tmap: PiecewiseAffineMap, y: float) -> list[tuple[float, float]]:
    """All ``x`` with ``T(x) = y``, each paired with ``1/|T'(x)|``, sorted by ``x``."""
    if not 0.0 <= y <= 1.0:
        raise ValueError("preimage target outside [0, 1]")
    out = []
    last = len(tmap.branches) - 1
    for k, b in enumerate(tmap.branches):
        x = (y - b.intercept) / b.slope
        # half-open domains; the last branch also owns x = 1
        if b.lo - 1e-15 <= x < b.hi or (k == last and abs(x - b.hi) <= 1e-15):
            x = min(max(x, b.lo), b.hi)
            if abs(b.slope * x + b.intercept - y) <= 1e-12:
                out.append((x, 1.0 / abs(b.slope)))
    out.sort()
    return out


def _on_grid(v: float, n: int) -> bool:
    return abs(v * n - round(v * n)) <= _GRID_TOL


def is_markov_for_grid(tmap: PiecewiseAffineMap, n_cells: int) -> bool:
    """Whether grid-constant densities on ``{j/n_cells}`` push forward exactly.

    Besides the branch domain and image endpoints, the image of every grid
    point inside a branch must be a grid point, otherwise a single cell maps
    onto a non-aligned interval.
    """
    n = int(n_cells)
    if n < 1:
        raise ValueError("n_cells must be positive")
    for b in tmap.branches:
        if not (_on_grid(b.lo, n) and _on_grid(b.hi, n)):
            return False
        j0, j1 = round(b.lo * n), round(b.hi * n)
        for j in range(j0, j1 + 1):
            if not _on_grid(b.slope * (j / n) + b.intercept, n):
                return False
    return True


def transfer_matrix(tmap: PiecewiseAffineMap, n_cells: int) -> np.ndarray:
    """Row-stochastic matrix ``P[j, k] = |cell_j ∩ T^{-1} cell_k| / |cell_j|``.

    Computed from the affine branch inverses with exact interval overlaps;
    no sampling.  Works on any grid; it represents the transfer operator
    exactly on grid-constant densities when :func:`is_markov_for_grid` holds.
    """
    n = int(n_cells)
    P = np.zeros((n, n))
    for b in tmap.branches:
        s = b.slope
        for j in range(n):
            a = max(b.lo, j / n)
            c = min(b.hi, (j + 1) / n)
            if c <= a:
                continue
            ya, yc = s * a + b.intercept, s * c + b.intercept
            lo, hi = min(ya, yc), max(ya, yc)
            k0 = max(int(np.floor(lo * n + 1e-9)), 0)
            k1 = min(int(np.ceil(hi * n - 1e-9)), n)
            for k in range(k0, k1):
                ov = min(hi, (k + 1) / n) - max(lo, k / n)
                if ov > 1e-15:
                    # preimage length of the overlap, relative to |cell_j|
                    P[j, k] += ov / abs(s) * n
    return P
