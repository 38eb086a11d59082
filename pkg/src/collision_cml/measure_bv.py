"""Exact measure calculus for grid-constant densities on ``[0,1]^k``.

A :class:`GridDensity` is the density of an absolutely continuous signed
measure that is constant on the cells of the uniform ``n_cells``-grid.  For
such densities both norms have closed forms:

* total variation ``|mu| = integral of |h|``;
* bounded variation ``||mu|| = max_i sup_phi mu(d_i phi)`` over test
  functions with ``|phi| <= 1``, which is the directional variation of ``h``
  extended by zero outside the cube (boundary cells count with their
  absolute values).

Push-forwards under the local map and under the collision map are exact
whenever the grid is aligned with the map and the collision intervals.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _accel
from .lattice import CollisionSpec, LatticeGeometry
from .local_map import PiecewiseAffineMap, is_markov_for_grid, transfer_matrix

EXACT_TOL = 1e-12


class GridAlignmentError(ValueError):
    """The grid does not carry an exact push-forward."""


@dataclass(frozen=True, eq=False)
class GridDensity:
    coefficients: np.ndarray
    probability: bool = False

    def __post_init__(self) -> None:
        c = np.array(self.coefficients, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)
        if not 1 <= c.ndim <= 3:
            raise ValueError("only 1 to 3 sites are supported")
        if len(set(c.shape)) != 1:
            raise ValueError(f"coefficient array must be n_cells^k, got shape {c.shape}")
        if self.probability:
            if np.any(c < 0):
                raise ValueError("a probability density must be non-negative")
            if abs(self.integral() - 1.0) > EXACT_TOL:
                raise ValueError(f"a probability density must integrate to 1, got {self.integral()!r}")

    @property
    def k(self) -> int:
        return self.coefficients.ndim

    @property
    def n_cells(self) -> int:
        return self.coefficients.shape[0]

    @property
    def cell_volume(self) -> float:
        return float(self.n_cells) ** -self.k

    def integral(self) -> float:
        return float(self.coefficients.sum()) * self.cell_volume

    def __sub__(self, other: "GridDensity") -> "GridDensity":
        _same_grid(self, other)
        return GridDensity(self.coefficients - other.coefficients)

    def __add__(self, other: "GridDensity") -> "GridDensity":
        _same_grid(self, other)
        return GridDensity(self.coefficients + other.coefficients)

    def scaled(self, a: float) -> "GridDensity":
        return GridDensity(a * self.coefficients)


def _same_grid(a: GridDensity, b: GridDensity) -> None:
    if a.coefficients.shape != b.coefficients.shape:
        raise ValueError(f"grid mismatch: {a.coefficients.shape} vs {b.coefficients.shape}")


def uniform(k: int, n_cells: int) -> GridDensity:
    return GridDensity(np.ones((n_cells,) * k), probability=True)


@dataclass(frozen=True)
class NormReport:
    tv: float
    bv: float
    per_direction_variation: tuple[float, ...]


def tv_norm(mu: GridDensity) -> float:
    return float(np.abs(mu.coefficients).sum()) * mu.cell_volume


def directional_variation(mu: GridDensity, axis: int) -> float:
    c = mu.coefficients
    pad = [(0, 0)] * c.ndim
    pad[axis] = (1, 1)
    jumps = np.abs(np.diff(np.pad(c, pad), axis=axis)).sum()
    # each line is weighted by its transverse cell volume
    return float(jumps) * float(mu.n_cells) ** -(mu.k - 1)


def bv_norm(mu: GridDensity) -> NormReport:
    per = tuple(directional_variation(mu, a) for a in range(mu.k))
    return NormReport(tv_norm(mu), max(per), per)


# --------------------------------------------------------------------------
# push-forwards


def pushforward_f0(mu: GridDensity, tmap: PiecewiseAffineMap) -> GridDensity:
    """Density of the product map ``F0 = T x ... x T`` pushed forward."""
    if not is_markov_for_grid(tmap, mu.n_cells):
        raise GridAlignmentError(f"map {tmap.name} is not Markov for a {mu.n_cells}-cell grid")
    P = _cached_transfer(tmap, mu.n_cells)
    c = mu.coefficients
    for axis in range(mu.k):
        c = np.moveaxis(np.tensordot(c, P, axes=([axis], [0])), -1, axis)
    return GridDensity(c)


@functools.lru_cache(maxsize=32)
def _cached_transfer(tmap: PiecewiseAffineMap, n_cells: int) -> np.ndarray:
    P = transfer_matrix(tmap, n_cells)
    P.setflags(write=False)
    return P


def _check_small(spec: CollisionSpec, geom: LatticeGeometry, k: int, n_cells: int) -> None:
    if geom.n_sites != k:
        raise ValueError(f"geometry has {geom.n_sites} sites, density has {k}")
    if spec.dimension != geom.dimension:
        raise ValueError("collision spec and geometry disagree on the dimension")
    if not spec.aligned_with(n_cells):
        raise GridAlignmentError(f"collision interval endpoints are not on the {n_cells}-cell grid")


@functools.lru_cache(maxsize=64)
def cell_map(spec: CollisionSpec, geom: LatticeGeometry, n_cells: int, decouple_at: int | None = None) -> np.ndarray:
    """Flat target cell of every flat source cell under the collision map.

    Collision membership is constant on cells of an aligned grid, so the
    cell centre decides; the map acts on a cell by permuting coordinates.
    """
    k = geom.n_sites
    _check_small(spec, geom, k, n_cells)
    idx = np.indices((n_cells,) * k).reshape(k, -1).T
    centers = (idx + 0.5) / n_cells
    excluded = np.zeros(k, dtype=bool)
    if decouple_at is not None:
        excluded[geom.flat(decouple_at)] = True
    lo, hi = spec.arrays
    out = np.empty_like(centers)
    _accel.coupling_rows(centers, lo, hi, geom.neighbors, excluded, out)
    target = np.floor(out * n_cells).astype(np.int64)
    flat = np.ravel_multi_index(tuple(target.T), (n_cells,) * k)
    flat.setflags(write=False)
    return flat


def pushforward_phi(
    mu: GridDensity, spec: CollisionSpec, geom: LatticeGeometry, decouple_at: int | None = None
) -> GridDensity:
    """Exact density of the collision map (or its one-site decoupling) pushed forward."""
    target = cell_map(spec, geom, mu.n_cells, decouple_at)
    out = np.zeros(mu.coefficients.size)
    np.add.at(out, target, mu.coefficients.ravel())
    return GridDensity(out.reshape(mu.coefficients.shape))


def pushforward_f_eps(mu: GridDensity, tmap: PiecewiseAffineMap, spec: CollisionSpec, geom: LatticeGeometry) -> GridDensity:
    return pushforward_phi(pushforward_f0(mu, tmap), spec, geom)


def marginal(mu: GridDensity, keep_sites: Sequence[int]) -> GridDensity:
    keep = sorted(set(int(s) for s in keep_sites))
    if not keep or any(not 0 <= s < mu.k for s in keep):
        raise ValueError(f"keep_sites must be a nonempty subset of range({mu.k})")
    drop = tuple(a for a in range(mu.k) if a not in keep)
    c = mu.coefficients.sum(axis=drop) / float(mu.n_cells) ** len(drop) if drop else mu.coefficients
    return GridDensity(c)


def refine(mu: GridDensity, factor: int) -> GridDensity:
    c = mu.coefficients
    for axis in range(mu.k):
        c = np.repeat(c, factor, axis=axis)
    return GridDensity(c)


# --------------------------------------------------------------------------
# inequality checks


def sigma(tmap: PiecewiseAffineMap, d: int) -> float:
    """Contraction factor ``(4 + 4d) / lambda`` of the two-norm inequality."""
    return (4 + 4 * d) / tmap.lambda_min


@dataclass
class LYReport:
    sigma: float
    B_empirical: float
    passed: bool
    d: int
    lambda_min: float
    gap: float
    tv_in: list[float] = field(default_factory=list)
    tv_out: list[float] = field(default_factory=list)
    bv_in: list[float] = field(default_factory=list)
    bv_out: list[float] = field(default_factory=list)
    violation: int | None = None

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "B_empirical": self.B_empirical,
            "pass": self.passed,
            "d": self.d,
            "lambda_min": self.lambda_min,
            "gap": self.gap,
            "violating_sample": self.violation,
            "samples": [
                {"tv_in": a, "tv_out": b, "bv_in": c, "bv_out": e}
                for a, b, c, e in zip(self.tv_in, self.tv_out, self.bv_in, self.bv_out)
            ],
        }


def verify_lasota_yorke(
    tmap: PiecewiseAffineMap, spec: CollisionSpec, geom: LatticeGeometry, sample: Sequence[GridDensity]
) -> LYReport:
    """Check ``|F*mu| <= |mu|`` and estimate ``B`` in ``||F*mu|| <= sigma ||mu|| + B |mu| / gap``."""
    if not sample:
        raise ValueError("empty sample")
    d = geom.dimension
    rep = LYReport(sigma(tmap, d), 0.0, True, d, tmap.lambda_min, spec.gap)
    for i, mu in enumerate(sample):
        nu = pushforward_f_eps(mu, tmap, spec, geom)
        tv0, tv1 = tv_norm(mu), tv_norm(nu)
        bv0, bv1 = bv_norm(mu).bv, bv_norm(nu).bv
        rep.tv_in.append(tv0)
        rep.tv_out.append(tv1)
        rep.bv_in.append(bv0)
        rep.bv_out.append(bv1)
        if tv1 > tv0 + EXACT_TOL:
            rep.passed = False
            if rep.violation is None:
                rep.violation = i
        if tv0 > 0:
            rep.B_empirical = max(rep.B_empirical, spec.gap * (bv1 - rep.sigma * bv0) / tv0)
    rep.passed = rep.passed and bool(np.isfinite(rep.B_empirical))
    return rep


def empirical_b0(tmap: PiecewiseAffineMap, sample: Sequence[GridDensity]) -> tuple[float, bool]:
    """Smallest ``B0`` with ``||F0*mu|| <= 2/lambda ||mu|| + B0 |mu|`` on the sample,
    and whether ``|F0*mu| <= |mu|`` held throughout."""
    b0, ok = 0.0, True
    for mu in sample:
        nu = pushforward_f0(mu, tmap)
        ok &= tv_norm(nu) <= tv_norm(mu) + EXACT_TOL
        b0 = max(b0, (bv_norm(nu).bv - 2.0 / tmap.lambda_min * bv_norm(mu).bv) / tv_norm(mu))
    return b0, bool(ok)


def empirical_b1(
    spec: CollisionSpec, geom: LatticeGeometry, sample: Sequence[GridDensity], decouple_at: int | None = None
) -> tuple[float, bool]:
    """Smallest ``B1`` with ``||Phi*mu|| <= (2+2d) ||mu|| + B1 |mu| / gap`` on the sample,
    and whether ``|Phi*mu| <= |mu|`` held throughout."""
    d = geom.dimension
    b1, ok = 0.0, True
    for mu in sample:
        nu = pushforward_phi(mu, spec, geom, decouple_at)
        ok &= tv_norm(nu) <= tv_norm(mu) + EXACT_TOL
        b1 = max(b1, spec.gap * (bv_norm(nu).bv - (2 + 2 * d) * bv_norm(mu).bv) / tv_norm(mu))
    return b1, bool(ok)


def coupling_bound_violations(
    spec: CollisionSpec, geom: LatticeGeometry, sample: Sequence[GridDensity], B1: float, decouple_at: int | None = None
) -> list[int]:
    """Indices where ``||Phi*mu|| <= (2+2d)||mu|| + B1 |mu| / gap`` fails beyond rounding."""
    d = geom.dimension
    bad = []
    for i, mu in enumerate(sample):
        lhs = bv_norm(pushforward_phi(mu, spec, geom, decouple_at)).bv
        rhs = (2 + 2 * d) * bv_norm(mu).bv + B1 * tv_norm(mu) / spec.gap
        if lhs > rhs + EXACT_TOL:
            bad.append(i)
    return bad


@dataclass
class DecouplingReport:
    worst_ratio: float
    passed: bool
    epsilon: float
    site: int
    tv_diff: list[float] = field(default_factory=list)
    bound: list[float] = field(default_factory=list)
    violation: int | None = None

    def to_dict(self) -> dict:
        return {
            "worst_ratio": self.worst_ratio,
            "pass": self.passed,
            "epsilon": self.epsilon,
            "site": self.site,
            "violating_sample": self.violation,
            "samples": [{"tv_diff": a, "bound": b} for a, b in zip(self.tv_diff, self.bound)],
        }


def decoupling_difference(mu: GridDensity, spec: CollisionSpec, geom: LatticeGeometry, site: int) -> GridDensity:
    return pushforward_phi(mu, spec, geom) - pushforward_phi(mu, spec, geom, decouple_at=site)


def verify_decoupling(
    spec: CollisionSpec, geom: LatticeGeometry, site: int, sample: Sequence[GridDensity]
) -> DecouplingReport:
    """Check ``|Phi*mu - Phi_site*mu| <= 4 d eps ||mu||`` on every sample density."""
    if not sample:
        raise ValueError("empty sample")
    d = geom.dimension
    rep = DecouplingReport(0.0, True, spec.epsilon, geom.flat(site))
    for i, mu in enumerate(sample):
        g = tv_norm(decoupling_difference(mu, spec, geom, site))
        bound = 4 * d * spec.epsilon * bv_norm(mu).bv
        rep.tv_diff.append(g)
        rep.bound.append(bound)
        if g > bound + EXACT_TOL:
            rep.passed = False
            if rep.violation is None:
                rep.violation = i
        if bound > 0:
            rep.worst_ratio = max(rep.worst_ratio, g / bound)
    return rep


def decoupling_scaling(
    specs: Sequence[CollisionSpec], geom: LatticeGeometry, site: int, sample: Sequence[GridDensity]
) -> tuple[np.ndarray, np.ndarray]:
    """Decoupling error over an epsilon sweep and its log-log slope per density.

    Returns ``(diffs, slopes)`` with ``diffs[i, s]`` the total variation of
    ``Phi*mu_i - Phi_site*mu_i`` under ``specs[s]``.  Densities with a zero
    difference somewhere in the sweep get a NaN slope.
    """
    eps = np.array([s.epsilon for s in specs], dtype=float)
    if len(eps) < 2 or np.any(eps <= 0):
        raise ValueError("the sweep needs at least two positive epsilons")
    diffs = np.array([[tv_norm(decoupling_difference(mu, s, geom, site)) for s in specs] for mu in sample])
    slopes = np.full(len(sample), np.nan)
    for i, row in enumerate(diffs):
        if np.all(row > 0):
            slopes[i] = np.polyfit(np.log(eps), np.log(row), 1)[0]
    return diffs, slopes


# --------------------------------------------------------------------------
# samples and files


def random_density(k: int, n_cells: int, rng: np.random.Generator) -> GridDensity:
    """Random grid-constant density of unit total variation.

    The density is constant on blocks of a coarser grid whose resolution is
    a random divisor of ``n_cells``, so the sample spans everything from
    constants to cell-scale noise; half of the draws are signed.
    """
    divisors = [m for m in range(1, n_cells + 1) if n_cells % m == 0]
    m = int(rng.choice(divisors))
    if rng.random() < 0.5:
        coarse = np.abs(1.0 + rng.random() * rng.standard_normal((m,) * k))
    else:
        coarse = rng.uniform(-1, 1) + rng.random() * rng.standard_normal((m,) * k)
    c = coarse
    for axis in range(k):
        c = np.repeat(c, n_cells // m, axis=axis)
    mu = GridDensity(c)
    tv = tv_norm(mu)
    return mu.scaled(1.0 / tv) if tv > 0 else uniform(k, n_cells)


def random_sample(k: int, n_cells: int, count: int, rng: np.random.Generator) -> list[GridDensity]:
    return [random_density(k, n_cells, rng) for _ in range(count)]


def save_density(mu: GridDensity, path: str | Path) -> None:
    """One coefficient per line (C order) after a ``# grid_density k=.. n_cells=..`` header."""
    lines = [f"# grid_density k={mu.k} n_cells={mu.n_cells}"]
    lines += [repr(float(v)) for v in mu.coefficients.ravel()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_density(path: str | Path) -> GridDensity:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# grid_density"):
        raise ValueError(f"{path}: missing '# grid_density' header")
    fields = dict(tok.split("=") for tok in text[0].split()[2:])
    try:
        k, n = int(fields["k"]), int(fields["n_cells"])
    except KeyError as exc:
        raise ValueError(f"{path}: header lacks {exc.args[0]}") from None
    vals = np.array([float(v) for v in text[1:] if v.strip()])
    if vals.size != n ** k:
        raise ValueError(f"{path}: expected {n ** k} coefficients, found {vals.size}")
    return GridDensity(vals.reshape((n,) * k))
