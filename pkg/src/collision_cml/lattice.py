"""Finite periodic lattices of interval maps coupled by collisions.

The state is a float array whose shape is the lattice side lengths.  Sites
are addressed either by their multi-index or by the flat C-order index.
Directions are numbered ``m = 0, 1, 2, ...`` for ``+e1, -e1, +e2, -e2, ...``
so that ``m ^ 1`` is the opposite direction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from . import _accel
from .local_map import PiecewiseAffineMap

Site = tuple[int, ...]


def direction_label(m: int) -> str:
    return f"{'+' if m % 2 == 0 else '-'}{m // 2 + 1}"


def direction_vector(m: int, d: int) -> tuple[int, ...]:
    v = [0] * d
    v[m // 2] = 1 if m % 2 == 0 else -1
    return tuple(v)


@dataclass(frozen=True)
class LatticeGeometry:
    """Torus ``(Z/L_1) x ... x (Z/L_d)``, or a small open chain / ring.

    ``boundary="periodic"`` is the lattice proper and needs every side to be
    at least 3.  Two small layouts exist for exact finite-dimensional work:
    ``"open"`` (a path, end sites lack a neighbour) and ``"ring2"``, the
    two-site ring in which both neighbours of a site are the other site.
    """

    dimension: int
    side_lengths: tuple[int, ...]
    boundary: str = "periodic"
    neighbors: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        sides = tuple(int(s) for s in self.side_lengths)
        object.__setattr__(self, "side_lengths", sides)
        d = int(self.dimension)
        if d < 1 or len(sides) != d:
            raise ValueError(f"need {d} side lengths for dimension {d}, got {sides}")
        if self.boundary == "periodic":
            if any(s < 3 for s in sides):
                raise ValueError("periodic side lengths must be >= 3 so the 2d neighbours are distinct")
        elif self.boundary == "open":
            if any(s < 1 for s in sides):
                raise ValueError("side lengths must be positive")
        elif self.boundary == "ring2":
            if d != 1 or sides != (2,):
                raise ValueError("the 'ring2' layout is the one-dimensional two-site ring")
        else:
            raise ValueError(f"unknown boundary {self.boundary!r}")
        object.__setattr__(self, "neighbors", self._build_neighbors())

    @classmethod
    def chain(cls, n_sites: int, boundary: str = "periodic") -> "LatticeGeometry":
        if boundary == "periodic" and n_sites == 2:
            boundary = "ring2"
        return cls(1, (n_sites,), boundary)

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.side_lengths))

    @property
    def n_directions(self) -> int:
        return 2 * self.dimension

    def flat(self, site) -> int:
        if isinstance(site, (int, np.integer)):
            if not 0 <= site < self.n_sites:
                raise ValueError(f"site {site} outside the lattice")
            return int(site)
        site = tuple(int(c) for c in site)
        if len(site) != self.dimension or any(not 0 <= c < s for c, s in zip(site, self.side_lengths)):
            raise ValueError(f"site {site} outside the lattice")
        return int(np.ravel_multi_index(site, self.side_lengths))

    def multi(self, flat: int) -> Site:
        return tuple(int(c) for c in np.unravel_index(int(flat), self.side_lengths))

    def _build_neighbors(self) -> np.ndarray:
        nbr = np.full((self.n_sites, self.n_directions), -1, dtype=np.int64)
        for i in range(self.n_sites):
            c = self.multi(i)
            for m in range(self.n_directions):
                k, step = m // 2, (1 if m % 2 == 0 else -1)
                q = list(c)
                q[k] += step
                if self.boundary == "open":
                    if not 0 <= q[k] < self.side_lengths[k]:
                        continue
                else:
                    q[k] %= self.side_lengths[k]
                nbr[i, m] = self.flat(tuple(q))
        return nbr

    def shift_index(self, offset: Sequence[int] | int) -> np.ndarray:
        """Flat index array ``idx`` with ``idx[i] = i + offset`` (periodic)."""
        off = (offset,) if isinstance(offset, (int, np.integer)) else tuple(offset)
        if len(off) != self.dimension:
            raise ValueError(f"offset {off} has wrong dimension")
        grid = np.indices(self.side_lengths).reshape(self.dimension, -1)
        shifted = [(g + o) % s for g, o, s in zip(grid, off, self.side_lengths)]
        return np.ravel_multi_index(shifted, self.side_lengths)


@dataclass(frozen=True)
class CollisionSpec:
    """Collision intervals ``A_v = (lo_v, lo_v + epsilon)``, one per direction.

    ``gap`` is the minimal distance between two distinct intervals.  An
    ``epsilon`` of 0 yields empty intervals, i.e. no coupling at all.
    """

    epsilon: float
    lows: tuple[float, ...]
    gap: float = field(init=False)

    def __post_init__(self) -> None:
        eps = float(self.epsilon)
        lows = tuple(float(v) for v in self.lows)
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "lows", lows)
        if eps < 0:
            raise ValueError("epsilon must be non-negative")
        if len(lows) < 2 or len(lows) % 2:
            raise ValueError("need one interval per direction (an even number, at least 2)")
        ivs = sorted((lo, lo + eps) for lo in lows)
        if ivs[0][0] <= 0.0 or ivs[-1][1] >= 1.0:
            raise ValueError("collision intervals must lie inside (0, 1)")
        gaps = [b[0] - a[1] for a, b in zip(ivs, ivs[1:])]
        gap = min(gaps)
        if gap <= 0:
            raise ValueError("collision intervals must be pairwise disjoint with positive gap")
        object.__setattr__(self, "gap", gap)

    @classmethod
    def default(cls, epsilon: float, dimension: int = 1) -> "CollisionSpec":
        """Placement that keeps the gap bounded away from 0 as epsilon -> 0.

        ``d = 1``: ``A_{+1} = (0.2, 0.2 + eps)`` and ``A_{-1} = (0.7, 0.7 + eps)``.
        Otherwise the ``2d`` left endpoints are ``0.1 + 0.8 m / (2d)``.
        """
        if dimension == 1:
            return cls(epsilon, (0.2, 0.7))
        n = 2 * dimension
        return cls(epsilon, tuple(0.1 + 0.8 * m / n for m in range(n)))

    @property
    def dimension(self) -> int:
        return len(self.lows) // 2

    @property
    def intervals(self) -> dict[str, tuple[float, float]]:
        return {direction_label(m): (lo, lo + self.epsilon) for m, lo in enumerate(self.lows)}

    @property
    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array(self.lows)
        return lo, lo + self.epsilon

    def aligned_with(self, n_cells: int, tol: float = 1e-9) -> bool:
        ends = [v for lo in self.lows for v in (lo, lo + self.epsilon)]
        return all(abs(v * n_cells - round(v * n_cells)) <= tol for v in ends)

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "intervals": {k: list(v) for k, v in self.intervals.items()}, "gap": self.gap}


@dataclass(frozen=True)
class CollisionPairList:
    """Colliding pairs ``(site, direction)`` with positive direction, so the
    partner is ``site + e_k``.  No site appears twice."""

    pairs: tuple[tuple[Site, str], ...]

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def sites(self) -> list[Site]:
        return [p[0] for p in self.pairs]


def _check(state: np.ndarray, geom: LatticeGeometry) -> np.ndarray:
    x = np.asarray(state, dtype=float)
    if x.size != geom.n_sites:
        raise ValueError(f"state has {x.size} entries, lattice has {geom.n_sites} sites")
    if np.any(~((x >= 0.0) & (x <= 1.0))):
        raise ValueError("lattice state entries must lie in [0, 1]")
    return x


def _check_spec(spec: CollisionSpec, geom: LatticeGeometry) -> None:
    if spec.dimension != geom.dimension:
        raise ValueError(f"collision spec is for d={spec.dimension}, lattice has d={geom.dimension}")


def _couple(y_flat: np.ndarray, spec: CollisionSpec, geom: LatticeGeometry, excluded: np.ndarray):
    lo, hi = spec.arrays
    out = np.empty_like(y_flat)
    codes = np.zeros(y_flat.shape[0], dtype=np.int8)
    _accel.coupling_once(y_flat, lo, hi, geom.neighbors, excluded, out, codes)
    return out, codes


def pairs_from_codes(codes: np.ndarray, geom: LatticeGeometry) -> CollisionPairList:
    """Canonical pair list from the per-site partner codes of one step."""
    pairs = []
    for i in np.flatnonzero(codes):
        m = int(codes[i]) - 1
        if m % 2 == 0:
            pairs.append((geom.multi(i), direction_label(m)))
    return CollisionPairList(tuple(pairs))


def uncoupled_step(state, tmap: PiecewiseAffineMap) -> np.ndarray:
    x = np.asarray(state, dtype=float)
    if np.any(~((x >= 0.0) & (x <= 1.0))):
        raise ValueError("lattice state entries must lie in [0, 1]")
    return _accel.map_eval(x.ravel(), *tmap.arrays).reshape(x.shape)


def detect_collision_pairs(state, spec: CollisionSpec, geom: LatticeGeometry) -> CollisionPairList:
    x = _check(state, geom)
    _check_spec(spec, geom)
    _, codes = _couple(x.ravel(), spec, geom, np.zeros(geom.n_sites, dtype=bool))
    pl = pairs_from_codes(codes, geom)
    seen = [s for (site, lab) in pl for s in (site, geom.multi(geom.neighbors[geom.flat(site), _label_index(lab)]))]
    assert len(seen) == len(set(seen)), "a site took part in two collisions"
    return pl


def _label_index(label: str) -> int:
    k = int(label[1:]) - 1
    return 2 * k + (0 if label[0] == "+" else 1)


def coupling_apply(state, spec: CollisionSpec, geom: LatticeGeometry) -> np.ndarray:
    """The collision map: colliding neighbours swap values, all at once."""
    x = _check(state, geom)
    _check_spec(spec, geom)
    out, _ = _couple(x.ravel(), spec, geom, np.zeros(geom.n_sites, dtype=bool))
    return out.reshape(x.shape)


def decoupled_coupling_apply(state, spec: CollisionSpec, geom: LatticeGeometry, site) -> np.ndarray:
    """Collision map with ``site`` cut out of every collision.

    Equivalent to the case-wise definition: ``site`` keeps its value, and a
    neighbour whose only possible partner was ``site`` keeps its value too.
    """
    x = _check(state, geom)
    _check_spec(spec, geom)
    excluded = np.zeros(geom.n_sites, dtype=bool)
    excluded[geom.flat(site)] = True
    out, _ = _couple(x.ravel(), spec, geom, excluded)
    return out.reshape(x.shape)


def step(state, tmap: PiecewiseAffineMap, spec: CollisionSpec, geom: LatticeGeometry) -> np.ndarray:
    return coupling_apply(uncoupled_step(state, tmap), spec, geom)


@dataclass
class TrajectorySummary:
    final_state: np.ndarray
    collisions_per_step: np.ndarray
    n_steps: int

    @property
    def total_collisions(self) -> int:
        return int(self.collisions_per_step.sum())


Observer = Callable[[int, np.ndarray, CollisionPairList], None]


@dataclass
class Simulation:
    """A reproducible orbit of the coupled lattice, produced in chunks.

    With ``dither`` on, each application of the local map refills the
    trailing bits that the expansion pushed out of the double mantissa with
    fresh uniform bits drawn from ``seed``; without it, a finite-precision
    orbit of ``x -> 10 x mod 1`` collapses onto 0 within a few dozen steps.
    ``burn_in`` steps are run and discarded before time 0.
    """

    tmap: PiecewiseAffineMap
    spec: CollisionSpec | None
    geom: LatticeGeometry
    n_steps: int
    seed: int | np.random.SeedSequence | None = None
    initial: np.ndarray | None = None
    burn_in: int = 0
    dither: bool = True
    chunk_size: int = 8192

    def __post_init__(self) -> None:
        if self.n_steps < 0 or self.burn_in < 0:
            raise ValueError("step counts must be non-negative")
        if self.spec is not None:
            _check_spec(self.spec, self.geom)

    def _kernel_args(self):
        if self.spec is None:
            lo = np.zeros(2 * self.geom.dimension)
            hi = lo.copy()
        else:
            lo, hi = self.spec.arrays
        return lo, hi

    def chunks(self) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
        """Yield ``(t0, states, codes)``; ``states[r]`` is the state at time ``t0 + r + 1``."""
        rng = np.random.default_rng(self.seed)
        n = self.geom.n_sites
        if self.initial is None:
            x = rng.random(n)
        else:
            x = _check(self.initial, self.geom).ravel().copy()
        lo, hi = self._kernel_args()
        excluded = np.zeros(n, dtype=bool)
        args = (*self.tmap.arrays, lo, hi, self.geom.neighbors, excluded)
        no_dither = np.empty((0, n))

        def advance(x, length):
            states = np.empty((length, n))
            codes = np.empty((length, n), dtype=np.int8)
            u = rng.random((length, n)) if self.dither else no_dither
            x = _accel.lattice_chunk(x, *args, u, states, codes)
            return x, states, codes

        left = self.burn_in
        while left:
            k = min(left, self.chunk_size)
            x, _, _ = advance(x, k)
            left -= k
        t = 0
        while t < self.n_steps:
            k = min(self.n_steps - t, self.chunk_size)
            x, states, codes = advance(x, k)
            yield t, states, codes
            t += k

    def states(self) -> np.ndarray:
        """Whole orbit ``x_1 .. x_n`` as an ``(n_steps, n_sites)`` array."""
        out = np.empty((self.n_steps, self.geom.n_sites))
        for t0, s, _ in self.chunks():
            out[t0:t0 + len(s)] = s
        return out


def run_trajectory(
    initial,
    tmap: PiecewiseAffineMap,
    spec: CollisionSpec,
    geom: LatticeGeometry,
    n_steps: int,
    observers: Sequence[Observer] = (),
    *,
    dither: bool = False,
    seed=None,
) -> TrajectorySummary:
    """Iterate the coupled map, calling every observer once per step.

    Observers receive ``(t, state, pairs)`` with ``t`` starting at 1.
    """
    x0 = _check(initial, geom)
    sim = Simulation(tmap, spec, geom, int(n_steps), seed=seed, initial=x0, dither=dither)
    counts = np.zeros(int(n_steps), dtype=np.int64)
    final = x0.copy()
    for t0, states, codes in sim.chunks():
        # each collision marks both of its sites
        counts[t0:t0 + len(states)] = np.count_nonzero(codes, axis=1) // 2
        for r in range(len(states)) if observers else ():
            t = t0 + r + 1
            st = states[r].reshape(x0.shape)
            pl = pairs_from_codes(codes[r], geom)
            for obs in observers:
                try:
                    obs(t, st, pl)
                except Exception as exc:
                    raise RuntimeError(f"observer {obs!r} failed at step {t}: {exc}") from exc
        final = states[-1].reshape(x0.shape).copy()
    return TrajectorySummary(final, counts, int(n_steps))


def iter_states(sim: Simulation) -> Iterator[np.ndarray]:
    for _, states, _ in sim.chunks():
        yield from states


def random_states(rng: np.random.Generator, geom: LatticeGeometry, count: int) -> np.ndarray:
    return rng.random((count, *geom.side_lengths))


def adversarial_states(spec: CollisionSpec, geom: LatticeGeometry, rng: np.random.Generator, count: int) -> np.ndarray:
    """States whose every coordinate lies inside some collision interval."""
    lo, hi = spec.arrays
    m = rng.integers(0, len(lo), size=(count, geom.n_sites))
    u = rng.random((count, geom.n_sites))
    x = lo[m] + u * (hi[m] - lo[m])
    return x.reshape(count, *geom.side_lengths)


__all__ = [
    "LatticeGeometry",
    "CollisionSpec",
    "CollisionPairList",
    "TrajectorySummary",
    "Simulation",
    "uncoupled_step",
    "detect_collision_pairs",
    "coupling_apply",
    "decoupled_coupling_apply",
    "step",
    "run_trajectory",
    "pairs_from_codes",
    "direction_label",
    "direction_vector",
]
