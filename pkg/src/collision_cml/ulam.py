"""Ulam discretization of transfer operators and their leading spectrum."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .lattice import CollisionSpec, LatticeGeometry
from .local_map import PiecewiseAffineMap, is_markov_for_grid, transfer_matrix
from .measure_bv import GridAlignmentError, GridDensity, cell_map

ROW_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class UlamMatrix:
    """Row-stochastic cell-to-cell transition matrix on a product grid.

    ``matrix[j, k]`` is the fraction of cell ``j`` that lands in cell ``k``;
    a density row vector evolves by ``p -> p @ matrix``.
    """

    matrix: sp.csr_matrix
    n_cells: int
    k: int

    def __post_init__(self) -> None:
        m = self.matrix
        if m.shape != (self.dimension, self.dimension):
            raise ValueError(f"matrix shape {m.shape} does not match {self.n_cells}^{self.k} cells")
        if m.nnz and m.data.min() < 0:
            raise ValueError("Ulam matrices are non-negative")
        rs = np.asarray(m.sum(axis=1)).ravel()
        if np.max(np.abs(rs - 1.0)) > ROW_TOL:
            raise ValueError("Ulam matrix is not row-stochastic")

    @property
    def dimension(self) -> int:
        return self.n_cells ** self.k

    @property
    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def apply(self, p: np.ndarray) -> np.ndarray:
        return self.matrix.T @ p

    def coo_text(self) -> str:
        """``row col value`` per line, zero-based, after a ``# ulam`` header."""
        coo = self.matrix.tocoo()
        lines = [f"# ulam n_cells={self.n_cells} k={self.k} nnz={coo.nnz}"]
        lines += [f"{r} {c} {float(v)!r}" for r, c, v in zip(coo.row, coo.col, coo.data)]
        return "\n".join(lines) + "\n"

    def save_coo(self, path: str | Path) -> None:
        Path(path).write_text(self.coo_text())


def load_coo(path: str | Path) -> UlamMatrix:
    """Read a matrix written by :meth:`UlamMatrix.save_coo`; other ``#`` lines are ignored."""
    lines = Path(path).read_text().splitlines()
    head = [ln for ln in lines if ln.startswith("# ulam")]
    if not head:
        raise ValueError(f"{path}: missing '# ulam' header")
    fields = dict(tok.split("=") for tok in head[0].split()[2:])
    n, k = int(fields["n_cells"]), int(fields["k"])
    rows, cols, vals = [], [], []
    for ln in lines:
        if not ln.strip() or ln.startswith("#"):
            continue
        r, c, v = ln.split()
        rows.append(int(r))
        cols.append(int(c))
        vals.append(float(v))
    dim = n ** k
    return UlamMatrix(sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim)), n, k)


def build_ulam_single(tmap: PiecewiseAffineMap, n_cells: int) -> UlamMatrix:
    if n_cells < 2:
        raise ValueError("n_cells must be at least 2")
    return UlamMatrix(sp.csr_matrix(transfer_matrix(tmap, n_cells)), n_cells, 1)


def build_ulam_coupled(
    tmap: PiecewiseAffineMap, spec: CollisionSpec, geom: LatticeGeometry, n_cells: int
) -> UlamMatrix:
    """Exact matrix of ``F = Phi o F0`` on grid-constant densities of 2 or 3 sites."""
    k = geom.n_sites
    if k not in (2, 3):
        raise ValueError("coupled Ulam matrices are limited to 2 or 3 sites")
    if not is_markov_for_grid(tmap, n_cells):
        raise GridAlignmentError(f"map {tmap.name} is not Markov for a {n_cells}-cell grid")
    if not spec.aligned_with(n_cells):
        raise GridAlignmentError(f"collision intervals are not on the {n_cells}-cell grid")
    P = sp.csr_matrix(transfer_matrix(tmap, n_cells))
    tensor = P
    for _ in range(k - 1):
        tensor = sp.kron(tensor, P, format="csr")
    target = cell_map(spec, geom, n_cells)
    dim = n_cells ** k
    perm = sp.csr_matrix((np.ones(dim), (np.arange(dim), target)), shape=(dim, dim))
    return UlamMatrix((tensor @ perm).tocsr(), n_cells, k)


@dataclass(frozen=True, eq=False)
class SpectralReport:
    stationary: GridDensity
    leading_eigenvalue: float
    second_modulus: float
    gap: float
    iterations: int
    residual: float
    converged: bool
    mixing: bool

    def to_dict(self) -> dict:
        return {
            "leading_eigenvalue": self.leading_eigenvalue,
            "second_modulus": self.second_modulus,
            "gap": self.gap,
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "mixing": self.mixing,
            "stationary": self.stationary.coefficients.ravel().tolist(),
        }


class ConvergenceError(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"power iteration did not converge in {iterations} iterations (last residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


def _to_density(p: np.ndarray, U: UlamMatrix) -> GridDensity:
    p = np.clip(p, 0.0, None)
    p = p / p.sum()
    return GridDensity((p * U.dimension).reshape((U.n_cells,) * U.k))


def _second_modulus(U: UlamMatrix, tol: float, max_iter: int, rng: np.random.Generator) -> tuple[float, int]:
    """Subdominant modulus by block power iteration on zero-sum vectors.

    Zero-sum vectors form an invariant complement of the stationary
    direction.  A small orthonormal block is iterated there and the
    eigenvalues of the projected block matrix (Rayleigh-Ritz) give the
    modulus; a block resolves complex pairs and near ties that make the
    norm growth of a single vector oscillate.
    """
    dim = U.dimension
    p = min(4, dim - 1)
    if p < 1:
        return 0.0, 0
    V = rng.standard_normal((dim, p))
    V -= V.mean(axis=0)
    V, _ = np.linalg.qr(V)
    prev = np.inf
    est = 0.0
    for it in range(1, max_iter + 1):
        W = np.asarray(U.apply(V))
        W -= W.mean(axis=0)  # keep rounding from leaking into the stationary mode
        H = V.T @ W
        est = float(np.max(np.abs(np.linalg.eigvals(H))))
        Q, R = np.linalg.qr(W)
        # columns annihilated to rounding level carry no spectrum; QR would
        # refill them with arbitrary directions outside the zero-sum space
        keep = np.abs(np.diag(R)) > 1e-13
        if not keep.any():
            return 0.0, it
        if abs(est - prev) < tol:
            return est, it
        prev = est
        V = Q[:, keep]
    return est, max_iter


def stationary_density(
    U: UlamMatrix,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    start: np.ndarray | None = None,
    seed: int = 0,
    raise_on_failure: bool = False,
) -> SpectralReport:
    """Power iteration of the density evolution from the uniform (or given) start.

    Stops when successive iterates are closer than ``tol`` in L1.  The
    subdominant modulus comes from power iteration restricted to zero-sum
    vectors, using the geometric mean growth over a short window so that
    complex pairs do not stall the estimate.
    """
    dim = U.dimension
    p = np.full(dim, 1.0 / dim) if start is None else np.asarray(start, dtype=float).ravel().copy()
    if p.size != dim or np.any(p < 0) or p.sum() <= 0:
        raise ValueError("start must be a non-negative vector over the cells")
    p /= p.sum()
    residual = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        q = U.apply(p)
        q /= q.sum()
        residual = float(np.abs(q - p).sum())
        p = q
        if residual < tol:
            break
    converged = residual < tol
    if not converged and raise_on_failure:
        raise ConvergenceError(it, residual)
    lead = float(U.apply(p).sum() / p.sum())
    second, _ = _second_modulus(U, tol, max_iter, np.random.default_rng(seed))
    second = min(second, 1.0)
    gap = 1.0 - second
    return SpectralReport(_to_density(p, U), lead, second, gap, it, residual, converged, gap > 1e-8)


def compare_with_empirical(report: SpectralReport, histogram: GridDensity) -> float:
    """L1 distance between the Ulam stationary density and an empirical one."""
    a, b = report.stationary, histogram
    if a.coefficients.shape != b.coefficients.shape:
        raise ValueError(f"grid mismatch: {a.coefficients.shape} vs {b.coefficients.shape}")
    return float(np.abs(a.coefficients - b.coefficients).sum()) * a.cell_volume


def l1_distance(a: GridDensity, b: GridDensity) -> float:
    if a.coefficients.shape != b.coefficients.shape:
        raise ValueError("grid mismatch")
    return float(np.abs(a.coefficients - b.coefficients).sum()) * a.cell_volume
