"""Decimation statistics: the sliced rotation kernel and the Jacobi spectral function.

Each logged rotation between levels at E_a and E_b deposits its weight twice,
once in cell (bin(E_a), bin(E_b)) and once in (bin(E_b), bin(E_a)); the
per-row kernel is the deposited weight divided by the number of rows in the
row bin, ``nu_I h_I``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .eth import EnergyGrid
from .hermitian import DecimationLog


@dataclass
class KernelTable:
    """``weights[s, I, K]``: symmetrized sum of event weights in slice s."""

    weights: np.ndarray
    counts: np.ndarray
    w_hi: np.ndarray
    w_lo: np.ndarray
    grid: EnergyGrid
    nu: np.ndarray
    mode: str = "exact"

    @property
    def n_slices(self) -> int:
        return self.weights.shape[0]

    def kernel(self, s: int) -> np.ndarray:
        """Per-row kernel ``Kr[I, K] = W[I, K] / (nu_I h_I)`` for slice s."""
        return self.weights[s] / (self.nu * self.grid.widths)[:, None]

    def total(self) -> np.ndarray:
        return self.weights.sum(axis=0)

    def coarsen(self, n_slices: int) -> "KernelTable":
        """Merge consecutive slices into ``n_slices`` groups (must divide evenly)."""
        S = self.n_slices
        if S % n_slices:
            raise ValueError("n_slices must divide the current slice count")
        g = S // n_slices
        sh = (n_slices, g) + self.weights.shape[1:]
        return KernelTable(self.weights.reshape(sh).sum(1), self.counts.reshape(sh).sum(1),
                           self.w_hi[::g].copy(), self.w_lo[g - 1::g].copy(),
                           self.grid, self.nu, self.mode)

    @classmethod
    def average(cls, tables) -> "KernelTable":
        """Cell-wise mean of tables built on a common grid and slice count."""
        t0 = tables[0]
        for t in tables[1:]:
            if t.weights.shape != t0.weights.shape or not np.allclose(t.grid.e_edges, t0.grid.e_edges):
                raise ValueError("kernel tables are not aligned")
        return cls(np.mean([t.weights for t in tables], 0), np.mean([t.counts for t in tables], 0),
                   np.mean([t.w_hi for t in tables], 0), np.mean([t.w_lo for t in tables], 0),
                   t0.grid, np.mean([t.nu for t in tables], 0), t0.mode)

    def to_csv(self, path) -> None:
        """Rows ``slice,w_hi,w_lo,E,delta,weight,count`` for nonzero cells.

        ``weight`` is the per-row kernel mass ``W / (nu h)``; ``delta = E - E'``.
        """
        c = self.grid.centers
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["slice", "w_hi", "w_lo", "E", "delta", "weight", "count"])
            for s in range(self.n_slices):
                Kr = self.kernel(s)
                for I, Kb in zip(*np.nonzero(self.counts[s])):
                    wr.writerow([s, repr(float(self.w_hi[s])), repr(float(self.w_lo[s])),
                                 repr(float(c[I])), repr(float(c[I] - c[Kb])),
                                 repr(float(Kr[I, Kb])), int(self.counts[s, I, Kb])])


def event_weights(log: DecimationLog, grid: EnergyGrid, small_angle: bool = False) -> np.ndarray:
    """sin^2(eta/2) per event, or ``w^2 / Delta_c^2`` with bin-center gaps (same-bin events get 0)."""
    if not small_angle:
        return np.sin(0.5 * log.eta) ** 2
    c = grid.centers
    d = c[grid.assign(log.E_a)] - c[grid.assign(log.E_b)]
    out = np.zeros(len(d))
    nz = d != 0
    out[nz] = log.w[nz] ** 2 / d[nz] ** 2
    return out


def slice_assignment(w, weight, n_slices: int, scheme: str = "weight"):
    """Slice index per event with slices ordered by descending w.

    ``scheme='count'`` gives equal event counts; ``'weight'`` equal cumulative
    weight.  Empty slices are allowed.
    """
    w = np.asarray(w, dtype=float)
    n = len(w)
    order = np.argsort(-w, kind="stable")
    if scheme == "count":
        cum = np.arange(1, n + 1, dtype=float)
    elif scheme == "weight":
        cum = np.cumsum(np.asarray(weight, dtype=float)[order])
        if cum[-1] <= 0:
            cum = np.arange(1, n + 1, dtype=float)
    else:
        raise ValueError(f"unknown slicing scheme {scheme!r}")
    targets = cum[-1] * np.arange(1, n_slices) / n_slices
    cuts = np.searchsorted(cum, targets, side="left") + 1  # first event of next slice
    cuts = np.clip(cuts, 0, n)
    sl_sorted = np.searchsorted(cuts, np.arange(n), side="right")
    out = np.empty(n, dtype=np.int64)
    out[order] = sl_sorted
    return out


def build_kernel_table(log: DecimationLog, nu, grid: EnergyGrid, n_slices: int = 32,
                       scheme: str = "weight", small_angle: bool = False) -> KernelTable:
    """Slice the log by descending w and accumulate symmetrized event weights per cell."""
    if log.n_total == 0:
        raise ValueError("empty decimation log")
    if n_slices < 4:
        raise ValueError("n_slices must be >= 4")
    M = grid.M
    wt = event_weights(log, grid, small_angle)
    sl = slice_assignment(log.w, wt, n_slices, scheme)
    I = grid.assign(log.E_a)
    Kb = grid.assign(log.E_b)
    W = np.zeros(n_slices * M * M)
    C = np.zeros(n_slices * M * M)
    for r, c in ((I, Kb), (Kb, I)):
        idx = (sl * M + r) * M + c
        W += np.bincount(idx, wt, minlength=W.size)
        C += np.bincount(idx, minlength=C.size)
    w_hi = np.full(n_slices, np.nan)
    w_lo = np.full(n_slices, np.nan)
    for s in range(n_slices):
        m = sl == s
        if m.any():
            w_hi[s] = log.w[m].max()
            w_lo[s] = log.w[m].min()
    return KernelTable(W.reshape(n_slices, M, M), C.reshape(n_slices, M, M), w_hi, w_lo,
                       grid, np.asarray(nu, dtype=float),
                       "small-angle" if small_angle else "exact")


def jacobi_spectral_function(log: DecimationLog, nu, grid: EnergyGrid, J: float,
                             cells: str = "pair") -> np.ndarray:
    """|f_Jac|^2 from event sums: ``J^2 f nu dE domega = sum w^2`` over both deposits.

    ``cells='pair'`` returns an (M, M) array on bin pairs; ``'rect'`` an
    (M, n_w) array on the grid's (E, omega) cells (partner gap E_b - E_a).
    """
    nu = np.asarray(nu, dtype=float)
    h = grid.widths
    w2 = log.w ** 2
    M = grid.M
    if J == 0 or log.n_total == 0:
        shape = (M, M) if cells == "pair" else (M, len(grid.w_edges) - 1)
        return np.zeros(shape)
    ia = grid.assign(log.E_a)
    ib = grid.assign(log.E_b)
    if cells == "pair":
        S = (np.bincount(ia * M + ib, w2, minlength=M * M)
             + np.bincount(ib * M + ia, w2, minlength=M * M)).reshape(M, M)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = S / (J ** 2 * nu[:, None] * h[:, None] * h[None, :])
        return np.where(nu[:, None] > 0, out, 0.0)
    we = grid.w_edges
    Mw = len(we) - 1
    S = np.zeros(M * Mw)
    for r, d in ((ia, log.E_b - log.E_a), (ib, log.E_a - log.E_b)):
        iw = np.searchsorted(we, d, side="right") - 1
        ok = (iw >= 0) & (iw < Mw)
        S += np.bincount(r[ok] * Mw + iw[ok], w2[ok], minlength=M * Mw)
    S = S.reshape(M, Mw)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = S / (J ** 2 * nu[:, None] * h[:, None] * np.diff(we)[None, :])
    return np.where(nu[:, None] > 0, out, 0.0)


@dataclass
class DenseRegimeReport:
    ratio: float
    status: str  # PASS | FAIL | INCONCLUSIVE
    n_cells: int
    window: tuple
    values: tuple


def window_moment(log: DecimationLog, N: int, grid: EnergyGrid, k1: float, k2: float):
    """Per-cell ``sum w^2 / (n_I h_delta)`` over events with ``k1 <= w sqrt(N) < k2``.

    Cells are (row energy bin, gap bin) on a fixed rectangular grid, so the
    values at different N are directly comparable.
    """
    x = log.w * np.sqrt(N)
    m = (x >= k1) & (x < k2)
    sub = log[m]
    E = np.concatenate([sub.E_a, sub.E_b])
    d = np.concatenate([sub.E_a - sub.E_b, sub.E_b - sub.E_a])
    w2 = np.concatenate([sub.w, sub.w]) ** 2
    ie = np.searchsorted(grid.e_edges, E, side="right") - 1
    iw = np.searchsorted(grid.w_edges, d, side="right") - 1
    Me, Mw = grid.M, len(grid.w_edges) - 1
    ok = (ie >= 0) & (ie < Me) & (iw >= 0) & (iw < Mw)
    S = np.bincount(ie[ok] * Mw + iw[ok], w2[ok], minlength=Me * Mw).reshape(Me, Mw)
    C = np.bincount(ie[ok] * Mw + iw[ok], minlength=Me * Mw).reshape(Me, Mw)
    return S, C, int(m.sum())


def dense_regime_check(log1: DecimationLog, N1: int, energies1, log2: DecimationLog, N2: int,
                       energies2, k1: float = 0.1, k2: float = np.inf, grid: EnergyGrid | None = None,
                       min_events: int = 16) -> DenseRegimeReport:
    """Compare ``int w^2 rho~ dw`` over the window ``w sqrt(N) in [k1, k2)`` at two sizes.

    Each size is normalized per row (level counts per energy bin), on a
    shared coarse (E, delta) grid.  The aggregate ratio over cells populated
    at both sizes must lie in [0.5, 2].
    """
    e1, e2 = np.asarray(energies1), np.asarray(energies2)
    if grid is None:
        lo = max(e1.min(), e2.min())
        hi = min(e1.max(), e2.max())
        span = hi - lo
        grid = EnergyGrid.uniform(lo, hi, 8, omega_max=span, n_w=16)
    vals = []
    masks = []
    for log, N, en in ((log1, N1, e1), (log2, N2, e2)):
        S, C, n_ev = window_moment(log, N, grid, k1, k2)
        rows = np.bincount(np.clip(np.searchsorted(grid.e_edges, en, side="right") - 1, 0, grid.M - 1),
                           minlength=grid.M).astype(float)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = S / (rows[:, None] * np.diff(grid.w_edges)[None, :])
        vals.append(np.where(rows[:, None] > 0, v, 0.0))
        masks.append((C >= min_events) & (rows[:, None] > 0))
    common = masks[0] & masks[1]
    if not common.any():
        return DenseRegimeReport(np.nan, "INCONCLUSIVE", 0, (k1, k2), (np.nan, np.nan))
    a, b = vals[0][common].sum(), vals[1][common].sum()
    ratio = float(b / a) if a > 0 else np.inf
    status = "PASS" if 0.5 <= ratio <= 2.0 else "FAIL"
    return DenseRegimeReport(ratio, status, int(common.sum()), (k1, k2), (float(a), float(b)))


def matrix_spectral_function(X2, energies, nu, grid: EnergyGrid, cells: str = "rect") -> np.ndarray:
    """Cell sums of squared magnitudes ``X2_ij`` (i != j) with the normalization of
    :func:`jacobi_spectral_function` at J = 1.

    Pass ``|V|**2`` for the realization's own spectral function, or
    ``f_V(omega_ij)**2 / nu`` for the generative one.
    """
    E = np.asarray(energies, dtype=float)
    X2 = np.array(X2, dtype=float)
    np.fill_diagonal(X2, 0.0)
    nu = np.asarray(nu, dtype=float)
    h = grid.widths
    M = grid.M
    ie = grid.assign(E)
    if cells == "pair":
        S = np.zeros((M, M))
        np.add.at(S, (ie[:, None], ie[None, :]), X2)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = S / (nu[:, None] * h[:, None] * h[None, :])
        return np.where(nu[:, None] > 0, out, 0.0)
    we = grid.w_edges
    Mw = len(we) - 1
    d = E[None, :] - E[:, None]
    iw = np.searchsorted(we, d, side="right") - 1
    ok = (iw >= 0) & (iw < Mw)
    rows = np.broadcast_to(ie[:, None], d.shape)
    S = np.bincount(rows[ok] * Mw + iw[ok], X2[ok], minlength=M * Mw).reshape(M, Mw)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = S / (nu[:, None] * h[:, None] * np.diff(we)[None, :])
    return np.where(nu[:, None] > 0, out, 0.0)
