"""Binned ETH form factors.

Two discretizations are used:

* bin-pair cells ``(I, J)``: rows and partners both binned on the same
  energy grid, with ``omega_IJ = E_J - E_I`` taken from bin centers.  The flow
  solver works exclusively on this representation, so shifts ``E -> E - Delta``
  map cells onto cells and no interpolation is needed.
* rectangular ``(E, omega)`` cells for dumps and spectral-function plots.

Normalizations (h_I bin widths, n_I bin counts, nu_I = n_I / h_I)::

    p_I                = sum_{i in I} rho_ii / h_I
    A_I                = mean_{i in I} A_ii
    B_IJ h_I h_J       = sum_{i in I, j in J, i != j} rho_ij A_ji
    nu_I f2_IJ h_I h_J = sum_{i in I, j in J, i != j} |A_ij|**2
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr


@dataclass
class EnergyGrid:
    """Energy bins; optional omega bins for rectangular (E, omega) dumps."""

    e_edges: np.ndarray
    w_edges: np.ndarray | None = None
    n_bin: int | None = None  # set for count-based grids
    starts: np.ndarray | None = None  # rank of the first member of each bin (count grids)

    def __post_init__(self):
        self.e_edges = np.asarray(self.e_edges, dtype=float)
        if np.any(np.diff(self.e_edges) <= 0):
            raise ValueError("energy edges must be strictly increasing")
        if self.w_edges is not None:
            self.w_edges = np.asarray(self.w_edges, dtype=float)
            if np.any(np.diff(self.w_edges) <= 0):
                raise ValueError("omega edges must be strictly increasing")

    @classmethod
    def by_count(cls, energies, n_bin: int = 4, w_edges=None, breaks=()) -> "EnergyGrid":
        """Groups of ``n_bin`` consecutive sorted levels (last group may be smaller).

        Interior edges sit midway between neighbouring groups; the outer
        edges extend half a level spacing beyond the extreme levels.
        ``breaks`` are sorted-level ranks that must start a new group; the
        counting restarts there, so groups just before a break may be short.
        """
        E = np.sort(np.asarray(energies, dtype=float))
        n = len(E)
        if n_bin < 1 or n < 2:
            raise ValueError("need n_bin >= 1 and at least two levels")
        seg = np.unique(np.concatenate([[0], np.asarray(breaks, dtype=np.int64), [n]]))
        seg = seg[(seg >= 0) & (seg <= n)]
        cuts = np.concatenate([np.arange(a, b, n_bin)[1:] if a == 0 else np.arange(a, b, n_bin)
                               for a, b in zip(seg[:-1], seg[1:])]).astype(np.int64)
        inner = 0.5 * (E[cuts - 1] + E[cuts])
        lo = E[0] - 0.5 * (E[1] - E[0])
        hi = E[-1] + 0.5 * (E[-1] - E[-2])
        edges = np.concatenate([[lo], inner, [hi]])
        if np.any(np.diff(edges) <= 0):
            raise ValueError("degenerate levels produce an empty bin; increase n_bin")
        return cls(edges, w_edges, n_bin, np.concatenate([[0], cuts]).astype(np.int64))

    @classmethod
    def by_count_for_state(cls, energies, rho_diag, n_bin: int = 4, w_edges=None) -> "EnergyGrid":
        """Count grid whose groups never straddle a jump of the diagonal weights ``rho_diag``."""
        E = np.asarray(energies, dtype=float)
        order = np.argsort(E, kind="stable")
        r = np.asarray(rho_diag, dtype=float)[order]
        jumps = np.nonzero(r[1:] != r[:-1])[0] + 1
        return cls.by_count(E, n_bin, w_edges, breaks=jumps)

    @classmethod
    def uniform(cls, lo, hi, n_e: int = 32, omega_max=None, n_w: int = 129) -> "EnergyGrid":
        w = None if omega_max is None else np.linspace(-omega_max, omega_max, n_w + 1)
        return cls(np.linspace(lo, hi, n_e + 1), w)

    @property
    def M(self) -> int:
        return len(self.e_edges) - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.e_edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.e_edges[1:] + self.e_edges[:-1])

    @property
    def omega(self) -> np.ndarray:
        """Pair-cell frequencies ``omega_IJ = c_J - c_I``."""
        c = self.centers
        return c[None, :] - c[:, None]

    @property
    def w_centers(self):
        return None if self.w_edges is None else 0.5 * (self.w_edges[1:] + self.w_edges[:-1])

    def assign(self, E) -> np.ndarray:
        """Bin index per energy; values beyond the outer edges go to the edge bins."""
        idx = np.searchsorted(self.e_edges, np.asarray(E, dtype=float), side="right") - 1
        return np.clip(idx, 0, self.M - 1)

    def labels(self, energies) -> np.ndarray:
        """Bin labels for a full spectrum.

        Count-based grids label by rank so every bin keeps its count when
        levels drift; other grids label by energy.
        """
        E = np.asarray(energies, dtype=float)
        if self.n_bin is None:
            return self.assign(E)
        lab = np.empty(len(E), dtype=np.int64)
        starts = self.starts if self.starts is not None else np.arange(self.M) * self.n_bin
        lab[np.argsort(E, kind="stable")] = np.searchsorted(starts, np.arange(len(E)), side="right") - 1
        return lab

    def counts(self, energies) -> np.ndarray:
        return np.bincount(self.labels(energies), minlength=self.M).astype(float)

    def to_json(self) -> dict:
        return dict(e_edges=self.e_edges.tolist(),
                    w_edges=None if self.w_edges is None else self.w_edges.tolist(),
                    n_bin=self.n_bin,
                    starts=None if self.starts is None else self.starts.tolist())


def estimate_dos(energies, grid: EnergyGrid | None = None, bandwidth: float | None = None,
                 smooth: bool = True) -> np.ndarray:
    """Density of states per bin, normalized so ``sum(nu * h) = N``.

    With ``smooth`` each level is a Gaussian of width ``bandwidth`` (default
    two mean level spacings) and nu_I is its mass inside bin I divided by
    h_I.  Mass falling outside the grid is folded into the edge bins.
    """
    E = np.sort(np.asarray(energies, dtype=float))
    N = len(E)
    if grid is None:
        grid = EnergyGrid.uniform(E[0] - 1e-9, E[-1] + 1e-9, 32)
    h = grid.widths
    if bandwidth is None:
        bandwidth = 2 * (E[-1] - E[0]) / max(N - 1, 1)
    if not smooth or bandwidth <= 0:
        counts = np.bincount(grid.labels(E) if grid.n_bin else grid.assign(E),
                             minlength=grid.M).astype(float)
        return counts / h
    cdf = ndtr((grid.e_edges[None, :] - E[:, None]) / bandwidth)  # (N, M+1)
    cdf[:, 0] = 0.0
    cdf[:, -1] = 1.0
    mass = np.diff(cdf, axis=1).sum(axis=0)
    return mass / h


def extract_diagonal(values_diag, energies, n_bin: int = 4, kind: str = "mean"):
    """Average (``kind='mean'``) or density (``'density'``, sum / bin width) over
    groups of ``n_bin`` consecutive levels.  Returns ``(E_mean, values, grid)``."""
    E = np.asarray(energies, dtype=float)
    order = np.argsort(E, kind="stable")
    grid = EnergyGrid.by_count(E, n_bin)
    lab = np.minimum(np.arange(len(E)) // n_bin, grid.M - 1)
    n = np.bincount(lab).astype(float)
    Es = np.bincount(lab, E[order]) / n
    v = np.asarray(values_diag, dtype=float)[order]
    s = np.bincount(lab, v)
    if kind == "mean":
        return Es, s / n, grid
    if kind == "density":
        return Es, s / grid.widths, grid
    raise ValueError(f"unknown kind {kind!r}")


def _pair_cell_sum(P, lab, M) -> np.ndarray:
    """Sum of ``P[i, j]`` over ``i != j`` into cells ``(lab[i], lab[j])``."""
    P = np.array(P, copy=True)
    np.fill_diagonal(P, 0)
    idx = (lab[:, None] * M + lab[None, :]).ravel()
    if np.iscomplexobj(P):
        re = np.bincount(idx, P.real.ravel(), minlength=M * M)
        im = np.bincount(idx, P.imag.ravel(), minlength=M * M)
        return (re + 1j * im).reshape(M, M)
    return np.bincount(idx, P.ravel(), minlength=M * M).reshape(M, M)


def _rect_cell_sum(P, energies, grid: EnergyGrid):
    """Sum of ``P[i, j]`` (i != j) into cells (bin of E_i, bin of E_j - E_i)."""
    if grid.w_edges is None:
        raise ValueError("grid has no omega edges")
    E = np.asarray(energies, dtype=float)
    n = len(E)
    ie = grid.assign(E)
    om = E[None, :] - E[:, None]
    iw = np.searchsorted(grid.w_edges, om, side="right") - 1
    Mw = len(grid.w_edges) - 1
    ok = (iw >= 0) & (iw < Mw) & ~np.eye(n, dtype=bool)
    idx = (np.broadcast_to(ie[:, None], (n, n)) * Mw + iw)[ok]
    vals = np.asarray(P)[ok]
    if np.iscomplexobj(vals):
        out = (np.bincount(idx, vals.real, minlength=grid.M * Mw)
               + 1j * np.bincount(idx, vals.imag, minlength=grid.M * Mw))
    else:
        out = np.bincount(idx, vals, minlength=grid.M * Mw)
    return out.reshape(grid.M, Mw)


def extract_offdiag_f2(M, energies, grid: EnergyGrid, nu=None, cells: str = "auto"):
    """|f|^2 of a Hermitian matrix, normalized so ``sum nu f2 dE domega = sum_{i!=j} |M_ij|^2``.

    ``cells='rect'`` uses the (E, omega) grid (needs ``w_edges``); ``'pair'``
    uses bin-pair cells.  ``nu`` defaults to the histogram DOS of the grid.
    """
    Mx = np.asarray(M)
    P = np.abs(Mx) ** 2
    if cells == "auto":
        cells = "rect" if grid.w_edges is not None else "pair"
    h = grid.widths
    if nu is None:
        nu = grid.counts(energies) / h
    if cells == "pair":
        S = _pair_cell_sum(P, grid.labels(energies), grid.M)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = S / (nu[:, None] * h[:, None] * h[None, :])
        return np.where(nu[:, None] > 0, out, 0.0)
    S = _rect_cell_sum(P, energies, grid)
    dw = np.diff(grid.w_edges)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = S / (nu[:, None] * h[:, None] * dw[None, :])
    return np.where(nu[:, None] > 0, out, 0.0)


def extract_B(rho, A, energies, grid: EnergyGrid, cells: str = "auto"):
    """Off-diagonal pairing density with ``B dE domega = sum'' rho_ij A_ji`` per cell."""
    P = np.asarray(rho) * np.asarray(A).T
    if cells == "auto":
        cells = "rect" if grid.w_edges is not None else "pair"
    h = grid.widths
    if cells == "pair":
        return _pair_cell_sum(P, grid.labels(energies), grid.M) / (h[:, None] * h[None, :])
    S = _rect_cell_sum(P, energies, grid)
    return S / (h[:, None] * np.diff(grid.w_edges)[None, :])


@dataclass
class FormFactorSet:
    """Form factors on bin-pair cells at flow scale ``w_label``."""

    grid: EnergyGrid
    nu: np.ndarray
    p: np.ndarray
    A: np.ndarray
    B: np.ndarray
    f2: np.ndarray
    w_label: float = np.inf
    members: np.ndarray | None = None  # member energies, sorted, for time synthesis
    meta: dict = field(default_factory=dict)

    @property
    def h(self):
        return self.grid.widths

    @property
    def omega(self):
        return self.grid.omega

    def norm_p(self) -> float:
        return float(np.sum(self.p * self.h))

    def trace_A(self) -> float:
        return float(np.sum(self.nu * self.A * self.h))

    def pairing(self) -> float:
        """sum p A dE + sum B dE domega (the binned Tr[rho A])."""
        h = self.h
        return float(np.sum(self.p * self.A * h) + np.real(np.sum(self.B * np.outer(h, h))))

    def frobenius(self) -> float:
        """sum nu A^2 dE + sum nu f2 dE domega (the binned Tr[A^2])."""
        h = self.h
        return float(np.sum(self.nu * self.A ** 2 * h)
                     + np.sum(self.nu[:, None] * self.f2 * np.outer(h, h)))

    def copy(self, **kw) -> "FormFactorSet":
        d = dict(grid=self.grid, nu=self.nu.copy(), p=self.p.copy(), A=self.A.copy(),
                 B=self.B.copy(), f2=self.f2.copy(), w_label=self.w_label,
                 members=self.members, meta=dict(self.meta))
        d.update(kw)
        return FormFactorSet(**d)

    def dump(self, prefix) -> list:
        """Write ``<prefix>_{p,A,nu}.csv`` (E,value), ``<prefix>_{B,f2}.csv``
        (E,omega,value) and ``<prefix>_meta.json``; returns the paths."""
        c = self.grid.centers
        paths = []
        for name in ("nu", "p", "A"):
            path = f"{prefix}_{name}.csv"
            np.savetxt(path, np.column_stack([c, getattr(self, name)]), delimiter=",",
                       header="E,value", comments="", fmt="%.17g")
            paths.append(path)
        I, Jx = np.meshgrid(np.arange(len(c)), np.arange(len(c)), indexing="ij")
        for name in ("B", "f2"):
            path = f"{prefix}_{name}.csv"
            v = np.real(getattr(self, name))
            np.savetxt(path, np.column_stack([c[I].ravel(), (c[Jx] - c[I]).ravel(), v.ravel()]),
                       delimiter=",", header="E,omega,value", comments="", fmt="%.17g")
            paths.append(path)
        path = f"{prefix}_meta.json"
        with open(path, "w") as fh:
            json.dump(dict(grid=self.grid.to_json(), w_label=float(self.w_label),
                           cells="bin-pair", **self.meta), fh, indent=1)
        paths.append(path)
        return paths


def extract_form_factors(energies, rho, A, grid: EnergyGrid, w_label: float = np.inf,
                         with_f2: bool = True) -> FormFactorSet:
    """Full bin-pair FormFactorSet; ``rho``/``A`` may be matrices or diagonals."""
    E = np.asarray(energies, dtype=float)
    lab = grid.labels(E)
    Mb = grid.M
    h = grid.widths
    n = np.bincount(lab, minlength=Mb).astype(float)
    nu = n / h
    rho = np.asarray(rho)
    A = np.asarray(A)
    rd = np.real(np.diag(rho)) if rho.ndim == 2 else rho.astype(float)
    ad = np.real(np.diag(A)) if A.ndim == 2 else A.astype(float)
    p = np.bincount(lab, rd, minlength=Mb) / h
    with np.errstate(invalid="ignore"):
        Abar = np.where(n > 0, np.bincount(lab, ad, minlength=Mb) / np.maximum(n, 1), 0.0)
    hh = np.outer(h, h)
    if rho.ndim == 2 and A.ndim == 2:
        B = _pair_cell_sum(rho * A.T, lab, Mb) / hh
        if np.iscomplexobj(B) and np.all(np.abs(B.imag) <= 1e-10 * max(1.0, np.abs(B).max())):
            B = B.real
    else:
        B = np.zeros((Mb, Mb))
    if with_f2 and A.ndim == 2:
        f2 = _pair_cell_sum(np.abs(A) ** 2, lab, Mb) / (nu[:, None] * hh)
    else:
        f2 = np.zeros((Mb, Mb))
    members = np.sort(E)
    return FormFactorSet(grid, nu, p, Abar, B, f2, w_label, members)


def dump_rect(path, values, grid: EnergyGrid, meta: dict | None = None):
    """(E, omega, value) CSV for a rectangular-cell array plus JSON sidecar."""
    ce, cw = grid.centers, grid.w_centers
    I, W = np.meshgrid(ce, cw, indexing="ij")
    np.savetxt(path, np.column_stack([I.ravel(), W.ravel(), np.real(values).ravel()]),
               delimiter=",", header="E,omega,value", comments="", fmt="%.17g")
    with open(str(path) + ".json", "w") as fh:
        json.dump(dict(grid=grid.to_json(), **(meta or {})), fh, indent=1)
