"""Time series: exact evolution, second-order perturbation theory, and
synthesis from flowed form factors."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

LONG_TIME_FRACTION = 0.25


@dataclass
class TimeSeries:
    times: np.ndarray
    values: np.ndarray
    label: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values)
        if np.iscomplexobj(self.values):
            scale = max(1.0, float(np.max(np.abs(self.values))))
            if np.max(np.abs(self.values.imag)) > 1e-8 * scale:
                raise ValueError(f"{self.label}: imaginary residue above tolerance")
            self.values = self.values.real.copy()
        self.values = self.values.astype(float)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values differ in shape")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"{self.label}: non-finite values")

    def to_csv(self, path, extra_meta: dict | None = None) -> tuple:
        """``t,value`` CSV plus ``<path>.json`` sidecar; returns both paths."""
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "value"])
            for t, v in zip(self.times, self.values):
                wr.writerow([repr(float(t)), repr(float(v))])
        meta = dict(label=self.label, **self.meta)
        if extra_meta:
            meta.update(extra_meta)
        side = str(path) + ".json"
        with open(side, "w") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True, default=_jsonable)
        return str(path), side

    @classmethod
    def from_csv(cls, path) -> "TimeSeries":
        d = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        try:
            with open(str(path) + ".json") as fh:
                meta = json.load(fh)
        except FileNotFoundError:
            meta = {"label": "unknown"}
        label = meta.pop("label", "unknown")
        return cls(d[:, 0], d[:, 1], label, meta)


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def time_grid(T: float, samples: int = 512, omega_max: float | None = None,
              max_phase_step: float = np.pi / 4) -> np.ndarray:
    """Uniform grid on [0, T]; samples are increased until ``omega_max * dt <= max_phase_step``."""
    n = int(samples)
    if omega_max is not None and omega_max > 0:
        need = int(np.ceil(T * omega_max / max_phase_step)) + 1
        n = max(n, need)
    return np.linspace(0.0, T, n)


def _phases(E, times):
    return np.exp(1j * np.outer(np.asarray(E, dtype=float), times))


def _bilinear_series(C, E, times, chunk=256):
    """``sum_ij C_ij exp(-i (E_i - E_j) t)`` for every t (real part is returned by callers)."""
    out = np.empty(len(times), dtype=complex)
    for s in range(0, len(times), chunk):
        Z = _phases(E, times[s:s + chunk])  # (N, T)
        out[s:s + chunk] = np.einsum("it,it->t", Z.conj(), C @ Z)
    return out


def exact_quench_corotated(energies_H, rho_H, A_H, times, meta=None) -> TimeSeries:
    """``sum_ij rho_ij A_ji exp(-i (E_i - E_j) t)`` with rho, A in the eigenbasis of H."""
    rho_H = np.asarray(rho_H)
    A_H = np.asarray(A_H)
    C = rho_H * A_H.T
    vals = _bilinear_series(C, energies_H, np.asarray(times, dtype=float))
    return TimeSeries(times, vals, "exact", dict(meta or {}))


def exact_quench(energies_H, U, rho_diag, A_diag, times, meta=None) -> TimeSeries:
    """Exact quench from H0-diagonal rho and A; U holds eigenvectors of H as columns."""
    U = np.asarray(U)
    n = U.shape[0]
    if np.max(np.abs(U.conj().T @ U - np.eye(n))) > 1e-8:
        raise ValueError("U is not unitary within 1e-8")
    rho_H = U.conj().T @ (np.asarray(rho_diag)[:, None] * U)
    A_H = U.conj().T @ (np.asarray(A_diag)[:, None] * U)
    return exact_quench_corotated(energies_H, rho_H, A_H, times, meta)


def exact_autocorrelator(energies_H, A_H, times, meta=None) -> TimeSeries:
    """``(1/N) sum_ij |A_ij|^2 exp(-i (E_i - E_j) t)`` at infinite temperature."""
    A_H = np.asarray(A_H)
    C = np.abs(A_H) ** 2 / A_H.shape[0]
    vals = _bilinear_series(C, energies_H, np.asarray(times, dtype=float))
    return TimeSeries(times, vals, "exact", dict(meta or {}))


def _tdpt_weights(energies, V, J, dA, dB):
    E = np.asarray(energies, dtype=float)
    om = E[:, None] - E[None, :]
    V2 = np.abs(np.asarray(V)) ** 2
    off = ~np.eye(len(E), dtype=bool)
    degenerate = off & (om == 0) & (V2 > 0)
    ok = off & (om != 0)
    W = np.zeros_like(om)
    W[ok] = J ** 2 * V2[ok] / om[ok] ** 2 * dA[ok] * dB[ok]
    return W, int(degenerate.sum() // 2)


def tdpt_quench(energies, V, rho_diag, A_diag, J, times, literal: bool = False,
                meta=None) -> TimeSeries:
    """Second-order response ``v0 + J^2 sum |V|^2/w^2 dA drho (cos wt - 1)``.

    ``literal=True`` drops the ``-1`` (the series then starts away from v0).
    Degenerate pairs with nonzero coupling are skipped and counted in
    ``meta['degenerate_pairs']``.
    """
    A = np.asarray(A_diag, dtype=float)
    r = np.asarray(rho_diag, dtype=float)
    W, ndeg = _tdpt_weights(energies, V, J, A[:, None] - A[None, :], r[:, None] - r[None, :])
    v0 = float(r @ A)
    osc = _bilinear_series(W, energies, np.asarray(times, dtype=float)).real
    vals = v0 + osc - (0.0 if literal else W.sum())
    m = dict(meta or {})
    m.update(degenerate_pairs=ndeg, literal=literal)
    return TimeSeries(times, vals, "tdpt", m)


def tdpt_autocorr(energies, V, A_diag, J, times, meta=None) -> TimeSeries:
    """``(1/N)[sum A^2 + J^2 sum |V|^2 (dA)^2 / w^2 (cos wt - 1)]``."""
    A = np.asarray(A_diag, dtype=float)
    dA = A[:, None] - A[None, :]
    W, ndeg = _tdpt_weights(energies, V, J, dA, dA)
    N = len(A)
    osc = _bilinear_series(W, energies, np.asarray(times, dtype=float)).real
    vals = (np.sum(A ** 2) + osc - W.sum()) / N
    m = dict(meta or {})
    m.update(degenerate_pairs=ndeg)
    return TimeSeries(times, vals, "tdpt", m)


def bin_phases(grid, members, times):
    """Pair dephasing factors ``phi[I, J, t]`` as a function producing (M, T) bin means.

    Returns ``z`` with ``z[I, t] = mean_{i in I} exp(i E_i t)`` and the bin counts.
    """
    members = np.sort(np.asarray(members, dtype=float))
    lab = grid.labels(members)
    M = grid.M
    n = np.bincount(lab, minlength=M).astype(float)
    Z = _phases(members, times)
    z = np.zeros((M, len(times)), dtype=complex)
    np.add.at(z, lab, Z)
    z /= np.maximum(n, 1)[:, None]
    return z, n


def _pair_cell_series(Bc, grid, members, times):
    """``sum_IJ Bc_IJ (phi_IJ(t) - 1)`` with phi the mean pair phase over distinct members."""
    times = np.asarray(times, dtype=float)
    Bc = np.real(np.asarray(Bc))
    if members is None:
        om = grid.omega
        h = grid.widths
        c = np.cos(om[:, :, None] * times) * np.sinc(h[:, None, None] * times / (2 * np.pi)) \
            * np.sinc(h[None, :, None] * times / (2 * np.pi))
        return np.einsum("ij,ijt->t", Bc, c - 1.0)
    z, n = bin_phases(grid, members, times)
    cross = np.einsum("it,ij,jt->t", z.conj(), Bc, z).real
    # same-bin cells: exclude i == j from the mean over member pairs
    d = np.diag(Bc)
    with np.errstate(divide="ignore", invalid="ignore"):
        same = np.where(n[:, None] > 1, (n[:, None] ** 2 * np.abs(z) ** 2 - n[:, None])
                        / (n[:, None] * (n[:, None] - 1)), 0.0)
    corr = np.sum(d[:, None] * (same - np.abs(z) ** 2), axis=0)
    return cross + corr - Bc.sum()


def synthesize_quench(ff, value_t0: float, times, label: str = "sja", members=None,
                      meta=None) -> TimeSeries:
    """``v0 + sum_cells B dE domega (phi(t) - 1)`` from a flowed FormFactorSet."""
    h = ff.grid.widths
    Bc = np.real(ff.B) * np.outer(h, h)
    mem = ff.members if members is None else members
    vals = value_t0 + _pair_cell_series(Bc, ff.grid, mem, times)
    return TimeSeries(times, vals, label, dict(meta or {}))


def synthesize_autocorr(ff, N: int, times, value_t0: float | None = None, label: str = "sja",
                        members=None, meta=None) -> TimeSeries:
    """``(1/N)[sum nu A^2 dE + sum nu f2 dE domega phi(t)]``.

    With ``value_t0`` (normally Tr[A^2]/N) the series is anchored there:
    ``value_t0 + (1/N) sum nu f2 dE domega (phi(t) - 1)``.
    """
    h = ff.grid.widths
    Sc = ff.nu[:, None] * ff.f2 * np.outer(h, h)
    mem = ff.members if members is None else members
    if value_t0 is None:
        value_t0 = ff.frobenius() / N
    vals = value_t0 + _pair_cell_series(Sc, ff.grid, mem, times) / N
    return TimeSeries(times, vals, label, dict(meta or {}))


@dataclass
class ErrorSummary:
    curve: TimeSeries
    short_time_max_err: float
    long_time_mean_err: float


def error_curve(approx: TimeSeries, exact: TimeSeries, J: float | None = None,
                short_Jt: float = 1.0, long_fraction: float = LONG_TIME_FRACTION) -> ErrorSummary:
    """Pointwise ``|approx - exact|`` plus the max over ``Jt <= short_Jt`` and the mean over the final window."""
    if approx.times.shape != exact.times.shape or not np.allclose(approx.times, exact.times, rtol=0, atol=1e-12):
        raise ValueError("time grids differ")
    t = exact.times
    err = np.abs(approx.values - exact.values)
    curve = TimeSeries(t, err, f"err:{approx.label}", dict(reference=exact.label))
    if J is None or J == 0:
        J = 1.0
    short = err[J * t <= short_Jt + 1e-12]
    long_ = err[t >= t[-1] - long_fraction * (t[-1] - t[0]) - 1e-12]
    return ErrorSummary(curve, float(short.max()), float(long_.mean()))


def response_amplitude(series: TimeSeries) -> float:
    """``max_t |x(t) - x(0)|``."""
    return float(np.max(np.abs(series.values - series.values[0])))


def long_time_mean(series: TimeSeries, long_fraction: float = LONG_TIME_FRACTION) -> float:
    t = series.times
    m = t >= t[-1] - long_fraction * (t[-1] - t[0]) - 1e-12
    return float(series.values[m].mean())


def average_series(series_list, label=None) -> TimeSeries:
    """Arithmetic mean of series on a common grid."""
    t = series_list[0].times
    for s in series_list[1:]:
        if s.times.shape != t.shape or not np.allclose(s.times, t, rtol=0, atol=1e-12):
            raise ValueError("cannot average series on different grids")
    v = np.mean([s.values for s in series_list], axis=0)
    meta = dict(series_list[0].meta)
    meta["n_averaged"] = len(series_list)
    return TimeSeries(t, v, label or series_list[0].label, meta)
