"""Flow operators on bin-pair cells and their order-by-order solution.

For one kernel slice with per-row masses ``Kr[I, K]`` the increments are::

    F1[B]_IJ  = sum_K Kr_IK (nu_I/nu_K B_KJ - B_IJ)
    F2[B]_IJ  = sum_K Kr_JK (nu_J/nu_K B_IK - B_IJ)
    G_IJ      = Kr_IJ / h_J (A_I - A_J)(p_I - nu_I/nu_J p_J)
    G_A,IJ    = Kr_IJ / h_J (A_I - A_J)**2
    dp_I      = sum_K Kr_IK (nu_I/nu_K p_K - p_I)
    dA_I      = sum_K Kr_IK (A_K - A_I)

The squared spectral function is transported as ``S = nu f2`` with the same
operators as B, which keeps sum(nu f2 h h) + sum(nu A^2 h) stationary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .decimation import KernelTable
from .eth import EnergyGrid, FormFactorSet, extract_form_factors
from .hermitian import jacobi_diagonalize


def _nu_ratio(nu, clip=None):
    r = nu[:, None] / nu[None, :]
    if clip is not None:
        r = np.clip(r, 1.0 / clip, clip)
    return r


def apply_F1(B, Kr, nu, clip=None):
    """Row-transport increment of a pair-cell field for one kernel slice."""
    R = Kr * _nu_ratio(nu, clip)
    return R @ B - Kr.sum(1)[:, None] * B


def apply_F2(B, Kr, nu, clip=None):
    """Column-transport increment (kernel evaluated at the partner bin)."""
    R = Kr * _nu_ratio(nu, clip)
    return B @ R.T - B * Kr.sum(1)[None, :]


def source_G(A, p, Kr, nu, h, clip=None, nu_ratio=True):
    dA = A[:, None] - A[None, :]
    if nu_ratio:
        dp = p[:, None] - _nu_ratio(nu, clip) * p[None, :]
    else:
        dp = p[:, None] - p[None, :]
    return Kr / h[None, :] * dA * dp


def source_GA(A, Kr, h):
    dA = A[:, None] - A[None, :]
    return Kr / h[None, :] * dA ** 2


def diagonal_increment(fn, Kr, nu, mode, clip=None):
    if mode == "p":
        return (Kr * _nu_ratio(nu, clip)) @ fn - Kr.sum(1) * fn
    if mode == "A":
        return Kr @ fn - Kr.sum(1) * fn
    raise ValueError(f"unknown mode {mode!r}")


def flow_diagonal(fn, kernel: KernelTable, mode: str, clip=None, return_path=False):
    """Flow p (``mode='p'``, with the nu ratio) or A (``'A'``) from w0 to 0, Euler per slice."""
    nu = kernel.nu
    y = np.array(fn, dtype=float)
    path = [y.copy()]
    for s in range(kernel.n_slices):
        y = y + diagonal_increment(y, kernel.kernel(s), nu, mode, clip)
        path.append(y.copy())
    return (y, path) if return_path else y


def _increments(x, anchor, Kr, nu, h, clip, with_f2, source):
    """Slice increment for order k+1 driven by order-k arguments ``x``.

    ``anchor`` is the order-(k+1) state at the start of the slice; it only
    enters the symmetric source, which pairs the order-k increments with
    midpoint values so that the trace pairing and the Frobenius total change
    by exactly zero over the slice.
    """
    B, p, A, S = x
    dp = diagonal_increment(p, Kr, nu, "p", clip)
    dA = diagonal_increment(A, Kr, nu, "A", clip)
    dB = apply_F1(B, Kr, nu, clip) + apply_F2(B, Kr, nu, clip)
    if source == "plain":
        dB = dB + source_G(A, p, Kr, nu, h, clip)
        gA = source_GA(A, Kr, h)
    else:
        p_mid = anchor[1] + 0.5 * dp
        A_mid = anchor[2] + 0.5 * dA
        dB = dB + 0.5 * (source_G(A_mid, p, Kr, nu, h, clip) + source_G(A, p_mid, Kr, nu, h, clip))
        gA = Kr / h[None, :] * (A_mid[:, None] - A_mid[None, :]) * (A[:, None] - A[None, :])
    if with_f2:
        dS = apply_F1(S, Kr, nu, clip) + apply_F2(S, Kr, nu, clip) + nu[:, None] * gA
    else:
        dS = np.zeros_like(S)
    return dB, dp, dA, dS


@dataclass
class FlowState:
    """Order-k solutions at w = 0 (``orders[k-1]``) plus optional trajectories."""

    orders: list
    kernel: KernelTable
    initial: FormFactorSet
    epsilon: float | None = None
    trajectories: dict = field(default_factory=dict)
    scheme: str = "euler"
    with_f2: bool = True

    @property
    def k_max(self) -> int:
        return len(self.orders)

    def order(self, k: int) -> FormFactorSet:
        if k == 0:
            return self.initial
        return self.orders[k - 1]

    def conservation(self, k: int) -> dict:
        """Relative drift of the sum rules between w0 and the order-k result.

        The Frobenius total is only reported when f2 was flowed.
        """
        a, b = self.initial, self.order(k)
        out = {}
        rules = [("norm_p", FormFactorSet.norm_p), ("trace_A", FormFactorSet.trace_A),
                 ("pairing", FormFactorSet.pairing)]
        if self.with_f2:
            rules.append(("frobenius", FormFactorSet.frobenius))
        for name, f in rules:
            x0, x1 = f(a), f(b)
            out[name] = abs(x1 - x0) / max(abs(x0), 1e-300)
        return out


def solve_iterative(ff0: FormFactorSet, kernel: KernelTable, k_max: int = 2, *,
                    with_f2: bool = True, scheme: str = "euler", source: str = "symmetric",
                    clip=None, epsilon=None, keep_trajectory: bool = False) -> FlowState:
    """Picard iteration over the slice sequence.

    Order k+1 at slice boundary s+1 is order k+1 at s plus the slice
    increment evaluated on the order-k trajectory (``scheme='euler'``: at s;
    ``'trapezoid'``: mean of s and s+1).  Order 0 is constant in w.

    ``source='plain'`` evaluates G and G_A on the order-k fields only, so
    order 1 is the first-order closed form.  ``'symmetric'`` (default) splits
    the sources between order-k and midpoint order-(k+1) diagonals, which
    differs at the next order in J^2 and makes every sum rule exact.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if scheme not in ("euler", "trapezoid"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if source not in ("plain", "symmetric"):
        raise ValueError(f"unknown source {source!r}")
    nu = np.asarray(ff0.nu, dtype=float)
    h = ff0.grid.widths
    S_n = kernel.n_slices
    if kernel.weights.shape[1] != len(nu):
        raise ValueError("kernel grid does not match form-factor grid")
    y0 = (np.real(np.asarray(ff0.B)).astype(float), ff0.p.astype(float), ff0.A.astype(float),
          nu[:, None] * ff0.f2)
    prev = [y0] * (S_n + 1)
    orders = []
    trajs = {}
    kr = [kernel.kernel(s) for s in range(S_n)]
    for k in range(1, k_max + 1):
        cur = [y0]
        for s in range(S_n):
            x = prev[s]
            if scheme == "trapezoid":
                x = tuple(0.5 * (a + b) for a, b in zip(prev[s], prev[s + 1]))
            d = _increments(x, cur[-1], kr[s], nu, h, clip, with_f2, source)
            cur.append(tuple(c + dx for c, dx in zip(cur[-1], d)))
        B, p, A, S = cur[-1]
        orders.append(FormFactorSet(ff0.grid, nu, p, A, B, S / nu[:, None], 0.0, ff0.members,
                                    dict(order=k, scheme=scheme, source=source)))
        if keep_trajectory:
            trajs[k] = cur
        prev = cur
    return FlowState(orders, kernel, ff0, epsilon, trajs, scheme, with_f2)


def first_order_closed_form(p0, A0, f_jac, nu, J, grid: EnergyGrid, literal: bool = False):
    """``B1 = J^2 f_Jac / omega^2 (p_I - nu_I/nu_J p_J)(A_I - A_J)`` on pair cells.

    ``literal=True`` uses ``p_I - p_J`` without the density ratio.  Cells
    with omega = 0 (same bin) are set to zero.
    """
    om = grid.omega
    nu = np.asarray(nu, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(om != 0, 1.0 / om ** 2, 0.0)
    dA = A0[:, None] - A0[None, :]
    dp = p0[:, None] - (1.0 if literal else nu[:, None] / nu[None, :]) * p0[None, :]
    return J ** 2 * f_jac * inv * dp * dA


def geometric_checkpoints(w_hi: float, w_lo: float, per_decade: int = 8) -> np.ndarray:
    n = int(np.ceil(per_decade * np.log10(w_hi / w_lo))) + 1
    return np.geomspace(w_hi, w_lo, n)


def empirical_flow(H, rho, A, grid: EnergyGrid, w_checkpoints: Sequence[float],
                   w_min: float = 1e-6, with_f2: bool = True):
    """Run Jacobi with rho and A co-rotated and extract form factors at each checkpoint.

    ``w_checkpoints`` must be descending.  A checkpoint at or above the
    initial largest off-diagonal returns the initial form factors.  The
    bins keep the level ranking of the current diagonal, so ``nu`` and the
    edges of ``grid`` are held fixed along the flow.  Returns
    ``(sets, result)`` with one FormFactorSet per checkpoint.
    """
    cps = [float(c) for c in w_checkpoints]
    if any(b > a for a, b in zip(cps, cps[1:])):
        raise ValueError("checkpoints must be descending")
    H = np.asarray(H)
    rho = np.asarray(rho)
    A = np.asarray(A)
    rhoM = np.diag(rho) if rho.ndim == 1 else rho
    AM = np.diag(A) if A.ndim == 1 else A
    offmax = np.max(np.abs(H - np.diag(np.diag(H))))
    nu0 = grid.counts(np.real(np.diag(H))) / grid.widths
    snaps = {}

    def take(wc, M, obs, log):
        E = np.real(np.diag(M)).copy()
        ff = extract_form_factors(E, obs[0], obs[1], grid, wc, with_f2)
        ff.nu = nu0.copy()
        snaps[wc] = ff

    above = [c for c in cps if c >= offmax]
    below = [c for c in cps if w_min < c < offmax]
    res = jacobi_diagonalize(H, w_min, [rhoM, AM], checkpoints=below, on_checkpoint=take)
    out = []
    for c in cps:
        if c in snaps:
            out.append(snaps[c])
        elif c in above:
            ff = extract_form_factors(np.real(np.diag(H)), rhoM, AM, grid, c, with_f2)
            ff.nu = nu0.copy()
            out.append(ff)
        else:  # at or below w_min: final basis
            ff = extract_form_factors(res.eigenvalues, res.observers[0], res.observers[1],
                                      grid, c, with_f2)
            ff.nu = nu0.copy()
            out.append(ff)
    return out, res
