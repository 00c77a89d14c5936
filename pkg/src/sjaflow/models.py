"""Benchmark problems expressed in the eigenbasis of the unperturbed Hamiltonian.

Two random-matrix models (Gaussian and bimodal spectral envelopes) and the
mixed-field Ising ring restricted to zero momentum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hermitian import jacobi_diagonalize


@dataclass(frozen=True)
class RmtSpec:
    N: int
    J: float
    sigma_omega: float
    omega0: float = 0.0
    band: float = 2.5
    seed: int = 0

    def __post_init__(self):
        if self.N < 2 or self.J < 0 or self.sigma_omega <= 0 or self.band <= 0:
            raise ValueError(f"invalid RmtSpec {self}")


@dataclass(frozen=True)
class SpinChainSpec:
    L: int
    J: float = 0.2
    g: float = 0.9045
    h: float = 0.809

    def __post_init__(self):
        if self.L < 4:
            raise ValueError("need L >= 4")


@dataclass
class QuenchProblem:
    """H = diag(energies) + J V with V off-diagonal; rho and A diagonal."""

    energies: np.ndarray
    V: np.ndarray
    rho_diag: np.ndarray
    A_diag: np.ndarray
    J: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.energies = np.asarray(self.energies, dtype=float)
        self.V = np.asarray(self.V)
        self.rho_diag = np.asarray(self.rho_diag, dtype=float)
        self.A_diag = np.asarray(self.A_diag, dtype=float)
        n = len(self.energies)
        if self.V.shape != (n, n) or len(self.rho_diag) != n or len(self.A_diag) != n:
            raise ValueError("inconsistent problem dimensions")
        if np.any(np.diag(self.V) != 0):
            raise ValueError("V must have exactly zero diagonal")
        if np.any(self.rho_diag < 0) or abs(self.rho_diag.sum() - 1) > 1e-12:
            raise ValueError("rho_diag must be a probability vector")

    @property
    def N(self) -> int:
        return len(self.energies)

    @property
    def H(self) -> np.ndarray:
        return np.diag(self.energies).astype(self.V.dtype) + self.J * self.V

    def with_state(self, rho_diag=None, A_diag=None, J=None) -> "QuenchProblem":
        return QuenchProblem(self.energies, self.V,
                             self.rho_diag if rho_diag is None else rho_diag,
                             self.A_diag if A_diag is None else A_diag,
                             self.J if J is None else J, dict(self.meta))

    def save(self, path) -> None:
        """npz with arrays ``energies, rho_diag, A_diag, V`` and scalar ``J``."""
        np.savez(path, energies=self.energies, rho_diag=self.rho_diag,
                 A_diag=self.A_diag, V=self.V, J=self.J)

    @classmethod
    def load(cls, path) -> "QuenchProblem":
        d = np.load(path)
        return cls(d["energies"], d["V"], d["rho_diag"], d["A_diag"], float(d["J"]))


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; realization r of a study uses ``base_seed + r``."""
    return np.random.Generator(np.random.Philox(int(seed)))


def spectral_envelope(omega, sigma, omega0=0.0):
    """f_V(omega): a normalized Gaussian, or the symmetric two-peak mixture when omega0 != 0."""
    omega = np.asarray(omega, dtype=float)
    g = lambda x: np.exp(-x ** 2 / (2 * sigma ** 2))
    norm = np.sqrt(2 * np.pi * sigma ** 2)
    if omega0 == 0.0:
        return g(omega) / norm
    return (g(omega - omega0) + g(omega + omega0)) / (2 * norm)


def microcanonical_state(energies, E_cut) -> np.ndarray:
    """Uniform weights on levels with ``|E| < E_cut``."""
    energies = np.asarray(energies, dtype=float)
    sel = np.abs(energies) < E_cut
    if not sel.any():
        raise ValueError(f"no levels with |E| < {E_cut}")
    return sel / sel.sum()


def build_rmt(spec: RmtSpec, kind: str = "gaussian", *, E_cut: float = 0.5,
              rho_diag=None, A_diag=None) -> QuenchProblem:
    """Random perturbation with a prescribed variance profile.

    ``V_jk = f_V(E_k - E_j) / sqrt(nu) * R_jk`` with ``R`` real symmetric
    standard normal and ``nu = N / (2 band)``.  By default rho is the
    ``|E| < E_cut`` window and A = H0**2.
    """
    if kind not in ("gaussian", "bimodal"):
        raise ValueError(f"unknown RMT kind {kind!r}")
    omega0 = spec.omega0 if kind == "bimodal" else 0.0
    if kind == "bimodal" and omega0 == 0.0:
        raise ValueError("bimodal model needs omega0 != 0")
    rng = make_rng(spec.seed)
    N = spec.N
    E = np.sort(rng.uniform(-spec.band, spec.band, N))
    nu = N / (2 * spec.band)
    R = rng.standard_normal((N, N))
    R = np.triu(R, 1)
    R = R + R.T
    omega = E[None, :] - E[:, None]
    V = spectral_envelope(omega, spec.sigma_omega, omega0) / np.sqrt(nu) * R
    np.fill_diagonal(V, 0.0)
    rho = microcanonical_state(E, E_cut) if rho_diag is None else rho_diag
    A = E ** 2 if A_diag is None else A_diag
    meta = dict(model=f"rmt-{kind}", N=N, sigma_omega=spec.sigma_omega,
                omega0=omega0, band=spec.band, seed=spec.seed, nu=nu)
    return QuenchProblem(E, V, rho, A, spec.J, meta)


# --- spin chain -------------------------------------------------------------

def _translate(s: int, L: int) -> int:
    return ((s << 1) | (s >> (L - 1))) & ((1 << L) - 1)


def momentum_zero_basis(L: int):
    """Orbit representatives (smallest integer of each translation orbit) and orbit sizes."""
    n = 1 << L
    rep_of = np.full(n, -1, dtype=np.int64)
    reps, sizes = [], []
    for s in range(n):
        if rep_of[s] >= 0:
            continue
        orbit = [s]
        t = _translate(s, L)
        while t != s:
            orbit.append(t)
            t = _translate(t, L)
        idx = len(reps)
        reps.append(s)
        sizes.append(len(orbit))
        rep_of[orbit] = idx
    return np.array(reps, dtype=np.int64), np.array(sizes, dtype=np.int64), rep_of


def _spin(s: int, i: int) -> int:
    # sigma^z eigenvalue of site i: bit set -> +1
    return 1 if (s >> i) & 1 else -1


def _apply_terms(s: int, L: int, g: float, h: float, which: str):
    """Yield (s', amplitude) for H0 (which='H0') or V (which='V') acting on bit string s."""
    if which == "H0":
        diag = 0.0
        for i in range(L):
            j = (i + 1) % L
            diag += _spin(s, i) * _spin(s, j) + h * _spin(s, i)
        yield s, diag
        if g != 0.0:
            for i in range(L):
                yield s ^ (1 << i), g
    else:
        for i in range(L):
            j = (i + 1) % L
            if _spin(s, i) == _spin(s, j):
                # sx sx - sy sy flips a parallel pair with amplitude 2
                yield s ^ ((1 << i) | (1 << j)), 2.0


def build_ising_sector(spec: SpinChainSpec, max_dim: int = 20000):
    """Dense H0 and V in the zero-momentum sector of the periodic ring.

    Basis states are normalized orbit sums ``|r> = n_r**-0.5 sum_{s in orbit} |s>``;
    for a translation-invariant operator ``<r'|O|r> = sqrt(n_r/n_r') sum_{s' in orbit(r')} <s'|O|r>``.
    """
    L = spec.L
    if (1 << L) // L > max_dim:
        raise MemoryError(f"L={L} sector exceeds max_dim={max_dim}")
    reps, sizes, rep_of = momentum_zero_basis(L)
    d = len(reps)
    mats = {}
    for which in ("H0", "V"):
        M = np.zeros((d, d))
        for c, r in enumerate(reps):
            for s2, amp in _apply_terms(int(r), L, spec.g, spec.h, which):
                rr = rep_of[s2]
                M[rr, c] += amp * np.sqrt(sizes[c] / sizes[rr])
        mats[which] = M
    return mats["H0"], mats["V"], d


def ising_full(L: int, g: float = 0.9045, h: float = 0.809):
    """Full 2**L matrices (H0, V, T) with T the one-site translation; small L only."""
    if L > 12:
        raise MemoryError("full-space matrices only for L <= 12")
    n = 1 << L
    H0 = np.zeros((n, n))
    V = np.zeros((n, n))
    T = np.zeros((n, n))
    for s in range(n):
        for s2, amp in _apply_terms(s, L, g, h, "H0"):
            H0[s2, s] += amp
        for s2, amp in _apply_terms(s, L, g, h, "V"):
            V[s2, s] += amp
        T[_translate(s, L), s] = 1.0
    return H0, V, T


def to_h0_eigenbasis(H0_matrix, V_matrix, w_min: float = 1e-6, J: float = 0.0,
                     E_cut: float | None = None, rho_diag=None, A_diag=None) -> QuenchProblem:
    """Rotate (H0, V) to the H0 eigenbasis and fold J*diag(V) into the energies.

    Jacobi runs at ``w_min * 1e-2`` with V co-rotated.  The returned energies
    are the diagonal of ``H0 + J diag(V)`` sorted ascending; V is permuted
    consistently and its diagonal set to zero.  Defaults: A = energies**2,
    rho = window ``|E| < E_cut`` (infinite temperature when E_cut is None).
    """
    res = jacobi_diagonalize(H0_matrix, w_min * 1e-2, [V_matrix])
    E0 = res.eigenvalues
    Vr = res.observers[0]
    E = E0 + J * np.real(np.diag(Vr))
    order = np.argsort(E, kind="stable")
    E = E[order]
    Vr = Vr[np.ix_(order, order)].copy()
    np.fill_diagonal(Vr, 0.0)
    if np.iscomplexobj(Vr) and np.all(Vr.imag == 0):
        Vr = Vr.real.copy()
    if rho_diag is None:
        rho_diag = np.full(len(E), 1.0 / len(E)) if E_cut is None else microcanonical_state(E, E_cut)
    if A_diag is None:
        A_diag = E ** 2
    return QuenchProblem(E, Vr, rho_diag, A_diag, J,
                         dict(model="ising", n_rotations_h0=res.n_rotations))


def build_ising_problem(spec: SpinChainSpec, w_min: float = 1e-6, infinite_temperature=False):
    """Zero-momentum Ising quench problem with the ``|E| < L/2`` window state."""
    H0, V, d = build_ising_sector(spec)
    prob = to_h0_eigenbasis(H0, V, w_min, spec.J,
                            E_cut=None if infinite_temperature else 0.5 * spec.L)
    prob.meta.update(L=spec.L, g=spec.g, h=spec.h, sector_dim=d)
    return prob
