"""Two-level rotations and the instrumented max-pivot Jacobi diagonalizer.

Every rotation is logged as ``(w, E_a, E_b, eta, phase)`` together with the
pivot indices.  Additional Hermitian matrices ("observers") can be rotated
alongside the Hamiltonian, which is how density matrices and observables are
carried into the eigenbasis of the perturbed Hamiltonian.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K


class JacobiConvergenceError(RuntimeError):
    """Raised when the rotation cap is exhausted before convergence."""


@dataclass(frozen=True)
class TwoLevelRotation:
    a: int
    b: int
    eta: float
    phase: float
    w: float

    @property
    def u(self) -> complex:
        return np.exp(1j * self.phase)

    def matrix(self, n: int, dtype=complex) -> np.ndarray:
        """Dense ``n x n`` unitary R, with ``M -> R^dagger M R``."""
        c, s = np.cos(self.eta / 2), np.sin(self.eta / 2)
        u = self.u
        if np.dtype(dtype).kind == "f":
            u = u.real
        R = np.eye(n, dtype=dtype)
        R[self.a, self.a] = c
        R[self.b, self.b] = c
        R[self.b, self.a] = u * s
        R[self.a, self.b] = -np.conj(u) * s
        return R


LOG_COLUMNS = ("n", "w", "E_a", "E_b", "eta", "phase")


@dataclass
class DecimationLog:
    """Ordered record of Jacobi rotations.

    ``a`` and ``b`` (pivot indices) are kept in memory but are not part of the
    CSV format.
    """

    w: np.ndarray
    E_a: np.ndarray
    E_b: np.ndarray
    eta: np.ndarray
    phase: np.ndarray
    a: np.ndarray | None = None
    b: np.ndarray | None = None

    def __post_init__(self):
        for name in ("w", "E_a", "E_b", "eta", "phase"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.w)
        if any(len(getattr(self, k)) != n for k in ("E_a", "E_b", "eta", "phase")):
            raise ValueError("log columns have different lengths")
        if self.a is not None:
            self.a = np.asarray(self.a, dtype=np.int64)
            self.b = np.asarray(self.b, dtype=np.int64)

    @classmethod
    def empty(cls) -> "DecimationLog":
        z = np.zeros(0)
        return cls(z, z, z, z, z, np.zeros(0, np.int64), np.zeros(0, np.int64))

    @property
    def n_total(self) -> int:
        return len(self.w)

    def __len__(self):
        return self.n_total

    def __getitem__(self, sl):
        if isinstance(sl, (int, np.integer)):
            i = int(sl)
            return TwoLevelRotation(
                int(self.a[i]) if self.a is not None else -1,
                int(self.b[i]) if self.b is not None else -1,
                float(self.eta[i]), float(self.phase[i]), float(self.w[i]))
        return DecimationLog(self.w[sl], self.E_a[sl], self.E_b[sl], self.eta[sl],
                             self.phase[sl],
                             None if self.a is None else self.a[sl],
                             None if self.b is None else self.b[sl])

    @classmethod
    def concatenate(cls, logs: Sequence["DecimationLog"]) -> "DecimationLog":
        has_idx = all(g.a is not None for g in logs)
        cat = lambda k: np.concatenate([getattr(g, k) for g in logs]) if logs else np.zeros(0)
        return cls(cat("w"), cat("E_a"), cat("E_b"), cat("eta"), cat("phase"),
                   cat("a") if has_idx else None, cat("b") if has_idx else None)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(LOG_COLUMNS)
            for i in range(self.n_total):
                wr.writerow([i] + [repr(float(x)) for x in
                                   (self.w[i], self.E_a[i], self.E_b[i], self.eta[i], self.phase[i])])

    @classmethod
    def from_csv(cls, path) -> "DecimationLog":
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = tuple(next(rd))
            if header != LOG_COLUMNS:
                raise ValueError(f"unexpected log header {header}")
            rows = [[float(x) for x in r[1:]] for r in rd if r]
        arr = np.array(rows, dtype=float).reshape(-1, 5)
        return cls(*arr.T)


def _as_hermitian(H, name="matrix") -> np.ndarray:
    M = np.asarray(H)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    if not np.issubdtype(M.dtype, np.number):
        raise TypeError(f"{name} must be numeric")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if not np.allclose(M, M.conj().T, rtol=0, atol=1e-12 * scale):
        raise ValueError(f"{name} is not Hermitian")
    if np.iscomplexobj(M):
        if np.all(M.imag == 0):
            return np.ascontiguousarray(M.real, dtype=float)
        return np.ascontiguousarray(M, dtype=complex)
    return np.ascontiguousarray(M, dtype=float)


def find_max_offdiagonal(M) -> tuple[int, int, float, float]:
    """Largest ``|M[a, b]|`` with ``a < b``; ties go to the smallest ``(a, b)``.

    Returns ``(a, b, w, phase)`` with ``M[b, a] = w * exp(1j * phase)``.
    A matrix with no off-diagonal weight gives ``w = 0``.
    """
    M = np.asarray(M)
    n = M.shape[0]
    if n < 2:
        raise ValueError("need dim >= 2")
    iu, ju = np.triu_indices(n, 1)
    mags = np.abs(M[iu, ju])
    k = int(np.argmax(mags))  # first occurrence = lexicographic minimum
    a, b = int(iu[k]), int(ju[k])
    w = float(mags[k])
    if w == 0.0:
        return 0, 1, 0.0, 0.0
    return a, b, w, float(np.angle(M[b, a]))


def rotation_from_pivot(E_a, E_b, w, phase, a=0, b=1) -> TwoLevelRotation:
    """Angle that removes a pivot of magnitude ``w`` between levels ``E_a`` and ``E_b``."""
    if w < 0:
        raise ValueError("w must be non-negative")
    eta = K.angle_from_pivot(float(E_a), float(E_b), float(w))
    return TwoLevelRotation(int(a), int(b), float(eta), float(phase), float(w))


def apply_rotation(M: np.ndarray, r: TwoLevelRotation) -> None:
    """Apply ``M <- R^dagger M R`` in place to a Hermitian matrix."""
    n = M.shape[0]
    if not (0 <= r.a < n and 0 <= r.b < n) or r.a == r.b:
        raise IndexError(f"invalid rotation indices ({r.a}, {r.b}) for dim {n}")
    u = np.exp(1j * r.phase)
    if not np.iscomplexobj(M):
        if abs(u.imag) > 1e-12:
            raise TypeError("complex phase applied to a real matrix")
        u = float(np.sign(u.real)) or 1.0
    K._rotate_hermitian(M, r.a, r.b, np.cos(r.eta / 2), np.sin(r.eta / 2), u)


def offdiagonal_norm(M) -> float:
    """``(1/N) * sum_{j != k} |M[j, k]|**2``."""
    M = np.asarray(M)
    n = M.shape[0]
    off = ~np.eye(n, dtype=bool)  # direct sum; subtracting the diagonal cancels badly near convergence
    return float(np.sum(np.abs(M[off]) ** 2)) / n


@dataclass
class JacobiResult:
    eigenvalues: np.ndarray  # final diagonal, in the original index order
    log: DecimationLog
    observers: list = field(default_factory=list)
    vectors: np.ndarray | None = None  # columns are eigenvectors
    norm_trace: np.ndarray | None = None
    matrix: np.ndarray | None = None

    @property
    def n_rotations(self) -> int:
        return self.log.n_total

    @property
    def order(self) -> np.ndarray:
        return np.argsort(self.eigenvalues, kind="stable")

    def sorted(self):
        """Eigenvalues ascending, plus observers/vectors permuted to match."""
        o = self.order
        obs = [X[np.ix_(o, o)] for X in self.observers]
        vec = None if self.vectors is None else self.vectors[:, o]
        return self.eigenvalues[o], obs, vec


def jacobi_diagonalize(H, w_min: float = 1e-6, observers: Sequence = (), *,
                       vectors: bool = False, max_rotations: int | None = None,
                       checkpoints: Sequence[float] = (),
                       on_checkpoint: Callable | None = None,
                       norm_every: int = 0, keep_matrix: bool = False) -> JacobiResult:
    """Max-pivot Jacobi with logging and co-rotated observers.

    Rotations continue until the largest off-diagonal magnitude is below
    ``w_min``.  ``checkpoints`` are thresholds above ``w_min``; the first time
    the current maximum drops below one, ``on_checkpoint(w_c, M, observers,
    log)`` is called with views of the live state (copy what you keep).
    ``norm_every`` > 0 samples the off-diagonal norm every that many rotations.
    """
    if w_min <= 0:
        raise ValueError("w_min must be positive")
    M = _as_hermitian(H, "H").copy()
    n = M.shape[0]
    if n < 2:
        raise ValueError("need dim >= 2")
    obs_in = [_as_hermitian(X, f"observer {i}") for i, X in enumerate(observers)]
    for X in obs_in:
        if X.shape != M.shape:
            raise ValueError("observer dimension mismatch")
    if any(np.iscomplexobj(X) for X in obs_in) or np.iscomplexobj(M):
        odt = complex
    else:
        odt = float
    obs = np.zeros((len(obs_in), n, n), dtype=odt)
    for i, X in enumerate(obs_in):
        obs[i] = X
    if not np.all(np.isfinite(M)):
        raise JacobiConvergenceError("non-finite entries in H")

    Ut = np.eye(n, dtype=M.dtype) if vectors else np.zeros((1, 1), dtype=M.dtype)
    cap_total = int(max_rotations) if max_rotations is not None else 50 * n * n
    rmax = np.zeros(n)
    ridx = np.zeros(n, dtype=np.int64)
    K.init_row_max(M, rmax, ridx)

    cap = min(cap_total, 2 * n * n + 64)
    logs = [np.zeros(cap) for _ in range(5)] + [np.zeros(cap, np.int64) for _ in range(2)]
    norm_log = np.zeros(cap_total // norm_every + 2 if norm_every > 0 else 1)
    norm_pos = 0
    pos = 0
    used_total = 0

    stops = sorted({float(c) for c in checkpoints if c > w_min}, reverse=True) + [float(w_min)]
    for w_stop in stops:
        while True:
            budget = cap_total - used_total
            pos, used, norm_pos, status = K.run_jacobi(
                M, obs, Ut, vectors, rmax, ridx, w_stop, budget, *logs, pos,
                norm_every, norm_log, norm_pos)
            used_total += used
            if status == K.CONVERGED:
                break
            if status == K.LOG_FULL:
                new = min(cap_total, 2 * len(logs[0]))
                logs = [np.concatenate([x, np.zeros(new - len(x), x.dtype)]) for x in logs]
                continue
            raise JacobiConvergenceError(
                f"no convergence after {used_total} rotations (max off-diagonal "
                f"{rmax[:-1].max():.3e} > {w_stop:.3e})")
        if on_checkpoint is not None and w_stop != stops[-1]:
            on_checkpoint(w_stop, M, list(obs), _make_log(logs, pos))

    log = _make_log(logs, pos, copy=True)
    U = Ut.T.copy() if vectors else None
    return JacobiResult(np.real(np.diag(M)).copy(), log, [X.copy() for X in obs], U,
                        norm_log[:norm_pos].copy() if norm_every > 0 else None,
                        M if keep_matrix else None)


def _make_log(logs, pos, copy=False) -> DecimationLog:
    take = (lambda x: x[:pos].copy()) if copy else (lambda x: x[:pos])
    return DecimationLog(*[take(x) for x in logs])
