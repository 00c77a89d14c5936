import numpy as np
import pytest
from hypothesis import given, strategies as st

from sjaflow.hermitian import (DecimationLog, JacobiConvergenceError, TwoLevelRotation,
                               apply_rotation, find_max_offdiagonal, jacobi_diagonalize,
                               offdiagonal_norm, rotation_from_pivot)

from conftest import random_hermitian


def scan_oracle(M):
    n = M.shape[0]
    best, arg = -1.0, None
    for a in range(n):
        for b in range(a + 1, n):
            if abs(M[a, b]) > best:
                best, arg = abs(M[a, b]), (a, b)
    return arg, best


# --- pivot search --------------------------------------------------------------------

def test_pivot_diagonal_matrix():
    a, b, w, ph = find_max_offdiagonal(np.diag([1.0, 2.0, 3.0]))
    assert w == 0.0


def test_pivot_two_by_two():
    assert find_max_offdiagonal(np.array([[1, 0.5], [0.5, 0]])) == (0, 1, 0.5, 0.0)


def test_pivot_matches_scan(rng):
    for _ in range(10):
        M = random_hermitian(rng, 8)
        a, b, w, ph = find_max_offdiagonal(M)
        (a0, b0), w0 = scan_oracle(M)
        assert (a, b) == (a0, b0)
        assert w == pytest.approx(w0)
        assert M[b, a] == pytest.approx(w * np.exp(1j * ph))


def test_pivot_ties_lexicographic():
    M = np.zeros((4, 4))
    for a, b in [(2, 3), (0, 3), (1, 2)]:
        M[a, b] = M[b, a] = 1.0
    assert find_max_offdiagonal(M)[:2] == (0, 3)


# --- rotation angle -----------------------------------------------------------------

def test_angle_examples():
    assert rotation_from_pivot(1, 0, 0.5, 0).eta == pytest.approx(np.pi / 4)
    assert rotation_from_pivot(0.3, 0.3, 0.2, 0).eta == pytest.approx(np.pi / 2)
    assert rotation_from_pivot(0, 0, 0, 0).eta == 0.0


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(1e-6, 3))
def test_angle_branch(Ea, Eb, w):
    eta = rotation_from_pivot(Ea, Eb, w, 0).eta
    assert -np.pi / 2 <= eta <= np.pi / 2
    # tan(eta) (Ea - Eb) = 2w, written without the pole
    assert np.sin(eta) * (Ea - Eb) == pytest.approx(2 * w * np.cos(eta), abs=1e-12 * (1 + w))


def test_rotation_two_by_two_closed_form():
    H = np.array([[1.0, 0.5], [0.5, 0.0]])
    a, b, w, ph = find_max_offdiagonal(H)
    apply_rotation(H, rotation_from_pivot(H[a, a], H[b, b], w, ph, a, b))
    assert abs(H[0, 1]) < 1e-15 and abs(H[1, 0]) < 1e-15
    assert H[0, 0] == pytest.approx((1 + np.sqrt(2)) / 2)
    assert H[1, 1] == pytest.approx((1 - np.sqrt(2)) / 2)


def test_identity_rotation_is_noop(rng):
    M = random_hermitian(rng, 5)
    M0 = M.copy()
    apply_rotation(M, TwoLevelRotation(1, 3, 0.0, 0.3, 0.0))
    np.testing.assert_allclose(M, M0, atol=1e-15)


@pytest.mark.parametrize("complex_", [False, True])
def test_rotation_matches_dense_conjugation(rng, complex_):
    M = random_hermitian(rng, 3, complex_)
    a, b, w, ph = find_max_offdiagonal(M)
    r = rotation_from_pivot(M[a, a].real, M[b, b].real, w, ph, a, b)
    R = r.matrix(3)
    ref = R.conj().T @ M @ R
    X = M.copy()
    apply_rotation(X, r)
    np.testing.assert_allclose(X, ref, atol=1e-13)
    assert abs(X[a, b]) < 1e-13


# --- off-diagonal norm ------------------------------------------------------------

def test_offdiagonal_norm_examples(rng):
    assert offdiagonal_norm(np.diag([1.0, 2.0, 3.0])) == 0.0
    assert offdiagonal_norm(np.array([[0, 0.7], [0.7, 0]])) == pytest.approx(0.49)
    M = random_hermitian(rng, 16)
    ref = sum(abs(M[j, k]) ** 2 for j in range(16) for k in range(16) if j != k) / 16
    assert offdiagonal_norm(M) == pytest.approx(ref)


# --- full diagonalization -----------------------------------------------------------

def test_diagonal_input():
    res = jacobi_diagonalize(np.diag([3.0, 1.0, 2.0]))
    assert res.n_rotations == 0
    np.testing.assert_array_equal(res.eigenvalues, [3.0, 1.0, 2.0])


def test_real_64_against_eigvalsh(rng):
    H = random_hermitian(rng, 64, complex_=False)
    res = jacobi_diagonalize(H, 1e-6)
    np.testing.assert_allclose(np.sort(res.eigenvalues), np.linalg.eigvalsh(H), atol=1e-8)


@given(st.integers(2, 24), st.booleans(), st.integers(0, 2 ** 31))
def test_eigenvalues_property(n, complex_, seed):
    H = random_hermitian(np.random.default_rng(seed), n, complex_)
    res = jacobi_diagonalize(H, 1e-9)
    np.testing.assert_allclose(np.sort(res.eigenvalues), np.linalg.eigvalsh(H), atol=1e-8)


def test_norm_trace_monotone_and_final(rng):
    n = 32
    H = random_hermitian(rng, n)
    w_min = 1e-6
    res = jacobi_diagonalize(H, w_min, norm_every=n, keep_matrix=True)
    tr = res.norm_trace
    assert len(tr) > 3
    assert np.all(np.diff(tr) <= 1e-14 * tr[0])
    # every remaining element is below w_min
    assert offdiagonal_norm(res.matrix) <= (n - 1) * w_min ** 2


def test_unitarity_and_trace_pairing(rng):
    n = 40
    H = random_hermitian(rng, n)
    rho = random_hermitian(rng, n)
    A = random_hermitian(rng, n)
    res = jacobi_diagonalize(H, 1e-8, [rho, A])
    tol = 1e-10 * np.sqrt(res.n_rotations)
    assert abs(res.eigenvalues.sum() - np.trace(H).real) <= tol * abs(np.trace(H)) + 1e-12
    for X, X0 in zip(res.observers, (rho, A)):
        assert np.linalg.norm(X) == pytest.approx(np.linalg.norm(X0), rel=tol)
    p0 = np.sum(rho * A.T)
    p1 = np.sum(res.observers[0] * res.observers[1].T)
    assert abs(p1 - p0) <= tol * abs(p0)


def test_vectors_diagonalize(rng):
    H = random_hermitian(rng, 20)
    res = jacobi_diagonalize(H, 1e-10, vectors=True)
    U = res.vectors
    np.testing.assert_allclose(U.conj().T @ U, np.eye(20), atol=1e-12)
    np.testing.assert_allclose(U.conj().T @ H @ U, np.diag(res.eigenvalues), atol=1e-9)


def test_logged_w_is_true_maximum(rng):
    """Replay the log on a copy and compare each w with an exhaustive scan."""
    H = random_hermitian(rng, 12)
    res = jacobi_diagonalize(H, 1e-8, keep_matrix=True)
    M = H.copy()
    lg = res.log
    for i in range(lg.n_total):
        (a, b), w = scan_oracle(M)
        assert (lg.a[i], lg.b[i]) == (a, b)
        assert lg.w[i] == pytest.approx(w, rel=1e-12)
        assert lg.E_a[i] == pytest.approx(M[a, a].real) and lg.E_b[i] == pytest.approx(M[b, b].real)
        apply_rotation(M, lg[i])
    np.testing.assert_allclose(M, res.matrix, atol=1e-12)


def test_running_average_of_w_non_increasing(rng):
    n = 48
    res = jacobi_diagonalize(random_hermitian(rng, n, False), 1e-6)
    w = res.log.w
    m = len(w) // n
    avg = w[: m * n].reshape(m, n).mean(1)
    assert np.all(np.diff(avg) <= 1e-12)


def test_determinism(rng):
    H = random_hermitian(rng, 30)
    a = jacobi_diagonalize(H, 1e-7).log
    b = jacobi_diagonalize(H, 1e-7).log
    for k in ("w", "E_a", "E_b", "eta", "phase", "a", "b"):
        np.testing.assert_array_equal(getattr(a, k), getattr(b, k))


def test_checkpoints_see_decreasing_max(rng):
    H = random_hermitian(rng, 24, False)
    seen = []

    def cb(wc, M, obs, lg):
        off = np.abs(M - np.diag(np.diag(M))).max()
        seen.append((wc, off, lg.n_total))

    res = jacobi_diagonalize(H, 1e-8, checkpoints=[1e-1, 1e-3, 1e-5], on_checkpoint=cb)
    assert [s[0] for s in seen] == [1e-1, 1e-3, 1e-5]
    assert all(off < wc for wc, off, _ in seen)
    assert [s[2] for s in seen] == sorted(s[2] for s in seen) and seen[-1][2] <= res.n_rotations


def test_rotation_cap_raises(rng):
    with pytest.raises(JacobiConvergenceError):
        jacobi_diagonalize(random_hermitian(rng, 16), 1e-12, max_rotations=5)


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        jacobi_diagonalize(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        jacobi_diagonalize(np.ones((1, 1)))
    with pytest.raises(ValueError, match="non-finite"):
        jacobi_diagonalize(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_log_csv_roundtrip(tmp_path, rng):
    lg = jacobi_diagonalize(random_hermitian(rng, 10), 1e-6).log
    p = tmp_path / "log.csv"
    lg.to_csv(p)
    back = DecimationLog.from_csv(p)
    for k in ("w", "E_a", "E_b", "eta", "phase"):
        np.testing.assert_array_equal(getattr(back, k), getattr(lg, k))
