import numpy as np
import pytest
from hypothesis import given, strategies as st

from sjaflow.decimation import (KernelTable, build_kernel_table, dense_regime_check,
                                jacobi_spectral_function, matrix_spectral_function,
                                slice_assignment)
from sjaflow.eth import EnergyGrid
from sjaflow.hermitian import DecimationLog, jacobi_diagonalize

from conftest import random_hermitian


def two_bin_grid():
    return EnergyGrid(np.array([-0.5, 0.5, 1.5]))


def test_single_event_two_cells():
    lg = DecimationLog([0.3], [0.1], [1.2], [0.4], [0.0])
    g = two_bin_grid()
    kt = build_kernel_table(lg, np.array([2.0, 2.0]), g, n_slices=4)
    tot = kt.total()
    s2 = np.sin(0.2) ** 2
    np.testing.assert_allclose(tot, [[0, s2], [s2, 0]])
    assert kt.counts.sum() == 2
    # per-row kernel divides by nu h = 2 rows
    np.testing.assert_allclose(kt.kernel(0) + kt.kernel(1) + kt.kernel(2) + kt.kernel(3),
                               tot / 2)


def test_small_angle_weights():
    lg = DecimationLog([0.1, 0.2], [0.0, 0.1], [1.0, 0.2], [0.2, 0.5], [0, 0])
    kt = build_kernel_table(lg, np.ones(2), two_bin_grid(), 4, small_angle=True)
    # same-bin event contributes nothing; the other gives w^2 / 1^2
    np.testing.assert_allclose(kt.total(), [[0, 0.01], [0.01, 0]])
    assert kt.mode == "small-angle"


def log_for(rng, n=48, complex_=False):
    H = random_hermitian(rng, n, complex_, scale=1 / np.sqrt(n))
    res = jacobi_diagonalize(H + np.diag(np.linspace(-1, 1, n)), 1e-6)
    return res


def test_kernel_invariants(rng):
    res = log_for(rng)
    lg = res.log
    E = res.eigenvalues
    g = EnergyGrid.by_count(E, 4)
    nu = g.counts(E) / g.widths
    kt = build_kernel_table(lg, nu, g, 16)
    assert kt.total().sum() == pytest.approx(2 * np.sum(np.sin(lg.eta / 2) ** 2))
    assert kt.counts.sum() == 2 * lg.n_total
    np.testing.assert_allclose(kt.total(), kt.total().T)
    hi, lo = kt.w_hi[~np.isnan(kt.w_hi)], kt.w_lo[~np.isnan(kt.w_lo)]
    assert np.all(hi >= lo)
    assert np.all(lo[:-1] >= hi[1:])
    coarse = kt.coarsen(4)
    np.testing.assert_allclose(coarse.total(), kt.total())
    with pytest.raises(ValueError):
        kt.coarsen(5)
    avg = KernelTable.average([kt, kt])
    np.testing.assert_allclose(avg.weights, kt.weights)


@given(st.integers(1, 200), st.integers(4, 40), st.sampled_from(["count", "weight"]),
       st.integers(0, 2 ** 31))
def test_slice_assignment_monotone(n, S, scheme, seed):
    rng = np.random.default_rng(seed)
    w = rng.exponential(size=n)
    wt = rng.uniform(0, 1, n)
    sl = slice_assignment(w, wt, S, scheme)
    assert sl.min() >= 0 and sl.max() < S
    order = np.argsort(-w, kind="stable")
    assert np.all(np.diff(sl[order]) >= 0)


def test_kernel_rejects_bad_input():
    with pytest.raises(ValueError):
        build_kernel_table(DecimationLog.empty(), np.ones(2), two_bin_grid())
    lg = DecimationLog([0.3], [0.1], [1.2], [0.4], [0.0])
    with pytest.raises(ValueError):
        build_kernel_table(lg, np.ones(2), two_bin_grid(), n_slices=2)


def test_kernel_csv(tmp_path):
    lg = DecimationLog([0.3, 0.1], [0.1, 0.2], [1.2, 1.0], [0.4, 0.1], [0.0, 0.0])
    kt = build_kernel_table(lg, np.array([2.0, 2.0]), two_bin_grid(), 4)
    kt.to_csv(tmp_path / "k.csv")
    rows = np.loadtxt(tmp_path / "k.csv", delimiter=",", skiprows=1)
    assert rows.shape[1] == 7
    assert rows[:, 6].sum() == 4
    assert rows[:, 5].sum() == pytest.approx(kt.total().sum() / 2)


def test_spectral_function_sum_rule(rng):
    res = log_for(rng, 40, True)
    lg, E = res.log, res.eigenvalues
    g = EnergyGrid.by_count(E, 4)
    nu = g.counts(E) / g.widths
    J = 0.37
    f = jacobi_spectral_function(lg, nu, g, J)
    assert J ** 2 * np.sum(f * nu[:, None] * np.outer(g.widths, g.widths)) == pytest.approx(
        2 * np.sum(lg.w ** 2))
    assert np.all(jacobi_spectral_function(lg, nu, g, 0.0) == 0)
    gr = EnergyGrid(g.e_edges, np.linspace(-5, 5, 21))
    fr = jacobi_spectral_function(lg, nu, gr, J, cells="rect")
    total = J ** 2 * np.sum(fr * nu[:, None] * g.widths[:, None] * np.diff(gr.w_edges)[None, :])
    assert total == pytest.approx(2 * np.sum(lg.w ** 2))


def test_matrix_spectral_function_normalization(rng):
    n = 24
    E = np.sort(rng.uniform(-1, 1, n))
    X2 = rng.uniform(size=(n, n))
    X2 = X2 + X2.T
    g = EnergyGrid.by_count(E, 4)
    nu = g.counts(E) / g.widths
    f = matrix_spectral_function(X2, E, nu, g, cells="pair")
    off = X2.sum() - np.trace(X2)
    assert np.sum(f * nu[:, None] * np.outer(g.widths, g.widths)) == pytest.approx(off)


def test_dense_regime_same_log(rng):
    res = log_for(rng, 64)
    rep = dense_regime_check(res.log, 64, res.eigenvalues, res.log, 64, res.eigenvalues,
                             min_events=1)
    assert rep.ratio == pytest.approx(1.0)
    assert rep.status == "PASS"


def coupled(rng, N, scale):
    E = np.linspace(-1, 1, N)
    X = rng.standard_normal((N, N))
    return np.diag(E) + scale * (X + X.T) / 2


def test_dense_regime_flags_size_dependent_coupling(rng):
    """A coupling that does not shrink with N is not in the dense regime."""
    out = {}
    for label, scale in (("rmt", lambda N: 0.5 / np.sqrt(N)), ("fixed", lambda N: 0.05)):
        runs = [jacobi_diagonalize(coupled(rng, N, scale(N)), 1e-6) for N in (64, 256)]
        out[label] = dense_regime_check(runs[0].log, 64, runs[0].eigenvalues,
                                        runs[1].log, 256, runs[1].eigenvalues)
    assert out["rmt"].status == "PASS"
    assert out["fixed"].status == "FAIL"
    assert out["fixed"].ratio > 2


def test_dense_regime_inconclusive():
    lg = DecimationLog([1e-4], [0.0], [0.5], [0.01], [0.0])
    rep = dense_regime_check(lg, 4, [0, 0.5, 1, 1.5], lg, 8, np.linspace(0, 1.5, 8))
    assert rep.status == "INCONCLUSIVE"
