import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from sjaflow.dynamics import (TimeSeries, average_series, bin_phases, error_curve,
                              exact_autocorrelator, exact_quench, exact_quench_corotated,
                              long_time_mean, response_amplitude, synthesize_autocorr,
                              synthesize_quench, tdpt_autocorr, tdpt_quench, time_grid)
from sjaflow.eth import EnergyGrid, extract_form_factors
from sjaflow.models import RmtSpec, build_rmt


@pytest.fixture(scope="module")
def small_problem():
    return build_rmt(RmtSpec(64, 0.3, 1.0, seed=5))


def test_exact_against_propagator(small_problem):
    P = small_problem
    H = P.H
    E, U = np.linalg.eigh(H)
    times = np.linspace(0, 6, 7)
    x = exact_quench(E, U, P.rho_diag, P.A_diag, times)
    rho, A = np.diag(P.rho_diag), np.diag(P.A_diag)
    for t, v in zip(times, x.values):
        Ut = expm(-1j * H * t)
        assert v == pytest.approx(np.trace(Ut @ rho @ Ut.conj().T @ A).real, abs=1e-10)
    assert x.values[0] == pytest.approx(P.rho_diag @ P.A_diag)
    y = exact_quench_corotated(E, U.T @ rho @ U, U.T @ A @ U, times)
    np.testing.assert_allclose(y.values, x.values, atol=1e-12)


def test_exact_rejects_nonunitary(small_problem):
    P = small_problem
    with pytest.raises(ValueError):
        exact_quench(P.energies, 1.01 * np.eye(P.N), P.rho_diag, P.A_diag, [0.0, 1.0])


def test_zero_coupling_is_constant(small_problem):
    P = small_problem
    t = np.linspace(0, 10, 50)
    x = exact_quench(P.energies, np.eye(P.N), P.rho_diag, P.A_diag, t)
    np.testing.assert_allclose(x.values, P.rho_diag @ P.A_diag, rtol=1e-12)
    y = tdpt_quench(P.energies, P.V, P.rho_diag, P.A_diag, 0.0, t)
    np.testing.assert_allclose(y.values, P.rho_diag @ P.A_diag, rtol=1e-12)


def test_identity_autocorrelator(small_problem):
    E, U = np.linalg.eigh(small_problem.H)
    x = exact_autocorrelator(E, np.eye(len(E)), np.linspace(0, 5, 11))
    np.testing.assert_allclose(x.values, 1.0, rtol=1e-12)


def test_autocorr_t0(small_problem):
    P = small_problem
    E, U = np.linalg.eigh(P.H)
    A_H = U.T @ np.diag(P.A_diag) @ U
    x = exact_autocorrelator(E, A_H, [0.0, 1.0])
    assert x.values[0] == pytest.approx(np.sum(P.A_diag ** 2) / P.N)
    y = tdpt_autocorr(P.energies, P.V, P.A_diag, P.J, [0.0, 1.0])
    assert y.values[0] == pytest.approx(np.sum(P.A_diag ** 2) / P.N)


def test_tdpt_scales_with_J_squared(small_problem):
    P = small_problem
    t = np.linspace(0, 8, 33)
    v0 = P.rho_diag @ P.A_diag
    a = tdpt_quench(P.energies, P.V, P.rho_diag, P.A_diag, 0.1, t).values - v0
    b = tdpt_quench(P.energies, P.V, P.rho_diag, P.A_diag, 0.3, t).values - v0
    np.testing.assert_allclose(b, 9 * a, rtol=1e-10, atol=1e-15)
    assert a[0] == pytest.approx(0, abs=1e-15)


def test_tdpt_agrees_with_exact_at_weak_coupling():
    P = build_rmt(RmtSpec(128, 0.02, 1.0, seed=6))
    E, U = np.linalg.eigh(P.H)
    t = np.linspace(0, 3, 13)
    ex = exact_quench(E, U, P.rho_diag, P.A_diag, t).values
    td = tdpt_quench(P.energies, P.V, P.rho_diag, P.A_diag, P.J, t).values
    v0 = ex[0]
    assert np.max(np.abs(td - ex)) < 0.05 * np.max(np.abs(td - v0))


def test_tdpt_literal_and_degenerate():
    E = np.array([0.0, 0.0, 1.0])
    V = np.array([[0, 1, 1], [1, 0, 0], [1, 0, 0.0]])
    x = tdpt_quench(E, V, [1, 0, 0], E, 0.5, [0.0, 1.0])
    assert x.meta["degenerate_pairs"] == 1
    y = tdpt_quench(E, V, [1, 0, 0], E, 0.5, [0.0, 1.0], literal=True)
    # the literal form omits the -1 and therefore starts shifted
    assert y.values[0] != pytest.approx(x.values[0])


def pair_oracle(Bc, lab, members, t):
    out = -Bc.sum()
    M = Bc.shape[0]
    for I in range(M):
        for J in range(M):
            pairs = [np.exp(-1j * (members[i] - members[j]) * t)
                     for i in np.nonzero(lab == I)[0] for j in np.nonzero(lab == J)[0] if i != j]
            if pairs:
                out += Bc[I, J] * np.mean(pairs).real
    return out


def test_synthesis_against_pair_loop(rng):
    E = np.sort(rng.uniform(-1, 1, 14))
    grid = EnergyGrid.by_count(E, 4)
    ff = extract_form_factors(E, np.full(14, 1 / 14), E ** 2, grid)
    ff.B = rng.standard_normal((grid.M, grid.M))
    h = grid.widths
    times = np.linspace(0, 4, 9)
    x = synthesize_quench(ff, 0.7, times)
    lab = grid.labels(E)
    Bc = ff.B * np.outer(h, h)
    for t, v in zip(times, x.values):
        assert v == pytest.approx(0.7 + pair_oracle(Bc, lab, E, t), abs=1e-12)


@pytest.mark.parametrize("use_members", [True, False])
def test_synthesis_t0_and_zero_B(rng, use_members):
    E = np.sort(rng.uniform(-1, 1, 16))
    grid = EnergyGrid.by_count(E, 4)
    ff = extract_form_factors(E, np.full(16, 1 / 16), E ** 2, grid)
    if not use_members:
        ff.members = None
    t = np.linspace(0, 5, 11)
    np.testing.assert_allclose(synthesize_quench(ff, 0.3, t).values, 0.3)
    ff.B = rng.standard_normal(ff.B.shape)
    assert synthesize_quench(ff, 0.3, t).values[0] == pytest.approx(0.3, abs=1e-13)
    ff.f2 = rng.uniform(size=ff.f2.shape)
    assert synthesize_autocorr(ff, 16, t, 1.25).values[0] == pytest.approx(1.25, abs=1e-13)
    assert synthesize_autocorr(ff, 16, t).values[0] == pytest.approx(ff.frobenius() / 16)


def test_bin_phases(rng):
    E = np.sort(rng.uniform(-1, 1, 9))
    grid = EnergyGrid.by_count(E, 3)
    z, n = bin_phases(grid, E, np.array([0.0, 2.0]))
    np.testing.assert_allclose(z[:, 0], 1.0)
    np.testing.assert_allclose(z[1, 1], np.mean(np.exp(2j * E[3:6])))
    np.testing.assert_array_equal(n, [3, 3, 3])


def test_error_curve_examples():
    t = np.linspace(0, 10, 11)
    ex = TimeSeries(t, np.sin(t), "exact")
    ap = TimeSeries(t, np.sin(t) + np.where(t < 2, 0.3, 0.1), "sja-1")
    es = error_curve(ap, ex, J=0.5)
    assert es.short_time_max_err == pytest.approx(0.3)  # Jt <= 1 covers t <= 2
    assert es.long_time_mean_err == pytest.approx(0.1)
    assert es.curve.label == "err:sja-1"
    with pytest.raises(ValueError):
        error_curve(TimeSeries(t[:5], t[:5], "a"), ex)


def test_amplitude_and_long_time_mean():
    t = np.linspace(0, 4, 5)
    s = TimeSeries(t, [1.0, 0.5, 1.4, 1.2, 1.2], "x")
    assert response_amplitude(s) == pytest.approx(0.5)
    assert long_time_mean(s) == pytest.approx(1.2)


def test_series_validation():
    with pytest.raises(ValueError):
        TimeSeries([0, 1], [1 + 1e-3j, 1], "x")
    assert TimeSeries([0, 1], [1 + 1e-12j, 1], "x").values.dtype == float
    with pytest.raises(ValueError):
        TimeSeries([0, 0], [1, 1], "x")
    with pytest.raises(ValueError):
        TimeSeries([0, 1], [np.nan, 1], "x")


def test_csv_roundtrip(tmp_path):
    s = TimeSeries(np.linspace(0, 1, 7), np.cos(np.arange(7.0)) / 3, "tdpt", dict(J=0.5))
    p, side = s.to_csv(tmp_path / "s.csv", dict(epsilon=1 / 3))
    back = TimeSeries.from_csv(p)
    np.testing.assert_array_equal(back.values, s.values)
    np.testing.assert_array_equal(back.times, s.times)
    assert back.label == "tdpt"
    assert json.load(open(side))["epsilon"] == pytest.approx(1 / 3)


@given(st.floats(1, 200), st.integers(2, 600), st.floats(0.1, 50))
def test_time_grid_phase_step(T, n, wmax):
    t = time_grid(T, n, wmax)
    assert t[0] == 0 and t[-1] == pytest.approx(T)
    assert len(t) >= n
    assert wmax * (t[1] - t[0]) <= np.pi / 4 + 1e-12


def test_average_series():
    t = np.linspace(0, 1, 5)
    a = TimeSeries(t, np.ones(5), "x")
    b = TimeSeries(t, 3 * np.ones(5), "x")
    m = average_series([a, b])
    np.testing.assert_allclose(m.values, 2.0)
    assert m.meta["n_averaged"] == 2
    with pytest.raises(ValueError):
        average_series([a, TimeSeries(t * 2, np.ones(5), "x")])
