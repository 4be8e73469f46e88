import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ha02.channel import FadingRealization, sample_tap_gains, true_channel_grid
from ha02.estimators import (
    FDMMSEEstimator,
    LSBilinearEstimator,
    MmseStatistics,
    bilinear_full_grid,
    frequency_correlation,
    ls_estimate,
    mmse_estimate,
    mmse_statistics,
    mmse_weights,
)
from ha02.evaluation import mse_metric
from ha02.ofdm import noise_variance
from ha02.simulation import simulate_slot, slot_rng

from .conftest import CI_SEEDS


def reference_interpolator(p, frame):
    """Two-pass loop interpolator: frequency per pilot column, then time."""
    n, ns = frame.n_subcarriers, frame.n_symbols
    cols = np.empty((n, 2), dtype=complex)
    for j, sub in enumerate(frame.pilot_subcarriers):
        sub = list(sub)
        for k in range(n):
            if k <= sub[0]:
                cols[k, j] = p[0, j]
            elif k >= sub[-1]:
                cols[k, j] = p[-1, j]
            else:
                q = max(i for i, s in enumerate(sub) if s <= k)
                if sub[q] == k:
                    cols[k, j] = p[q, j]
                else:
                    lo, hi, step = p[q, j], p[q + 1, j], sub[q + 1] - sub[q]
                    cols[k, j] = complex((hi.real - lo.real) / step * (k - sub[q]) + lo.real,
                                         (hi.imag - lo.imag) / step * (k - sub[q]) + lo.imag)
    t0, t1 = frame.pilot_symbols
    out = np.empty((n, ns), dtype=complex)
    for i in range(ns):
        w = min(max((i - t0) / (t1 - t0), 0.0), 1.0)
        for k in range(n):
            out[k, i] = cols[k, 0] * (1 - w) + cols[k, 1] * w
    return out


def kms_statistics(rho, nsr, frame):
    """Full-rank exponential-correlation statistics, r(dk) = rho**|dk|."""
    k = np.arange(frame.n_subcarriers)
    R_hhp = [rho ** np.abs(k[:, None] - s[None, :]).astype(complex) for s in frame.pilot_subcarriers]
    R_hphp = [rho ** np.abs(s[:, None] - s[None, :]).astype(complex) for s in frame.pilot_subcarriers]
    return MmseStatistics(R_hhp, R_hphp, nsr)


@pytest.fixture(scope="module")
def slots_10db(frame):
    """10^4 ETU slots at 10 dB SNR, Doppler drawn from [0, 97] Hz."""
    n = 10_000
    P = np.empty((n, 36, 2), complex)
    Hp = np.empty((n, 36, 2), complex)
    H = np.empty((n, 72, 14), complex)
    for i in range(n):
        r = slot_rng(99, i)
        s = simulate_slot(r, 10.0, r.uniform(0, 97), frame=frame)
        P[i] = ls_estimate(s.Y, frame)
        Hp[i] = ls_estimate(s.H * s.X, frame)
        H[i] = s.H
    return P, Hp, H


class TestLsEstimate:
    @pytest.mark.parametrize("seed", CI_SEEDS)
    def test_exact_at_pilots_noiseless(self, seed, frame):
        s = simulate_slot(slot_rng(seed, 0), np.inf, 97.0, frame=frame)
        p = ls_estimate(s.Y, frame)
        for j, (sym, sub) in enumerate(zip(frame.pilot_symbols, frame.pilot_subcarriers)):
            np.testing.assert_allclose(p[:, j], s.H[sub, sym], atol=1e-9)

    def test_unit_channel(self, frame, rng):
        from ha02.ofdm import build_slot

        X = build_slot(rng.integers(0, 2, 1728), frame)
        np.testing.assert_allclose(ls_estimate(X, frame), np.ones((36, 2)))

    def test_zero_pilot_rejected(self, frame):
        with pytest.raises(ValueError, match="nonzero"):
            ls_estimate(np.ones((72, 14)), frame, X_pilots=np.zeros((36, 2)))

    def test_noise_level(self, slots_10db):
        P, Hp, _ = slots_10db
        per_symbol = np.mean(np.abs(P - Hp) ** 2, axis=(0, 1))
        np.testing.assert_allclose(per_symbol, noise_variance(10.0), rtol=0.05)


class TestBilinear:
    def test_constant(self, frame):
        c = 0.3 - 1.2j
        np.testing.assert_allclose(bilinear_full_grid(np.full((36, 2), c), frame), np.full((72, 14), c))

    def test_affine_in_frequency_is_recovered(self, frame):
        k = np.arange(72)
        Hcol = (0.5 + 0.1j) + (0.02 - 0.01j) * k
        p = np.stack([Hcol[s] for s in frame.pilot_subcarriers], axis=-1)
        out = bilinear_full_grid(p, frame)
        np.testing.assert_allclose(out[1:71, :], np.repeat(Hcol[1:71, None], 14, axis=1), atol=1e-14)

    def test_edge_hold_and_time_hold(self, frame, rng):
        p = rng.standard_normal((36, 2)) + 1j * rng.standard_normal((36, 2))
        out = bilinear_full_grid(p, frame)
        assert out[71, 0] == p[-1, 0]
        assert out[0, 12] == p[0, 1]
        np.testing.assert_array_equal(out[:, 13], out[:, 12])

    def test_matches_reference_bit_for_bit(self, frame):
        r = np.random.default_rng(2024)
        P = r.standard_normal((1000, 36, 2)) + 1j * r.standard_normal((1000, 36, 2))
        out = bilinear_full_grid(P, frame)
        for i in range(1000):
            np.testing.assert_array_equal(out[i], reference_interpolator(P[i], frame))


class TestMmseStatistics:
    def test_single_tap(self, frame):
        st_ = mmse_statistics([0], [1.0], 10.0, frame)
        for R in st_.R_hhp + st_.R_hphp:
            np.testing.assert_allclose(R, 1.0)
        assert np.linalg.matrix_rank(st_.R_hphp[0]) == 1
        assert st_.nsr == pytest.approx(0.1)

    def test_unit_lag_zero(self, etu, frame):
        d, p = etu.discrete_taps(frame)
        assert frequency_correlation(d, p, 0, 72) == pytest.approx(1.0)

    def test_structure(self, etu, frame):
        d, p = etu.discrete_taps(frame)
        st_ = mmse_statistics(d, p, 10.0, frame)
        for j, sub in enumerate(frame.pilot_subcarriers):
            R = st_.R_hphp[j]
            np.testing.assert_allclose(R, R.conj().T, atol=1e-14)
            np.testing.assert_allclose(np.diag(R), 1.0)
            assert np.linalg.eigvalsh(R).min() > -1e-10
            np.testing.assert_allclose(st_.R_hhp[j][sub], R, atol=1e-14)

    def test_matches_empirical_covariance(self, etu, frame):
        r = np.random.default_rng(8)
        g = sample_tap_gains(etu.powers, 0.0, [0.0], r, size=100_000)
        H = true_channel_grid(FadingRealization(etu.sample_delays(frame), g), frame)[..., 0]
        d, p = etu.discrete_taps(frame)
        st_ = mmse_statistics(d, p, 10.0, frame)
        for j, sub in enumerate(frame.pilot_subcarriers):
            Hp = H[:, sub]
            emp = Hp.T @ Hp.conj() / len(Hp)
            rel = np.linalg.norm(emp - st_.R_hphp[j]) / np.linalg.norm(st_.R_hphp[j])
            assert rel < 0.02


class TestMmseEstimate:
    def test_approaches_ls_at_vanishing_noise(self, frame, rng):
        p = rng.standard_normal((36, 2)) + 1j * rng.standard_normal((36, 2))
        out = mmse_estimate(p, kms_statistics(0.7, 0.0, frame), frame)
        for j, (sym, sub) in enumerate(zip(frame.pilot_symbols, frame.pilot_subcarriers)):
            np.testing.assert_allclose(out[sub, sym], p[:, j], atol=1e-8)

    def test_flat_channel_averages_noise(self, frame):
        r = np.random.default_rng(9)
        nsr = noise_variance(10.0)
        st_ = mmse_statistics([0], [1.0], 10.0, frame)
        W = mmse_weights(st_)
        n = 10_000
        c = (r.standard_normal(n) + 1j * r.standard_normal(n)) / np.sqrt(2)
        noise = np.sqrt(nsr / 2) * (r.standard_normal((n, 36, 2)) + 1j * r.standard_normal((n, 36, 2)))
        est = mmse_estimate(c[:, None, None] + noise, st_, frame, W)
        err = np.mean(np.abs(est[..., [0, 12]] - c[:, None, None]) ** 2)
        assert err == pytest.approx(nsr / 36, rel=0.05)

    @given(st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False))
    @settings(max_examples=30, deadline=None)
    def test_linear_in_observation(self, alpha):
        from ha02.ofdm import DEFAULT_FRAME as frame

        r = np.random.default_rng(0)
        p = r.standard_normal((36, 2)) + 1j * r.standard_normal((36, 2))
        st_ = mmse_statistics([0, 1, 2, 5], [0.4, 0.3, 0.2, 0.1], 10.0, frame)
        np.testing.assert_allclose(mmse_estimate(alpha * p, st_, frame), alpha * mmse_estimate(p, st_, frame),
                                   atol=1e-9 * max(1.0, abs(alpha)))

    def test_factorization_failure(self, frame):
        bad = MmseStatistics([np.ones((72, 36))] * 2, [-np.eye(36)] * 2, 0.0)
        with pytest.raises(FloatingPointError):
            mmse_weights(bad)

    def test_beats_ls_per_slot(self, slots_10db, frame):
        P, _, H = slots_10db
        mmse = FDMMSEEstimator(10.0, frame=frame).fit().predict(P)
        ls = LSBilinearEstimator(frame).fit().predict(P)
        wins = mse_metric(mmse, H) < mse_metric(ls, H)
        assert wins.mean() >= 0.99

    @pytest.mark.parametrize("snr", [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0])
    def test_dominance_on_average(self, snr, frame):
        P, H = [], []
        for i in range(200):
            r = slot_rng(5, i, stream=int(snr))
            s = simulate_slot(r, snr, r.uniform(0, 97), frame=frame)
            P.append(ls_estimate(s.Y, frame))
            H.append(s.H)
        P, H = np.array(P), np.array(H)
        mmse = FDMMSEEstimator(snr, frame=frame).fit().predict(P)
        ls = LSBilinearEstimator(frame).fit().predict(P)
        assert mse_metric(mmse, H).mean() <= mse_metric(ls, H).mean()


class TestEstimatorApi:
    @pytest.mark.parametrize("est", [LSBilinearEstimator(), FDMMSEEstimator(snr_db=5.0)])
    def test_clone_round_trip(self, est):
        assert clone(est).get_params() == est.get_params()

    def test_set_params(self):
        est = FDMMSEEstimator().set_params(snr_db=20.0)
        assert est.fit().statistics_.nsr == pytest.approx(0.01)

    def test_predict_shapes(self, rng):
        P = rng.standard_normal((4, 36, 2)) + 0j
        assert LSBilinearEstimator().fit().predict(P).shape == (4, 72, 14)
        assert FDMMSEEstimator().fit().predict(P[0]).shape == (1, 72, 14)

    def test_unfitted(self):
        with pytest.raises(NotFittedError):
            FDMMSEEstimator().predict(np.zeros((1, 36, 2)))

    @pytest.mark.parametrize("bad", [np.zeros((2, 72, 2)), np.zeros(5), np.full((1, 36, 2), np.nan)])
    def test_invalid_input(self, bad):
        with pytest.raises(ValueError):
            LSBilinearEstimator().fit().predict(bad)
