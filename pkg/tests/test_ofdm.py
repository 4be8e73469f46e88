import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ha02.channel import FadingRealization, apply_channel
from ha02.ofdm import (
    PILOT_SEED,
    FrameConfig,
    add_awgn,
    build_slot,
    extract_data,
    noise_variance,
    ofdm_demodulate,
    ofdm_modulate,
    qpsk_demodulate,
    qpsk_modulate,
)

from .conftest import CI_SEEDS


def random_bits(seed, n=1728):
    return np.random.default_rng(seed).integers(0, 2, n, dtype=np.int8)


class TestFrameConfig:
    def test_derived_quantities(self, frame):
        assert frame.sample_rate == 72 * 15e3 == 1.08e6
        assert frame.fft_size == 72
        assert frame.symbol_length == 88
        assert frame.slot_samples == 1232
        assert frame.n_bits == 1728
        assert frame.n_pilot == 2

    def test_cp_duration(self, frame):
        assert frame.cp_duration == pytest.approx(14.81e-6, abs=5e-9)

    def test_pilot_positions(self, frame):
        first, second = frame.pilot_subcarriers
        # 1-indexed odd subcarriers are 0-indexed even ones
        np.testing.assert_array_equal(first, np.arange(0, 72, 2))
        np.testing.assert_array_equal(second, np.arange(1, 72, 2))
        assert frame.pilot_symbols == (0, 12)

    def test_pilot_values_unit_modulus_and_seeded(self, frame):
        np.testing.assert_allclose(np.abs(frame.pilot_values), 1.0)
        assert frame.pilot_values.shape == (36, 2)
        np.testing.assert_array_equal(FrameConfig(pilot_seed=PILOT_SEED).pilot_values, frame.pilot_values)
        assert not np.array_equal(FrameConfig(pilot_seed=PILOT_SEED + 1).pilot_values, frame.pilot_values)

    def test_symbol_midpoints(self, frame):
        t = frame.symbol_times()
        assert len(t) == 14
        np.testing.assert_allclose(t[0], 44 / 1.08e6)
        np.testing.assert_allclose(np.diff(t), 88 / 1.08e6)


class TestQpsk:
    def test_zero_pair(self):
        np.testing.assert_allclose(qpsk_modulate([0, 0]), [(1 + 1j) / np.sqrt(2)])

    @pytest.mark.parametrize("bits,sym", [([0, 0], 1 + 1j), ([0, 1], 1 - 1j), ([1, 1], -1 - 1j), ([1, 0], -1 + 1j)])
    def test_gray_mapping(self, bits, sym):
        np.testing.assert_allclose(qpsk_modulate(bits), [sym / np.sqrt(2)])
        np.testing.assert_array_equal(qpsk_demodulate(np.array([sym])), bits)

    def test_unit_modulus(self):
        np.testing.assert_allclose(np.abs(qpsk_modulate(random_bits(0))), 1.0)

    def test_odd_length(self):
        with pytest.raises(ValueError, match="odd"):
            qpsk_modulate([0, 1, 1])

    def test_quadrant_rule(self):
        np.testing.assert_array_equal(qpsk_demodulate(np.array([-0.1 - 0.9j])), [1, 1])

    def test_ties_decide_zero(self):
        np.testing.assert_array_equal(qpsk_demodulate(np.array([0j, -1 + 0j])), [0, 0, 1, 0])

    @given(st.lists(st.integers(0, 1), min_size=0, max_size=64).filter(lambda b: len(b) % 2 == 0))
    def test_round_trip(self, bits):
        np.testing.assert_array_equal(qpsk_demodulate(qpsk_modulate(np.array(bits, dtype=np.int8))), bits)


class TestBuildSlot:
    def test_pilot_columns(self, frame):
        X = build_slot(random_bits(1), frame)
        assert np.count_nonzero(X[:, 0]) == 36
        np.testing.assert_array_equal(np.flatnonzero(X[:, 0]), np.arange(0, 72, 2))
        np.testing.assert_array_equal(np.flatnonzero(X[:, 12]), np.arange(1, 72, 2))
        np.testing.assert_array_equal(X[frame.pilot_subcarriers[0], 0], frame.pilot_values[:, 0])

    def test_data_columns_full(self, frame):
        X = build_slot(random_bits(2), frame)
        data = X[:, [c for c in range(14) if c not in (0, 12)]]
        np.testing.assert_allclose(np.abs(data), 1.0)

    def test_subcarrier_major_fill(self, frame):
        bits = np.zeros(1728, dtype=np.int8)
        bits[2:4] = 1  # second QPSK symbol
        X = build_slot(bits, frame)
        # the symbol index runs fastest, so symbol #2 sits on subcarrier 0, second data column
        np.testing.assert_allclose(X[0, 2], (-1 - 1j) / np.sqrt(2))
        np.testing.assert_allclose(X[1, 1], (1 + 1j) / np.sqrt(2))

    def test_wrong_length(self, frame):
        with pytest.raises(ValueError, match="1728"):
            build_slot(np.zeros(100, dtype=np.int8), frame)

    @pytest.mark.parametrize("seed", CI_SEEDS)
    def test_grid_occupancy(self, seed, frame):
        X = build_slot(random_bits(seed), frame)
        zeros = (X == 0).sum(axis=0)
        assert zeros[0] == zeros[12] == 36
        assert zeros.sum() == 72

    @pytest.mark.parametrize("seed", CI_SEEDS)
    def test_end_to_end_identity(self, seed, frame):
        bits = random_bits(seed)
        Y = ofdm_demodulate(ofdm_modulate(build_slot(bits, frame), frame), frame)
        np.testing.assert_array_equal(qpsk_demodulate(extract_data(Y, frame)), bits)


class TestOfdm:
    def test_output_length(self, frame):
        assert ofdm_modulate(build_slot(random_bits(0), frame), frame).shape == (1232,)

    def test_cyclic_prefix(self, frame):
        s = ofdm_modulate(build_slot(random_bits(0), frame), frame).reshape(14, 88)
        np.testing.assert_array_equal(s[:, :16], s[:, -16:])

    def test_parseval(self, frame):
        X = build_slot(random_bits(3), frame)
        s = ofdm_modulate(X, frame).reshape(14, 88)[:, 16:]
        p_time, p_freq = np.sum(np.abs(s) ** 2, axis=1), np.sum(np.abs(X) ** 2, axis=0)
        np.testing.assert_allclose(p_time, p_freq, rtol=1e-12)

    @pytest.mark.parametrize("k", [0, 1, 17, 71])
    def test_single_subcarrier_is_exponential(self, k, frame):
        X = np.zeros((72, 14), complex)
        X[k, 5] = 1.0
        s = ofdm_modulate(X, frame).reshape(14, 88)[5, 16:]
        n = np.arange(72)
        np.testing.assert_allclose(s, np.exp(2j * np.pi * k * n / 72) / np.sqrt(72), atol=1e-15)

    @pytest.mark.parametrize("seed", CI_SEEDS)
    def test_round_trip(self, seed, frame):
        r = np.random.default_rng(seed)
        X = r.standard_normal((72, 14)) + 1j * r.standard_normal((72, 14))
        np.testing.assert_allclose(ofdm_demodulate(ofdm_modulate(X, frame), frame), X, atol=1e-13)

    def test_zero_samples(self, frame):
        assert not np.any(ofdm_demodulate(np.zeros(1232, complex), frame))

    def test_wrong_length(self, frame):
        with pytest.raises(ValueError, match="1232"):
            ofdm_demodulate(np.zeros(1000, complex), frame)

    @pytest.mark.parametrize("d", [1, 3, 8, 16])
    def test_delay_is_phase_ramp(self, d, frame):
        X = build_slot(random_bits(d), frame)
        real = FadingRealization(np.array([d]), np.ones((1, 14), complex))
        Y = ofdm_demodulate(apply_channel(ofdm_modulate(X, frame), real, frame), frame)
        ramp = np.exp(-2j * np.pi * np.arange(72) * d / 72)[:, None]
        np.testing.assert_allclose(Y, X * ramp, atol=1e-12)


class TestAwgn:
    def test_infinite_snr(self, rng):
        x = rng.standard_normal(50) + 0j
        np.testing.assert_array_equal(add_awgn(x, np.inf, rng), x)

    def test_noise_variance(self):
        assert noise_variance(10.0) == pytest.approx(0.1)
        assert noise_variance(0.0, 2.0) == 2.0

    def test_empirical_snr(self):
        r = np.random.default_rng(7)
        w = add_awgn(np.zeros(10 ** 6, complex), 12.0, r)
        snr = 10 * np.log10(1.0 / np.mean(np.abs(w) ** 2))
        assert abs(snr - 12.0) < 0.1
        np.testing.assert_allclose([w.real.var(), w.imag.var()], noise_variance(12.0) / 2, rtol=0.01)

    def test_reproducible(self):
        a = add_awgn(np.ones(10, complex), 5.0, np.random.default_rng(3))
        b = add_awgn(np.ones(10, complex), 5.0, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)
