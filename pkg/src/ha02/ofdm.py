"""QPSK/pilot resource grids and OFDM modulation with unitary FFT scaling."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

#: Seed of the pilot value sequence. Shared by training and evaluation.
PILOT_SEED = 20230217

_INV_SQRT2 = 1.0 / np.sqrt(2.0)


@dataclass(frozen=True)
class FrameConfig:
    """Slot layout and sampling constants.

    Indices stored here are 0-based; pilot symbol 1 and 13 of a slot are
    columns 0 and 12 of the grid.
    """

    n_subcarriers: int = 72
    n_symbols: int = 14
    pilot_symbols: tuple[int, ...] = (0, 12)
    subcarrier_spacing: float = 15e3
    cp_length: int = 16
    carrier_hz: float = 2.1e9
    pilot_seed: int = PILOT_SEED

    def __post_init__(self):
        if len(self.pilot_symbols) != 2:
            raise ValueError("exactly two pilot symbols are supported")
        if self.n_subcarriers % 2:
            raise ValueError("n_subcarriers must be even")
        if not 0 <= self.cp_length <= self.n_subcarriers:
            raise ValueError("cp_length must lie in [0, n_subcarriers]")

    @property
    def n_pilot(self) -> int:
        return len(self.pilot_symbols)

    @property
    def fft_size(self) -> int:
        return self.n_subcarriers

    @property
    def sample_rate(self) -> float:
        return self.n_subcarriers * self.subcarrier_spacing

    @property
    def symbol_length(self) -> int:
        """Samples per OFDM symbol including the cyclic prefix."""
        return self.fft_size + self.cp_length

    @property
    def slot_samples(self) -> int:
        return self.n_symbols * self.symbol_length

    @property
    def cp_duration(self) -> float:
        return self.cp_length / self.sample_rate

    @property
    def data_symbols(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.n_symbols) if i not in self.pilot_symbols)

    @property
    def n_bits(self) -> int:
        return 2 * self.n_subcarriers * len(self.data_symbols)

    @cached_property
    def pilot_subcarriers(self) -> tuple[np.ndarray, np.ndarray]:
        """0-based pilot subcarriers: even indices for the first pilot symbol, odd for the second."""
        k = np.arange(self.n_subcarriers)
        return k[0::2], k[1::2]

    @cached_property
    def pilot_values(self) -> np.ndarray:
        """Known unit-modulus pilot symbols, shape ``[n_subcarriers // 2, n_pilot]``."""
        rng = np.random.default_rng(self.pilot_seed)
        bits = rng.integers(0, 2, size=self.n_subcarriers * self.n_pilot, dtype=np.int8)
        return qpsk_modulate(bits).reshape(self.n_pilot, -1).T.copy()

    def symbol_times(self) -> np.ndarray:
        """Midpoint time of each OFDM symbol (CP included), in seconds."""
        L = self.symbol_length
        return (np.arange(self.n_symbols) * L + L / 2) / self.sample_rate


DEFAULT_FRAME = FrameConfig()


def qpsk_modulate(bits) -> np.ndarray:
    """Gray-mapped QPSK: first bit sets the real sign, second the imaginary sign (0 -> +)."""
    bits = np.asarray(bits)
    if bits.shape[-1] % 2:
        raise ValueError(f"qpsk_modulate: bit count {bits.shape[-1]} is odd")
    b = bits.reshape(bits.shape[:-1] + (-1, 2)).astype(np.float64)
    return ((1 - 2 * b[..., 0]) + 1j * (1 - 2 * b[..., 1])) * _INV_SQRT2


def qpsk_demodulate(symbols) -> np.ndarray:
    """Hard quadrant decision; a zero component decides bit 0."""
    s = np.asarray(symbols)
    bits = np.stack([s.real < 0, s.imag < 0], axis=-1).astype(np.int8)
    return bits.reshape(s.shape[:-1] + (-1,)) if s.ndim else bits


def build_slot(bits, cfg: FrameConfig = DEFAULT_FRAME) -> np.ndarray:
    """Transmit grid ``X`` of shape ``[n_subcarriers, n_symbols]``.

    Data symbols fill the data columns in subcarrier-major order, i.e. the
    symbol index runs fastest.
    """
    bits = np.asarray(bits)
    if bits.shape != (cfg.n_bits,):
        raise ValueError(f"build_slot: expected {cfg.n_bits} bits, got shape {bits.shape}")
    X = np.zeros((cfg.n_subcarriers, cfg.n_symbols), dtype=np.complex128)
    data_cols = list(cfg.data_symbols)
    X[:, data_cols] = qpsk_modulate(bits).reshape(cfg.n_subcarriers, len(data_cols))
    for j, (sym, sub) in enumerate(zip(cfg.pilot_symbols, cfg.pilot_subcarriers)):
        X[sub, sym] = cfg.pilot_values[:, j]
    return X


def extract_data(grid, cfg: FrameConfig = DEFAULT_FRAME) -> np.ndarray:
    """Inverse of the data placement in :func:`build_slot`."""
    return np.asarray(grid)[..., :, list(cfg.data_symbols)].reshape(np.shape(grid)[:-2] + (-1,))


def ofdm_modulate(X, cfg: FrameConfig = DEFAULT_FRAME) -> np.ndarray:
    """Unitary IFFT per symbol with cyclic prefix; returns ``n_symbols * (N + cp)`` samples."""
    X = np.asarray(X)
    t = np.fft.ifft(X, axis=-2, norm="ortho")
    t = np.swapaxes(t, -1, -2)  # [..., symbol, sample]
    with_cp = np.concatenate([t[..., -cfg.cp_length:], t], axis=-1) if cfg.cp_length else t
    return with_cp.reshape(X.shape[:-2] + (-1,))


def ofdm_demodulate(samples, cfg: FrameConfig = DEFAULT_FRAME) -> np.ndarray:
    """Drop the cyclic prefix and apply a unitary FFT per symbol."""
    samples = np.asarray(samples)
    if samples.shape[-1] != cfg.slot_samples:
        raise ValueError(f"ofdm_demodulate: expected {cfg.slot_samples} samples, got {samples.shape[-1]}")
    s = samples.reshape(samples.shape[:-1] + (cfg.n_symbols, cfg.symbol_length))[..., cfg.cp_length:]
    Y = np.fft.fft(s, axis=-1, norm="ortho")
    return np.swapaxes(Y, -1, -2)


def noise_variance(snr_db: float, signal_power_ref: float = 1.0) -> float:
    if np.isinf(snr_db) and snr_db > 0:
        return 0.0
    return signal_power_ref / 10.0 ** (snr_db / 10.0)


def add_awgn(samples, snr_db: float, rng: np.random.Generator, signal_power_ref: float = 1.0) -> np.ndarray:
    """Add circular complex Gaussian noise with variance ``signal_power_ref / 10**(snr_db/10)``.

    ``snr_db = inf`` returns the samples unchanged.
    """
    samples = np.asarray(samples)
    var = noise_variance(snr_db, signal_power_ref)
    if var == 0.0:
        return samples.copy()
    sd = np.sqrt(var / 2)
    noise = rng.normal(0.0, sd, samples.shape) + 1j * rng.normal(0.0, sd, samples.shape)
    return samples + noise
