"""End-to-end simulation of one slot: bits -> grid -> OFDM -> fading -> AWGN -> grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import FadingConfig, PowerDelayProfile, apply_channel, etu_profile, sample_fading, true_channel_grid
from .ofdm import DEFAULT_FRAME, FrameConfig, add_awgn, build_slot, ofdm_demodulate, ofdm_modulate


@dataclass
class Slot:
    bits: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    H: np.ndarray
    snr_db: float
    doppler_hz: float


def slot_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for slot ``index`` of stream ``stream`` of a run seeded with ``seed``.

    Counter-based, so any slot can be regenerated without replaying earlier ones.
    Stream 0 is used for training data, evaluation sweeps use their own streams.
    """
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, stream, index]))


def simulate_slot(rng: np.random.Generator, snr_db: float, doppler_hz: float,
                  pdp: PowerDelayProfile | None = None, frame: FrameConfig = DEFAULT_FRAME,
                  n_sinusoids: int = 20) -> Slot:
    pdp = etu_profile() if pdp is None else pdp
    bits = rng.integers(0, 2, size=frame.n_bits, dtype=np.int8)
    X = build_slot(bits, frame)
    real = sample_fading(pdp, FadingConfig(doppler_hz, n_sinusoids), rng=rng, frame=frame)
    rx = apply_channel(ofdm_modulate(X, frame), real, frame)
    rx = add_awgn(rx, snr_db, rng)
    return Slot(bits, X, ofdm_demodulate(rx, frame), true_channel_grid(real, frame), snr_db, doppler_hz)
