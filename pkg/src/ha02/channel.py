"""Tapped-delay-line Rayleigh fading with sum-of-sinusoids Doppler.

Each tap is a complex process ``sqrt(P/2) * (mu1(t) + 1j*mu2(t))`` where every
quadrature is a sum of ``N`` equal-amplitude cosines with deterministic
frequencies ``f_d * cos(alpha_n)`` and uniform random phases (GMEDS-1 style
angle sets, rotated by a quarter of the angle spacing in opposite directions
for the two quadratures so that they are uncorrelated).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ofdm import DEFAULT_FRAME, FrameConfig

ETU_DELAYS_NS = (0, 50, 120, 200, 230, 500, 1600, 2300, 5000)
ETU_POWERS_DB = (-1.0, -1.0, -1.0, 0.0, 0.0, 0.0, -3.0, -5.0, -7.0)


@dataclass(frozen=True)
class PowerDelayProfile:
    delays: np.ndarray  # seconds
    powers: np.ndarray  # linear, unit sum

    def __post_init__(self):
        d = np.asarray(self.delays, dtype=float)
        p = np.asarray(self.powers, dtype=float)
        if d.shape != p.shape or d.ndim != 1:
            raise ValueError("delays and powers must be 1-D arrays of equal length")
        if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("powers must be positive and sum to one")
        object.__setattr__(self, "delays", d)
        object.__setattr__(self, "powers", p)

    @property
    def n_taps(self) -> int:
        return len(self.delays)

    @classmethod
    def from_db(cls, delays_s, powers_db) -> PowerDelayProfile:
        lin = 10.0 ** (np.asarray(powers_db, dtype=float) / 10.0)
        return cls(np.asarray(delays_s, dtype=float), lin / lin.sum())

    def sample_delays(self, cfg: FrameConfig = DEFAULT_FRAME) -> np.ndarray:
        """Delays rounded to the nearest sample period."""
        d = np.rint(self.delays * cfg.sample_rate).astype(int)
        if d.max() > cfg.cp_length:
            raise ValueError(f"tap delay of {d.max()} samples exceeds the cyclic prefix ({cfg.cp_length})")
        return d

    def discrete_taps(self, cfg: FrameConfig = DEFAULT_FRAME) -> tuple[np.ndarray, np.ndarray]:
        """Rounded delays with taps on the same sample merged (powers add)."""
        d = self.sample_delays(cfg)
        uniq = np.unique(d)
        return uniq, np.array([self.powers[d == u].sum() for u in uniq])


def etu_profile() -> PowerDelayProfile:
    """3GPP TS 36.101 Extended Typical Urban profile, powers normalized to unit sum."""
    return PowerDelayProfile.from_db(np.array(ETU_DELAYS_NS) * 1e-9, ETU_POWERS_DB)


PROFILES = {"etu": etu_profile}


@dataclass(frozen=True)
class FadingConfig:
    doppler_hz: float = 0.0
    n_sinusoids: int = 20
    seed: int | None = None

    def __post_init__(self):
        if self.doppler_hz < 0:
            raise ValueError("doppler_hz must be non-negative")
        if self.n_sinusoids < 8:
            raise ValueError("n_sinusoids must be at least 8")


@dataclass
class FadingRealization:
    """Per-symbol tap gains of one slot.

    ``gains[m, i]`` is the gain of tap ``m`` during OFDM symbol ``i``; taps
    sharing a sample delay are kept separate and add up when applied.
    """

    delays: np.ndarray  # integer samples, [M]
    gains: np.ndarray  # complex, [M, n_symbols]

    def merged(self) -> tuple[np.ndarray, np.ndarray]:
        uniq = np.unique(self.delays)
        return uniq, np.stack([self.gains[self.delays == u].sum(axis=0) for u in uniq])


def gmeds_frequencies(doppler_hz: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Doppler frequencies of the two quadratures, each of length ``n``."""
    base = np.pi / (2 * n) * (np.arange(1, n + 1) - 0.5)
    rot = np.pi / (8 * n)
    return doppler_hz * np.cos(base + rot), doppler_hz * np.cos(base - rot)


def sample_tap_gains(powers, doppler_hz: float, times, rng: np.random.Generator,
                     n_sinusoids: int = 20, size: int | None = None) -> np.ndarray:
    """Complex tap gains, shape ``[M, T]`` (or ``[size, M, T]``)."""
    powers = np.asarray(powers, dtype=float)
    times = np.asarray(times, dtype=float)
    lead = () if size is None else (size,)
    M = len(powers)
    amp = np.sqrt(powers / 2.0)[:, None]
    if doppler_hz == 0:
        g = rng.standard_normal(lead + (M, 2))
        z = amp[:, 0] * (g[..., 0] + 1j * g[..., 1])
        return np.repeat(z[..., None], len(times), axis=-1)
    f1, f2 = gmeds_frequencies(doppler_hz, n_sinusoids)
    theta = rng.uniform(0.0, 2 * np.pi, lead + (M, 2, n_sinusoids))
    c = np.sqrt(2.0 / n_sinusoids)
    # [..., M, N, T]
    arg1 = 2 * np.pi * f1[:, None] * times[None, :] + theta[..., 0, :, None]
    arg2 = 2 * np.pi * f2[:, None] * times[None, :] + theta[..., 1, :, None]
    mu1 = c * np.cos(arg1).sum(axis=-2)
    mu2 = c * np.cos(arg2).sum(axis=-2)
    return amp * (mu1 + 1j * mu2)


def sample_fading(pdp: PowerDelayProfile, cfg: FadingConfig, symbol_times=None,
                  rng: np.random.Generator | None = None,
                  frame: FrameConfig = DEFAULT_FRAME) -> FadingRealization:
    """Draw one slot's block-fading realization, gains evaluated at symbol midpoints."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if symbol_times is None:
        symbol_times = frame.symbol_times()
    gains = sample_tap_gains(pdp.powers, cfg.doppler_hz, symbol_times, rng, cfg.n_sinusoids)
    return FadingRealization(pdp.sample_delays(frame), gains)


def apply_channel(samples, real: FadingRealization, frame: FrameConfig = DEFAULT_FRAME) -> np.ndarray:
    """Linear convolution over the slot with gains held constant within each OFDM symbol.

    The gain applied to output sample ``n`` is that of the symbol containing ``n``.
    """
    x = np.asarray(samples)
    L = frame.symbol_length
    n_sym = x.shape[-1] // L
    if n_sym * L != x.shape[-1] or real.gains.shape[-1] < n_sym:
        raise ValueError("apply_channel: sample count does not match the realization's symbols")
    y = np.zeros(x.shape, dtype=np.complex128)
    for d, g in zip(real.delays, real.gains):
        per_sample = np.repeat(g[:n_sym], L)
        if d == 0:
            y += per_sample * x
        else:
            y[..., d:] += per_sample[d:] * x[..., :-d]
    return y


def true_channel_grid(real: FadingRealization, frame: FrameConfig = DEFAULT_FRAME) -> np.ndarray:
    """``H[k, i] = sum_m a_m(i) exp(-2j*pi*k*d_m/N)`` with 0-based subcarrier ``k``."""
    k = np.arange(frame.n_subcarriers)
    phase = np.exp(-2j * np.pi * np.outer(k, real.delays) / frame.n_subcarriers)
    return phase @ real.gains
