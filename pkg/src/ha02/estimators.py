"""LS pilot estimation, bilinear interpolation and frequency-domain MMSE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_pilot_estimates
from .channel import PowerDelayProfile, etu_profile
from .ofdm import DEFAULT_FRAME, FrameConfig

NSR_FLOOR = 1e-12


def ls_estimate(Y, cfg: FrameConfig = DEFAULT_FRAME, X_pilots=None) -> np.ndarray:
    """Per-pilot division ``Y / X``; returns ``[..., N/2, n_pilot]``."""
    Y = np.asarray(Y)
    Xp = cfg.pilot_values if X_pilots is None else np.asarray(X_pilots)
    if np.any(Xp == 0):
        raise ValueError("ls_estimate: pilot values must be nonzero")
    cols = [Y[..., sub, sym] for sym, sub in zip(cfg.pilot_symbols, cfg.pilot_subcarriers)]
    return np.stack(cols, axis=-1) / Xp


def _time_interpolate(cols, cfg: FrameConfig) -> np.ndarray:
    """Linear in time between the pilot symbols, held constant outside them."""
    t0, t1 = cfg.pilot_symbols
    i = np.arange(cfg.n_symbols)
    w = np.clip((i - t0) / (t1 - t0), 0.0, 1.0)
    return cols[..., 0, None] * (1 - w) + cols[..., 1, None] * w


def _frequency_interpolate(values, known, n: int) -> np.ndarray:
    k = np.arange(n)
    flat = values.reshape(-1, values.shape[-1])
    out = np.empty((flat.shape[0], n), dtype=np.complex128)
    for r, v in enumerate(flat):
        out[r] = np.interp(k, known, v.real) + 1j * np.interp(k, known, v.imag)
    return out.reshape(values.shape[:-1] + (n,))


def bilinear_full_grid(p, cfg: FrameConfig = DEFAULT_FRAME) -> np.ndarray:
    """Interpolate a ``[..., N/2, 2]`` pilot estimate to the full ``[..., N, n_symbols]`` grid."""
    p = np.asarray(p)
    cols = np.stack([
        _frequency_interpolate(p[..., j], cfg.pilot_subcarriers[j], cfg.n_subcarriers)
        for j in range(cfg.n_pilot)
    ], axis=-1)
    return _time_interpolate(cols, cfg)


@dataclass
class MmseStatistics:
    R_hhp: list[np.ndarray]  # per pilot symbol, [N, N/2]
    R_hphp: list[np.ndarray]  # per pilot symbol, [N/2, N/2]
    nsr: float


def frequency_correlation(delays, powers, dk, n_subcarriers: int) -> np.ndarray:
    """``r(dk) = sum_m P_m exp(-2j*pi*dk*d_m/N)``."""
    dk = np.asarray(dk)
    return np.tensordot(np.exp(-2j * np.pi * dk[..., None] * np.asarray(delays) / n_subcarriers),
                        np.asarray(powers), axes=([-1], [0]))


def mmse_statistics(delays, powers, snr_db: float, cfg: FrameConfig = DEFAULT_FRAME) -> MmseStatistics:
    """Analytic correlation matrices for discrete taps ``(delays [samples], powers)``."""
    k = np.arange(cfg.n_subcarriers)
    R_hhp, R_hphp = [], []
    for sub in cfg.pilot_subcarriers:
        R_hhp.append(frequency_correlation(delays, powers, k[:, None] - sub[None, :], cfg.n_subcarriers))
        R_hphp.append(frequency_correlation(delays, powers, sub[:, None] - sub[None, :], cfg.n_subcarriers))
    return MmseStatistics(R_hhp, R_hphp, 10.0 ** (-snr_db / 10.0))


def mmse_weights(stats: MmseStatistics) -> list[np.ndarray]:
    """``R_hhp (R_hphp + nsr I)^-1`` per pilot symbol, via Cholesky solves."""
    nsr = max(stats.nsr, NSR_FLOOR)
    out = []
    for R_hhp, R_hphp in zip(stats.R_hhp, stats.R_hphp):
        A = R_hphp + nsr * np.eye(R_hphp.shape[0])
        try:
            c = cho_factor(A, lower=True)
        except np.linalg.LinAlgError as exc:
            raise FloatingPointError("mmse: correlation matrix factorization failed") from exc
        # W = R_hhp A^-1  <=>  A^H W^H = R_hhp^H, and A is Hermitian
        out.append(cho_solve(c, R_hhp.conj().T).conj().T)
    return out


def mmse_estimate(p, stats: MmseStatistics, cfg: FrameConfig = DEFAULT_FRAME, weights=None) -> np.ndarray:
    """Per-pilot-symbol linear MMSE in frequency, then time interpolation."""
    p = np.asarray(p)
    W = mmse_weights(stats) if weights is None else weights
    cols = np.stack([p[..., j] @ W[j].T for j in range(cfg.n_pilot)], axis=-1)
    return _time_interpolate(cols, cfg)


class LSBilinearEstimator(BaseEstimator):
    """LS pilot estimates interpolated bilinearly to the full slot grid.

    ``predict`` takes complex pilot estimates ``[n, N/2, 2]`` and returns
    complex grids ``[n, N, n_symbols]``. There is nothing to learn; ``fit``
    only validates and records the input layout.
    """

    def __init__(self, frame: FrameConfig = DEFAULT_FRAME):
        self.frame = frame

    def fit(self, X=None, y=None):
        self.n_pilot_ = self.frame.n_pilot
        return self

    def predict(self, X):
        X = check_pilot_estimates(X, self.frame)
        return bilinear_full_grid(X, self.frame)


class FDMMSEEstimator(BaseEstimator):
    """Frequency-domain MMSE with genie channel statistics.

    Parameters
    ----------
    snr_db : float
        Operating SNR; sets the noise-to-signal ratio in the filter.
    profile : PowerDelayProfile, optional
        Channel profile the statistics are computed from (ETU by default).
    frame : FrameConfig
    """

    def __init__(self, snr_db: float = 10.0, profile: PowerDelayProfile | None = None,
                 frame: FrameConfig = DEFAULT_FRAME):
        self.snr_db = snr_db
        self.profile = profile
        self.frame = frame

    def fit(self, X=None, y=None):
        pdp = etu_profile() if self.profile is None else self.profile
        delays, powers = pdp.discrete_taps(self.frame)
        self.statistics_ = mmse_statistics(delays, powers, self.snr_db, self.frame)
        self.weights_ = mmse_weights(self.statistics_)
        return self

    def predict(self, X):
        check_is_fitted(self, "weights_")
        X = check_pilot_estimates(X, self.frame)
        return mmse_estimate(X, self.statistics_, self.frame, self.weights_)
