"""MSE and denoising-gain metrics, SNR/Doppler sweeps, magnitude pruning, CSV output."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .channel import PowerDelayProfile, etu_profile
from .estimators import FDMMSEEstimator, LSBilinearEstimator, ls_estimate
from .model import Ha02Params, ha02_forward
from .ofdm import DEFAULT_FRAME, FrameConfig
from .simulation import simulate_slot, slot_rng

LS_BILINEAR = "ls_bilinear"
FD_MMSE = "fd_mmse"

SNR_GRID = tuple(float(s) for s in range(0, 31, 5))
DOPPLER_GRID = tuple(float(f) for f in np.linspace(0.0, 194.0, 8))

SNR_STREAM = 1_000
DOPPLER_STREAM = 2_000

CSV_HEADER = ("sweep_var", "method", "mse", "gain_db", "n")


def mse_metric(H_est, H) -> np.ndarray | float:
    """Mean squared magnitude of the error over the last two (grid) axes."""
    H_est, H = np.asarray(H_est), np.asarray(H)
    if H_est.shape != H.shape or H.ndim < 2:
        raise ValueError(f"mse_metric: shape mismatch {H_est.shape} vs {H.shape}")
    err = H_est - H
    out = np.mean(err.real ** 2 + err.imag ** 2, axis=(-2, -1))
    return float(out) if out.ndim == 0 else out


def denoising_gain(H, H_ls, H_model) -> float:
    """``10 log10(||H_ls - H||^2 / ||H_model - H||^2)`` summed over everything given, in dB.

    A model with zero error yields ``inf``.
    """
    H, H_ls, H_model = (np.asarray(a) for a in (H, H_ls, H_model))
    e_ls = float(np.sum(np.abs(H_ls - H) ** 2))
    e_model = float(np.sum(np.abs(H_model - H) ** 2))
    if e_model == 0.0:
        return float("inf")
    if e_ls == 0.0:
        return float("-inf")
    return 10.0 * np.log10(e_ls / e_model)


# ---------------------------------------------------------------------------
# pruning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PruneSpec:
    ratio: float
    scope: str = "component"

    def __post_init__(self):
        if not 0.0 <= self.ratio < 1.0:
            raise ValueError("prune ratio must lie in [0, 1)")
        if self.scope != "component":
            raise ValueError("only per-component pruning is supported")


def _prunable(name: str) -> bool:
    return ".norm" not in name


def prune_weights(params: Ha02Params, spec: PruneSpec | float) -> Ha02Params:
    """Zero the ``floor(r * component size)`` smallest-magnitude weights and biases of each component.

    Normalization scales and offsets are never pruned but count towards the
    component size. Returns a pruned copy.
    """
    spec = spec if isinstance(spec, PruneSpec) else PruneSpec(float(spec))
    out = params.copy()
    for comp in ("encoder", "decoder"):
        members = [p for p in out if p.component == comp]
        n_prune = int(np.floor(spec.ratio * sum(p.size for p in members)))
        cand = [p for p in members if _prunable(p.name)]
        if n_prune == 0 or not cand:
            continue
        flat = np.concatenate([np.abs(p.values).ravel() for p in cand])
        n_prune = min(n_prune, flat.size)
        order = np.argsort(flat, kind="stable")
        mask = np.ones(flat.size, dtype=bool)
        mask[order[:n_prune]] = False
        start = 0
        for p in cand:
            p.values = p.values * mask[start:start + p.size].reshape(p.shape).astype(p.dtype)
            start += p.size
    return out


def retained_count(params: Ha02Params, spec: PruneSpec | float) -> int:
    """Parameters left after pruning at ``spec`` (pruned slots counted whatever their value)."""
    spec = spec if isinstance(spec, PruneSpec) else PruneSpec(float(spec))
    total = 0
    for comp in ("encoder", "decoder"):
        size = sum(p.size for p in params if p.component == comp)
        total += size - int(np.floor(spec.ratio * size))
    return total


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass
class EvalRecord:
    sweep_var: str
    value: float
    mse: dict[str, float] = field(default_factory=dict)
    gain_db: dict[str, float] = field(default_factory=dict)
    n: int = 0

    def label(self) -> str:
        return f"{self.sweep_var}={self.value:g}"


def _test_slots(n: int, snr_db: float, doppler, seed: int, stream: int,
                pdp: PowerDelayProfile, frame: FrameConfig):
    P = np.empty((n, frame.n_subcarriers // 2, frame.n_pilot), dtype=np.complex128)
    H = np.empty((n, frame.n_subcarriers, frame.n_symbols), dtype=np.complex128)
    for i in range(n):
        rng = slot_rng(seed, i, stream)
        f_d = rng.uniform(*doppler) if isinstance(doppler, tuple) else float(doppler)
        slot = simulate_slot(rng, snr_db, f_d, pdp, frame)
        P[i] = ls_estimate(slot.Y, frame)
        H[i] = slot.H
    return P, H


def evaluate_point(models: Mapping[str, Ha02Params], P, H, snr_db: float,
                   pdp: PowerDelayProfile, frame: FrameConfig, sweep_var: str, value: float) -> EvalRecord:
    H_ls = LSBilinearEstimator(frame).fit().predict(P)
    estimates = {
        LS_BILINEAR: H_ls,
        FD_MMSE: FDMMSEEstimator(snr_db, pdp, frame).fit().predict(P),
    }
    for name, params in models.items():
        estimates[name] = ha02_forward(P, params)
    rec = EvalRecord(sweep_var, float(value), n=len(H))
    for name, est in estimates.items():
        rec.mse[name] = float(np.mean(mse_metric(est, H)))
        rec.gain_db[name] = denoising_gain(H, H_ls, est)
    return rec


def sweep_snr(models: Mapping[str, Ha02Params], snrs: Sequence[float] = SNR_GRID, n: int = 5000,
              doppler_range: tuple[float, float] = (0.0, 97.0), seed: int = 0,
              pdp: PowerDelayProfile | None = None, frame: FrameConfig = DEFAULT_FRAME) -> list[EvalRecord]:
    """Average slot MSE per method at each SNR; Doppler drawn per slot from ``doppler_range``.

    Every SNR point draws its own slots, and all methods see the same slots.
    """
    pdp = etu_profile() if pdp is None else pdp
    out = []
    for k, snr in enumerate(snrs):
        P, H = _test_slots(n, snr, tuple(doppler_range), seed, SNR_STREAM + k, pdp, frame)
        out.append(evaluate_point(models, P, H, snr, pdp, frame, "snr_db", snr))
    return out


def sweep_doppler(models: Mapping[str, Ha02Params], dopplers: Sequence[float] = DOPPLER_GRID,
                  snr_db: float = 10.0, n: int = 5000, seed: int = 0,
                  pdp: PowerDelayProfile | None = None, frame: FrameConfig = DEFAULT_FRAME) -> list[EvalRecord]:
    """Average slot MSE per method at each maximum Doppler shift, fixed SNR."""
    pdp = etu_profile() if pdp is None else pdp
    out = []
    for k, f_d in enumerate(dopplers):
        P, H = _test_slots(n, snr_db, float(f_d), seed, DOPPLER_STREAM + k, pdp, frame)
        out.append(evaluate_point(models, P, H, snr_db, pdp, frame, "doppler_hz", f_d))
    return out


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def results_csv(records: Sequence[EvalRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for rec in records:
        for method, mse in rec.mse.items():
            w.writerow([rec.label(), method, repr(float(mse)), repr(float(rec.gain_db.get(method, float("nan")))), rec.n])
    return buf.getvalue()


def params_checksum(params: Ha02Params) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.name.encode())
        h.update(np.ascontiguousarray(p.values, dtype="<f4").tobytes())
    return h.hexdigest()


def config_hash(config: Mapping) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()


def emit_results(records: Sequence[EvalRecord], path, config: Mapping | None = None,
                 seeds: Mapping | None = None, model: Ha02Params | None = None) -> Path:
    """Write the results CSV and a JSON run manifest next to it (``<path>.manifest.json``)."""
    path = Path(path)
    try:
        path.write_text(results_csv(records))
        manifest = {
            "results": path.name,
            "config_hash": config_hash(config or {}),
            "seeds": dict(seeds or {}),
            "model_checksum": params_checksum(model) if model is not None else None,
            "rows": sum(len(r.mse) for r in records),
        }
        manifest_path = path.with_name(path.name + ".manifest.json")
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def model_beats_ls(records: Sequence[EvalRecord], method: str = "ha02") -> list[str]:
    """Labels of sweep points where ``method`` does not beat LS-bilinear."""
    return [r.label() for r in records if not r.mse[method] < r.mse[LS_BILINEAR]]
