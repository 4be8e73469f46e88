"""Dataset generation, Huber loss, Adam with step decay, and the training loop."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import numerics as nx
from .channel import PROFILES, PowerDelayProfile
from .estimators import ls_estimate
from .model import Ha02Params, network_forward, pack_grid, pack_input
from .ofdm import DEFAULT_FRAME, FrameConfig
from .simulation import simulate_slot, slot_rng

log = logging.getLogger(__name__)

DATASET_MAGIC = b"HA02DSET"
DATASET_VERSION = 1
_HEADER_FIXED = struct.Struct("<8sIIQ")  # magic, version, header json length, record count


@dataclass
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 0.002
    lr_drop_period: int = 20
    lr_drop_factor: float = 0.5
    batch_size: int = 128
    l2: float = 1e-7
    huber_delta: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    dataset_size: int = 95_000
    validation_fraction: float = 0.05
    snr_range: tuple[float, float] = (5.0, 25.0)
    doppler_range: tuple[float, float] = (0.0, 97.0)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")
        self.snr_range = tuple(self.snr_range)
        self.doppler_range = tuple(self.doppler_range)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch, self.loss = epoch, batch, loss


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Packed LS pilot inputs ``[n, 72, 2]`` and packed true channels ``[n, 1008, 2]``."""

    inputs: np.ndarray
    labels: np.ndarray
    snr_db: np.ndarray
    doppler_hz: np.ndarray
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.inputs)

    def subset(self, index) -> Dataset:
        return Dataset(self.inputs[index], self.labels[index], self.snr_db[index],
                       self.doppler_hz[index], self.config)

    def split(self, validation_fraction: float) -> tuple[Dataset, Dataset]:
        """Leading samples for training, trailing ``round(fraction * n)`` for validation."""
        n_val = int(round(validation_fraction * len(self)))
        cut = len(self) - n_val
        return self.subset(slice(0, cut)), self.subset(slice(cut, None))


def generate_dataset(cfg: TrainConfig, count: int | None = None, start: int = 0,
                     profile: str | PowerDelayProfile = "etu", frame: FrameConfig = DEFAULT_FRAME,
                     noiseless: bool = False) -> Dataset:
    """Simulate ``count`` slots; sample ``i`` is drawn from its own generator keyed by ``(seed, i)``.

    SNR and maximum Doppler are drawn uniformly from the configured ranges.
    ``start`` offsets the sample index, so shards generated separately concatenate
    to the same data as one large run.
    """
    count = cfg.dataset_size if count is None else count
    pdp = PROFILES[profile]() if isinstance(profile, str) else profile
    rows = frame.n_pilot * frame.n_subcarriers // 2
    inputs = np.empty((count, rows, 2), dtype=np.float32)
    labels = np.empty((count, frame.n_symbols * frame.n_subcarriers, 2), dtype=np.float32)
    snrs = np.empty(count, dtype=np.float32)
    dops = np.empty(count, dtype=np.float32)
    for n in range(count):
        rng = slot_rng(cfg.seed, start + n)
        snr = rng.uniform(*cfg.snr_range)
        dop = rng.uniform(*cfg.doppler_range)
        slot = simulate_slot(rng, np.inf if noiseless else snr, dop, pdp, frame)
        inputs[n] = pack_input(ls_estimate(slot.Y, frame))
        labels[n] = pack_grid(slot.H)
        snrs[n], dops[n] = snr, dop
    meta = {"train_config": _jsonable(asdict(cfg)), "profile": profile if isinstance(profile, str) else "custom",
            "noiseless": noiseless, "start": start}
    return Dataset(inputs, labels, snrs, dops, meta)


def _jsonable(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _layout(ds_rows: int, label_rows: int) -> dict:
    return {"dtype": "<f4", "fields": [
        {"name": "input", "shape": [ds_rows, 2]},
        {"name": "label", "shape": [label_rows, 2]},
        {"name": "snr_db", "shape": []},
        {"name": "doppler_hz", "shape": []},
    ]}


def _records(ds: Dataset) -> np.ndarray:
    n = len(ds)
    return np.concatenate([ds.inputs.reshape(n, -1), ds.labels.reshape(n, -1),
                           ds.snr_db[:, None], ds.doppler_hz[:, None]], axis=1).astype("<f4")


def save_dataset(path, ds: Dataset) -> None:
    """Write a dataset file: fixed header, JSON descriptor, then float32 records."""
    header = json.dumps({"layout": _layout(ds.inputs.shape[1], ds.labels.shape[1]),
                         "generation": ds.config}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_HEADER_FIXED.pack(DATASET_MAGIC, DATASET_VERSION, len(header), len(ds)))
        f.write(header)
        f.write(_records(ds).tobytes())


def _read_header(f, path):
    raw = f.read(_HEADER_FIXED.size)
    if len(raw) < _HEADER_FIXED.size:
        raise ValueError(f"{path}: truncated dataset header")
    magic, version, hlen, count = _HEADER_FIXED.unpack(raw)
    if magic != DATASET_MAGIC:
        raise ValueError(f"{path}: not an HA02 dataset file")
    if version != DATASET_VERSION:
        raise ValueError(f"{path}: unsupported dataset version {version}")
    return json.loads(f.read(hlen)), count, _HEADER_FIXED.size + hlen


def append_dataset(path, ds: Dataset) -> None:
    """Append a shard with the same layout and bump the record count."""
    with open(path, "r+b") as f:
        header, count, offset = _read_header(f, path)
        if header["layout"] != _layout(ds.inputs.shape[1], ds.labels.shape[1]):
            raise ValueError(f"{path}: shard layout does not match the file")
        f.seek(0, 2)
        f.write(_records(ds).tobytes())
        f.seek(0)
        f.write(_HEADER_FIXED.pack(DATASET_MAGIC, DATASET_VERSION, offset - _HEADER_FIXED.size, count + len(ds)))


def load_dataset(path, limit: int | None = None) -> Dataset:
    with open(path, "rb") as f:
        header, count, offset = _read_header(f, path)
    fields = header["layout"]["fields"]
    shapes = {fd["name"]: tuple(fd["shape"]) for fd in fields}
    width = sum(int(np.prod(s)) if s else 1 for s in shapes.values())
    n = count if limit is None else min(count, limit)
    data = np.fromfile(path, dtype="<f4", count=n * width, offset=offset)
    if data.size != n * width:
        raise ValueError(f"{path}: expected {n} records, file is truncated")
    data = data.reshape(n, width).astype(np.float32)
    a = int(np.prod(shapes["input"]))
    b = a + int(np.prod(shapes["label"]))
    return Dataset(data[:, :a].reshape((n,) + shapes["input"]), data[:, a:b].reshape((n,) + shapes["label"]),
                   data[:, b].copy(), data[:, b + 1].copy(), header.get("generation", {}))


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

def huber_loss(pred, label, delta: float = 1.0) -> nx.Tensor:
    """Mean over all elements of the Huber penalty of ``pred - label``."""
    return nx.huber(pred, label, delta)


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Step decay; ``epoch`` is 1-based."""
    if epoch < 1:
        raise ValueError("epoch is 1-based")
    return cfg.learning_rate * cfg.lr_drop_factor ** ((epoch - 1) // cfg.lr_drop_period)


class Adam:
    """Adam with bias correction and L2 added to the gradient (not decoupled)."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8, l2: float = 0.0):
        self.beta1, self.beta2, self.eps, self.l2 = beta1, beta2, eps, l2
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p in params:
            if p.grad is None:
                continue
            key = p.name
            g = p.grad + self.l2 * p.values if self.l2 else p.grad
            if key not in self.m:
                self.m[key] = np.zeros_like(p.values)
                self.v[key] = np.zeros_like(p.values)
            m, v = self.m[key], self.v[key]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.values -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {"adam.t": np.array([self.t], dtype=np.float64)}
        for k in self.m:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], dtype=None) -> None:
        self.t = int(state["adam.t"][0])
        for key, arr in state.items():
            if key.startswith("adam.m."):
                self.m[key[7:]] = arr.astype(dtype or arr.dtype)
            elif key.startswith("adam.v."):
                self.v[key[7:]] = arr.astype(dtype or arr.dtype)


def adam_step(params, state: Adam, lr: float) -> None:
    """One in-place Adam update from the gradients stored on ``params``."""
    state.step(params, lr)


def evaluate_loss(params: Ha02Params, ds: Dataset, delta: float = 1.0, batch_size: int = 512) -> float:
    """Huber loss averaged over every element of ``ds``."""
    total, n = 0.0, 0
    for s in range(0, len(ds), batch_size):
        x, y = ds.inputs[s:s + batch_size], ds.labels[s:s + batch_size]
        out = network_forward(x.astype(params.dtype), params).values
        total += float(nx.huber(out, y.astype(params.dtype), delta).values) * y.size
        n += y.size
    return total / n if n else float("nan")


@dataclass
class History:
    epoch: list[int] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")


def train(params: Ha02Params, train_set: Dataset, val_set: Dataset | None, cfg: TrainConfig,
          optimizer: Adam | None = None, start_epoch: int = 1, history: History | None = None,
          best_params: Ha02Params | None = None, on_epoch: Callable[[int, Ha02Params, Adam, History, bool], None] | None = None):
    """Minibatch training with per-epoch seeded shuffles.

    Returns ``(best_params, history, optimizer)``; ``best_params`` is a copy
    taken at the lowest validation loss (training loss when there is no
    validation set). ``params`` holds the last-epoch values on return.
    ``on_epoch(epoch, params, optimizer, history, improved)`` runs after each epoch.
    """
    optimizer = optimizer or Adam(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.l2)
    history = history or History()
    best = params.copy() if best_params is None else best_params
    dtype = params.dtype
    n = len(train_set)
    for epoch in range(start_epoch, cfg.epochs + 1):
        lr = lr_schedule(epoch, cfg)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        total = 0.0
        for b, s in enumerate(range(0, n, cfg.batch_size)):
            idx = np.sort(order[s:s + cfg.batch_size])
            x = train_set.inputs[idx].astype(dtype, copy=False)
            y = train_set.labels[idx].astype(dtype, copy=False)
            params.zero_grad()
            loss = nx.huber(network_forward(x, params), y, cfg.huber_delta)
            value = float(loss.values)
            if not np.isfinite(value):
                raise NonFiniteLossError(epoch, b, value)
            nx.backward(loss)
            optimizer.step(params, lr)
            total += value * len(idx)
        train_loss = total / n
        val_loss = evaluate_loss(params, val_set, cfg.huber_delta) if val_set is not None and len(val_set) else train_loss
        history.epoch.append(epoch)
        history.lr.append(lr)
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        improved = val_loss < history.best_val_loss
        if improved:
            history.best_val_loss, history.best_epoch = val_loss, epoch
            best = params.copy()
        log.info("epoch %d lr %.6g train %.6g val %.6g%s", epoch, lr, train_loss, val_loss, " *" if improved else "")
        if on_epoch is not None:
            on_epoch(epoch, params, optimizer, history, improved)
    return best, history, optimizer
