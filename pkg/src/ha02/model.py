"""HA02: transformer-encoder block followed by a residual convolutional decoder.

Shapes below are per sample; every forward function also accepts a leading
batch axis.

encoder  [72, 2] -> dense(216) -> Q|K|V -> 2-head attention -> dense(72)
         -> add input, norm -> dense(72) -> GeLU -> dense(72) -> add, norm
decoder  [72, 2, 1] -> conv 2x2 (2 filters) -> [conv -> ReLU -> conv] + skip
         -> norm -> dense along rows to 1008 -> conv 2x2 (1 filter) -> [1008, 2]
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .numerics import Param, Tensor
from .ofdm import DEFAULT_FRAME, FrameConfig

WEIGHTS_MAGIC = b"HA02WGT\x00"
WEIGHTS_VERSION = 1

# reference totals for the default configuration
ENCODER_PARAMS = 31_824
DECODER_PARAMS = 73_783
TOTAL_PARAMS = ENCODER_PARAMS + DECODER_PARAMS

FC_GROUPS = ("enc.in", "enc.attn_out", "enc.ff1", "enc.ff2", "dec.up")


class WeightFormatError(ValueError):
    """A weight file is malformed or does not describe an HA02 network."""


@dataclass(frozen=True)
class Ha02Config:
    n_subcarriers: int = 72
    n_pilot: int = 2
    n_symbols: int = 14
    n_filter: int = 2
    ffn_hidden: int = 72

    @classmethod
    def from_frame(cls, frame: FrameConfig = DEFAULT_FRAME, **kw) -> Ha02Config:
        return cls(frame.n_subcarriers, frame.n_pilot, frame.n_symbols, **kw)

    @property
    def length(self) -> int:
        """Rows of the packed input, ``n_pilot * N / 2``."""
        return self.n_pilot * self.n_subcarriers // 2

    @property
    def n_heads(self) -> int:
        return self.n_pilot

    @property
    def head_length(self) -> int:
        return self.length // self.n_heads

    @property
    def attention_scale(self) -> float:
        return float(np.sqrt(self.n_subcarriers / 2))

    @property
    def output_length(self) -> int:
        return self.n_symbols * self.n_subcarriers

    def __post_init__(self):
        if self.length % self.n_heads:
            raise ValueError("input length must be divisible by the number of heads")


def _param_shapes(cfg: Ha02Config) -> list[tuple[str, tuple[int, ...], str]]:
    L, F, O, Hd = cfg.length, cfg.n_filter, cfg.output_length, cfg.ffn_hidden
    return [
        ("enc.in.W", (3 * L, L), "encoder"), ("enc.in.b", (3 * L,), "encoder"),
        ("enc.attn_out.W", (L, L), "encoder"), ("enc.attn_out.b", (L,), "encoder"),
        ("enc.norm1.scale", (L,), "encoder"), ("enc.norm1.offset", (L,), "encoder"),
        ("enc.ff1.W", (Hd, L), "encoder"), ("enc.ff1.b", (Hd,), "encoder"),
        ("enc.ff2.W", (L, Hd), "encoder"), ("enc.ff2.b", (L,), "encoder"),
        ("enc.norm2.scale", (L,), "encoder"), ("enc.norm2.offset", (L,), "encoder"),
        ("dec.conv1.K", (2, 2, 1, F), "decoder"), ("dec.conv1.b", (F,), "decoder"),
        ("dec.res.convA.K", (2, 2, F, F), "decoder"), ("dec.res.convA.b", (F,), "decoder"),
        ("dec.res.convB.K", (2, 2, F, F), "decoder"), ("dec.res.convB.b", (F,), "decoder"),
        ("dec.norm3.scale", (L,), "decoder"), ("dec.norm3.offset", (L,), "decoder"),
        ("dec.up.W", (O, L), "decoder"), ("dec.up.b", (O,), "decoder"),
        ("dec.conv_out.K", (2, 2, F, 1), "decoder"), ("dec.conv_out.b", (1,), "decoder"),
    ]


class Ha02Params:
    """Ordered collection of the network's learnable tensors."""

    def __init__(self, params: list[Param], config: Ha02Config = Ha02Config()):
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValueError("parameter identifiers must be unique")
        self.config = config
        self._params = {p.name: p for p in params}

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    @property
    def dtype(self):
        return next(iter(self)).dtype

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: p.values for name, p in self._params.items()}

    def copy(self, dtype=None) -> Ha02Params:
        dtype = self.dtype if dtype is None else dtype
        return Ha02Params([Param(p.name, p.values.astype(dtype, copy=True), p.component) for p in self],
                          self.config)

    def zero_grad(self):
        for p in self:
            p.zero_grad()


def init_params(seed: int = 0, config: Ha02Config = Ha02Config(), dtype=np.float32) -> Ha02Params:
    """Glorot-uniform weights, zero biases, unit norm scales and zero norm offsets."""
    rng = np.random.default_rng(seed)
    params = []
    for name, shape, comp in _param_shapes(config):
        kind = name.rsplit(".", 1)[1]
        if kind == "W":
            fan_out, fan_in = shape
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            v = rng.uniform(-lim, lim, shape)
        elif kind == "K":
            fan_in, fan_out = 4 * shape[2], 4 * shape[3]
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            v = rng.uniform(-lim, lim, shape)
        elif kind == "scale":
            v = np.ones(shape)
        else:
            v = np.zeros(shape)
        params.append(Param(name, v.astype(dtype), comp))
    return Ha02Params(params, config)


def is_fully_connected(name: str) -> bool:
    return name.rsplit(".", 1)[0] in FC_GROUPS


def count_params(params: Ha02Params, which: str = "all") -> int:
    """Element count over ``all``, ``encoder``, ``decoder`` or ``fully-connected`` tensors."""
    if which == "all":
        sel = list(params)
    elif which in ("encoder", "decoder"):
        sel = [p for p in params if p.component == which]
    elif which == "fully-connected":
        sel = [p for p in params if is_fully_connected(p.name)]
    else:
        raise ValueError(f"unknown parameter filter {which!r}")
    return sum(p.size for p in sel)


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------

def pack_input(p) -> np.ndarray:
    """Complex pilot estimate ``[..., N/2, n_pilot]`` -> real ``[..., n_pilot*N/2, 2]``.

    Pilot symbol 1's values come first; column 0 holds real parts, column 1 imaginary.
    """
    p = np.asarray(p)
    if p.ndim < 2:
        raise ValueError(f"pack_input: expected [..., N/2, n_pilot], got {p.shape}")
    v = np.swapaxes(p, -1, -2).reshape(p.shape[:-2] + (-1,))
    return np.stack([v.real, v.imag], axis=-1)


def unpack_input(x, n_pilot: int = 2) -> np.ndarray:
    x = np.asarray(x)
    v = x[..., 0] + 1j * x[..., 1]
    return np.swapaxes(v.reshape(v.shape[:-1] + (n_pilot, -1)), -1, -2)


def pack_grid(H) -> np.ndarray:
    """Complex grid ``[..., N, n_symbols]`` -> real ``[..., n_symbols*N, 2]``, row ``i*N + k``."""
    H = np.asarray(H)
    v = np.swapaxes(H, -1, -2).reshape(H.shape[:-2] + (-1,))
    return np.stack([v.real, v.imag], axis=-1)


def unpack_grid(y, n_subcarriers: int = 72) -> np.ndarray:
    """Inverse of :func:`pack_grid`."""
    y = np.asarray(y)
    v = y[..., 0] + 1j * y[..., 1]
    return np.swapaxes(v.reshape(v.shape[:-1] + (-1, n_subcarriers)), -1, -2)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def _batched(x) -> tuple[Tensor, bool]:
    x = nx.as_tensor(x)
    if x.ndim == 2:
        return nx.reshape(x, (1,) + x.shape), True
    return x, False


def encoder_forward(x, params: Ha02Params, trace: dict | None = None) -> Tensor:
    """Packed ``[72, 2]`` (or ``[B, 72, 2]``) -> ``[72, 2]``.

    ``trace``, when given, receives intermediate tensors keyed by stage name.
    """
    x, single = _batched(x)
    cfg = params.config
    L, hl = cfg.length, cfg.head_length
    P = params
    z = nx.dense_axis0(x, P["enc.in.W"], P["enc.in.b"], axis=1)
    q, k, v = z[:, :L], z[:, L:2 * L], z[:, 2 * L:]
    heads = []
    for h in range(cfg.n_heads):
        rows = slice(h * hl, (h + 1) * hl)
        logits = nx.scale(nx.matmul(q[:, rows], nx.swap_last(k[:, rows])), 1.0 / cfg.attention_scale)
        weights = nx.softmax_rows(logits)
        if trace is not None:
            trace[f"attention{h}"] = weights
        heads.append(nx.matmul(weights, v[:, rows]))
    attn = nx.dense_axis0(nx.concat(heads, axis=1), P["enc.attn_out.W"], P["enc.attn_out.b"], axis=1)
    pre1 = nx.add(attn, x)
    s1 = nx.layer_norm(pre1, P["enc.norm1.scale"], P["enc.norm1.offset"], axis=1)
    hidden = nx.gelu(nx.dense_axis0(s1, P["enc.ff1.W"], P["enc.ff1.b"], axis=1))
    ff = nx.dense_axis0(hidden, P["enc.ff2.W"], P["enc.ff2.b"], axis=1)
    out = nx.layer_norm(nx.add(ff, s1), P["enc.norm2.scale"], P["enc.norm2.offset"], axis=1)
    if trace is not None:
        trace.update(qkv=z, add_norm1_input=pre1, add_norm1=s1)
    return nx.reshape(out, out.shape[1:]) if single else out


def decoder_forward(e, params: Ha02Params, trace: dict | None = None) -> Tensor:
    """Encoder output ``[72, 2]`` (or ``[B, 72, 2]``) -> ``[1008, 2]``."""
    e, single = _batched(e)
    P = params
    x = nx.reshape(e, e.shape + (1,))
    c1 = nx.conv2d_same(x, P["dec.conv1.K"], P["dec.conv1.b"])
    r = nx.conv2d_same(nx.relu(nx.conv2d_same(c1, P["dec.res.convA.K"], P["dec.res.convA.b"])),
                       P["dec.res.convB.K"], P["dec.res.convB.b"])
    pre = nx.add(r, c1)
    n = nx.layer_norm(pre, P["dec.norm3.scale"], P["dec.norm3.offset"], axis=1)
    u = nx.dense_axis0(n, P["dec.up.W"], P["dec.up.b"], axis=1)
    o = nx.conv2d_same(u, P["dec.conv_out.K"], P["dec.conv_out.b"])
    if trace is not None:
        trace.update(conv1=c1, residual_sum=pre, residual_input=c1)
    out = nx.reshape(o, o.shape[:-1])
    return nx.reshape(out, out.shape[1:]) if single else out


def network_forward(x, params: Ha02Params) -> Tensor:
    """Packed input -> packed output; the differentiable core of the model."""
    return decoder_forward(encoder_forward(x, params), params)


def ha02_forward(p, params: Ha02Params) -> np.ndarray:
    """Complex pilot estimate ``[..., 36, 2]`` -> complex channel grid ``[..., 72, 14]``."""
    x = pack_input(p).astype(params.dtype)
    y = network_forward(x, params).values
    return unpack_grid(y, params.config.n_subcarriers)


# ---------------------------------------------------------------------------
# weight file
# ---------------------------------------------------------------------------

def _write_container(f, entries: list[tuple[dict, np.ndarray]], meta: dict):
    offset = 0
    manifest_tensors = []
    for info, arr in entries:
        manifest_tensors.append(dict(info, shape=list(arr.shape), offset=offset))
        offset += arr.size * 4
    manifest = json.dumps({"format": "ha02-weights", "version": WEIGHTS_VERSION,
                           "tensors": manifest_tensors, "meta": meta}, sort_keys=True).encode()
    f.write(WEIGHTS_MAGIC)
    f.write(struct.pack("<II", WEIGHTS_VERSION, len(manifest)))
    f.write(manifest)
    for _, arr in entries:
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def save_weights(path, params: Ha02Params, optimizer_state: dict[str, np.ndarray] | None = None,
                 meta: dict | None = None) -> None:
    """Write parameters (and optionally optimizer moments) as little-endian float32."""
    entries = [({"id": p.name, "component": p.component, "kind": "param"}, p.values) for p in params]
    for key, arr in (optimizer_state or {}).items():
        entries.append(({"id": key, "component": "optimizer", "kind": "state"}, arr))
    meta = dict(meta or {})
    meta.setdefault("config", params.config.__dict__)
    buf = io.BytesIO()
    _write_container(buf, entries, meta)
    Path(path).write_bytes(buf.getvalue())


def load_weights(path, dtype=np.float32, validate: bool = True):
    """Read a weight file; returns ``(params, optimizer_state, meta)``.

    With ``validate`` the parameter counts must match the reference HA02 totals.
    """
    raw = Path(path).read_bytes()
    if raw[:8] != WEIGHTS_MAGIC:
        raise WeightFormatError(f"{path}: not an HA02 weight file")
    version, mlen = struct.unpack_from("<II", raw, 8)
    if version != WEIGHTS_VERSION:
        raise WeightFormatError(f"{path}: unsupported weight file version {version}")
    try:
        manifest = json.loads(raw[16:16 + mlen])
    except ValueError as exc:
        raise WeightFormatError(f"{path}: corrupt manifest") from exc
    base = 16 + mlen
    params, state = [], {}
    for t in manifest["tensors"]:
        n = int(np.prod(t["shape"], dtype=np.int64))
        start = base + t["offset"]
        if start + 4 * n > len(raw):
            raise WeightFormatError(f"{path}: truncated data for {t['id']}")
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=start).reshape(t["shape"])
        if t.get("kind", "param") == "param":
            params.append(Param(t["id"], arr.astype(dtype), t["component"]))
        else:
            state[t["id"]] = arr.copy()
    meta = manifest.get("meta", {})
    cfg = Ha02Config(**meta["config"]) if "config" in meta else Ha02Config()
    result = Ha02Params(params, cfg)
    if validate:
        expected = {p[0]: p[1] for p in _param_shapes(Ha02Config())}
        got = {p.name: p.shape for p in result}
        counts = (count_params(result), count_params(result, "encoder"), count_params(result, "decoder"))
        if got != expected or counts != (TOTAL_PARAMS, ENCODER_PARAMS, DECODER_PARAMS):
            raise WeightFormatError(
                f"{path}: weights are not HA02-shaped (total/encoder/decoder = {counts}, "
                f"expected {(TOTAL_PARAMS, ENCODER_PARAMS, DECODER_PARAMS)})")
    return result, state, meta
