"""Binary dataset and checkpoint files.

Both formats start with a 4-byte magic and an unsigned 32-bit version and
store every number little-endian.  Datasets hold six ``u32`` sizes followed
by ``f64`` arrays; checkpoints hold a list of named, typed entries.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import Normalization, PTPIModel
from .networks import DenseNet, FourierEmbedding
from .pod import PODBasis, SnapshotSet

__all__ = ["FormatError", "save_dataset", "load_dataset", "save_checkpoint", "load_checkpoint"]

DATASET_MAGIC = b"PTPI"
CHECKPOINT_MAGIC = b"PTPC"
VERSION = 1
_F64 = np.dtype("<f8")


class FormatError(ValueError):
    """File does not follow the expected binary layout."""


# ---------------------------------------------------------------------------
# datasets


def dataset_bytes(data: SnapshotSet) -> bytes:
    header = DATASET_MAGIC + struct.pack(
        "<7I", VERSION, data.n_h, data.d, data.channels, data.n_s, data.n_t, data.p
    )
    body = [
        np.ascontiguousarray(data.coords, dtype=_F64).tobytes(),
        np.ascontiguousarray(data.params, dtype=_F64).tobytes(),
        np.ascontiguousarray(data.times, dtype=_F64).tobytes(),
        # column-major: snapshot after snapshot
        np.asfortranarray(data.fields, dtype=_F64).tobytes(order="F"),
    ]
    return header + b"".join(body)


def save_dataset(data: SnapshotSet, path) -> Path:
    path = Path(path)
    path.write_bytes(dataset_bytes(data))
    return path


def load_dataset(path) -> SnapshotSet:
    raw = Path(path).read_bytes()
    if raw[:4] != DATASET_MAGIC:
        raise FormatError(f"{path}: not a dataset file")
    if len(raw) < 32:
        raise FormatError(f"{path}: truncated header")
    version, n_h, d, C, n_s, n_t, p = struct.unpack_from("<7I", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    sizes = [n_h * d, n_s * p, n_t, n_h * C * n_s * n_t]
    if len(raw) != 32 + 8 * sum(sizes):
        raise FormatError(f"{path}: size does not match header")
    flat = np.frombuffer(raw, dtype=_F64, offset=32)
    parts = np.split(flat, np.cumsum(sizes)[:-1])
    return SnapshotSet(
        parts[0].reshape(n_h, d).copy(),
        parts[1].reshape(n_s, p).copy(),
        parts[2].copy(),
        parts[3].reshape(n_h * C, n_s * n_t, order="F").copy(),
        C,
    )


# ---------------------------------------------------------------------------
# checkpoints

_ARRAY, _TEXT = 0, 1


def _pack_entries(entries: dict) -> bytes:
    out = [CHECKPOINT_MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, value in entries.items():
        key = name.encode()
        out.append(struct.pack("<I", len(key)) + key)
        if isinstance(value, str):
            text = value.encode()
            out.append(struct.pack("<BI", _TEXT, len(text)) + text)
        else:
            arr = np.asarray(value, dtype=_F64)
            out.append(struct.pack(f"<BI{arr.ndim}I", _ARRAY, arr.ndim, *arr.shape))
            out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


def _unpack_entries(raw: bytes, path) -> dict:
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pos, entries = 12, {}
    try:
        for _ in range(count):
            (klen,) = struct.unpack_from("<I", raw, pos)
            name = raw[pos + 4 : pos + 4 + klen].decode()
            pos += 4 + klen
            kind, n = struct.unpack_from("<BI", raw, pos)
            pos += 5
            if kind == _TEXT:
                entries[name] = raw[pos : pos + n].decode()
                pos += n
            elif kind == _ARRAY:
                shape = struct.unpack_from(f"<{n}I", raw, pos)
                pos += 4 * n
                size = int(np.prod(shape, dtype=np.int64))
                entries[name] = np.frombuffer(raw, _F64, size, pos).reshape(shape).copy()
                pos += 8 * size
            else:
                raise FormatError(f"{path}: unknown entry kind {kind}")
    except struct.error as exc:
        raise FormatError(f"{path}: truncated checkpoint") from exc
    if pos != len(raw):
        raise FormatError(f"{path}: trailing bytes")
    return entries


def _net_entries(prefix: str, net: DenseNet) -> dict:
    out = {f"{prefix}.activations": ",".join(net.activations)}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}.W{i}"] = w
        out[f"{prefix}.b{i}"] = b
    return out


def _net_from(entries: dict, prefix: str) -> DenseNet:
    acts = entries[f"{prefix}.activations"].split(",")
    W = [entries[f"{prefix}.W{i}"] for i in range(len(acts))]
    b = [entries[f"{prefix}.b{i}"] for i in range(len(acts))]
    return DenseNet(W, b, acts)


def save_checkpoint(model: PTPIModel, path, config_text: str = "") -> Path:
    e: dict = {"config": config_text}
    for name, net in model.nets().items():
        e.update(_net_entries(name, net))
    e["pod.V"] = model.pod.V
    e["pod.sigma"] = model.pod.sigma
    e["pod.info"] = np.array([model.pod.weight, model.pod.discarded_energy, model.pod.channels])
    e["mesh"] = model.mesh
    n = model.norm
    for key in ("x_lo", "x_hi", "in_lo", "in_hi", "field_scale"):
        e[f"norm.{key}"] = getattr(n, key)
    e["meta"] = np.array([model.p, float(model.stationary), model.channels])
    e["lifting"] = model.lifting
    if model.fourier is not None:
        e["fourier.B"] = model.fourier.B
    path = Path(path)
    path.write_bytes(_pack_entries(e))
    return path


def load_checkpoint(path) -> tuple[PTPIModel, str]:
    """Model and the run configuration text stored with it."""
    e = _unpack_entries(Path(path).read_bytes(), path)
    weight, discarded, channels = e["pod.info"]
    pod = PODBasis(e["pod.V"], e["pod.sigma"], float(weight), float(discarded), int(channels))
    norm = Normalization(*(e[f"norm.{k}"] for k in ("x_lo", "x_hi", "in_lo", "in_hi", "field_scale")))
    p, stationary, C = e["meta"]
    fourier = FourierEmbedding(e["fourier.B"]) if "fourier.B" in e else None
    model = PTPIModel(
        _net_from(e, "trunk"), _net_from(e, "encoder"), _net_from(e, "reduced"), _net_from(e, "decoder"),
        pod, e["mesh"], norm, int(p), bool(stationary), int(C), fourier, e["lifting"],
    )
    return model, e["config"]
