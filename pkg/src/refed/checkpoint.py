"""Checkpoint files: ``REFD0001`` magic, u32 header length, UTF-8 JSON header, float32 payload.

The header lists every tensor by name, shape and byte offset into the
little-endian float32 payload that follows it.
"""
import json
import struct

import numpy as np

from .config import ConfigError, RunConfig
from .refed import RefedModel
from .tempcnn import TempCNN

MAGIC = b"REFD0001"


class CheckpointError(ValueError):
    pass


def _model_dims(model):
    if isinstance(model, RefedModel):
        return "refed", model.t_len, model.n_bands, model.n_classes
    enc = model.encoder
    return "tempcnn", enc.t_len, enc.n_bands, model.n_classes


def dumps_checkpoint(model, cfg, optimizer=None, meta=None):
    kind, t_len, n_bands, n_classes = _model_dims(model)
    state = model.state_dict() if isinstance(model, RefedModel) else _tempcnn_state(model)
    if optimizer is not None:
        state = {**state, **optimizer.state_arrays()}
    tensors, chunks, offset = [], [], 0
    for name, arr in state.items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format": 1,
        "kind": kind,
        "dims": {"t_len": t_len, "n_bands": n_bands, "n_classes": n_classes},
        "config": cfg.to_dict(),
        "config_digest": cfg.digest(),
        "best_epoch": int(getattr(model, "best_epoch", -1)),
        "has_optimizer": optimizer is not None,
        "meta": meta or {},
        "tensors": tensors,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(hbytes)) + hbytes + b"".join(chunks)


def _tempcnn_state(net):
    from .nn import state_dict

    return state_dict(net)


def save_checkpoint(path, model, cfg, optimizer=None, meta=None):
    with open(path, "wb") as fh:
        fh.write(dumps_checkpoint(model, cfg, optimizer, meta))


def loads_checkpoint(buf):
    """Rebuild the model; returns ``(model, header, extra_tensors)``."""
    if buf[:8] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {buf[:8]!r}")
    if len(buf) < 12:
        raise CheckpointError("truncated checkpoint header")
    (hlen,) = struct.unpack("<I", buf[8:12])
    if len(buf) < 12 + hlen:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(buf[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from None
    missing = {"kind", "dims", "config", "tensors"} - set(header if isinstance(header, dict) else ())
    if missing:
        raise CheckpointError(f"checkpoint header lacks fields: {sorted(missing)}")
    payload = memoryview(buf)[12 + hlen:]
    spans = sorted((t["offset"], t["offset"] + t["nbytes"]) for t in header["tensors"])
    prev_end = 0
    for start, end in spans:
        if start < prev_end or end > len(payload):
            raise CheckpointError("tensor offsets overlap or exceed the payload")
        prev_end = end
    state = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        if count * 4 != t["nbytes"]:
            raise CheckpointError(f"tensor {t['name']} size does not match its shape")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=t["offset"])
        state[t["name"]] = arr.astype(np.float32).reshape(t["shape"])
    try:
        cfg = RunConfig.from_dict(header["config"])
    except (ConfigError, TypeError) as exc:
        raise CheckpointError(f"invalid config in checkpoint: {exc}") from None
    dims = header["dims"]
    if header["kind"] == "refed":
        model = RefedModel.from_config(dims["t_len"], dims["n_bands"], dims["n_classes"], cfg)
        own = model.state_dict()
    elif header["kind"] == "tempcnn":
        model = TempCNN(dims["t_len"], dims["n_bands"], dims["n_classes"], dropout=cfg.dropout, pooling=cfg.pooling)
        own = _tempcnn_state(model)
    else:
        raise CheckpointError(f"unknown model kind {header['kind']!r}")
    missing = set(own) - set(state)
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {sorted(missing)[:5]}")
    for name, arr in own.items():
        if arr.shape != state[name].shape:
            raise CheckpointError(f"shape mismatch for {name}")
        arr[...] = state[name]
    extra = {k: v for k, v in state.items() if k not in own}
    model.eval()
    model.best_epoch = header.get("best_epoch", -1)
    return model, header, extra


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read())
