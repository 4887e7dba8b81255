"""Versioned binary checkpoints with a trailing content checksum.

Layout (all integers little-endian):

    magic   4 bytes  b"SGCK"
    version u32      format version (currently 1)
    hlen    u64      header length
    header  bytes    canonical JSON (sorted keys, compact separators):
                     format_version, model config, design constants,
                     epoch, per-block freeze flags, optimizer hyperparameters
    3 sections       parameters, buffers, optimizer velocities; each is
                     count u64 followed by entries sorted by name:
                       name_len u16 | name utf-8 | dtype u8 (0=f32, 1=f64)
                       ndim u8 | dims u64 * ndim | row-major payload
    sha256  32 bytes checksum of every preceding byte

Round trips are bitwise lossless; loading verifies the checksum, the
format version, and that the parameter name set matches a model freshly
built from the embedded config.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .agc import AgclParams
from .errors import CheckpointError
from .network import (BN_EPS, BN_MOMENTUM, ModelConfig, ModelParams, config_from_dict,
                      config_to_dict, init_model, named_buffers, named_parameters)
from .training import OptimizerState

MAGIC = b"SGCK"
FORMAT_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPE_FROM_CODE = {0: np.dtype(np.float32), 1: np.dtype(np.float64)}


def _encode_entries(entries: list[tuple[str, np.ndarray]]) -> bytes:
    chunks = [struct.pack("<Q", len(entries))]
    for name, arr in sorted(entries, key=lambda kv: kv[0]):
        nb = name.encode("utf-8")
        if arr.ndim:
            arr = np.ascontiguousarray(arr)  # keeps 0-d shapes as-is
        if arr.dtype not in _DTYPE_CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for entry {name}")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        little = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        chunks.append(little.tobytes(order="C"))
    return b"".join(chunks)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("truncated checkpoint file")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u(self, fmt: str) -> int:
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))[0]


def _decode_entries(r: _Reader) -> dict[str, np.ndarray]:
    count = r.u("<Q")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u("<H")).decode("utf-8")
        code = r.u("<B")
        ndim = r.u("<B")
        if code not in _DTYPE_FROM_CODE:
            raise CheckpointError(f"unknown dtype code {code} for entry {name}")
        dims = struct.unpack(f"<{ndim}Q", r.take(8 * ndim))
        dtype = _DTYPE_FROM_CODE[code]
        n_items = 1
        for d in dims:
            n_items *= d
        payload = r.take(n_items * dtype.itemsize)
        arr = np.frombuffer(payload, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(dims)
        out[name] = arr
    return out


def save_checkpoint(model: ModelParams, opt: OptimizerState | None, epoch: int, path) -> None:
    cfg = model.config
    header = {
        "format_version": FORMAT_VERSION,
        "config": config_to_dict(cfg),
        "design": {
            "kernel_t": cfg.kernel_t,
            "kernel_s": cfg.resolved_kernel_s(),
            "kernel_t_att": cfg.kernel_t_att,
            "reduction": cfg.reduction,
            "embed_divisor": cfg.embed_divisor,
            "strides": [b.stride_t for b in cfg.blocks],
            "bn_eps": BN_EPS,
            "bn_momentum": BN_MOMENTUM,
        },
        "epoch": epoch,
        "frozen": [bool(bp.gcn.b_frozen) if isinstance(bp.gcn, AgclParams) else False
                   for bp in model.blocks],
        "optimizer": None if opt is None else {
            "lr": opt.lr, "momentum": opt.momentum,
            "nesterov": opt.nesterov, "weight_decay": opt.weight_decay,
        },
    }
    hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<Q", len(hjson)), hjson]
    body.append(_encode_entries([(n, t.data) for n, t, _ in named_parameters(model)]))
    body.append(_encode_entries(list(named_buffers(model))))
    velocities = [] if opt is None else sorted(opt.velocity.items())
    body.append(_encode_entries(velocities))
    blob = b"".join(body)
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(hashlib.sha256(blob).digest())


def load_checkpoint(path, expect_config: ModelConfig | None = None
                    ) -> tuple[ModelParams, OptimizerState | None, int]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 48 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: content checksum mismatch (corrupt file)")
    r = _Reader(payload)
    r.take(4)
    version = r.u("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    header = json.loads(r.take(r.u("<Q")).decode("utf-8"))
    cfg = config_from_dict(header["config"])
    if expect_config is not None and config_to_dict(expect_config) != config_to_dict(cfg):
        raise CheckpointError(f"{path}: checkpoint config does not match the requested config")

    model = init_model(cfg, seed=0)
    params = _decode_entries(r)
    buffers = _decode_entries(r)
    velocities = _decode_entries(r)
    if r.pos != len(payload):
        raise CheckpointError(f"{path}: trailing bytes after the last section")

    expected = {n for n, _, _ in named_parameters(model)}
    if set(params) != expected:
        extra = sorted(set(params) - expected)
        missing = sorted(expected - set(params))
        raise CheckpointError(f"{path}: parameter names mismatch "
                              f"(unknown: {extra}, missing: {missing})")
    for name, t, _ in named_parameters(model):
        arr = params[name]
        if arr.shape != t.data.shape or arr.dtype != t.data.dtype:
            raise CheckpointError(f"{path}: entry {name} has shape {arr.shape}/{arr.dtype}, "
                                  f"model expects {t.data.shape}/{t.data.dtype}")
        t.data = arr  # decode already copied out of the file buffer
    for name, buf in named_buffers(model):
        if name not in buffers:
            raise CheckpointError(f"{path}: missing buffer {name}")
        buf[...] = buffers[name]

    for bp, frozen in zip(model.blocks, header.get("frozen", [])):
        if isinstance(bp.gcn, AgclParams):
            bp.gcn.b_frozen = bool(frozen)

    opt = None
    oh = header.get("optimizer")
    if oh is not None:
        opt = OptimizerState(lr=oh["lr"], momentum=oh["momentum"], nesterov=oh["nesterov"],
                             weight_decay=oh["weight_decay"], velocity=dict(velocities))
        if set(opt.velocity) != expected:
            raise CheckpointError(f"{path}: optimizer velocity names do not match parameters")
    return model, opt, int(header["epoch"])
