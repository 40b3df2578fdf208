"""Versioned binary checkpoints for networks, masks and winner-rate configs.

Layout (all integers little-endian):

    magic   6 bytes  b"JPCKPT"
    version u8       currently 1
    pad     u8       zero
    crc32   u32      CRC over everything that follows
    length  u64      payload byte count
    payload:
        meta_len u32, meta JSON (utf-8, sorted keys)
        for each param (order fixed by the architecture):
            name_len u16, name utf-8
            dtype_len u8, numpy dtype string (little-endian form)
            ndim u8, dims u32 * ndim
            raw value bytes
            has_mask u8; if 1: bit-packed mask, ceil(size/8) bytes

Round trips are bit-exact; a flipped byte fails the CRC; an unknown
version is rejected, never coerced.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError
from .layers import LayerSpec
from .network import Network
from .sparsity import WinnerRateConfig

MAGIC = b"JPCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    arch: list  # list of {"kind":..., "geometry": {...}} dicts
    input_shape: tuple
    dtype: str
    params: dict  # name -> ndarray
    masks: dict  # name -> binary ndarray (weights with a static mask only)
    winner_cfg: dict | None = None
    meta: dict = field(default_factory=dict)


def _param_names(net):
    names = []
    for i, layer in enumerate(net.layers):
        for p in layer.params:
            names.append((f"layer{i}.{p.name}", p))
    return names


def checkpoint_from_network(net, mask_cfg=None, meta=None):
    cfg = mask_cfg if mask_cfg is not None else net.mask_cfg
    params, masks = {}, {}
    for name, p in _param_names(net):
        params[name] = p.value
        if p.mask is not None:
            masks[name] = p.mask
    winner_cfg = None
    if cfg is not None:
        winner_cfg = {
            "per_layer_rate": {str(k): float(v) for k, v in cfg.per_layer_rate.items()},
            "downsample_rate": cfg.downsample_rate,
            "selection_mode": cfg.selection_mode,
            "offset_seed": cfg.offset_seed,
        }
    return Checkpoint(
        arch=[{"kind": s.kind, "geometry": s.geometry} for s in net.specs],
        input_shape=tuple(net.input_shape),
        dtype=net.dtype.str,
        params=params,
        masks=masks,
        winner_cfg=winner_cfg,
        meta=dict(meta or {}),
    )


def network_from_checkpoint(ckpt):
    specs = [LayerSpec(d["kind"], dict(d["geometry"])) for d in ckpt.arch]
    net = Network(specs, ckpt.input_shape, dtype=np.dtype(ckpt.dtype),
                  seed=ckpt.meta.get("seed", 0))
    for name, p in _param_names(net):
        if name not in ckpt.params:
            raise CheckpointError(f"checkpoint missing param {name}")
        value = ckpt.params[name]
        if value.shape != p.value.shape:
            raise CheckpointError(
                f"param {name}: checkpoint shape {value.shape} != model {p.value.shape}"
            )
        p.value = value.astype(net.dtype, copy=True)
        p.grad = np.zeros_like(p.value)
        if name in ckpt.masks:
            p.set_mask(ckpt.masks[name])
    if ckpt.winner_cfg is not None:
        net.set_mask_cfg(winner_cfg_from_dict(ckpt.winner_cfg))
    return net


def winner_cfg_from_dict(d):
    return WinnerRateConfig(
        per_layer_rate={int(k): float(v) for k, v in d["per_layer_rate"].items()},
        downsample_rate=d.get("downsample_rate", 1.0),
        selection_mode=d.get("selection_mode", "exact_topk"),
        offset_seed=d.get("offset_seed", 0),
    )


def _pack_payload(ckpt):
    meta_doc = {
        "arch": ckpt.arch,
        "input_shape": list(ckpt.input_shape),
        "dtype": ckpt.dtype,
        "winner_cfg": ckpt.winner_cfg,
        "meta": ckpt.meta,
        "param_order": list(ckpt.params.keys()),
    }
    meta = json.dumps(meta_doc, sort_keys=True, separators=(",", ":")).encode()
    out = [struct.pack("<I", len(meta)), meta]
    for name in ckpt.params:
        value = np.ascontiguousarray(ckpt.params[name])
        value = value.astype(value.dtype.newbyteorder("<"), copy=False)
        nb = name.encode()
        dt = value.dtype.str.encode()
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack("<B", len(dt)))
        out.append(dt)
        out.append(struct.pack("<B", value.ndim))
        out.append(struct.pack(f"<{value.ndim}I", *value.shape))
        out.append(value.tobytes())
        mask = ckpt.masks.get(name)
        if mask is None:
            out.append(b"\x00")
        else:
            out.append(b"\x01")
            out.append(np.packbits(mask.astype(bool).reshape(-1)).tobytes())
    return b"".join(out)


def save_checkpoint(ckpt, path):
    payload = _pack_payload(ckpt)
    header = MAGIC + struct.pack("<BB", VERSION, 0)
    header += struct.pack("<I", zlib.crc32(payload))
    header += struct.pack("<Q", len(payload))
    with open(path, "wb") as f:
        f.write(header + payload)


def load_checkpoint(path):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 20 or blob[:6] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, _ = struct.unpack_from("<BB", blob, 6)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    crc, length = struct.unpack_from("<IQ", blob, 8)
    payload = blob[20:]
    if len(payload) != length:
        raise CheckpointError(f"{path}: truncated payload ({len(payload)} of {length} bytes)")
    if zlib.crc32(payload) != crc:
        raise CheckpointError(f"{path}: CRC mismatch, file corrupt")

    off = 0

    def take(n):
        nonlocal off
        if off + n > len(payload):
            raise CheckpointError(f"{path}: payload underrun")
        chunk = payload[off : off + n]
        off += n
        return chunk

    (meta_len,) = struct.unpack("<I", take(4))
    meta_doc = json.loads(take(meta_len))
    params, masks = {}, {}
    for name in meta_doc["param_order"]:
        (name_len,) = struct.unpack("<H", take(2))
        stored = take(name_len).decode()
        if stored != name:
            raise CheckpointError(f"{path}: param order mismatch ({stored!r} != {name!r})")
        (dt_len,) = struct.unpack("<B", take(1))
        dtype = np.dtype(take(dt_len).decode())
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        value = np.frombuffer(take(int(np.prod(shape)) * dtype.itemsize), dtype=dtype)
        params[name] = value.reshape(shape).copy()
        (has_mask,) = struct.unpack("<B", take(1))
        if has_mask:
            nbits = int(np.prod(shape))
            packed = np.frombuffer(take((nbits + 7) // 8), dtype=np.uint8)
            bits = np.unpackbits(packed, count=nbits)
            masks[name] = bits.reshape(shape).astype(dtype)
    if off != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - off} trailing payload bytes")
    return Checkpoint(
        arch=meta_doc["arch"],
        input_shape=tuple(meta_doc["input_shape"]),
        dtype=meta_doc["dtype"],
        params=params,
        masks=masks,
        winner_cfg=meta_doc["winner_cfg"],
        meta=meta_doc["meta"],
    )
