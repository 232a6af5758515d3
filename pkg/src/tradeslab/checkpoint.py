"""Binary checkpoint files.

Layout (all integers little-endian)::

    magic        4 bytes  b"TRDS"
    version      u32
    n_layers     u32
    layers       n_layers x (in u32, out u32, activation u8)
    n_params     u64
    payload      n_params x f64
    config_len   u32
    config       config_len bytes of canonical key=value UTF-8 text
    crc32        u32 over the payload bytes

The config block carries the training configuration, the epoch counter, the
random-stream states and the per-epoch metrics, so a loaded checkpoint can
resume training exactly.
"""

from __future__ import annotations

import dataclasses
import json
import struct
import zlib

import numpy as np

from .attacks import AttackConfig
from .config import canonical_kv, parse_kv
from .errors import FormatError, IntegrityError, UnsupportedVersionError
from .fsutil import atomic_write_bytes
from .ndcore import LayerSpec, Model
from .train import Checkpoint, TrainConfig

MAGIC = b"TRDS"
FORMAT_VERSION = 1
_ACT_CODES = {"identity": 0, "relu": 1, "tanh": 2}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


def _config_to_kv(cfg: TrainConfig) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "attack":
            for af in dataclasses.fields(value):
                av = getattr(value, af.name)
                out[f"attack.{af.name}"] = av if isinstance(av, str) else repr(av)
        elif f.name == "hidden":
            out["hidden"] = ",".join(str(h) for h in value)
        else:
            out[f.name] = repr(value) if not isinstance(value, str) else value
    return out


def _parse_literal(text):
    if text in ("True", "False"):
        return text == "True"
    try:
        return int(text)
    except ValueError:
        return float(text)


def _config_from_kv(kv: dict) -> TrainConfig:
    attack = {}
    cfg = {}
    for key, value in kv.items():
        if key.startswith("attack."):
            name = key[len("attack."):]
            attack[name] = value if name == "norm" else _parse_literal(value)
        elif key == "hidden":
            cfg["hidden"] = tuple(int(h) for h in value.split(",") if h)
        elif key in ("mode", "surrogate", "activation"):
            cfg[key] = value
        elif key in {f.name for f in dataclasses.fields(TrainConfig)}:
            cfg[key] = _parse_literal(value)
    for key in ("epsilon", "step_eta1", "init_sigma"):
        if key in attack:
            attack[key] = float(attack[key])
    for key in ("inv_lambda", "eta2", "unlabeled_fraction"):
        if key in cfg:
            cfg[key] = float(cfg[key])
    return TrainConfig(attack=AttackConfig(**attack), **cfg)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    model = ckpt.model
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(model.layers))]
    for layer in model.layers:
        parts.append(struct.pack("<IIB", layer.in_dim, layer.out_dim, _ACT_CODES[layer.activation]))
    payload = np.ascontiguousarray(model.params, dtype="<f8").tobytes()
    parts.append(struct.pack("<Q", model.n_params))
    parts.append(payload)
    kv = _config_to_kv(ckpt.config)
    kv["epoch"] = str(int(ckpt.epoch))
    kv["rng_state"] = json.dumps(ckpt.rng_state, sort_keys=True, separators=(",", ":"))
    kv["metrics_history"] = json.dumps(ckpt.metrics_history, sort_keys=True, separators=(",", ":"))
    text = canonical_kv(kv).encode("utf-8")
    parts.append(struct.pack("<I", len(text)))
    parts.append(text)
    parts.append(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
    return b"".join(parts)


def save_checkpoint(ckpt: Checkpoint, path):
    atomic_write_bytes(path, checkpoint_bytes(ckpt))


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"checkpoint truncated while reading {what}", offset=len(self.buf))
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def parse_checkpoint(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)", offset=0)
    (version,) = r.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(version, FORMAT_VERSION)
    (n_layers,) = r.unpack("<I", "layer count")
    layers = []
    for i in range(n_layers):
        start = r.pos
        d_in, d_out, code = r.unpack("<IIB", f"layer {i}")
        if code not in _ACT_NAMES:
            raise FormatError(f"unknown activation code {code}", offset=start + 8)
        layers.append(LayerSpec(d_in, d_out, _ACT_NAMES[code]))
    start = r.pos
    (n_params,) = r.unpack("<Q", "parameter count")
    expected = sum(layer.n_params for layer in layers)
    if n_params != expected:
        raise FormatError(f"parameter count {n_params} does not match the layer table ({expected})", offset=start)
    payload = r.take(8 * n_params, "parameters")
    (cfg_len,) = r.unpack("<I", "config length")
    cfg_start = r.pos
    cfg_text = r.take(cfg_len, "config")
    (crc,) = r.unpack("<I", "checksum")
    if r.pos != len(buf):
        raise FormatError("trailing bytes after checksum", offset=r.pos)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise IntegrityError("checkpoint payload checksum mismatch")
    try:
        kv = parse_kv(cfg_text.decode("utf-8"))
        epoch = int(kv.pop("epoch"))
        rng_state = json.loads(kv.pop("rng_state"))
        history = json.loads(kv.pop("metrics_history"))
        config = _config_from_kv(kv)
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"malformed config block: {exc}", offset=cfg_start) from exc
    params = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return Checkpoint(Model(tuple(layers), params), config, epoch, rng_state, history)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())
