"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic        4 bytes  b"SWCK"
    version      u32      (currently 1)
    config       u32 length + UTF-8 INI text
    iteration    u64
    tensors      u32 count, then per tensor:
                   u32 name length + UTF-8 name, u32 rank, rank x u32 dims,
                   prod(dims) x f32 payload (row-major)
    adam         u64 step count, then a tensor block as above holding
                 "m/<param>" and "v/<param>" entries
    rng states   u32 count, then per stream:
                   u32 name length + name, u32 length + state bytes (JSON)

Values are written as 32-bit floats; float64 parameters are narrowed.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..gradtape import AdamState, ParamSet, shape_diff

MAGIC = b"SWCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config_text: str
    tensors: dict[str, np.ndarray]
    iteration: int = 0
    adam_t: int = 0
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    rng_states: dict[str, bytes] = field(default_factory=dict)

    @classmethod
    def capture(cls, config_text: str, params: ParamSet, opt: AdamState | None = None, iteration: int = 0, rng_states=None):
        opt = opt or AdamState()
        return cls(
            config_text=config_text,
            tensors=params.state_dict(),
            iteration=iteration,
            adam_t=opt.t,
            adam_m={k: v.copy() for k, v in opt.m.items()},
            adam_v={k: v.copy() for k, v in opt.v.items()},
            rng_states=dict(rng_states or {}),
        )

    def restore(self, params: ParamSet, opt: AdamState | None = None) -> None:
        """Load tensors into ``params`` (and Adam moments into ``opt``); shapes must match exactly."""
        diff = shape_diff(params.shapes(), {k: v.shape for k, v in self.tensors.items()})
        if diff:
            raise CheckpointError("checkpoint does not match the network architecture:\n  " + "\n  ".join(diff))
        params.load_state_dict(self.tensors)
        if opt is not None:
            opt.t = self.adam_t
            dtype = next(iter(params)).data.dtype
            opt.m = {k: v.astype(dtype) for k, v in self.adam_m.items()}
            opt.v = {k: v.astype(dtype) for k, v in self.adam_v.items()}


def _pack_str(b: bytearray, s: str | bytes) -> None:
    raw = s.encode("utf-8") if isinstance(s, str) else s
    b += struct.pack("<I", len(raw))
    b += raw


def _pack_tensors(b: bytearray, tensors: dict[str, np.ndarray]) -> None:
    b += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        _pack_str(b, name)
        b += struct.pack("<I", arr.ndim)
        b += struct.pack(f"<{arr.ndim}I", *arr.shape)
        b += arr.tobytes()


def to_bytes(ck: Checkpoint) -> bytes:
    b = bytearray(MAGIC)
    b += struct.pack("<I", VERSION)
    _pack_str(b, ck.config_text)
    b += struct.pack("<Q", ck.iteration)
    _pack_tensors(b, ck.tensors)
    b += struct.pack("<Q", ck.adam_t)
    moments = {f"m/{k}": v for k, v in ck.adam_m.items()}
    moments.update({f"v/{k}": v for k, v in ck.adam_v.items()})
    _pack_tensors(b, moments)
    b += struct.pack("<I", len(ck.rng_states))
    for name, raw in ck.rng_states.items():
        _pack_str(b, name)
        _pack_str(b, raw)
    return bytes(b)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"truncated checkpoint: needed {n} bytes at offset {self.pos}, file has {len(self.raw)}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def bytes_(self) -> bytes:
        (n,) = self.unpack("<I")
        return self.take(n)

    def str_(self) -> str:
        try:
            return self.bytes_().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"corrupt string in checkpoint: {exc}") from exc

    def tensors(self) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            name = self.str_()
            (rank,) = self.unpack("<I")
            if rank > 8:
                raise CheckpointError(f"implausible rank {rank} for tensor {name!r}")
            dims = self.unpack(f"<{rank}I")
            n = int(np.prod(dims)) if rank else 1
            out[name] = np.frombuffer(self.take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
        return out


def from_bytes(raw: bytes) -> Checkpoint:
    r = _Reader(raw)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    config_text = r.str_()
    (iteration,) = r.unpack("<Q")
    tensors = r.tensors()
    (adam_t,) = r.unpack("<Q")
    moments = r.tensors()
    (n_rng,) = r.unpack("<I")
    rngs = {}
    for _ in range(n_rng):
        name = r.str_()
        rngs[name] = r.bytes_()
    if r.pos != len(raw):
        raise CheckpointError(f"trailing bytes after checkpoint ({len(raw) - r.pos})")
    return Checkpoint(
        config_text=config_text,
        tensors=tensors,
        iteration=iteration,
        adam_t=adam_t,
        adam_m={k[2:]: v for k, v in moments.items() if k.startswith("m/")},
        adam_v={k[2:]: v for k, v in moments.items() if k.startswith("v/")},
        rng_states=rngs,
    )


def save_checkpoint(path: str | Path, ck: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ck))
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(raw)


def tensor_hashes(tensors: dict[str, np.ndarray]) -> dict[str, str]:
    return {k: hashlib.sha256(np.ascontiguousarray(v).tobytes()).hexdigest() for k, v in tensors.items()}
