"""Packed models: prediction-time quantization, entropy accounting, file format.

File layout (version 1, all integers little-endian)::

    offset  size  field
    0       4     magic b"LRQM"
    4       2     version (u16) = 1
    6       1     value kind   0=float32 1=fixed 2=adaptive 3=float64
    7       1     counter kind 0=none 1=exact u32 2=morris u8
    8       1     n (integer bits)
    9       1     m (fraction bits; fixed kind only, else 0)
    10      2     reserved, zero
    12      8     counter base (f64)
    20      8     R, feasible half-width (f64, may be +inf)
    28      8     entry count N (u64)
    36      4     metadata length L (u32)
    40      L     metadata, UTF-8 JSON with sorted keys
    ...     8N    feature indices (u64), strictly increasing
    ...           values:
                    float32   4N bytes
                    float64   8N bytes
                    fixed     ceil(N*K/8) bytes: K-bit two's-complement codes,
                              bit-packed little-endian (code i occupies bits
                              [i*K, (i+1)*K) of the stream, LSB first)
                    adaptive  N bytes of per-entry m (u8), then 8N bytes raw (i64);
                              value = raw * 2**-m
    ...           counters: 4N bytes (exact) or N bytes (morris) or nothing
    end-4   4     CRC-32 of every preceding byte
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import prob_count
from .errors import FormatError, GridRangeError, ParameterError, VersionError
from .fixed_point import (
    GridSpec,
    from_twos_complement,
    random_round_array,
    to_twos_complement,
)
from .logistic import sigmoid

MAGIC = b"LRQM"
VERSION = 1
_HEADER = struct.Struct("<4sHBBBBHddQI")

VALUE_KINDS = ("float32", "fixed", "adaptive", "float64")
COUNTER_KINDS = ("none", "exact", "morris")
COUNTER_BITS = {"none": 0, "exact": 32, "morris": 8}


@dataclass(frozen=True)
class MemoryReport:
    bits_per_coordinate: float
    coordinates: int
    total_bytes: float
    layout: str


@dataclass(eq=False)
class PackedModel:
    """An immutable sparse coefficient vector plus optional per-coordinate counters.

    ``raw`` holds float32/float64 values for float kinds and integer multiples
    of the grid resolution otherwise. ``levels`` (adaptive only) holds each
    entry's fraction-bit count.
    """

    value_kind: str
    indices: np.ndarray
    raw: np.ndarray
    n: int = 2
    m: int = 0
    levels: np.ndarray | None = None
    counter_kind: str = "none"
    counters: np.ndarray | None = None
    base: float = prob_count.DEFAULT_BASE
    R: float = math.inf
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.value_kind not in VALUE_KINDS:
            raise ParameterError(f"unknown value kind {self.value_kind!r}")
        if self.counter_kind not in COUNTER_KINDS:
            raise ParameterError(f"unknown counter kind {self.counter_kind!r}")
        self.indices = np.ascontiguousarray(self.indices, dtype=np.uint64)
        dtype = {"float32": np.float32, "float64": np.float64}.get(self.value_kind, np.int64)
        self.raw = np.ascontiguousarray(self.raw, dtype=dtype)
        if self.value_kind == "adaptive":
            self.levels = np.ascontiguousarray(self.levels, dtype=np.uint8)
        else:
            self.levels = None
        if self.counter_kind == "none":
            self.counters = None
        else:
            ctype = np.uint32 if self.counter_kind == "exact" else np.uint8
            self.counters = np.ascontiguousarray(self.counters, dtype=ctype)
        size = len(self.indices)
        for name in ("raw", "levels", "counters"):
            arr = getattr(self, name)
            if arr is not None:
                if len(arr) != size:
                    raise ParameterError(f"{name} has {len(arr)} entries, expected {size}")
                arr.setflags(write=False)
        self.indices.setflags(write=False)
        if size > 1 and not np.all(self.indices[1:] > self.indices[:-1]):
            raise ParameterError("indices must be strictly increasing")
        if self.value_kind == "fixed":
            spec = self.spec
            if size and int(np.abs(self.raw).max()) > spec.max_raw:
                raise GridRangeError(f"raw values exceed the {spec} range")

    @property
    def spec(self) -> GridSpec | None:
        if self.value_kind == "fixed":
            return GridSpec(self.n, self.m)
        return None

    def __len__(self):
        return len(self.indices)

    def values(self) -> np.ndarray:
        """Decoded coefficients as float64."""
        if self.value_kind in ("float32", "float64"):
            return self.raw.astype(np.float64)
        if self.value_kind == "fixed":
            return self.raw.astype(np.float64) * self.spec.eps
        return self.raw.astype(np.float64) * np.ldexp(1.0, -self.levels.astype(np.int64))

    def as_dict(self) -> dict[int, float]:
        cached = self.__dict__.get("_weights")
        if cached is None:
            cached = dict(zip(self.indices.tolist(), self.values().tolist()))
            self.__dict__["_weights"] = cached
        return cached

    def margin(self, indices, values=None) -> float:
        w = self.as_dict()
        if values is None:
            return math.fsum(w.get(i, 0.0) for i in indices)
        return math.fsum(w.get(i, 0.0) * v for i, v in zip(indices, values))

    def predict(self, indices, values=None) -> float:
        return sigmoid(self.margin(indices, values))

    def dense(self, dim: int) -> np.ndarray:
        out = np.zeros(dim)
        keep = self.indices < dim
        out[self.indices[keep].astype(np.int64)] = self.values()[keep]
        return out

    def __eq__(self, other):
        if not isinstance(other, PackedModel):
            return NotImplemented
        return serialize(self) == serialize(other)

    @classmethod
    def from_trainer(cls, trainer, metadata: dict | None = None) -> "PackedModel":
        cfg = trainer.config
        table = trainer.table
        items = table.items()
        slots = [s for _, s in items]
        indices = np.array([k for k, _ in items], dtype=np.uint64)
        w = table.cols["w"]
        raw = [w[s] for s in slots]
        levels = None
        if cfg.mode == "control":
            kind = "float32"
        elif cfg.mode == "fixed":
            kind = "fixed"
        elif cfg.rounds:
            kind = "adaptive"
            mcol = table.cols["m"]
            levels = np.array([mcol[s] for s in slots], dtype=np.uint8)
            raw = [int(round(math.ldexp(v, lv))) for v, lv in zip(raw, levels.tolist())]
        else:
            kind = "float64"
        counter_kind = {"global": "none", "exact": "exact", "morris": "morris"}[cfg.counter]
        counters = None
        if counter_kind == "exact":
            col = table.cols["n"]
            counters = [col[s] for s in slots]
        elif counter_kind == "morris":
            col = table.cols["c"]
            counters = [col[s] for s in slots]
        meta = {
            "config": cfg.to_dict(),
            "config_digest": cfg.digest(),
            "examples_seen": trainer.stats.examples,
        }
        if metadata:
            meta.update(metadata)
        return cls(
            value_kind=kind,
            indices=indices,
            raw=np.array(raw),
            n=cfg.n,
            m=cfg.m if kind == "fixed" else 0,
            levels=levels,
            counter_kind=counter_kind,
            counters=counters,
            base=cfg.base,
            R=cfg.R if cfg.project else math.inf,
            metadata=meta,
        )


def _coerce_weights(model) -> tuple[np.ndarray, np.ndarray, dict, float]:
    if isinstance(model, PackedModel):
        return model.indices, model.values(), dict(model.metadata), model.R
    if isinstance(model, Mapping):
        keys = sorted(model)
        return (np.array(keys, dtype=np.uint64),
                np.array([model[k] for k in keys], dtype=np.float64), {}, math.inf)
    arr = np.asarray(model, dtype=np.float64)
    nz = np.flatnonzero(arr)
    return nz.astype(np.uint64), arr[nz], {}, math.inf


def quantize_for_prediction(model, m: int, rng: np.random.Generator, n: int = 2,
                            u=None) -> PackedModel:
    """Independently and unbiasedly round every coefficient to the ``2**-m`` grid.

    ``model`` may be a PackedModel, a mapping ``index -> weight`` or a dense
    array. Counters are dropped; metadata is carried over unchanged.
    """
    spec = GridSpec(n, m)
    indices, values, meta, R = _coerce_weights(model)
    bad = np.flatnonzero(np.abs(values) > spec.max_value)
    if len(bad):
        offenders = indices[bad].tolist()
        shown = ", ".join(map(str, offenders[:10]))
        raise GridRangeError(
            f"{len(offenders)} coefficient(s) exceed the {spec} range +/-{spec.max_value}: {shown}",
            offenders,
        )
    raw = random_round_array(values, spec.eps, rng, u=u)
    return PackedModel(
        value_kind="fixed", indices=indices, raw=raw, n=n, m=m, R=R, metadata=meta,
    )


@dataclass
class ModelHistogram:
    value_counts: dict[float, int]
    d: int

    @classmethod
    def from_values(cls, values) -> "ModelHistogram":
        values = np.asarray(values, dtype=np.float64)
        counts = Counter(values.tolist())
        return cls(dict(counts), int(values.size))

    @classmethod
    def from_model(cls, model: PackedModel) -> "ModelHistogram":
        return cls.from_values(model.values())


def optimal_bits_per_value(hist: ModelHistogram) -> float:
    """Empirical entropy of the value distribution, in bits per value."""
    if hist.d < 1:
        raise ParameterError("histogram must describe at least one value")
    if sum(hist.value_counts.values()) != hist.d:
        raise ParameterError("histogram counts do not sum to d")
    counts = np.array([c for c in hist.value_counts.values() if c > 0], dtype=np.float64)
    p = counts / hist.d
    bits = float(-(counts * np.log2(p)).sum() / hist.d)
    return max(bits, 0.0)


def value_bits(model: PackedModel) -> float:
    kind = model.value_kind
    if kind == "float32":
        return 32.0
    if kind == "float64":
        return 64.0
    if kind == "fixed":
        return float(model.spec.K)
    if len(model) == 0:
        return float(model.n + 1)
    return float(model.n + 1 + model.levels.astype(np.float64).mean())


def memory_report(model: PackedModel) -> MemoryReport:
    """Bits per coordinate for the coefficient and counter columns.

    Adaptive models report the theoretical width ``n + m_i + 1`` averaged over
    entries rather than a physical variable-width layout.
    """
    bits = value_bits(model) + COUNTER_BITS[model.counter_kind]
    layout = model.value_kind if model.value_kind != "fixed" else str(model.spec)
    if model.counter_kind != "none":
        layout += f"+{model.counter_kind}"
    return MemoryReport(bits, len(model), bits * len(model) / 8.0, layout)


def _pack_bits(codes: np.ndarray, K: int) -> bytes:
    if len(codes) == 0:
        return b""
    shifts = np.arange(K, dtype=np.uint64)
    bits = ((codes[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bits.reshape(-1), bitorder="little").tobytes()


def _unpack_bits(buf: bytes, count: int, K: int) -> np.ndarray:
    if count == 0:
        return np.zeros(0, dtype=np.uint64)
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), bitorder="little")
    bits = bits[: count * K].reshape(count, K).astype(np.uint64)
    weights = np.left_shift(np.uint64(1), np.arange(K, dtype=np.uint64))
    return (bits * weights).sum(axis=1, dtype=np.uint64)


def serialize(model: PackedModel) -> bytes:
    meta = json.dumps(model.metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    count = len(model)
    header = _HEADER.pack(
        MAGIC, VERSION,
        VALUE_KINDS.index(model.value_kind), COUNTER_KINDS.index(model.counter_kind),
        model.n, model.m if model.value_kind == "fixed" else 0, 0,
        float(model.base), float(model.R), count, len(meta),
    )
    parts = [header, meta, model.indices.astype("<u8").tobytes()]
    kind = model.value_kind
    if kind == "float32":
        parts.append(model.raw.astype("<f4").tobytes())
    elif kind == "float64":
        parts.append(model.raw.astype("<f8").tobytes())
    elif kind == "fixed":
        K = model.spec.K
        parts.append(_pack_bits(to_twos_complement(model.raw, K), K))
    else:
        parts.append(model.levels.astype("u1").tobytes())
        parts.append(model.raw.astype("<i8").tobytes())
    if model.counter_kind == "exact":
        parts.append(model.counters.astype("<u4").tobytes())
    elif model.counter_kind == "morris":
        parts.append(model.counters.astype("u1").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.pos + size
        if size < 0 or end > len(self.data) - 4:
            raise FormatError(f"truncated while reading {what}", self.pos)
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk


def deserialize(data: bytes) -> PackedModel:
    data = bytes(data)
    if len(data) < _HEADER.size + 4:
        raise FormatError("stream shorter than the fixed header", len(data))
    magic = data[:4]
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    (_, version, vkind, ckind, n, m, reserved, base, R, count, meta_len) = _HEADER.unpack_from(data)
    if version != VERSION:
        raise VersionError(f"unsupported format version {version}", 4)
    if vkind >= len(VALUE_KINDS):
        raise FormatError(f"unknown value kind code {vkind}", 6)
    if ckind >= len(COUNTER_KINDS):
        raise FormatError(f"unknown counter kind code {ckind}", 7)
    if reserved != 0:
        raise FormatError("reserved header bytes are not zero", 10)
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise FormatError("checksum mismatch", len(data) - 4)
    kind = VALUE_KINDS[vkind]
    counter_kind = COUNTER_KINDS[ckind]
    reader = _Reader(data)
    reader.pos = _HEADER.size
    meta_offset = reader.pos
    try:
        metadata = json.loads(reader.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"metadata is not valid JSON: {exc}", meta_offset) from None
    if not isinstance(metadata, dict):
        raise FormatError("metadata must be a JSON object", meta_offset)
    if count > len(data):
        raise FormatError(f"entry count {count} exceeds stream size", 28)
    idx_offset = reader.pos
    indices = np.frombuffer(reader.take(8 * count, "indices"), dtype="<u8")
    if count > 1 and not np.all(indices[1:] > indices[:-1]):
        raise FormatError("indices are not strictly increasing", idx_offset)
    levels = None
    val_offset = reader.pos
    if kind == "float32":
        raw = np.frombuffer(reader.take(4 * count, "values"), dtype="<f4")
    elif kind == "float64":
        raw = np.frombuffer(reader.take(8 * count, "values"), dtype="<f8")
    elif kind == "fixed":
        try:
            spec = GridSpec(n, m)
        except ParameterError as exc:
            raise FormatError(str(exc), 8) from None
        K = spec.K
        codes = _unpack_bits(reader.take((count * K + 7) // 8, "values"), count, K)
        raw = from_twos_complement(codes, K)
        if count and int(np.abs(raw).max()) > spec.max_raw:
            raise FormatError("fixed-point code outside the representable range", val_offset)
    else:
        levels = np.frombuffer(reader.take(count, "grid levels"), dtype="u1")
        raw = np.frombuffer(reader.take(8 * count, "values"), dtype="<i8")
        if count and int(levels.max()) > 62:
            raise FormatError("grid level above 62", val_offset)
    counters = None
    if counter_kind == "exact":
        counters = np.frombuffer(reader.take(4 * count, "counters"), dtype="<u4")
    elif counter_kind == "morris":
        counters = np.frombuffer(reader.take(count, "counters"), dtype="u1")
        if count and int(counters.min()) < prob_count.MIN_LEVEL:
            raise FormatError("morris counter level below 1", reader.pos - count)
    if reader.pos != len(data) - 4:
        raise FormatError("trailing bytes after the counter block", reader.pos)
    return PackedModel(
        value_kind=kind, indices=indices.copy(), raw=raw.copy(), n=n,
        m=m if kind == "fixed" else 0,
        levels=None if levels is None else levels.copy(),
        counter_kind=counter_kind,
        counters=None if counters is None else counters.copy(),
        base=base, R=R, metadata=metadata,
    )


def save(model: PackedModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(model))


def load(path) -> PackedModel:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
