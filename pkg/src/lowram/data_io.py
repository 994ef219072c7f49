"""Streaming example ingestion: libsvm text and a seeded synthetic generator."""

from __future__ import annotations

import gzip
import io
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import ParameterError, ParseError
from .logistic import sigmoid_array

log = logging.getLogger(__name__)

_LABELS = {1.0: 1, 0.0: 0, -1.0: 0}


@dataclass(frozen=True)
class SparseExample:
    """A labelled sparse example.

    ``indices`` are 0-based and strictly increasing. ``values`` is None for
    binary examples (every listed feature equals 1).
    """

    label: int
    indices: tuple[int, ...]
    values: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ParameterError(f"label must be 0 or 1, got {self.label!r}")
        idx = self.indices
        for a, b in zip(idx, idx[1:]):
            if b <= a:
                raise ParameterError("indices must be strictly increasing")
        if self.values is not None and len(self.values) != len(idx):
            raise ParameterError("values and indices differ in length")


def _fail(reason, lineno, col):
    raise ParseError(reason, lineno, col)


def parse_libsvm(line: str, lineno: int | None = None, binarize: bool = True) -> SparseExample:
    """Parse ``label idx:val idx:val ...`` into a :class:`SparseExample`.

    Labels may be 0/1 or -1/+1. File indices are 1-based. With ``binarize``
    every non-zero value becomes 1; zero-valued features are dropped either
    way. A trailing ``# comment`` is ignored. Unsorted or repeated indices are
    accepted, sorted and merged, with a logged warning.
    """
    if "#" in line:
        line = line[: line.index("#")]
    tokens = []
    pos = 0
    for tok in line.split():
        pos = line.index(tok, pos)
        tokens.append((tok, pos + 1))
        pos += len(tok)
    if not tokens:
        _fail("empty line", lineno, 1)
    label_tok, col = tokens[0]
    try:
        label_val = float(label_tok)
    except ValueError:
        _fail(f"label {label_tok!r} is not a number", lineno, col)
    if label_val not in _LABELS:
        _fail(f"label {label_tok!r} must be one of 0, 1, -1, +1", lineno, col)
    label = _LABELS[label_val]

    feats: dict[int, float] = {}
    previous = -1
    disordered = False
    for tok, col in tokens[1:]:
        key, sep, val = tok.partition(":")
        if not sep:
            _fail(f"feature {tok!r} is not of the form index:value", lineno, col)
        if not key.isdigit() or not key.isascii():
            _fail(f"feature index {key!r} is not a positive integer", lineno, col)
        index = int(key)
        if index < 1:
            _fail("feature indices are 1-based", lineno, col)
        if index > 1 << 63:
            _fail(f"feature index {index} does not fit in 63 bits", lineno, col)
        try:
            value = float(val)
        except ValueError:
            _fail(f"feature value {val!r} is not a number", lineno, col + len(key) + 1)
        if not math.isfinite(value):
            _fail(f"feature value {val!r} is not finite", lineno, col + len(key) + 1)
        if index <= previous:
            disordered = True
        previous = index
        if index - 1 in feats:
            feats[index - 1] += value
        else:
            feats[index - 1] = value
    if disordered:
        log.warning("line %s: feature indices not strictly increasing; sorted and merged",
                    lineno if lineno is not None else "?")
    keys = sorted(k for k, v in feats.items() if v != 0.0)
    if binarize:
        return SparseExample(label, tuple(keys))
    return SparseExample(label, tuple(keys), tuple(feats[k] for k in keys))


def format_libsvm(example: SparseExample) -> str:
    if example.values is None:
        feats = " ".join(f"{i + 1}:1" for i in example.indices)
    else:
        feats = " ".join(f"{i + 1}:{v!r}" for i, v in zip(example.indices, example.values))
    return f"{example.label} {feats}".rstrip()


def _open_text(source) -> io.TextIOBase:
    if source == "-" or source is None:
        raw = sys.stdin.buffer
    elif hasattr(source, "read"):
        raw = source
    else:
        raw = open(source, "rb")
    if not isinstance(raw, io.BufferedReader):
        raw = io.BufferedReader(raw) if hasattr(raw, "readinto") else raw
    head = raw.peek(2)[:2] if hasattr(raw, "peek") else b""
    if head == b"\x1f\x8b":
        raw = gzip.GzipFile(fileobj=raw)
    return io.TextIOWrapper(raw, encoding="utf-8", errors="replace")


def read_libsvm(source, binarize: bool = True, fail_fast: bool = False,
                errors: list | None = None) -> Iterator[SparseExample]:
    """Yield examples from a libsvm file path, ``'-'`` for stdin, or a binary file object.

    Gzip input is detected by its magic bytes. Blank and comment-only lines are
    skipped. Malformed lines raise when ``fail_fast`` is set; otherwise they are
    logged, appended to ``errors`` if given, and skipped.
    """
    text = _open_text(source)
    try:
        for lineno, line in enumerate(text, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            try:
                yield parse_libsvm(line, lineno, binarize=binarize)
            except ParseError as exc:
                if fail_fast:
                    raise
                log.warning("skipping malformed input: %s", exc)
                if errors is not None:
                    errors.append(exc)
    finally:
        if text is not None and source not in ("-", None) and not hasattr(source, "read"):
            text.close()


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic long-tail stream.

    Feature ``i`` appears in each example independently with probability
    ``min(1, c * (i+1)**-exponent)``, with ``c`` chosen so that an example has
    ``mean_active`` features on average. A fraction ``true_density`` of
    features carry a non-zero true weight drawn from ``N(0, weight_scale^2)``;
    labels are Bernoulli of the logistic of the true margin. ``seed`` fixes the
    true model, ``stream_seed`` (default: ``seed``) the examples.
    """

    d: int = 10_000
    examples: int = 100_000
    exponent: float = 1.0
    mean_active: float = 10.0
    true_density: float = 0.5
    weight_scale: float = 1.0
    seed: int = 0
    stream_seed: int | None = None
    chunk: int = 8192

    def __post_init__(self):
        if self.d < 1 or self.examples < 0 or self.chunk < 1:
            raise ParameterError("d and chunk must be >= 1 and examples >= 0")
        if not self.exponent > 0:
            raise ParameterError(f"exponent must be positive, got {self.exponent!r}")
        if not 0 < self.mean_active <= self.d:
            raise ParameterError("mean_active must lie in (0, d]")
        if not 0 <= self.true_density <= 1:
            raise ParameterError("true_density must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SynthSpec":
        return cls(**data)

    @classmethod
    def load(cls, path) -> "SynthSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def inclusion_probabilities(spec: SynthSpec) -> np.ndarray:
    """Per-feature inclusion probabilities summing to ``mean_active``."""
    base = np.arange(1, spec.d + 1, dtype=np.float64) ** -spec.exponent
    lo, hi = 0.0, spec.mean_active / base.min()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.minimum(1.0, mid * base).sum() < spec.mean_active:
            lo = mid
        else:
            hi = mid
    return np.minimum(1.0, hi * base)


def true_weights(spec: SynthSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 0x5EED])
    beta = np.zeros(spec.d)
    active = rng.random(spec.d) < spec.true_density
    beta[active] = rng.normal(0.0, spec.weight_scale, int(active.sum()))
    return beta


def _distinct_positions(rng, counts: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    """For each owner ``j`` pick ``counts[j]`` distinct positions in ``[0, size)``.

    Draws with replacement and redraws collisions; the result is invariant
    under permutations of positions and therefore uniform over subsets.
    """
    owner = np.repeat(np.arange(len(counts)), counts)
    pos = rng.integers(0, size, owner.size)
    while True:
        key = owner.astype(np.int64) * size + pos
        order = np.argsort(key, kind="stable")
        dup = np.zeros(key.size, dtype=bool)
        sk = key[order]
        dup[order[1:]] = sk[1:] == sk[:-1]
        n_dup = int(dup.sum())
        if n_dup == 0:
            return owner, pos
        pos[dup] = rng.integers(0, size, n_dup)


class SyntheticStream:
    """Iterable over a deterministic synthetic stream; ``beta_star`` is the true model."""

    def __init__(self, spec: SynthSpec):
        self.spec = spec
        self.beta_star = true_weights(spec)
        self.q = inclusion_probabilities(spec)

    def __len__(self):
        return self.spec.examples

    def chunks(self) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Yield ``(labels, row_ptr, feature_idx)`` CSR blocks."""
        spec = self.spec
        seed = spec.seed if spec.stream_seed is None else spec.stream_seed
        rng = np.random.default_rng([seed, 0xDA7A])
        q = self.q
        dense_side = q > 0.5
        remaining = spec.examples
        while remaining > 0:
            B = min(spec.chunk, remaining)
            remaining -= B
            counts = rng.binomial(B, q)
            # features present in most rows: sample the rows they are absent from
            counts_drawn = np.where(dense_side, B - counts, counts)
            owner, pos = _distinct_positions(rng, counts_drawn, B)
            member = np.ones((int(dense_side.sum()), B), dtype=bool)
            dense_ids = np.flatnonzero(dense_side)
            dense_rank = np.full(spec.d, -1)
            dense_rank[dense_ids] = np.arange(dense_ids.size)
            from_dense = dense_side[owner]
            member[dense_rank[owner[from_dense]], pos[from_dense]] = False
            d_rows, d_pos = np.nonzero(member)
            feat = np.concatenate([owner[~from_dense], dense_ids[d_rows]])
            row = np.concatenate([pos[~from_dense], d_pos])
            order = np.lexsort((feat, row))
            feat = feat[order]
            row = row[order]
            row_ptr = np.zeros(B + 1, dtype=np.int64)
            np.cumsum(np.bincount(row, minlength=B), out=row_ptr[1:])
            z = np.bincount(row, weights=self.beta_star[feat], minlength=B)
            labels = (rng.random(B) < sigmoid_array(z)).astype(np.int8)
            yield labels, row_ptr, feat

    def __iter__(self) -> Iterator[SparseExample]:
        for labels, row_ptr, feat in self.chunks():
            feat_list = feat.tolist()
            ptr = row_ptr.tolist()
            for r, y in enumerate(labels.tolist()):
                yield SparseExample(y, tuple(feat_list[ptr[r]:ptr[r + 1]]))


def generate_synthetic(spec: SynthSpec) -> SyntheticStream:
    return SyntheticStream(spec)


def to_csr(examples: Iterable[SparseExample], dim: int | None = None):
    """Collect examples into ``(scipy.sparse.csr_matrix, labels)``."""
    from scipy import sparse

    indptr = [0]
    cols: list[int] = []
    data: list[float] = []
    labels: list[int] = []
    for ex in examples:
        cols.extend(ex.indices)
        data.extend(ex.values if ex.values is not None else [1.0] * len(ex.indices))
        indptr.append(len(cols))
        labels.append(ex.label)
    width = dim if dim is not None else (max(cols) + 1 if cols else 0)
    X = sparse.csr_matrix(
        (np.array(data, dtype=np.float64), np.array(cols, dtype=np.int64), np.array(indptr)),
        shape=(len(labels), width),
    )
    return X, np.array(labels, dtype=np.int8)
