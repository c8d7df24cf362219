"""Low-rank adapters: factor pairs, bundles and the DATB container format.

Container layout (all integers little-endian)::

    b"DATB" | u32 version=1 | u64 header_len | header (UTF-8 JSON) | payload

The payload holds, for each target in header order, ``A`` then ``B`` as
row-major float32 with no padding.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatError, ShapeMismatch, ValidationError
from .registry import Direction

MAGIC = b"DATB"
VERSION = 1


@dataclass(frozen=True)
class LoraPair:
    """``a`` is (rank, d_in), ``b`` is (d_out, rank); delta = alpha/rank * b @ a."""

    a: np.ndarray
    b: np.ndarray
    alpha: float

    def __post_init__(self):
        if self.a.ndim != 2 or self.b.ndim != 2:
            raise ShapeMismatch("LoRA factors must be 2-D")
        if self.a.shape[0] != self.b.shape[1] or self.a.shape[0] < 1:
            raise ShapeMismatch(f"rank mismatch: a {self.a.shape}, b {self.b.shape}")
        if not self.alpha > 0:
            raise ValidationError("alpha must be positive")

    @property
    def rank(self) -> int:
        return self.a.shape[0]

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    @property
    def shape(self) -> tuple[int, int]:
        """Shape of the adapted matrix, (d_out, d_in)."""
        return self.b.shape[0], self.a.shape[1]


def delta64(p: LoraPair) -> np.ndarray:
    """Float64 delta; the product is formed first so power-of-two alpha changes scale exactly."""
    prod = p.b.astype(np.float64) @ p.a.astype(np.float64)
    return prod * p.scale


def lora_delta(p: LoraPair) -> np.ndarray:
    return delta64(p).astype(np.result_type(p.a, p.b))


def apply_adapter(base: np.ndarray, p: LoraPair) -> np.ndarray:
    if base.shape != p.shape:
        raise ShapeMismatch(f"base {base.shape} does not match adapter {p.shape}")
    return (base.astype(np.float64) + delta64(p)).astype(base.dtype)


@dataclass(frozen=True)
class AdapterMeta:
    id: str
    direction: Direction | None  # None: trained on both directions
    languages: tuple[str, ...]
    rank: int
    alpha: float
    base_fingerprint: int

    def __post_init__(self):
        if not self.languages:
            raise ValidationError("adapter must cover at least one language")
        object.__setattr__(self, "languages", tuple(sorted(set(self.languages))))

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "direction": self.direction.value if self.direction else "mixed",
            "languages": list(self.languages),
            "rank": self.rank,
            "alpha": self.alpha,
            "base_fingerprint": f"{self.base_fingerprint:016x}",
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AdapterMeta":
        d = obj["direction"]
        return cls(
            id=obj["id"],
            direction=None if d == "mixed" else Direction(d),
            languages=tuple(obj["languages"]),
            rank=int(obj["rank"]),
            alpha=float(obj["alpha"]),
            base_fingerprint=int(obj["base_fingerprint"], 16),
        )


@dataclass(frozen=True)
class AdapterBundle:
    meta: AdapterMeta
    pairs: Mapping[str, LoraPair] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "pairs", {k: self.pairs[k] for k in sorted(self.pairs)})
        for name, p in self.pairs.items():
            if p.rank != self.meta.rank or p.alpha != self.meta.alpha:
                raise ValidationError(f"target {name}: rank/alpha differ from bundle metadata")

    def with_meta(self, **changes) -> "AdapterBundle":
        return AdapterBundle(replace(self.meta, **changes), self.pairs)

    @property
    def n_params(self) -> int:
        return sum(p.a.size + p.b.size for p in self.pairs.values())

    def equals(self, other: "AdapterBundle") -> bool:
        """Bit-exact equality of metadata and every factor."""
        if self.meta != other.meta or list(self.pairs) != list(other.pairs):
            return False
        for name, p in self.pairs.items():
            q = other.pairs[name]
            if p.a.shape != q.a.shape or p.b.shape != q.b.shape:
                return False
            if p.a.tobytes() != q.a.tobytes() or p.b.tobytes() != q.b.tobytes():
                return False
        return True


def _f32_bytes(x: np.ndarray) -> bytes:
    return np.ascontiguousarray(x, dtype="<f4").tobytes()


def pack_container(magic: bytes, header: dict, arrays: list[np.ndarray]) -> bytes:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [magic, struct.pack("<IQ", VERSION, len(head)), head]
    parts += [_f32_bytes(a) for a in arrays]
    return b"".join(parts)


def unpack_container(magic: bytes, blob: bytes) -> tuple[dict, memoryview]:
    fixed = len(magic) + 12
    if len(blob) < fixed or blob[: len(magic)] != magic:
        raise FormatError("bad magic")
    version, head_len = struct.unpack_from("<IQ", blob, len(magic))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if len(blob) < fixed + head_len:
        raise FormatError("truncated header")
    try:
        header = json.loads(blob[fixed: fixed + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt header: {exc}") from exc
    return header, memoryview(blob)[fixed + head_len:]


def read_f32(payload: memoryview, offset: int, rows: int, cols: int) -> tuple[np.ndarray, int]:
    n = rows * cols
    end = offset + 4 * n
    if end > len(payload):
        raise FormatError("truncated payload")
    arr = np.frombuffer(payload[offset:end], dtype="<f4").astype(np.float32).reshape(rows, cols)
    return arr, end


def bundle_to_bytes(b: AdapterBundle) -> bytes:
    targets, arrays = [], []
    for name, p in b.pairs.items():
        targets.append({
            "target_name": name,
            "a_rows": p.a.shape[0], "a_cols": p.a.shape[1],
            "b_rows": p.b.shape[0], "b_cols": p.b.shape[1],
        })
        arrays += [p.a, p.b]
    return pack_container(MAGIC, {"meta": b.meta.to_json(), "targets": targets}, arrays)


def bundle_from_bytes(blob: bytes) -> AdapterBundle:
    header, payload = unpack_container(MAGIC, blob)
    try:
        meta = AdapterMeta.from_json(header["meta"])
        targets = header["targets"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad bundle header: {exc}") from exc
    pairs, off = {}, 0
    for t in targets:
        a, off = read_f32(payload, off, t["a_rows"], t["a_cols"])
        b, off = read_f32(payload, off, t["b_rows"], t["b_cols"])
        pairs[t["target_name"]] = LoraPair(a, b, meta.alpha)
    if off != len(payload):
        raise FormatError("trailing bytes after payload")
    return AdapterBundle(meta, pairs)


def save_bundle(b: AdapterBundle, path) -> None:
    Path(path).write_bytes(bundle_to_bytes(b))


def load_bundle(path) -> AdapterBundle:
    return bundle_from_bytes(Path(path).read_bytes())
