"""TIES, DARE-TIES and plain averaging over adapter task vectors.

Merging works elementwise on the concatenated LoRA factors (A then B per
target, targets sorted), so merged adapters stay low-rank.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .adapters import AdapterBundle, AdapterMeta, LoraPair
from .errors import (
    BadDensity,
    BadProbability,
    DirectionError,
    EmptyInput,
    IncompatibleBundles,
    LayoutMismatch,
    LengthMismatch,
    ValidationError,
)
from .registry import Direction
from .rng import SplitMix64, derive_seed


class MergeMethod(enum.Enum):
    AVERAGE = "average"
    TIES = "ties"
    DARE_TIES = "dare_ties"


@dataclass(frozen=True)
class MergeConfig:
    method: MergeMethod = MergeMethod.TIES
    density: float = 0.2
    drop_prob: float | None = None  # None: 0.0 for TIES, 0.5 for DARE-TIES
    lam: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", MergeMethod(self.method))
        if self.drop_prob is None:
            object.__setattr__(self, "drop_prob", 0.5 if self.method is MergeMethod.DARE_TIES else 0.0)
        if not 0.0 < self.density <= 1.0:
            raise BadDensity(f"density must be in (0, 1], got {self.density}")
        if not 0.0 <= self.drop_prob < 1.0:
            raise BadProbability(f"drop_prob must be in [0, 1), got {self.drop_prob}")
        if not self.lam > 0:
            raise ValidationError("lambda must be positive")

    def to_json(self) -> dict:
        return {
            "method": self.method.value,
            "density": self.density,
            "drop_prob": self.drop_prob,
            "lambda": self.lam,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MergeConfig":
        unknown = set(obj) - {"method", "density", "drop_prob", "lambda", "seed"}
        if unknown:
            raise ValidationError(f"unknown merge config keys: {sorted(unknown)}")
        kw = {}
        if "method" in obj:
            kw["method"] = MergeMethod(obj["method"])
        if "density" in obj:
            kw["density"] = float(obj["density"])
        if obj.get("drop_prob") is not None:
            kw["drop_prob"] = float(obj["drop_prob"])
        if "lambda" in obj:
            kw["lam"] = float(obj["lambda"])
        if "seed" in obj:
            kw["seed"] = int(obj["seed"])
        return cls(**kw)


@dataclass(frozen=True)
class TaskVector:
    entries: np.ndarray
    layout: tuple = ()  # ((target_name, "A" | "B", rows, cols), ...)

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float32).reshape(-1)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "layout", tuple(tuple(x) for x in self.layout))
        if self.layout and sum(r * c for _, _, r, c in self.layout) != entries.size:
            raise LayoutMismatch("entries length does not match layout")
        if not np.all(np.isfinite(entries)):
            raise ValidationError("task vector entries must be finite")

    def __len__(self):
        return self.entries.size

    def with_entries(self, entries) -> "TaskVector":
        return TaskVector(entries, self.layout)


def _as_vec(v) -> TaskVector:
    return v if isinstance(v, TaskVector) else TaskVector(v)


def trim(v, k: float) -> TaskVector:
    """Keep the ceil(k * n) largest-magnitude entries; ties keep the lower index."""
    v = _as_vec(v)
    if not 0.0 < k <= 1.0:
        raise BadDensity(f"density must be in (0, 1], got {k}")
    n = len(v)
    m = math.ceil(round(k * n, 9))
    if m >= n:
        return v
    order = np.argsort(-np.abs(v.entries), kind="stable")
    out = np.zeros_like(v.entries)
    keep = order[:m]
    out[keep] = v.entries[keep]
    return v.with_entries(out)


def _check_lengths(vs: Sequence[TaskVector]) -> None:
    if not vs:
        raise EmptyInput("no task vectors given")
    n = len(vs[0])
    if any(len(v) != n for v in vs):
        raise LengthMismatch("task vectors differ in length")


def elect_signs(vs) -> np.ndarray:
    """Sign of the summed entries; an exact zero sum elects +1."""
    vs = [_as_vec(v) for v in vs]
    _check_lengths(vs)
    total = np.sum([v.entries.astype(np.float64) for v in vs], axis=0)
    return np.where(total < 0, -1.0, 1.0)


def disjoint_merge(vs, signs) -> TaskVector:
    """Mean over the nonzero entries whose sign agrees with the elected sign."""
    vs = [_as_vec(v) for v in vs]
    _check_lengths(vs)
    signs = np.asarray(signs, dtype=np.float64)
    if signs.size != len(vs[0]):
        raise LengthMismatch("sign vector length differs from task vectors")
    stack = np.stack([v.entries.astype(np.float64) for v in vs])
    agree = (stack != 0) & (np.sign(stack) == signs)
    count = agree.sum(axis=0)
    total = np.where(agree, stack, 0.0).sum(axis=0)
    mean = np.divide(total, count, out=np.zeros_like(total), where=count > 0)
    return vs[0].with_entries(mean)


def dare(v, p: float, seed: int) -> TaskVector:
    """Drop each entry with probability p, rescale survivors by 1/(1 - p)."""
    v = _as_vec(v)
    if not 0.0 <= p < 1.0:
        raise BadProbability(f"drop probability must be in [0, 1), got {p}")
    if p == 0.0:
        return v
    u = SplitMix64(seed).uniform_block(len(v))
    kept = v.entries.astype(np.float64) * (1.0 / (1.0 - p))
    return v.with_entries(np.where(u < p, 0.0, kept))


def merge(vs, cfg: MergeConfig) -> TaskVector:
    vs = [_as_vec(v) for v in vs]
    _check_lengths(vs)
    if any(v.layout != vs[0].layout for v in vs):
        raise LayoutMismatch("task vectors have different layouts")
    if cfg.method is MergeMethod.AVERAGE:
        mean = np.mean([v.entries.astype(np.float64) for v in vs], axis=0)
        return vs[0].with_entries(cfg.lam * mean)
    if cfg.method is MergeMethod.DARE_TIES:
        vs = [dare(v, cfg.drop_prob, derive_seed(cfg.seed, "dare", i)) for i, v in enumerate(vs)]
    trimmed = [trim(v, cfg.density) for v in vs]
    merged = disjoint_merge(trimmed, elect_signs(trimmed))
    if cfg.lam == 1.0:
        return merged
    return merged.with_entries(cfg.lam * merged.entries.astype(np.float64))


def flatten_bundle(b: AdapterBundle) -> TaskVector:
    layout, chunks = [], []
    for name, p in b.pairs.items():
        layout.append((name, "A", *p.a.shape))
        layout.append((name, "B", *p.b.shape))
        chunks += [p.a.reshape(-1), p.b.reshape(-1)]
    entries = np.concatenate(chunks) if chunks else np.zeros(0, np.float32)
    return TaskVector(entries, layout)


def unflatten_pairs(v: TaskVector, alpha: float) -> dict[str, LoraPair]:
    factors: dict[str, dict[str, np.ndarray]] = {}
    off = 0
    for name, which, rows, cols in v.layout:
        factors.setdefault(name, {})[which] = v.entries[off: off + rows * cols].reshape(rows, cols).copy()
        off += rows * cols
    return {name: LoraPair(f["A"], f["B"], alpha) for name, f in factors.items()}


def _check_compatible(bundles: Sequence[AdapterBundle]) -> None:
    if not bundles:
        raise EmptyInput("no bundles to merge")
    first = bundles[0]
    for b in bundles[1:]:
        m, f = b.meta, first.meta
        if (m.rank, m.alpha, m.base_fingerprint, m.direction) != (f.rank, f.alpha, f.base_fingerprint, f.direction):
            raise IncompatibleBundles(f"{b.meta.id} is incompatible with {first.meta.id}")
        if list(b.pairs) != list(first.pairs):
            raise IncompatibleBundles(f"{b.meta.id} adapts different targets than {first.meta.id}")
        for name in first.pairs:
            if b.pairs[name].shape != first.pairs[name].shape:
                raise IncompatibleBundles(f"target {name} differs in shape")


def merge_bundles(bundles: Sequence[AdapterBundle], cfg: MergeConfig, new_id: str) -> AdapterBundle:
    """Direction-agnostic bundle merge; see :func:`merge_group` for the XX->En entry point."""
    _check_compatible(bundles)
    merged = merge([flatten_bundle(b) for b in bundles], cfg)
    first = bundles[0].meta
    languages = sorted({c for b in bundles for c in b.meta.languages})
    meta = AdapterMeta(new_id, first.direction, tuple(languages), first.rank, first.alpha, first.base_fingerprint)
    return AdapterBundle(meta, unflatten_pairs(merged, first.alpha))


def merge_group(bundles: Sequence[AdapterBundle], cfg: MergeConfig, group=None) -> AdapterBundle:
    """Merge one group's XX->En adapters into a single ``mrg:<group>:xx-en`` bundle."""
    for b in bundles:
        if b.meta.direction is not Direction.INTO_ENGLISH:
            raise DirectionError(f"{b.meta.id}: only XX->En adapters are merged")
    if group is None:
        group = "+".join(sorted({c for b in bundles for c in b.meta.languages}))
    return merge_bundles(bundles, cfg, f"mrg:{group}:xx-en")
