"""Direction-aware dispatch from a translation task to one adapter of a pool.

Routing is a metadata lookup: XX->En tasks go to a per-language expert
(DAT) or to the merged adapter of the source's group (DATM); En->XX tasks
always go to the target's group adapter.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .adapters import load_bundle, save_bundle
from .errors import BadCounts, MissingAdapter, ModeError, ValidationError
from .model import BaseModel, greedy_decode_batch
from .registry import ENGLISH, Direction, Registry, TranslationTask, group_of
from .synth import EOS, Vocab
from .training import AdapterPool, PoolMode, group_id_for, separate_id


@dataclass(frozen=True)
class RouteKey:
    direction: Direction
    selector: str | int  # language code or group id

    @property
    def by_language(self) -> bool:
        return isinstance(self.selector, str)


def route_key(mode: PoolMode, task: TranslationTask, registry: Registry) -> RouteKey:
    mode = PoolMode(mode)
    direction = task.direction
    group = group_of(registry, task.language)
    if direction is Direction.INTO_ENGLISH and mode in (PoolMode.DAT, PoolMode.SEPARATE):
        return RouteKey(direction, task.language)
    if direction is Direction.FROM_ENGLISH and mode is PoolMode.SEPARATE:
        return RouteKey(direction, task.language)
    return RouteKey(direction, group)


def adapter_id_for(mode: PoolMode, task: TranslationTask, registry: Registry) -> str:
    """The id a complete pool of ``mode`` holds for ``task``."""
    mode = PoolMode(mode)
    key = route_key(mode, task, registry)
    if mode is PoolMode.MULTILINGUAL:
        return f"mul:{task.direction.value}"
    if key.by_language:
        return separate_id(task)
    if mode is PoolMode.DATM and key.direction is Direction.INTO_ENGLISH:
        return f"mrg:{key.selector}:xx-en"
    return group_id_for(key.selector, key.direction)


def route(pool: AdapterPool, task: TranslationTask, registry: Registry) -> str:
    aid = adapter_id_for(pool.mode, task, registry)
    if pool.mode is PoolMode.MULTILINGUAL and aid not in pool and "mul:all" in pool:
        aid = "mul:all"
    if aid not in pool:
        raise MissingAdapter(f"{pool.mode.value} pool has no adapter {aid!r} for {task}")
    return aid


def pool_size(mode, n_l: int, n_g: int) -> int:
    """Adapter count of a complete DAT (N_L + N_G) or DATM (2 N_G) pool."""
    mode = PoolMode(mode)
    if not n_l >= n_g >= 1:
        raise BadCounts(f"need n_l >= n_g >= 1, got n_l={n_l}, n_g={n_g}")
    if mode is PoolMode.DAT:
        return n_l + n_g
    if mode is PoolMode.DATM:
        return 2 * n_g
    raise ModeError(f"no size law for {mode.value} pools")


def translate_batch(pool: AdapterPool, base: BaseModel, task: TranslationTask, sources, registry: Registry,
                    vocab: Vocab, width: int) -> list[list[int]]:
    """Greedy translations (content ids) of many sources for one task."""
    bundle = pool[route(pool, task, registry)]
    prefixes = [vocab.encode_prefix(task.dst, src, width) for src in sources]
    if not prefixes:
        return []
    outs = greedy_decode_batch(base, bundle, prefixes, width + 1, EOS)
    return [vocab.decode_target(o, len(prefixes[0])) for o in outs]


def translate(pool: AdapterPool, base: BaseModel, task: TranslationTask, src_tokens, registry: Registry,
              vocab: Vocab, width: int) -> list[int]:
    return translate_batch(pool, base, task, [list(src_tokens)], registry, vocab, width)[0]


_UNSAFE = re.compile(r"[^A-Za-z0-9_.-]")


def bundle_filename(adapter_id: str) -> str:
    return _UNSAFE.sub("_", adapter_id) + ".datb"


def pool_manifest(pool: AdapterPool, registry: Registry, base_checkpoint: str | None = None,
                  paths: dict | None = None) -> dict:
    paths = paths or {}
    entries = []
    for aid in sorted(pool.entries):
        meta = pool[aid].meta
        groups = sorted({group_of(registry, c) for c in meta.languages if c != ENGLISH and c in registry.languages})
        entries.append({
            "id": aid,
            "path": paths.get(aid, bundle_filename(aid)),
            "direction": meta.direction.value if meta.direction else "mixed",
            "languages": list(meta.languages),
            "group": groups[0] if len(groups) == 1 else None,
        })
    return {"mode": pool.mode.value, "base_checkpoint": base_checkpoint, "entries": entries}


def save_pool(pool: AdapterPool, out_dir, registry: Registry, base_checkpoint: str | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for aid, b in pool.entries.items():
        save_bundle(b, out / bundle_filename(aid))
    path = out / "pool.json"
    path.write_text(json.dumps(pool_manifest(pool, registry, base_checkpoint), indent=2, sort_keys=True) + "\n")
    return path


def load_pool(path) -> tuple[AdapterPool, str | None]:
    """Pool plus its base checkpoint path; ``path`` is a pool.json or its directory.

    A relative base path in the manifest is resolved against the manifest's directory.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "pool.json"
    try:
        manifest = json.loads(path.read_text())
        mode = PoolMode(manifest["mode"])
        rows = manifest["entries"]
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as e:
        raise ValidationError(f"bad pool manifest {path}: {e}") from None
    entries = {}
    for row in rows:
        b = load_bundle(path.parent / row["path"])
        if b.meta.id != row["id"]:
            raise ValidationError(f"{row['path']} holds {b.meta.id!r}, manifest says {row['id']!r}")
        entries[b.meta.id] = b
    base = manifest.get("base_checkpoint")
    if base is not None and not Path(base).is_absolute():
        base = str((path.parent / base).resolve())
    return AdapterPool(entries, mode), base
