"""Fine-tuning strategies, base pretraining and adapter pools."""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .adapters import AdapterBundle, AdapterMeta, LoraPair
from .errors import MissingCorpus, ModeError, ValidationError
from .merging import MergeConfig, merge_group
from .model import (
    Batch, BaseModel, ModelConfig, batch_loss, full_loss_and_grads, init_adapter, init_model, loss_and_grads,
)
from .optim import AdamState, adam_step
from .registry import ENGLISH, Direction, Registry, TranslationTask, group_of
from .rng import SplitMix64, derive_seed
from .synth import EOS, PAD, SEP, Split, SynthSpec, Vocab, build_corpora, build_languages

log = logging.getLogger(__name__)


class Strategy(enum.Enum):
    MULTILINGUAL = "multilingual"
    GROUP = "group"
    SEPARATE = "separate"
    DIRECTION_AWARE = "dat"


class PoolMode(enum.Enum):
    DAT = "dat"
    DATM = "datm"
    MULTILINGUAL = "multilingual"
    GROUP = "group"
    SEPARATE = "separate"


@dataclass(frozen=True)
class TrainConfig:
    lr_max: float = 2e-3
    warmup_ratio: float = 0.01
    weight_decay: float = 0.01
    batch_size: int = 32
    epochs: int = 1
    lora_rank: int = 16
    lora_alpha: float | None = None  # None: 2 * rank
    seed: int = 0
    min_steps: int = 0  # floor on optimizer steps for small corpora

    def __post_init__(self):
        if self.min_steps < 0:
            raise ValidationError("min_steps must be non-negative")
        if self.lora_alpha is None:
            object.__setattr__(self, "lora_alpha", 2.0 * self.lora_rank)
        if min(self.lr_max, self.batch_size, self.epochs, self.lora_rank, self.lora_alpha) <= 0:
            raise ValidationError("training hyperparameters must be positive")
        if not 0.0 < self.warmup_ratio < 1.0:
            raise ValidationError("warmup_ratio must be in (0, 1)")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be non-negative")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 500
    lr_max: float = 3e-3
    warmup_ratio: float = 0.05
    weight_decay: float = 0.01
    batch_size: int = 32
    seed: int = 0

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "PretrainConfig":
        return cls(**obj)


def lr_at(t: int, total: int, cfg) -> float:
    """Linear warmup to ``lr_max`` over ``w`` steps, then inverse square-root decay."""
    w = max(1, math.ceil(round(cfg.warmup_ratio * total, 9)))
    if t <= w:
        return cfg.lr_max * t / w
    return cfg.lr_max * math.sqrt(w / t)


@dataclass
class Bench:
    """Registry, ciphers, vocabulary and every corpus of one synthetic benchmark."""

    spec: SynthSpec
    registry: Registry
    langs: dict
    vocab: Vocab
    corpora: dict

    @property
    def width(self) -> int:
        return self.spec.max_len

    @property
    def seq_len(self) -> int:
        return 2 * self.width + 3

    def corpus(self, task: TranslationTask, split=Split.TRAIN):
        try:
            return self.corpora[(str(task), Split(split))]
        except KeyError:
            raise MissingCorpus(f"no {Split(split).value} corpus for {task}") from None

    def model_config(self, **overrides) -> ModelConfig:
        kw = dict(vocab_size=self.vocab.size, max_seq=max(48, self.seq_len))
        kw.update(overrides)
        return ModelConfig(**kw)


def build_bench(spec: SynthSpec, registry: Registry | None = None) -> Bench:
    registry, langs = build_languages(spec, registry)
    vocab = Vocab.for_registry(registry, spec.content_vocab)
    return Bench(spec, registry, langs, vocab, build_corpora(spec, langs))


def _pretrain_sequences(bench: Bench) -> list[list[int]]:
    """Monolingual copy streams ``[TAG_l] x PAD* [SEP] x [EOS]``, one language at a time.

    English sentences are subsampled from every corpus so English weighs
    about as much as one other language.
    """
    seqs = []
    n = bench.registry.n_languages
    for task in bench.registry.tasks(Direction.INTO_ENGLISH):
        pairs = bench.corpus(task).pairs
        for foreign, _ in pairs:
            seqs.append(bench.vocab.encode_pair(task.src, foreign, foreign, bench.width))
        for _, english in pairs[:: n]:
            seqs.append(bench.vocab.encode_pair(ENGLISH, english, english, bench.width))
    if not seqs:
        raise MissingCorpus("no training corpora to pretrain on")
    return seqs


def pretrain_base(model_cfg: ModelConfig, bench: Bench, cfg: PretrainConfig | None = None,
                  history: list | None = None) -> BaseModel:
    """Full-parameter next-token training of a fresh base on monolingual streams."""
    cfg = cfg or PretrainConfig()
    model = init_model(model_cfg, derive_seed(cfg.seed, "base"))
    if cfg.steps == 0:
        return model
    seqs = _pretrain_sequences(bench)
    rng = SplitMix64(derive_seed(cfg.seed, "pretrain-order"))
    state = AdamState()
    params = dict(model.params)
    for t in range(1, cfg.steps + 1):
        idx = [rng.next_below(len(seqs)) for _ in range(cfg.batch_size)]
        batch = Batch.from_sequences([seqs[i] for i in idx], SEP, PAD, full_lm=True)
        loss, grads = full_loss_and_grads(model.replace_params(params), batch)
        if history is not None:
            history.append(loss)
        params = adam_step(state, params, grads, lr_at(t, cfg.steps, cfg), cfg.weight_decay)
    return model.replace_params(params)


def task_key(tasks: Iterable[TranslationTask]) -> str:
    return ",".join(sorted(str(t) for t in tasks))


def shared_direction(tasks) -> Direction | None:
    dirs = {t.direction for t in tasks}
    return dirs.pop() if len(dirs) == 1 else None


@dataclass
class TrainRun:
    bundle: AdapterBundle
    tasks: list
    initial_loss: float
    final_loss: float
    steps: int
    wall_time_s: float
    losses: list = field(default_factory=list)

    def manifest(self, strategy: str, cfg: TrainConfig, bundle_path: str | None = None) -> dict:
        return {
            "strategy": strategy,
            "tasks": [str(t) for t in self.tasks],
            "cfg": cfg.to_json(),
            "seed": cfg.seed,
            "final_loss": self.final_loss,
            "steps": self.steps,
            "wall_time_s": self.wall_time_s,
            "bundle_path": bundle_path,
        }


def _pairs_to_params(bundle: AdapterBundle) -> dict[str, np.ndarray]:
    out = {}
    for name, p in bundle.pairs.items():
        out[name + "/A"] = p.a
        out[name + "/B"] = p.b
    return out


def _params_to_bundle(meta: AdapterMeta, params: dict[str, np.ndarray]) -> AdapterBundle:
    names = sorted({k.rsplit("/", 1)[0] for k in params})
    return AdapterBundle(meta, {n: LoraPair(params[n + "/A"], params[n + "/B"], meta.alpha) for n in names})


def fit_adapter(base: BaseModel, tasks, bench: Bench, cfg: TrainConfig, adapter_id: str | None = None) -> TrainRun:
    """Train one adapter on the shuffled union of ``tasks``' training pairs."""
    tasks = sorted(tasks, key=str)
    if not tasks:
        raise ValidationError("no tasks to train on")
    seqs = []
    for task in tasks:
        for src, tgt in bench.corpus(task).pairs:
            seqs.append(bench.vocab.encode_pair(task.dst, src, tgt, bench.width))
    key = task_key(tasks)
    languages = sorted({t.language for t in tasks})
    direction = shared_direction(tasks)
    bundle = init_adapter(base, cfg.lora_rank, cfg.lora_alpha, derive_seed(cfg.seed, "lora-init"),
                          adapter_id or f"adapter:{key}", direction, languages)
    probe = Batch.from_sequences(seqs[:: max(1, len(seqs) // 256)][:256], SEP, PAD)
    initial = batch_loss(base, bundle, probe)

    per_epoch = math.ceil(len(seqs) / cfg.batch_size)
    total = max(per_epoch * cfg.epochs, cfg.min_steps)
    state = AdamState()
    params = _pairs_to_params(bundle)
    losses = []
    t = 0
    start = time.perf_counter()
    for epoch in range(math.ceil(total / per_epoch)):
        order = list(range(len(seqs)))
        SplitMix64(derive_seed(cfg.seed, "order", key, epoch)).shuffle(order)
        for i in range(min(per_epoch, total - t)):
            t += 1
            chunk = [seqs[j] for j in order[i * cfg.batch_size: (i + 1) * cfg.batch_size]]
            loss, grads = loss_and_grads(base, bundle, Batch.from_sequences(chunk, SEP, PAD))
            losses.append(loss)
            flat = {}
            for name, (da, db) in grads.items():
                flat[name + "/A"], flat[name + "/B"] = da, db
            params = adam_step(state, params, flat, lr_at(t, total, cfg), cfg.weight_decay)
            bundle = _params_to_bundle(bundle.meta, params)
    wall = time.perf_counter() - start
    final = batch_loss(base, bundle, probe)
    log.debug("trained %s: %d steps, loss %.4f -> %.4f (%.1fs)", bundle.meta.id, total, initial, final, wall)
    return TrainRun(bundle, tasks, initial, final, total, wall, losses)


def train_adapter(base: BaseModel, tasks, bench: Bench, cfg: TrainConfig, adapter_id: str | None = None) -> AdapterBundle:
    return fit_adapter(base, tasks, bench, cfg, adapter_id).bundle


@dataclass(frozen=True)
class AdapterPool:
    entries: Mapping[str, AdapterBundle]
    mode: PoolMode

    def __post_init__(self):
        object.__setattr__(self, "entries", dict(self.entries))
        fps = {b.meta.base_fingerprint for b in self.entries.values()}
        if len(fps) > 1:
            raise ValidationError("pool mixes adapters trained on different bases")
        for key, b in self.entries.items():
            if key != b.meta.id:
                raise ValidationError(f"pool key {key!r} differs from adapter id {b.meta.id!r}")

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, key) -> AdapterBundle:
        return self.entries[key]

    def __contains__(self, key):
        return key in self.entries


def separate_id(task: TranslationTask) -> str:
    return f"sep:{task}"


def group_id_for(group: int, direction: Direction) -> str:
    return f"grp:{group}:{direction.value}"


def strategy_jobs(strategy: Strategy, registry: Registry, direction: Direction | None = None,
                  mixed_multilingual: bool = True) -> dict[str, list[TranslationTask]]:
    """Adapter id -> task set for one strategy over a registry.

    ``direction`` restricts to one direction. Multilingual training mixes both
    directions into one adapter unless ``mixed_multilingual`` is false.
    """
    dirs = [direction] if direction else list(Direction)
    jobs: dict[str, list[TranslationTask]] = {}
    if strategy is Strategy.SEPARATE:
        for d in dirs:
            for t in registry.tasks(d):
                jobs[separate_id(t)] = [t]
    elif strategy is Strategy.GROUP:
        for d in dirs:
            for g in registry.group_ids():
                jobs[group_id_for(g, d)] = registry.tasks(d, registry.members(g))
    elif strategy is Strategy.MULTILINGUAL:
        if mixed_multilingual and direction is None:
            jobs["mul:all"] = registry.tasks()
        else:
            for d in dirs:
                jobs[f"mul:{d.value}"] = registry.tasks(d)
    elif strategy is Strategy.DIRECTION_AWARE:
        for t in registry.tasks(Direction.INTO_ENGLISH):
            jobs[separate_id(t)] = [t]
        for g in registry.group_ids():
            jobs[group_id_for(g, Direction.FROM_ENGLISH)] = registry.tasks(Direction.FROM_ENGLISH, registry.members(g))
    return jobs


def train_jobs(base, jobs: dict, bench: Bench, cfg: TrainConfig, trainer=None) -> dict[str, AdapterBundle]:
    trainer = trainer or (lambda tasks, adapter_id: train_adapter(base, tasks, bench, cfg, adapter_id))
    return {aid: trainer(tasks, aid) for aid, tasks in jobs.items()}


def train_direction_aware(base: BaseModel, registry: Registry, bench: Bench, cfg: TrainConfig,
                          trainer=None) -> AdapterPool:
    """One separate adapter per XX->En task plus one group adapter per group for En->XX."""
    jobs = strategy_jobs(Strategy.DIRECTION_AWARE, registry)
    return AdapterPool(train_jobs(base, jobs, bench, cfg, trainer), PoolMode.DAT)


def compress_pool_datm(pool: AdapterPool, registry: Registry, cfg: MergeConfig | None = None) -> AdapterPool:
    """Merge each group's XX->En adapters; En->XX group adapters are carried over untouched."""
    if pool.mode is not PoolMode.DAT:
        raise ModeError(f"can only compress a DAT pool, got {pool.mode.value}")
    cfg = cfg or MergeConfig()
    entries = {}
    for g in registry.group_ids():
        members = [pool[separate_id(TranslationTask(c, ENGLISH))] for c in registry.members(g)]
        merged = merge_group(members, cfg, group=g)
        entries[merged.meta.id] = merged
    for key, b in pool.entries.items():
        if b.meta.direction is Direction.FROM_ENGLISH:
            entries[key] = b
    return AdapterPool(entries, PoolMode.DATM)
