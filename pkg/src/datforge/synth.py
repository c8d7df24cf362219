"""Synthetic cipher languages and parallel corpora.

Each group ``g`` owns a permutation ``sigma_g`` of the content vocabulary;
each language perturbs it on a private subset with ``rho_l`` and maps
English tokens positionwise through ``pi_l = sigma_g o rho_l``. Shared
``sigma_g`` gives languages of a group common structure, ``rho_l`` makes
them disagree on a few tokens.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import UnknownLanguage, ValidationError
from .registry import ENGLISH, RESOURCE_LEVELS, Direction, LanguageInfo, Registry, TranslationTask
from .rng import SplitMix64, derive_seed

PAD, SEP, EOS = 0, 1, 2
N_SPECIAL = 3


class Split(enum.Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class SynthSpec:
    n_groups: int = 4
    langs_per_group: int = 3
    content_vocab: int = 64
    local_subset_frac: float = 0.25
    zipf_alpha: float = 1.0
    sent_len_range: tuple[int, int] = (4, 12)
    corpus_sizes: dict = field(default_factory=lambda: {"High": 2000, "Mid": 800, "Low": 200})
    test_size: int = 200
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sent_len_range", tuple(self.sent_len_range))
        object.__setattr__(self, "corpus_sizes", {k: int(self.corpus_sizes[k]) for k in RESOURCE_LEVELS})
        lo, hi = self.sent_len_range
        if self.content_vocab < 8:
            raise ValidationError("content vocabulary must have at least 8 tokens")
        if not 0.0 < self.local_subset_frac <= 0.5:
            raise ValidationError("local_subset_frac must be in (0, 0.5]")
        if not 1 <= lo <= hi:
            raise ValidationError("bad sentence length range")
        if min(self.n_groups, self.langs_per_group, self.test_size, *self.corpus_sizes.values()) < 1:
            raise ValidationError("sizes must be positive")
        if self.zipf_alpha < 0:
            raise ValidationError("zipf_alpha must be non-negative")

    @property
    def max_len(self) -> int:
        return self.sent_len_range[1]

    @property
    def subset_size(self) -> int:
        return math.ceil(round(self.local_subset_frac * self.content_vocab, 9))

    def to_json(self) -> dict:
        d = asdict(self)
        d["sent_len_range"] = list(self.sent_len_range)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "SynthSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValidationError(f"unknown synth spec keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass(frozen=True, eq=False)
class SynthLanguage:
    code: str
    group_id: int
    resource: str
    sigma: np.ndarray
    rho: np.ndarray
    subset: tuple[int, ...]

    @property
    def pi(self) -> np.ndarray:
        return self.sigma[self.rho]

    @property
    def pi_inv(self) -> np.ndarray:
        inv = np.empty_like(self.pi)
        inv[self.pi] = np.arange(self.pi.size)
        return inv


@dataclass(frozen=True)
class Vocab:
    """Token ids: PAD, SEP, EOS, one tag per language (``en`` first), then content tokens."""

    tag_codes: tuple[str, ...]
    content_size: int

    @classmethod
    def for_registry(cls, registry: Registry, content_size: int) -> "Vocab":
        return cls(tuple([ENGLISH] + registry.codes()), content_size)

    @property
    def content_offset(self) -> int:
        return N_SPECIAL + len(self.tag_codes)

    @property
    def size(self) -> int:
        return self.content_offset + self.content_size

    def tag(self, code: str) -> int:
        try:
            return N_SPECIAL + self.tag_codes.index(code)
        except ValueError:
            raise UnknownLanguage(f"no tag token for {code!r}") from None

    def encode_prefix(self, dst: str, src_content, width: int) -> list[int]:
        """``[TAG_dst] src PAD* [SEP]`` with the source padded to ``width`` tokens."""
        src = [self.content_offset + int(c) for c in src_content]
        if len(src) > width:
            raise ValidationError(f"source of length {len(src)} exceeds width {width}")
        return [self.tag(dst)] + src + [PAD] * (width - len(src)) + [SEP]

    def encode_pair(self, dst: str, src_content, tgt_content, width: int) -> list[int]:
        return self.encode_prefix(dst, src_content, width) + [self.content_offset + int(c) for c in tgt_content] + [EOS]

    def decode_target(self, seq, prefix_len: int) -> list[int]:
        """Content ids generated after the prefix, stopping at EOS; non-content tokens map to -1."""
        out = []
        for t in seq[prefix_len:]:
            if t == EOS:
                break
            out.append(t - self.content_offset if t >= self.content_offset else -1)
        return out


def synthetic_registry(spec: SynthSpec) -> Registry:
    infos = [LanguageInfo(ENGLISH, "synthetic", "synthetic", "english", "High", None)]
    for g in range(1, spec.n_groups + 1):
        for i in range(1, spec.langs_per_group + 1):
            infos.append(LanguageInfo(
                code=f"g{g}l{i}", script="synthetic", family=f"group{g}", subgroup=f"group{g}",
                resource=RESOURCE_LEVELS[(i - 1) % 3], group_id=g,
            ))
    return Registry.from_languages(infos)


def make_language(spec: SynthSpec, code: str, group_id: int, resource: str, sigma: np.ndarray,
                  rho: np.ndarray | None = None) -> SynthLanguage:
    C = spec.content_vocab
    if rho is None:
        rng = SplitMix64(derive_seed(spec.seed, "local", code))
        subset = sorted(int(x) for x in rng.permutation(C)[: spec.subset_size])
        local = rng.permutation(len(subset))
        rho = np.arange(C)
        rho[subset] = np.asarray(subset)[local]
    else:
        rho = np.asarray(rho)
        subset = [int(c) for c in np.flatnonzero(rho != np.arange(C))]
    return SynthLanguage(code, group_id, resource, np.asarray(sigma), rho, tuple(subset))


def group_permutation(spec: SynthSpec, group_id: int) -> np.ndarray:
    return SplitMix64(derive_seed(spec.seed, "group", group_id)).permutation(spec.content_vocab)


def build_languages(spec: SynthSpec, registry: Registry | None = None):
    """Registry plus a cipher per non-English language.

    Without ``registry`` a synthetic one is generated (codes ``g{g}l{i}``,
    resources round-robin High/Mid/Low); with one, its codes, groups and
    resource labels are kept and only ciphers are drawn.
    """
    registry = registry or synthetic_registry(spec)
    sigmas = {g: group_permutation(spec, g) for g in registry.group_ids()}
    langs = {}
    for code in registry.codes():
        info = registry.languages[code]
        langs[code] = make_language(spec, code, info.group_id, info.resource, sigmas[info.group_id])
    return registry, langs


def group_agreement(l1: SynthLanguage, l2: SynthLanguage) -> float:
    return float(np.mean(l1.pi == l2.pi))


@dataclass(frozen=True)
class Corpus:
    task: TranslationTask
    split: Split
    pairs: tuple  # ((src ids over C), (tgt ids over C)), ...

    def __len__(self):
        return len(self.pairs)

    def to_jsonl(self) -> str:
        return "".join(json.dumps({"src": list(s), "tgt": list(t)}) + "\n" for s, t in self.pairs)

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode("utf-8")).hexdigest()


def _zipf_cdf(spec: SynthSpec) -> np.ndarray:
    w = np.arange(1, spec.content_vocab + 1, dtype=np.float64) ** -spec.zipf_alpha
    cdf = np.cumsum(w / w.sum())
    cdf[-1] = 1.0
    return cdf


def _english_sentences(spec: SynthSpec, code: str, split: Split, n: int, exclude: set | None = None) -> list:
    rng = SplitMix64(derive_seed(spec.seed, "corpus", code, split.value))
    cdf = _zipf_cdf(spec)
    lo, hi = spec.sent_len_range
    out = []
    while len(out) < n:
        length = lo + rng.next_below(hi - lo + 1)
        sent = tuple(int(x) for x in np.searchsorted(cdf, rng.uniform_block(length), side="right"))
        if exclude is not None and sent in exclude:
            continue
        out.append(sent)
    return out


def _train_sentences(spec: SynthSpec, lang: SynthLanguage) -> list:
    return _english_sentences(spec, lang.code, Split.TRAIN, spec.corpus_sizes[lang.resource])


def gen_corpus(spec: SynthSpec, lang: SynthLanguage, direction: Direction, split: Split) -> Corpus:
    """Parallel data for one English-centric task; both directions share sentences."""
    if not isinstance(lang, SynthLanguage):
        raise UnknownLanguage(f"{lang!r} is not a built synthetic language")
    split = Split(split)
    train = _train_sentences(spec, lang)
    if split is Split.TRAIN:
        english = train
    else:
        english = _english_sentences(spec, lang.code, Split.TEST, spec.test_size, exclude=set(train))
    pi = lang.pi
    pairs = []
    for sent in english:
        foreign = tuple(int(pi[c]) for c in sent)
        pairs.append((sent, foreign) if direction is Direction.FROM_ENGLISH else (foreign, sent))
    if direction is Direction.FROM_ENGLISH:
        task = TranslationTask(ENGLISH, lang.code)
    else:
        task = TranslationTask(lang.code, ENGLISH)
    return Corpus(task, split, tuple(pairs))


def build_corpora(spec: SynthSpec, langs: dict, splits=(Split.TRAIN, Split.TEST)) -> dict:
    """Every English-centric corpus keyed by ``(task string, split)``."""
    out = {}
    for code, lang in langs.items():
        for direction in Direction:
            for split in splits:
                c = gen_corpus(spec, lang, direction, split)
                out[(str(c.task), c.split)] = c
    return out


def save_corpus(corpus: Corpus, path, spec: SynthSpec) -> None:
    path = Path(path)
    text = corpus.to_jsonl()
    path.write_text(text, encoding="utf-8")
    manifest = {
        "spec": spec.to_json(),
        "task": str(corpus.task),
        "split": corpus.split.value,
        "count": len(corpus),
        "content_hash": corpus.content_hash(),
    }
    path.with_suffix(".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_corpus(path) -> Corpus:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".manifest.json").read_text())
    pairs = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            row = json.loads(line)
            pairs.append((tuple(row["src"]), tuple(row["tgt"])))
    return Corpus(TranslationTask.parse(manifest["task"]), Split(manifest["split"]), tuple(pairs))
