"""Token-level metrics and the separate-vs-multilingual delta analysis."""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

from .errors import BadCounts, EmptyInput, LengthMismatch, ValidationError
from .model import BaseModel, greedy_decode_batch
from .registry import Direction, Registry, TranslationTask, group_of
from .synth import EOS, Corpus, Vocab

MAX_N = 4


@dataclass(frozen=True)
class Score:
    token_accuracy: float
    exact_match: float
    bleu: float

    def __post_init__(self):
        for name in ("token_accuracy", "exact_match", "bleu"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {v}")

    def get(self, metric: str) -> float:
        return getattr(self, metric)

    def to_json(self) -> dict:
        return {"token_acc": self.token_accuracy, "exact_match": self.exact_match, "bleu": self.bleu}


METRICS = ("token_accuracy", "exact_match", "bleu")


def _ngrams(seq: Sequence, n: int) -> Counter:
    return Counter(tuple(seq[i: i + n]) for i in range(len(seq) - n + 1))


def corpus_bleu(candidates, references) -> float:
    """Corpus BLEU-4 over token sequences.

    Zero precisions for n >= 2 are add-one smoothed; a zero unigram
    precision or an empty candidate side gives 0.
    """
    candidates, references = list(candidates), list(references)
    if len(candidates) != len(references):
        raise LengthMismatch(f"{len(candidates)} candidates vs {len(references)} references")
    cand_len = sum(len(c) for c in candidates)
    ref_len = sum(len(r) for r in references)
    if cand_len == 0:
        return 0.0
    log_p = 0.0
    for n in range(1, MAX_N + 1):
        matched = total = 0
        for c, r in zip(candidates, references):
            cn, rn = _ngrams(list(c), n), _ngrams(list(r), n)
            matched += sum(min(k, rn[g]) for g, k in cn.items())
            total += sum(cn.values())
        if matched == 0:
            if n == 1:
                return 0.0
            matched, total = 1, total + 1
        log_p += math.log(matched / total)
    bp = min(1.0, math.exp(1.0 - ref_len / cand_len))
    return min(1.0, bp * math.exp(log_p / MAX_N))


def score_outputs(candidates, references) -> Score:
    """Token accuracy counts reference positions reproduced at the same index."""
    candidates, references = list(candidates), list(references)
    if len(candidates) != len(references):
        raise LengthMismatch(f"{len(candidates)} candidates vs {len(references)} references")
    if not references:
        raise EmptyInput("nothing to score")
    hits = sum(sum(1 for a, b in zip(c, r) if a == b) for c, r in zip(candidates, references))
    n_tok = sum(len(r) for r in references)
    exact = sum(1 for c, r in zip(candidates, references) if list(c) == list(r))
    return Score(hits / n_tok if n_tok else 1.0, exact / len(references), corpus_bleu(candidates, references))


def decode_corpus(base: BaseModel, bundle, corpus: Corpus, vocab: Vocab, width: int,
                  chunk: int = 256) -> list[list[int]]:
    task = corpus.task
    outs = []
    for i in range(0, len(corpus.pairs), chunk):
        prefixes = [vocab.encode_prefix(task.dst, s, width) for s, _ in corpus.pairs[i: i + chunk]]
        for o in greedy_decode_batch(base, bundle, prefixes, width + 1, EOS):
            outs.append(vocab.decode_target(o, len(prefixes[0])))
    return outs


def score_bundle(base: BaseModel, bundle, corpus: Corpus, vocab: Vocab, width: int) -> Score:
    return score_outputs(decode_corpus(base, bundle, corpus, vocab, width), [list(t) for _, t in corpus.pairs])


def score_task(pool, base: BaseModel, corpus: Corpus, registry: Registry, vocab: Vocab, width: int) -> Score:
    """Route ``corpus.task`` through the pool and score every test pair."""
    from .routing import route

    return score_bundle(base, pool[route(pool, corpus.task, registry)], corpus, vocab, width)


class Verdict(enum.Enum):
    CONFLICT = "Conflict"
    SYNERGY = "Synergy"
    NEUTRAL = "Neutral"


def delta_metric(separate: float, multilingual: float, tau: float = 0.0) -> tuple[float, Verdict]:
    """``separate - multilingual`` and its verdict under dead zone ``tau``."""
    if not (math.isfinite(separate) and math.isfinite(multilingual) and math.isfinite(tau)):
        raise ValidationError("delta inputs must be finite")
    delta = separate - multilingual
    if delta > tau:
        return delta, Verdict.CONFLICT
    if delta < -tau:
        return delta, Verdict.SYNERGY
    return delta, Verdict.NEUTRAL


@dataclass(frozen=True)
class DeltaRecord:
    task: TranslationTask
    separate_score: float
    multilingual_score: float
    delta: float
    verdict: Verdict

    @classmethod
    def from_scores(cls, task: TranslationTask, separate: float, multilingual: float,
                    tau: float = 0.0) -> "DeltaRecord":
        delta, verdict = delta_metric(separate, multilingual, tau)
        return cls(task, separate, multilingual, delta, verdict)

    def to_json(self) -> dict:
        return {
            "task": str(self.task),
            "separate": self.separate_score,
            "multilingual": self.multilingual_score,
            "delta": self.delta,
            "verdict": self.verdict.value,
        }


def _mean(xs) -> float:
    return math.fsum(xs) / len(xs)


@dataclass(frozen=True)
class AsymmetryReport:
    by_direction: dict  # Direction -> mean delta
    by_group: dict  # (Direction, group id) -> mean delta
    by_resource: dict  # (Direction, resource) -> mean delta
    records: tuple

    def direction_gap(self) -> float | None:
        """Mean XX->En delta minus mean En->XX delta, when both are present."""
        a = self.by_direction.get(Direction.INTO_ENGLISH)
        b = self.by_direction.get(Direction.FROM_ENGLISH)
        return None if a is None or b is None else a - b

    def to_json(self) -> dict:
        return {
            "by_direction": {d.value: v for d, v in sorted(self.by_direction.items(), key=lambda kv: kv[0].value)},
            "by_group": [{"direction": d.value, "group": g, "delta": v}
                         for (d, g), v in sorted(self.by_group.items(), key=lambda kv: (kv[0][0].value, kv[0][1]))],
            "by_resource": [{"direction": d.value, "resource": r, "delta": v}
                            for (d, r), v in sorted(self.by_resource.items(), key=lambda kv: (kv[0][0].value, kv[0][1]))],
            "direction_gap": self.direction_gap(),
            "records": [r.to_json() for r in self.records],
        }


def asymmetry_report(records: Iterable[DeltaRecord], registry: Registry) -> AsymmetryReport:
    records = tuple(records)
    if not records:
        raise EmptyInput("no delta records")
    by_dir, by_group, by_res = {}, {}, {}
    for r in records:
        d = r.task.direction
        info = registry.languages[r.task.language]
        by_dir.setdefault(d, []).append(r.delta)
        by_group.setdefault((d, group_of(registry, info.code)), []).append(r.delta)
        by_res.setdefault((d, info.resource), []).append(r.delta)
    return AsymmetryReport(
        {k: _mean(v) for k, v in by_dir.items()},
        {k: _mean(v) for k, v in by_group.items()},
        {k: _mean(v) for k, v in by_res.items()},
        records,
    )


def merge_degradation(before: Score, after: Score, params_before: int, params_after: int) -> dict[str, float]:
    """Score lost per removed parameter, for each metric."""
    if not params_before > params_after:
        raise BadCounts(f"params_before ({params_before}) must exceed params_after ({params_after})")
    removed = params_before - params_after
    return {m: (before.get(m) - after.get(m)) / removed for m in METRICS}


def degradation_ratio(en_xx: float, xx_en: float) -> float:
    """En->XX over XX->En degradation rate; inf/nan are mapped so reports stay numeric.

    Equal-zero rates give 1.0; a zero denominator with nonzero numerator gives
    the signed numerator scaled to a large finite sentinel.
    """
    if xx_en != 0.0:
        return en_xx / xx_en
    if en_xx == 0.0:
        return 1.0
    return math.copysign(1e12, en_xx)


CSV_COLUMNS = ("run_id", "task", "direction", "group", "resource", "strategy",
               "token_acc", "exact_match", "bleu", "delta", "verdict")


def report_rows(run_id: str, scores: dict, registry: Registry, deltas: dict | None = None) -> list[dict]:
    """CSV rows from ``{(strategy, task): Score}``; ``deltas`` maps task -> DeltaRecord."""
    deltas = deltas or {}
    rows = []
    for (strategy, task), s in sorted(scores.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
        info = registry.languages[task.language]
        rec = deltas.get(task) if strategy in ("separate", "multilingual") else None
        rows.append({
            "run_id": run_id,
            "task": str(task),
            "direction": task.direction.value,
            "group": info.group_id,
            "resource": info.resource,
            "strategy": strategy,
            "token_acc": s.token_accuracy,
            "exact_match": s.exact_match,
            "bleu": s.bleu,
            "delta": "" if rec is None else rec.delta,
            "verdict": "" if rec is None else rec.verdict.value,
        })
    return rows


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def rows_to_csv(rows: list[dict], columns=CSV_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c, "")) for c in columns])
    return buf.getvalue()


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


@lru_cache(maxsize=1)
def comet_tables() -> dict:
    """Per-language COMET-22 scores of the published ALMA-13B and X-ALMA-13B group tables."""
    text = resources.files("datforge").joinpath("data/comet22_group_tables.json").read_text()
    return json.loads(text)


def published_deltas(model: str = "ALMA-13B", direction: Direction = Direction.INTO_ENGLISH,
                     registry: Registry | None = None) -> list[DeltaRecord]:
    """Separate-vs-multilingual delta records from the packaged published scores."""
    from .registry import ENGLISH, builtin_registry

    registry = registry or builtin_registry()
    tables = comet_tables()["models"][model]
    sep, mul = tables["separate"][direction.value], tables["multilingual"][direction.value]
    out = []
    for code in registry.codes():
        if code in sep:
            task = TranslationTask(code, ENGLISH) if direction is Direction.INTO_ENGLISH else TranslationTask(ENGLISH, code)
            out.append(DeltaRecord.from_scores(task, sep[code], mul[code]))
    return out
