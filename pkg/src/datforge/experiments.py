"""End-to-end desk experiments: language sweep, strategy comparison, anchor
sets, DAT vs DATM and a LoRA-rank sweep.

Every adapter is keyed by its task set and training config, so an
experiment that needs the same adapter twice (DAT XX->En and the Separate
baseline, say) trains it once. Jobs derive their randomness from
``(seed, task set)`` only, which keeps results independent of ``jobs``.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import plotting
from .adapters import AdapterBundle, save_bundle
from .errors import AnchorNotCovered, ValidationError
from .evaluation import (
    CSV_COLUMNS, DeltaRecord, Score, asymmetry_report, degradation_ratio, dumps_json, merge_degradation,
    report_rows, rows_to_csv, score_bundle,
)
from .merging import MergeConfig, merge_bundles
from .model import save_base
from .registry import ENGLISH, Direction, TranslationTask
from .routing import bundle_filename, pool_size, route
from .synth import Split, SynthSpec
from .training import (
    AdapterPool, PoolMode, PretrainConfig, Strategy, TrainConfig, build_bench, compress_pool_datm, fit_adapter,
    pretrain_base, strategy_jobs, task_key,
)

log = logging.getLogger(__name__)

# Frozen desk budget (calibrated once; see README). Small corpora get at
# least 150 optimizer steps, everything else one epoch.
DESK_TRAIN = TrainConfig(lr_max=5e-3, epochs=1, min_steps=150)

DIRECTIONS = (Direction.INTO_ENGLISH, Direction.FROM_ENGLISH)


class ExperimentKind(enum.Enum):
    SWEEP = "sweep"
    COMPARE = "compare"
    ANCHOR = "anchor"
    DAT_VS_DATM = "dat-vs-datm"
    RANK_SWEEP = "rank-sweep"


@dataclass(frozen=True)
class ExperimentSpec:
    kind: ExperimentKind
    synth: SynthSpec = field(default_factory=SynthSpec)
    train: TrainConfig = DESK_TRAIN
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    merge: MergeConfig = field(default_factory=MergeConfig)
    counts: tuple | None = None  # sweep: language counts
    anchor: tuple | None = None  # anchor: language codes
    superset_sizes: tuple | None = None  # anchor: training-set sizes
    ranks: tuple = (16, 32)  # rank-sweep
    metric: str = "token_accuracy"

    def __post_init__(self):
        object.__setattr__(self, "kind", ExperimentKind(self.kind))
        for name in ("counts", "anchor", "superset_sizes", "ranks"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(v))
        if self.metric not in ("token_accuracy", "exact_match", "bleu"):
            raise ValidationError(f"unknown metric {self.metric!r}")
        n = self.synth.n_groups * self.synth.langs_per_group
        if self.counts is not None:
            if list(self.counts) != sorted(set(self.counts)) or min(self.counts) < 1 or max(self.counts) > n:
                raise ValidationError(f"counts must be strictly ascending within 1..{n}")
        if self.superset_sizes is not None:
            if list(self.superset_sizes) != sorted(set(self.superset_sizes)) or max(self.superset_sizes) > n:
                raise ValidationError(f"superset sizes must be strictly ascending and at most {n}")
        if any(r < 1 for r in self.ranks):
            raise ValidationError("ranks must be positive")

    def with_seed(self, seed: int) -> "ExperimentSpec":
        return replace(
            self,
            synth=replace(self.synth, seed=seed),
            train=replace(self.train, seed=seed),
            pretrain=replace(self.pretrain, seed=seed),
            merge=replace(self.merge, seed=seed),
        )

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "synth": self.synth.to_json(),
            "train": self.train.to_json(),
            "pretrain": self.pretrain.to_json(),
            "merge": self.merge.to_json(),
            "counts": list(self.counts) if self.counts is not None else None,
            "anchor": list(self.anchor) if self.anchor is not None else None,
            "superset_sizes": list(self.superset_sizes) if self.superset_sizes is not None else None,
            "ranks": list(self.ranks),
            "metric": self.metric,
        }

    @classmethod
    def from_json(cls, obj: dict, kind=None) -> "ExperimentSpec":
        obj = dict(obj)
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown experiment spec keys: {sorted(unknown)}")
        if kind is not None:
            obj["kind"] = kind
        if "kind" not in obj:
            raise ValidationError("experiment spec needs a kind")
        kw = {k: v for k, v in obj.items() if k not in ("synth", "train", "pretrain", "merge")}
        if "synth" in obj:
            kw["synth"] = SynthSpec.from_json(obj["synth"])
        if "train" in obj:
            kw["train"] = TrainConfig.from_json({**DESK_TRAIN.to_json(), **obj["train"]})
        if "pretrain" in obj:
            kw["pretrain"] = PretrainConfig.from_json(obj["pretrain"])
        if "merge" in obj:
            kw["merge"] = MergeConfig.from_json(obj["merge"])
        return cls(**kw)


def bundle_digest(b: AdapterBundle) -> str:
    """Content hash of the factors only, so renamed copies share scores."""
    h = hashlib.sha256()
    for name, p in b.pairs.items():
        h.update(name.encode())
        h.update(p.a.tobytes())
        h.update(p.b.tobytes())
    return h.hexdigest()


# Worker-process state, set once by the pool initializer.
_WORKER: dict = {}


def _worker_init(bench, base):
    _WORKER["bench"] = bench
    _WORKER["base"] = base


def _train_worker(args):
    tasks, adapter_id, cfg = args
    run = fit_adapter(_WORKER["base"], tasks, _WORKER["bench"], cfg, adapter_id)
    return run


def _score_worker(args):
    bundle, task = args
    bench = _WORKER["bench"]
    return score_bundle(_WORKER["base"], bundle, bench.corpus(task, Split.TEST), bench.vocab, bench.width)


class Workbench:
    """Benchmark, pretrained base, and memoized training/scoring for one spec."""

    def __init__(self, spec: ExperimentSpec, jobs: int = 1, base=None):
        self.spec = spec
        self.jobs = max(1, int(jobs))
        self.bench = build_bench(spec.synth)
        self.pretrain_history: list[float] = []
        if base is None:
            base = pretrain_base(self.bench.model_config(), self.bench, spec.pretrain, self.pretrain_history)
        elif base.cfg.vocab_size != self.bench.vocab.size:
            raise ValidationError("base checkpoint vocabulary does not match the synthetic spec")
        self.base = base
        self._runs: dict = {}
        self._scores: dict = {}
        self._executor = None

    @property
    def registry(self):
        return self.bench.registry

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def _map(self, fn, items):
        if self.jobs == 1 or len(items) <= 1:
            _worker_init(self.bench, self.base)
            return [fn(x) for x in items]
        if self._executor is None:
            self._executor = ProcessPoolExecutor(self.jobs, initializer=_worker_init, initargs=(self.bench, self.base))
        return list(self._executor.map(fn, items))

    def train(self, jobs: dict, cfg: TrainConfig | None = None) -> dict[str, AdapterBundle]:
        """Adapter id -> bundle for ``{id: tasks}``; identical task sets are trained once."""
        cfg = cfg or self.spec.train
        cfg_key = json.dumps(cfg.to_json(), sort_keys=True)
        want = {}
        for aid, tasks in jobs.items():
            key = (task_key(tasks), cfg_key)
            if key not in self._runs and key not in want:
                want[key] = (sorted(tasks, key=str), aid, cfg)
        keys = sorted(want)
        for key, run in zip(keys, self._map(_train_worker, [want[k] for k in keys])):
            self._runs[key] = run
        out = {}
        for aid, tasks in jobs.items():
            b = self._runs[(task_key(tasks), cfg_key)].bundle
            out[aid] = b if b.meta.id == aid else b.with_meta(id=aid)
        return out

    def run_manifests(self) -> list[dict]:
        out = []
        for _, run in sorted(self._runs.items()):
            out.append(run.manifest("adapter", run_cfg(run, self), bundle_filename(run.bundle.meta.id)))
        return out

    def score(self, pairs) -> list[Score]:
        """Scores for ``[(bundle, task), ...]`` on each task's test corpus."""
        pairs = list(pairs)
        keys = [(bundle_digest(b), str(t)) for b, t in pairs]
        todo, seen = [], set()
        for k, p in zip(keys, pairs):
            if k not in self._scores and k not in seen:
                seen.add(k)
                todo.append((k, p))
        for (k, _), s in zip(todo, self._map(_score_worker, [p for _, p in todo])):
            self._scores[k] = s
        return [self._scores[k] for k in keys]

    def score_pool(self, pool: AdapterPool, tasks) -> dict[TranslationTask, Score]:
        tasks = list(tasks)
        bundles = [pool[route(pool, t, self.registry)] for t in tasks]
        return dict(zip(tasks, self.score(zip(bundles, tasks))))


def run_cfg(run, wb: Workbench) -> TrainConfig:
    rank = run.bundle.meta.rank
    return wb.spec.train if rank == wb.spec.train.lora_rank else replace(wb.spec.train, lora_rank=rank, lora_alpha=run.bundle.meta.alpha)


def _pool(wb: Workbench, strategy: Strategy, mode: PoolMode, direction=None, mixed=True, cfg=None) -> AdapterPool:
    jobs = strategy_jobs(strategy, wb.registry, direction, mixed_multilingual=mixed)
    return AdapterPool(wb.train(jobs, cfg), mode)


def _mean(xs) -> float:
    xs = list(xs)
    return math.fsum(xs) / len(xs) if xs else float("nan")


def _mean_score(scores) -> Score:
    scores = list(scores)
    return Score(*(min(1.0, _mean(getattr(s, m) for s in scores)) for m in ("token_accuracy", "exact_match", "bleu")))


def _by_direction(scores: dict, metric: str) -> dict:
    return {d.value: _mean(s.get(metric) for t, s in scores.items() if t.direction is d) for d in DIRECTIONS}


def _finite(x) -> float | None:
    return x if isinstance(x, float) and math.isfinite(x) else None


@dataclass
class ExperimentResult:
    kind: ExperimentKind
    report: dict
    rows: list  # documented CSV schema
    tables: dict = field(default_factory=dict)  # extra csv name -> (columns, rows)
    figures: list = field(default_factory=list)  # (filename, plot callable)
    bundles: dict = field(default_factory=dict)


def _deltas(sep: dict, mul: dict, metric: str) -> dict:
    return {t: DeltaRecord.from_scores(t, sep[t].get(metric), mul[t].get(metric)) for t in sep}


def run_dat_vs_datm(wb: Workbench) -> ExperimentResult:
    spec, reg = wb.spec, wb.registry
    metric = spec.metric
    tasks = reg.tasks()
    sep = _pool(wb, Strategy.SEPARATE, PoolMode.SEPARATE)
    grp = _pool(wb, Strategy.GROUP, PoolMode.GROUP)
    mul = _pool(wb, Strategy.MULTILINGUAL, PoolMode.MULTILINGUAL)
    dat = _pool(wb, Strategy.DIRECTION_AWARE, PoolMode.DAT)
    datm = compress_pool_datm(dat, reg, spec.merge)
    pools = {"separate": sep, "group": grp, "multilingual": mul, "dat": dat, "datm": datm}
    scores = {name: wb.score_pool(p, tasks) for name, p in pools.items()}

    # En->XX probe: merge the separate En->XX adapters per group, as DATM does for XX->En.
    probe = {}
    for g in reg.group_ids():
        members = [sep[f"sep:{ENGLISH}-{c}"] for c in reg.members(g)]
        merged = merge_bundles(members, spec.merge, f"mrg:{g}:en-xx")
        probe[merged.meta.id] = merged
    en_xx_tasks = reg.tasks(Direction.FROM_ENGLISH)
    probe_bundles = [probe[f"mrg:{reg.languages[t.language].group_id}:en-xx"] for t in en_xx_tasks]
    probe_scores = dict(zip(en_xx_tasks, wb.score(zip(probe_bundles, en_xx_tasks))))

    def params(pool, direction):
        return sum(b.n_params for b in pool.entries.values() if b.meta.direction is direction)

    xx_tasks = reg.tasks(Direction.INTO_ENGLISH)
    xx_before = _mean_score(scores["dat"][t] for t in xx_tasks)
    xx_after = _mean_score(scores["datm"][t] for t in xx_tasks)
    xx_removed = (params(dat, Direction.INTO_ENGLISH), params(datm, Direction.INTO_ENGLISH))
    en_before = _mean_score(scores["separate"][t] for t in en_xx_tasks)
    en_after = _mean_score(probe_scores.values())
    en_params_before = sum(sep[f"sep:{t}"].n_params for t in en_xx_tasks)
    en_params_after = sum(b.n_params for b in probe.values())
    deg_xx = merge_degradation(xx_before, xx_after, *xx_removed)
    deg_en = merge_degradation(en_before, en_after, en_params_before, en_params_after)
    ratio = {m: degradation_ratio(deg_en[m], deg_xx[m]) for m in deg_xx}

    deltas = _deltas(scores["separate"], scores["multilingual"], metric)
    asym = asymmetry_report(deltas.values(), reg)
    datm_equal = all(scores["datm"][t] == scores["dat"][t] for t in en_xx_tasks)

    rows = []
    for name, sc in scores.items():
        rows += report_rows("dat-vs-datm", {(name, t): s for t, s in sc.items()}, reg, deltas)
    rows += report_rows("dat-vs-datm", {("separate-merged-probe", t): s for t, s in probe_scores.items()}, reg)

    n_l, n_g = reg.n_languages, reg.n_groups
    summary = {name: {d: v for d, v in _by_direction(sc, metric).items()} for name, sc in scores.items()}
    report = {
        "metric": metric,
        "pool_sizes": {
            "dat": len(dat), "datm": len(datm),
            "dat_law": pool_size(PoolMode.DAT, n_l, n_g), "datm_law": pool_size(PoolMode.DATM, n_l, n_g),
        },
        "mean_scores": summary,
        "datm_from_english_equals_dat": datm_equal,
        "asymmetry": asym.to_json(),
        "degradation": {
            "xx-en": {"before": xx_before.to_json(), "after": xx_after.to_json(),
                      "params_before": xx_removed[0], "params_after": xx_removed[1], "per_param": deg_xx},
            "en-xx": {"before": en_before.to_json(), "after": en_after.to_json(),
                      "params_before": en_params_before, "params_after": en_params_after, "per_param": deg_en},
            "ratio_en_xx_over_xx_en": ratio,
        },
    }
    cats = [d.value for d in DIRECTIONS]
    figures = [
        ("strategies.png", lambda p: plotting.grouped_bars(
            p, cats, {n: [summary[n][c] for c in cats] for n in summary}, metric, "Mean test score by strategy")),
        ("delta_by_group.png", lambda p: plotting.grouped_bars(
            p, reg.group_ids(), {d.value: [asym.by_group.get((d, g), 0.0) for g in reg.group_ids()] for d in DIRECTIONS},
            f"delta {metric}", "Separate minus multilingual, by group")),
    ]
    bundles = {**dat.entries, **datm.entries, **sep.entries, **grp.entries, **mul.entries, **probe}
    return ExperimentResult(ExperimentKind.DAT_VS_DATM, report, rows, figures=figures, bundles=bundles)


def run_strategy_comparison(wb: Workbench) -> ExperimentResult:
    reg, metric = wb.registry, wb.spec.metric
    tasks = reg.tasks()
    pools = {
        "group": _pool(wb, Strategy.GROUP, PoolMode.GROUP),
        "separate": _pool(wb, Strategy.SEPARATE, PoolMode.SEPARATE),
        "multilingual": _pool(wb, Strategy.MULTILINGUAL, PoolMode.MULTILINGUAL),
    }
    scores = {name: wb.score_pool(p, tasks) for name, p in pools.items()}
    deltas = _deltas(scores["separate"], scores["multilingual"], metric)
    rows = []
    for name, sc in scores.items():
        rows += report_rows("compare", {(name, t): s for t, s in sc.items()}, reg, deltas)
    grid = []
    for g in reg.group_ids():
        for d in DIRECTIONS:
            for name, sc in scores.items():
                m = _mean_score(s for t, s in sc.items() if t.direction is d and reg.languages[t.language].group_id == g)
                grid.append({"group": g, "direction": d.value, "strategy": name, "token_acc": m.token_accuracy,
                             "exact_match": m.exact_match, "bleu": m.bleu})
    report = {
        "metric": metric,
        "grid": grid,
        "asymmetry": asymmetry_report(deltas.values(), reg).to_json(),
    }
    groups = reg.group_ids()
    figures = []
    for d in DIRECTIONS:
        series = {name: [next(r[{"token_accuracy": "token_acc"}.get(metric, metric)] for r in grid
                               if r["group"] == g and r["direction"] == d.value and r["strategy"] == name)
                         for g in groups] for name in scores}
        figures.append((f"grid_{d.value}.png", lambda p, s=series, d=d: plotting.grouped_bars(
            p, groups, s, metric, f"{d.label}: score by group and strategy")))
    cols = ("group", "direction", "strategy", "token_acc", "exact_match", "bleu")
    return ExperimentResult(ExperimentKind.COMPARE, report, rows, {"grid.csv": (cols, grid)}, figures,
                            {k: b for p in pools.values() for k, b in p.entries.items()})


def _restricted_multilingual(wb: Workbench, codes, direction: Direction, cfg=None) -> AdapterBundle:
    aid = f"mul:{direction.value}:{len(codes)}"
    return wb.train({aid: wb.registry.tasks(direction, codes)}, cfg)[aid]


def run_language_sweep(wb: Workbench) -> ExperimentResult:
    reg, metric = wb.registry, wb.spec.metric
    codes = reg.codes()
    counts = wb.spec.counts or tuple(sorted({1, max(1, len(codes) // 4), max(1, len(codes) // 2), len(codes)}))
    if max(counts) > len(codes):
        raise ValidationError(f"count {max(counts)} exceeds {len(codes)} languages")
    sep_pool = _pool(wb, Strategy.SEPARATE, PoolMode.SEPARATE)
    curve, rows, bundles = [], [], dict(sep_pool.entries)
    for k in counts:
        subset = codes[:k]
        for d in DIRECTIONS:
            tasks = reg.tasks(d, subset)
            mul_b = _restricted_multilingual(wb, subset, d)
            bundles[mul_b.meta.id] = mul_b
            mul = dict(zip(tasks, wb.score((mul_b, t) for t in tasks)))
            sep = wb.score_pool(sep_pool, tasks)
            deltas = _deltas(sep, mul, metric)
            run_id = f"sweep-k{k}"
            rows += report_rows(run_id, {("multilingual", t): s for t, s in mul.items()}, reg, deltas)
            rows += report_rows(run_id, {("separate", t): s for t, s in sep.items()}, reg, deltas)
            curve.append({
                "k": k, "direction": d.value,
                "multilingual": _mean(s.get(metric) for s in mul.values()),
                "separate": _mean(s.get(metric) for s in sep.values()),
                "delta": _mean(r.delta for r in deltas.values()),
            })
    report = {"metric": metric, "counts": list(counts), "languages": codes[: max(counts)], "curve": curve}
    figures = []
    for d in DIRECTIONS:
        pts = [c for c in curve if c["direction"] == d.value]
        series = {"multilingual": [c["multilingual"] for c in pts], "separate": [c["separate"] for c in pts]}
        figures.append((f"sweep_{d.value}.png", lambda p, s=series, d=d: plotting.line_series(
            p, list(counts), s, "languages trained", metric, f"{d.label}: mean score vs language count")))
    figures.append(("sweep_delta.png", lambda p: plotting.line_series(
        p, list(counts), {d.value: [c["delta"] for c in curve if c["direction"] == d.value] for d in DIRECTIONS},
        "languages trained", f"delta {metric}", "Separate minus multilingual")))
    cols = ("k", "direction", "multilingual", "separate", "delta")
    return ExperimentResult(ExperimentKind.SWEEP, report, rows, {"curve.csv": (cols, curve)}, figures, bundles)


def anchor_supersets(codes, anchor, sizes) -> list[list[str]]:
    """Anchor languages first, then the rest in registry order, cut at each size."""
    anchor = list(anchor)
    missing = [c for c in anchor if c not in codes]
    if missing:
        raise AnchorNotCovered(f"anchor languages not generated: {missing}")
    if not sizes or min(sizes) < len(anchor):
        raise AnchorNotCovered(f"every superset must contain the {len(anchor)} anchor languages")
    order = anchor + [c for c in codes if c not in anchor]
    return [order[:n] for n in sizes]


def run_anchor(wb: Workbench) -> ExperimentResult:
    reg, metric = wb.registry, wb.spec.metric
    codes = reg.codes()
    anchor = list(wb.spec.anchor or codes[: max(1, len(codes) // 4)])
    sizes = wb.spec.superset_sizes or tuple(sorted({len(anchor), min(len(codes), 2 * len(anchor)), len(codes)}))
    table, rows, bundles = [], [], {}
    for superset in anchor_supersets(codes, anchor, sizes):
        row = {"superset_size": len(superset), "languages": " ".join(superset)}
        for d in DIRECTIONS:
            b = _restricted_multilingual(wb, superset, d)
            bundles[b.meta.id] = b
            tasks = reg.tasks(d, anchor)
            sc = dict(zip(tasks, wb.score((b, t) for t in tasks)))
            rows += report_rows(f"anchor-n{len(superset)}", {("multilingual", t): s for t, s in sc.items()}, reg)
            row[d.value] = _mean(s.get(metric) for s in sc.values())
        table.append(row)
    report = {"metric": metric, "anchor": anchor, "superset_sizes": list(sizes), "table": table}
    figures = [("anchor.png", lambda p: plotting.line_series(
        p, list(sizes), {d.value: [r[d.value] for r in table] for d in DIRECTIONS},
        "languages trained", f"anchor mean {metric}", "Anchor-set score vs training superset"))]
    cols = ("superset_size", "languages", "xx-en", "en-xx")
    return ExperimentResult(ExperimentKind.ANCHOR, report, rows, {"anchor.csv": (cols, table)}, figures, bundles)


def run_rank_sweep(wb: Workbench) -> ExperimentResult:
    reg, metric = wb.registry, wb.spec.metric
    tasks = reg.tasks()
    table, rows, bundles = [], [], {}
    for r in wb.spec.ranks:
        cfg = replace(wb.spec.train, lora_rank=r, lora_alpha=2.0 * r)
        jobs = {f"mul:all:r{r}": tasks}
        b = wb.train(jobs, cfg)[f"mul:all:r{r}"]
        bundles[b.meta.id] = b
        sc = dict(zip(tasks, wb.score((b, t) for t in tasks)))
        rows += report_rows(f"rank-{r}", {("multilingual", t): s for t, s in sc.items()}, reg)
        row = {"rank": r}
        for d in DIRECTIONS:
            m = _mean_score(s for t, s in sc.items() if t.direction is d)
            row[f"{d.value}_token_acc"], row[f"{d.value}_bleu"] = m.token_accuracy, m.bleu
        row["avg_token_acc"] = _mean(row[f"{d.value}_token_acc"] for d in DIRECTIONS)
        row["avg_bleu"] = _mean(row[f"{d.value}_bleu"] for d in DIRECTIONS)
        table.append(row)
    report = {"metric": metric, "ranks": list(wb.spec.ranks), "table": table}
    cats = [d.value for d in DIRECTIONS]
    figures = [("ranks.png", lambda p: plotting.grouped_bars(
        p, cats, {f"rank {r['rank']}": [r[f"{c}_token_acc"] for c in cats] for r in table},
        "token_accuracy", "Multilingual adapter by LoRA rank"))]
    cols = ("rank", "xx-en_token_acc", "xx-en_bleu", "en-xx_token_acc", "en-xx_bleu", "avg_token_acc", "avg_bleu")
    return ExperimentResult(ExperimentKind.RANK_SWEEP, report, rows, {"ranks.csv": (cols, table)}, figures, bundles)


RUNNERS = {
    ExperimentKind.SWEEP: run_language_sweep,
    ExperimentKind.COMPARE: run_strategy_comparison,
    ExperimentKind.ANCHOR: run_anchor,
    ExperimentKind.DAT_VS_DATM: run_dat_vs_datm,
    ExperimentKind.RANK_SWEEP: run_rank_sweep,
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_outputs(result: ExperimentResult, wb: Workbench, out_dir, save_bundles: bool = True) -> dict:
    """Write reports, figures, bundles and manifests; returns the manifest.

    Everything except ``runs.json`` (which holds wall-clock timings) is a
    pure function of the experiment spec.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = wb.spec
    files = []

    def emit(name: str, text: str):
        (out / name).write_text(text)
        files.append(name)

    emit("scores.csv", rows_to_csv(result.rows, CSV_COLUMNS))
    for name, (cols, rows) in sorted(result.tables.items()):
        emit(name, rows_to_csv(rows, cols))
    report = {"kind": result.kind.value, "spec": spec.to_json(), "base_fingerprint": f"{wb.base.fingerprint:016x}",
              **result.report, "rows": result.rows}
    emit("report.json", dumps_json(report))
    for name, plot in result.figures:
        plot(out / name)
        files.append(name)
    if save_bundles:
        adir = out / "adapters"
        adir.mkdir(exist_ok=True)
        for aid in sorted(result.bundles):
            save_bundle(result.bundles[aid], adir / bundle_filename(aid))
            files.append(f"adapters/{bundle_filename(aid)}")
        save_base(wb.base, out / "base.ckpt")
        files.append("base.ckpt")
    (out / "runs.json").write_text(json.dumps(wb.run_manifests(), indent=2, sort_keys=True) + "\n")
    manifest = {
        "kind": result.kind.value,
        "spec": spec.to_json(),
        "base_fingerprint": f"{wb.base.fingerprint:016x}",
        "pretrain_loss": {"first": wb.pretrain_history[0] if wb.pretrain_history else None,
                          "last": wb.pretrain_history[-1] if wb.pretrain_history else None},
        "corpora": {f"{task}/{split.value}": c.content_hash()
                    for (task, split), c in sorted(wb.bench.corpora.items(), key=lambda kv: (kv[0][0], kv[0][1].value))},
        "files": {name: _sha256(out / name) for name in sorted(files)},
    }
    (out / "manifest.json").write_text(dumps_json(manifest))
    return manifest


def run_experiment(spec: ExperimentSpec, out_dir=None, jobs: int = 1, save_bundles: bool = True):
    """Run one experiment; writes outputs when ``out_dir`` is given."""
    start = time.perf_counter()
    with Workbench(spec, jobs) as wb:
        result = RUNNERS[spec.kind](wb)
        if out_dir is not None:
            write_outputs(result, wb, out_dir, save_bundles)
    log.info("experiment %s finished in %.1fs", spec.kind.value, time.perf_counter() - start)
    return result
