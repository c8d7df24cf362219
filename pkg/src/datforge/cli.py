"""``datforge`` command line.

Exit codes: 0 success, 1 validation or usage error, 2 runtime error.
Configs are JSON documents with optional ``synth``, ``train``,
``pretrain`` and ``merge`` sections (plus experiment fields); flags
override the file, which overrides built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .errors import DatforgeError, ValidationError

log = logging.getLogger("datforge")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as e:
        raise ValidationError(f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path} is not valid JSON: {e}") from None


def _load_config(args) -> dict:
    cfg = _read_json(args.config) if getattr(args, "config", None) else {}
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object")
    return cfg


def _spec(args, kind="dat-vs-datm"):
    from .experiments import ExperimentSpec

    cfg = _load_config(args)
    cfg.pop("kind", None)
    spec = ExperimentSpec.from_json(cfg, kind=kind)
    if getattr(args, "seed", None) is not None:
        spec = spec.with_seed(args.seed)
    return spec


def _registry(name):
    from .registry import builtin_registry, load_registry

    return builtin_registry() if name in (None, "builtin") else load_registry(name)


def _out(args) -> Path:
    if not args.out:
        raise ValidationError("--out DIR is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# -- commands ---------------------------------------------------------------

def cmd_registry(args) -> int:
    reg = _registry(args.file)
    if args.action == "validate":
        print(json.dumps(reg.group_sizes()))
    else:
        sys.stdout.write(_dump(reg.to_json()))
    return 0


def cmd_synth(args) -> int:
    from .registry import save_registry
    from .synth import save_corpus
    from .training import build_bench

    spec = _spec(args).synth
    out = _out(args)
    bench = build_bench(spec)
    save_registry(bench.registry, out / "registry.json")
    (out / "synth.json").write_text(_dump(spec.to_json()))
    cdir = out / "corpora"
    cdir.mkdir(exist_ok=True)
    for (task, split), corpus in sorted(bench.corpora.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        save_corpus(corpus, cdir / f"{task}.{split.value}.jsonl", spec)
    log.info("wrote %d corpora to %s", len(bench.corpora), cdir)
    return 0


def cmd_pretrain(args) -> int:
    from .model import save_base
    from .training import build_bench, pretrain_base

    spec = _spec(args)
    out = _out(args)
    bench = build_bench(spec.synth)
    history: list[float] = []
    base = pretrain_base(bench.model_config(), bench, spec.pretrain, history)
    save_base(base, out / "base.ckpt")
    (out / "pretrain.json").write_text(_dump({
        "pretrain": spec.pretrain.to_json(), "synth": spec.synth.to_json(),
        "fingerprint": f"{base.fingerprint:016x}", "losses": history,
    }))
    print(f"{base.fingerprint:016x}")
    return 0


def _workbench(args, spec):
    from .experiments import Workbench
    from .model import load_base

    base = load_base(args.base) if getattr(args, "base", None) else None
    return Workbench(spec, getattr(args, "jobs", 1) or 1, base=base)


def cmd_train(args) -> int:
    from .model import save_base
    from .registry import save_registry
    from .routing import save_pool
    from .training import AdapterPool, PoolMode, Strategy, strategy_jobs

    spec = _spec(args)
    out = _out(args)
    strategy = Strategy(args.strategy)
    mode = {Strategy.DIRECTION_AWARE: PoolMode.DAT}.get(strategy) or PoolMode(strategy.value)
    with _workbench(args, spec) as wb:
        pool = AdapterPool(wb.train(strategy_jobs(strategy, wb.registry)), mode)
        if args.base:
            base_ref = str(Path(args.base).resolve())
        else:
            base_ref = "base.ckpt"
            save_base(wb.base, out / base_ref)
        save_pool(pool, out, wb.registry, base_ref)
        save_registry(wb.registry, out / "registry.json")
        (out / "synth.json").write_text(_dump(spec.synth.to_json()))
        (out / "train_runs.json").write_text(_dump(wb.run_manifests()))
    print(len(pool))
    return 0


def _pool_dir_registry(pool_dir: Path, override=None):
    from .registry import load_registry

    if override:
        return _registry(override)
    path = pool_dir / "registry.json"
    if not path.exists():
        raise ValidationError(f"{pool_dir} has no registry.json; pass --registry")
    return load_registry(path)


def cmd_merge(args) -> int:
    from .merging import MergeConfig
    from .routing import load_pool, save_pool
    from .training import compress_pool_datm

    cfg = _load_config(args)
    merge_cfg = MergeConfig.from_json(cfg.get("merge", {}))
    if args.seed is not None:
        merge_cfg = replace(merge_cfg, seed=args.seed)
    pool_dir = Path(args.pool)
    pool, base_ckpt = load_pool(pool_dir)
    reg = _pool_dir_registry(pool_dir, args.registry)
    out = _out(args)
    datm = compress_pool_datm(pool, reg, merge_cfg)
    save_pool(datm, out, reg, base_ckpt)
    (out / "registry.json").write_text((pool_dir / "registry.json").read_text() if (pool_dir / "registry.json").exists()
                                       else _dump(reg.to_json()))
    if (pool_dir / "synth.json").exists():
        (out / "synth.json").write_text((pool_dir / "synth.json").read_text())
    print(len(datm))
    return 0


def cmd_route(args) -> int:
    from .registry import TranslationTask
    from .routing import adapter_id_for, load_pool, route

    task = TranslationTask.parse(args.task)
    if args.pool:
        pool, _ = load_pool(args.pool)
        reg = _pool_dir_registry(Path(args.pool), args.registry)
        print(route(pool, task, reg))
    else:
        print(adapter_id_for(args.mode, task, _registry(args.registry)))
    return 0


def _pool_context(args):
    from .model import load_base
    from .routing import load_pool
    from .synth import SynthSpec, Vocab

    pool_dir = Path(args.pool)
    pool, base_ckpt = load_pool(pool_dir)
    reg = _pool_dir_registry(pool_dir, args.registry)
    base_path = args.base or base_ckpt
    if not base_path:
        raise ValidationError("no base checkpoint: pass --base")
    base = load_base(base_path)
    synth_path = pool_dir / "synth.json"
    spec = SynthSpec.from_json(_read_json(synth_path)) if synth_path.exists() else _spec(args).synth
    vocab = Vocab.for_registry(reg, spec.content_vocab)
    return pool, reg, base, spec, vocab


def cmd_translate(args) -> int:
    from .registry import TranslationTask
    from .routing import translate

    pool, reg, base, spec, vocab = _pool_context(args)
    try:
        src = [int(x) for x in args.src.replace(",", " ").split()]
    except ValueError:
        raise ValidationError("--src must be space-separated content ids") from None
    out = translate(pool, base, TranslationTask.parse(args.task), src, reg, vocab, spec.max_len)
    print(" ".join(str(t) for t in out))
    return 0


def cmd_eval(args) -> int:
    from .errors import MissingCorpus
    from .evaluation import CSV_COLUMNS, dumps_json, report_rows, rows_to_csv, score_task
    from .registry import TranslationTask
    from .synth import Split, build_corpora, build_languages

    pool, reg, base, spec, vocab = _pool_context(args)
    out = _out(args)
    _, langs = build_languages(spec, reg)
    corpora = build_corpora(spec, langs, splits=(Split.TEST,))
    tasks = [TranslationTask.parse(args.task)] if args.task else reg.tasks()
    scores = {}
    for t in tasks:
        corpus = corpora.get((str(t), Split.TEST))
        if corpus is None:
            raise MissingCorpus(f"no test corpus for {t}")
        scores[(pool.mode.value, t)] = score_task(pool, base, corpus, reg, vocab, spec.max_len)
    rows = report_rows("eval", scores, reg)
    (out / "scores.csv").write_text(rows_to_csv(rows, CSV_COLUMNS))
    (out / "eval.json").write_text(dumps_json({"pool": str(args.pool), "mode": pool.mode.value,
                                               "synth": spec.to_json(), "rows": rows}))
    return 0


def cmd_experiment(args) -> int:
    from .experiments import run_experiment

    spec = _spec(args, kind=args.kind)
    out = _out(args)
    run_experiment(spec, out, jobs=args.jobs, save_bundles=not args.no_bundles)
    print(out / "report.json")
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="datforge", description="Direction-aware multilingual adapter toolkit (desk scale).")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def common(sp, config=True, out=True, seed=True):
        if config:
            sp.add_argument("--config", metavar="PATH", help="JSON config file")
        if out:
            sp.add_argument("--out", metavar="DIR", help="output directory")
        if seed:
            sp.add_argument("--seed", type=int, metavar="U64", help="override every seed in the config")

    r = sub.add_parser("registry", help="inspect a language registry")
    r.add_argument("action", choices=["validate", "show"])
    r.add_argument("--file", default="builtin", help="registry JSON path or 'builtin'")
    r.set_defaults(func=cmd_registry)

    s = sub.add_parser("synth", help="generate synthetic corpora")
    s.add_argument("action", choices=["build"])
    common(s)
    s.set_defaults(func=cmd_synth)

    pt = sub.add_parser("pretrain", help="pretrain a base model")
    common(pt)
    pt.set_defaults(func=cmd_pretrain)

    t = sub.add_parser("train", help="train an adapter pool with one strategy")
    common(t)
    t.add_argument("--strategy", required=True, choices=["multilingual", "group", "separate", "dat"])
    t.add_argument("--base", metavar="PATH", help="base checkpoint (pretrained on the fly if omitted)")
    t.add_argument("--jobs", type=int, default=1, metavar="N")
    t.set_defaults(func=cmd_train)

    m = sub.add_parser("merge", help="compress a DAT pool into a DATM pool")
    common(m)
    m.add_argument("--pool", required=True, metavar="DIR")
    m.add_argument("--registry", metavar="PATH")
    m.set_defaults(func=cmd_merge)

    ro = sub.add_parser("route", help="print the adapter id serving a task")
    ro.add_argument("--mode", choices=["dat", "datm", "separate", "group", "multilingual"], default="dat")
    ro.add_argument("--task", required=True, help="e.g. de-en")
    ro.add_argument("--registry", help="registry JSON path or 'builtin' (default: the pool's registry, else builtin)")
    ro.add_argument("--pool", metavar="DIR", help="check the id against a saved pool")
    ro.set_defaults(func=cmd_route)

    tr = sub.add_parser("translate", help="translate one token sequence")
    common(tr, out=False, seed=False)
    tr.add_argument("--pool", required=True, metavar="DIR")
    tr.add_argument("--task", required=True)
    tr.add_argument("--src", required=True, help="space-separated content ids")
    tr.add_argument("--base", metavar="PATH")
    tr.add_argument("--registry", metavar="PATH")
    tr.set_defaults(func=cmd_translate)

    ev = sub.add_parser("eval", help="score a saved pool on the test corpora")
    common(ev, seed=False)
    ev.add_argument("--pool", required=True, metavar="DIR")
    ev.add_argument("--task", help="score one task only")
    ev.add_argument("--base", metavar="PATH")
    ev.add_argument("--registry", metavar="PATH")
    ev.set_defaults(func=cmd_eval)

    ex = sub.add_parser("experiment", help="run a desk experiment end to end")
    ex.add_argument("kind", choices=["sweep", "compare", "anchor", "dat-vs-datm", "rank-sweep"])
    common(ex)
    ex.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes")
    ex.add_argument("--no-bundles", action="store_true", help="skip writing adapter files")
    ex.set_defaults(func=cmd_experiment)
    return p


def _setup_logging():
    level = os.environ.get("DATFORGE_LOG", "warn").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
            raise ValidationError("--jobs must be at least 1")
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except (ValidationError, ValueError) as e:
        print(f"datforge: error: {e}", file=sys.stderr)
        return 1
    except (DatforgeError, OSError) as e:
        print(f"datforge: error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:  # --help
        return int(e.code or 0)


if __name__ == "__main__":
    sys.exit(main())
