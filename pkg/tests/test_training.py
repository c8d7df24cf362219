import math

import numpy as np
import pytest

from datforge.adapters import AdapterBundle, AdapterMeta, LoraPair, bundle_to_bytes
from datforge.errors import MissingCorpus, ModeError, ValidationError
from datforge.model import init_model
from datforge.registry import Direction, TranslationTask, builtin_registry
from datforge.rng import derive_seed
from datforge.synth import SynthSpec, synthetic_registry
from datforge.training import (
    AdapterPool, PoolMode, PretrainConfig, Strategy, TrainConfig, build_bench, compress_pool_datm, fit_adapter,
    lr_at, pretrain_base, separate_id, strategy_jobs, task_key, train_direction_aware,
)

TINY = SynthSpec(n_groups=2, langs_per_group=2, content_vocab=12, sent_len_range=(3, 5),
                 corpus_sizes={"High": 64, "Mid": 48, "Low": 32}, test_size=16, seed=3)


@pytest.fixture(scope="module")
def bench():
    return build_bench(TINY)


@pytest.fixture(scope="module")
def base(bench):
    return pretrain_base(bench.model_config(d_model=16), bench, PretrainConfig(steps=40, batch_size=16))


def fake_trainer(fingerprint=1):
    def trainer(tasks, adapter_id):
        rng = np.random.default_rng(len(adapter_id) + sum(map(ord, adapter_id)))
        dirs = {t.direction for t in tasks}
        meta = AdapterMeta(adapter_id, dirs.pop() if len(dirs) == 1 else None,
                           tuple(sorted({t.language for t in tasks})), 2, 4.0, fingerprint)
        pair = LoraPair(rng.standard_normal((2, 4)).astype(np.float32),
                        rng.standard_normal((4, 2)).astype(np.float32), 4.0)
        return AdapterBundle(meta, {"l0.Wq": pair})
    return trainer


class _W:
    def __init__(self, ratio, lr=1.0):
        self.warmup_ratio, self.lr_max = ratio, lr


def test_lr_schedule():
    cfg = _W(0.01, 2e-3)
    total = 10_000  # w = 100
    assert lr_at(100, total, cfg) == pytest.approx(2e-3)
    assert lr_at(400, total, cfg) == pytest.approx(1e-3)
    assert lr_at(1, total, cfg) == pytest.approx(2e-5)
    assert lr_at(1, 5, cfg) == pytest.approx(2e-3)  # w floors at 1
    assert lr_at(50, total, cfg) == pytest.approx(1e-3)


def test_train_config_validation():
    assert TrainConfig().lora_alpha == 32.0
    assert TrainConfig(lora_rank=4).lora_alpha == 8.0
    for bad in ({"lr_max": 0}, {"warmup_ratio": 1.0}, {"weight_decay": -1}, {"min_steps": -1}, {"lora_rank": 0}):
        with pytest.raises(ValidationError):
            TrainConfig(**bad)
    with pytest.raises(ValidationError):
        TrainConfig.from_json({"lr": 1})
    cfg = TrainConfig(seed=4, min_steps=9)
    assert TrainConfig.from_json(cfg.to_json()) == cfg


def test_strategy_jobs_builtin():
    reg = builtin_registry()
    assert len(strategy_jobs(Strategy.SEPARATE, reg)) == 98
    assert len(strategy_jobs(Strategy.GROUP, reg)) == 16
    assert list(strategy_jobs(Strategy.MULTILINGUAL, reg)) == ["mul:all"]
    assert len(strategy_jobs(Strategy.MULTILINGUAL, reg)["mul:all"]) == 98
    split = strategy_jobs(Strategy.MULTILINGUAL, reg, mixed_multilingual=False)
    assert sorted(split) == ["mul:en-xx", "mul:xx-en"]
    assert len(strategy_jobs(Strategy.SEPARATE, reg, Direction.FROM_ENGLISH)) == 49
    dat = strategy_jobs(Strategy.DIRECTION_AWARE, reg)
    assert len(dat) == 57
    assert dat["sep:de-en"] == [TranslationTask("de", "en")]
    assert len(dat["grp:1:en-xx"]) == 7 and all(t.direction is Direction.FROM_ENGLISH for t in dat["grp:1:en-xx"])


def test_pool_laws_builtin_with_fake_trainer():
    reg = builtin_registry()
    pool = train_direction_aware(None, reg, None, TrainConfig(), trainer=fake_trainer())
    assert pool.mode is PoolMode.DAT and len(pool) == 49 + 8
    datm = compress_pool_datm(pool, reg)
    assert datm.mode is PoolMode.DATM and len(datm) == 16
    for key, b in pool.entries.items():
        if b.meta.direction is Direction.FROM_ENGLISH:
            assert datm[key] is b
    assert "mrg:1:xx-en" in datm and set(datm["mrg:1:xx-en"].meta.languages) >= {"de"}
    with pytest.raises(ModeError):
        compress_pool_datm(datm, reg)


@pytest.mark.parametrize("g,n", [(1, 1), (2, 3), (4, 2), (5, 5)])
def test_pool_laws_synthetic(g, n):
    reg = synthetic_registry(SynthSpec(n_groups=g, langs_per_group=n))
    pool = train_direction_aware(None, reg, None, TrainConfig(), trainer=fake_trainer())
    assert len(pool) == g * n + g
    assert len(compress_pool_datm(pool, reg)) == 2 * g


def test_pool_validation():
    b1 = fake_trainer(1)([TranslationTask("de", "en")], "a")
    b2 = fake_trainer(2)([TranslationTask("de", "en")], "b")
    with pytest.raises(ValidationError):
        AdapterPool({"a": b1, "b": b2}, PoolMode.DAT)
    with pytest.raises(ValidationError):
        AdapterPool({"x": b1}, PoolMode.DAT)


def test_task_key_is_order_free():
    a, b = TranslationTask("de", "en"), TranslationTask("en", "fr")
    assert task_key([a, b]) == task_key([b, a]) == "de-en,en-fr"


def test_pretrain(bench):
    cfg = bench.model_config(d_model=16)
    assert pretrain_base(cfg, bench, PretrainConfig(steps=0)).fingerprint == \
        init_model(cfg, derive_seed(0, "base")).fingerprint
    hist = []
    pretrain_base(cfg, bench, PretrainConfig(steps=60, batch_size=16), history=hist)
    assert len(hist) == 60
    assert np.mean(hist[-10:]) < np.mean(hist[:10])


def test_fit_adapter(bench, base):
    task = TranslationTask("g1l1", "en")
    cfg = TrainConfig(lr_max=5e-3, batch_size=16, lora_rank=4)
    run = fit_adapter(base, [task], bench, cfg)
    assert run.steps == math.ceil(64 / 16)
    assert run.bundle.meta.id == "adapter:g1l1-en"
    assert run.bundle.meta.direction is Direction.INTO_ENGLISH
    long = fit_adapter(base, [task], bench, TrainConfig(lr_max=5e-3, batch_size=16, lora_rank=4, min_steps=30),
                       adapter_id=separate_id(task))
    assert long.steps == 30 and len(long.losses) == 30
    assert long.final_loss < long.initial_loss
    assert long.bundle.meta.id == "sep:g1l1-en"
    again = fit_adapter(base, [task], bench, TrainConfig(lr_max=5e-3, batch_size=16, lora_rank=4, min_steps=30),
                        adapter_id=separate_id(task))
    assert bundle_to_bytes(again.bundle) == bundle_to_bytes(long.bundle)
    m = long.manifest("separate", cfg)
    assert m["steps"] == 30 and m["tasks"] == ["g1l1-en"]


def test_fit_adapter_mixed_direction(bench, base):
    run = fit_adapter(base, [TranslationTask("g1l1", "en"), TranslationTask("en", "g2l1")], bench,
                      TrainConfig(batch_size=32, lora_rank=2))
    assert run.bundle.meta.direction is None
    assert run.bundle.meta.languages == ("g1l1", "g2l1")


def test_fit_adapter_errors(bench, base):
    with pytest.raises(ValidationError):
        fit_adapter(base, [], bench, TrainConfig())
    with pytest.raises(MissingCorpus):
        fit_adapter(base, [TranslationTask("de", "en")], bench, TrainConfig())
