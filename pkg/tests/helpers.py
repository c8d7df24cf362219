"""Small builders shared by tests."""

import numpy as np

from datforge.adapters import AdapterBundle, AdapterMeta, LoraPair
from datforge.registry import Direction


def random_bundle(rng: np.random.Generator, targets=("l0.Wq", "l0.W1"), rank=None, direction=Direction.INTO_ENGLISH,
                  languages=("de",), fingerprint=1, bundle_id="b", dims=None):
    rank = rank or int(rng.integers(1, 5))
    pairs = {}
    for name in targets:
        d_out, d_in = dims[name] if dims else (int(rng.integers(1, 7)), int(rng.integers(1, 7)))
        a = rng.standard_normal((rank, d_in)).astype(np.float32)
        b = rng.standard_normal((d_out, rank)).astype(np.float32)
        pairs[name] = LoraPair(a, b, 2.0 * rank)
    meta = AdapterMeta(bundle_id, direction, tuple(languages), rank, 2.0 * rank, fingerprint)
    return AdapterBundle(meta, pairs)


def random_f64_instance(seed: int, vocab=13, d=8, layers=2, T=9, B=3):
    """Random f64 model with a nonzero adapter and a batch of SEP-delimited sequences."""
    from datforge.model import Batch, ModelConfig, init_adapter, init_model

    rng = np.random.default_rng(seed)
    cfg = ModelConfig(vocab_size=vocab, d_model=d, n_layers=layers, max_seq=16, precision="f64")
    model = init_model(cfg, seed)
    model = model.replace_params({k: v + 0.3 * rng.standard_normal(v.shape) for k, v in model.params.items()})
    ad = init_adapter(model, 2, 4.0, seed)
    pairs = {n: LoraPair(rng.standard_normal(p.a.shape) * 0.3, rng.standard_normal(p.b.shape) * 0.3, p.alpha)
             for n, p in ad.pairs.items()}
    ad = AdapterBundle(ad.meta, pairs)
    seqs = []
    for _ in range(B):
        n = int(rng.integers(4, T + 1))
        s = rng.integers(3, vocab, size=n).tolist()
        s[int(rng.integers(1, n - 1))] = 1  # SEP
        seqs.append(s)
    return model, ad, Batch.from_sequences(seqs, sep_id=1, pad_id=0)


def _relu_pattern(model, adapter, batch):
    from datforge.model import _forward, effective_weights

    _, (caches, *_rest) = _forward(effective_weights(model, adapter), model.cfg, batch.ids, keep_cache=True)
    return [c[9] > 0 for c in caches]


def adapter_gradcheck(seed: int, n_samples: int = 50, h: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference adapter gradients.

    Probes whose +-h perturbation flips a ReLU are redrawn: the loss is not
    differentiable across the kink, so a finite difference there says nothing.
    """
    from datforge.model import batch_loss, loss_and_grads

    model, ad, batch = random_f64_instance(seed)
    _, grads = loss_and_grads(model, ad, batch)
    rng = np.random.default_rng(seed + 1000)
    names = list(ad.pairs)
    worst, done, tries = 0.0, 0, 0
    while done < n_samples:
        tries += 1
        assert tries < 20 * n_samples, "too many probes straddle a ReLU kink"
        name = names[int(rng.integers(len(names)))]
        which = int(rng.integers(2))
        p = ad.pairs[name]
        mat = (p.a, p.b)[which]
        idx = tuple(int(rng.integers(s)) for s in mat.shape)

        def moved(x):
            m = mat.copy()
            m[idx] = x
            q = LoraPair(m, p.b, p.alpha) if which == 0 else LoraPair(p.a, m, p.alpha)
            return AdapterBundle(ad.meta, {**ad.pairs, name: q})

        x0 = mat[idx]
        lo, hi = moved(x0 - h), moved(x0 + h)
        if any((a != b).any() for a, b in zip(_relu_pattern(model, lo, batch), _relu_pattern(model, hi, batch))):
            continue
        numeric = (batch_loss(model, hi, batch) - batch_loss(model, lo, batch)) / (2 * h)
        analytic = grads[name][which][idx]
        denom = max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, abs(numeric - analytic) / denom)
        done += 1
    return worst
