"""Tiny pre-norm decoder with LoRA-adaptable projections and manual backprop.

Parameters are stored as float32 (or float64 in ``"f64"`` precision mode);
every forward/backward pass computes in float64. Shapes: ``B`` batch, ``T``
time, ``D`` model width, ``V`` vocabulary. Linear maps use the
``y = x @ W.T`` convention with ``W`` shaped (d_out, d_in) and carry no bias.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adapters import AdapterBundle, AdapterMeta, LoraPair, delta64, pack_container, read_f32, unpack_container
from .errors import FingerprintMismatch, FormatError, NoTargetTokens, SequenceTooLong, ShapeMismatch, ValidationError
from .rng import SplitMix64, derive_seed, fnv1a64

BASE_MAGIC = b"DATM-BASE"
MATRICES = ("Wq", "Wk", "Wv", "Wo", "W1", "W2")
LN_EPS = 1e-5
INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    max_seq: int = 48
    lora_targets: tuple[str, ...] = MATRICES
    precision: str = "f32"

    def __post_init__(self):
        object.__setattr__(self, "lora_targets", tuple(sorted(self.lora_targets)))
        if self.precision not in ("f32", "f64"):
            raise ValidationError("precision must be 'f32' or 'f64'")
        bad = set(self.lora_targets) - set(MATRICES)
        if bad:
            raise ValidationError(f"unknown LoRA targets {sorted(bad)}")
        if min(self.vocab_size, self.d_model, self.n_layers, self.max_seq) < 1:
            raise ValidationError("model sizes must be positive")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def target_names(self) -> list[str]:
        """Fully qualified names of every adaptable matrix, sorted."""
        return sorted(f"l{i}.{m}" for i in range(self.n_layers) for m in self.lora_targets)

    def shape_of(self, name: str) -> tuple[int, ...]:
        d, V = self.d_model, self.vocab_size
        leaf = name.split(".", 1)[1] if name[0] == "l" and name[1].isdigit() else name
        return {
            "tok_emb": (V, d), "pos_emb": (self.max_seq, d), "Wout": (V, d),
            "Wq": (d, d), "Wk": (d, d), "Wv": (d, d), "Wo": (d, d),
            "W1": (4 * d, d), "W2": (d, 4 * d),
            "ln1.g": (d,), "ln1.b": (d,), "ln2.g": (d,), "ln2.b": (d,), "lnf.g": (d,), "lnf.b": (d,),
        }[leaf]

    def param_names(self) -> list[str]:
        names = ["tok_emb", "pos_emb"]
        for i in range(self.n_layers):
            names += [f"l{i}.{m}" for m in MATRICES]
            names += [f"l{i}.ln1.g", f"l{i}.ln1.b", f"l{i}.ln2.g", f"l{i}.ln2.b"]
        return names + ["lnf.g", "lnf.b", "Wout"]

    def to_json(self) -> dict:
        return {
            "vocab_size": self.vocab_size, "d_model": self.d_model, "n_layers": self.n_layers,
            "max_seq": self.max_seq, "lora_targets": list(self.lora_targets), "precision": self.precision,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        obj = dict(obj)
        if "lora_targets" in obj:
            obj["lora_targets"] = tuple(obj["lora_targets"])
        return cls(**obj)


@dataclass
class BaseModel:
    cfg: ModelConfig
    params: dict[str, np.ndarray]
    _fingerprint: int | None = field(default=None, repr=False, compare=False)

    @property
    def fingerprint(self) -> int:
        """64-bit FNV-1a of the parameter byte stream in checkpoint order."""
        if self._fingerprint is None:
            blob = b"".join(np.ascontiguousarray(self.params[n]).tobytes() for n in self.cfg.param_names())
            self._fingerprint = fnv1a64(blob)
        return self._fingerprint

    def replace_params(self, params: dict[str, np.ndarray]) -> "BaseModel":
        return BaseModel(self.cfg, params)


def init_model(cfg: ModelConfig, seed: int) -> BaseModel:
    params = {}
    for name in cfg.param_names():
        shape = cfg.shape_of(name)
        if name.endswith(".g"):
            params[name] = np.ones(shape, cfg.dtype)
        elif name.endswith(".b"):
            params[name] = np.zeros(shape, cfg.dtype)
        else:
            rng = SplitMix64(derive_seed(seed, "init", name))
            params[name] = rng.normal_block(int(np.prod(shape)), INIT_STD).reshape(shape).astype(cfg.dtype)
    return BaseModel(cfg, params)


def init_adapter(model: BaseModel, rank: int, alpha: float, seed: int, meta_id: str = "adapter",
                 direction=None, languages=("?",)) -> AdapterBundle:
    """Adapter with A ~ N(0, 0.02) and B = 0, so it starts as the identity."""
    cfg = model.cfg
    pairs = {}
    for name in cfg.target_names():
        d_out, d_in = cfg.shape_of(name)
        rng = SplitMix64(derive_seed(seed, "lora", name))
        a = rng.normal_block(rank * d_in, INIT_STD).reshape(rank, d_in).astype(cfg.dtype)
        pairs[name] = LoraPair(a, np.zeros((d_out, rank), cfg.dtype), float(alpha))
    meta = AdapterMeta(meta_id, direction, tuple(languages), rank, float(alpha), model.fingerprint)
    return AdapterBundle(meta, pairs)


def _check_adapter(model: BaseModel, adapter: AdapterBundle | None) -> None:
    if adapter is None:
        return
    if adapter.meta.base_fingerprint != model.fingerprint:
        raise FingerprintMismatch(
            f"adapter {adapter.meta.id} was trained on base {adapter.meta.base_fingerprint:016x}, "
            f"not {model.fingerprint:016x}")
    for name, p in adapter.pairs.items():
        if name not in model.params or model.params[name].shape != p.shape:
            raise ShapeMismatch(f"adapter target {name} does not fit the base model")


def effective_weights(model: BaseModel, adapter: AdapterBundle | None) -> dict[str, np.ndarray]:
    """Float64 weights with LoRA deltas added lazily; the base is never mutated."""
    w = {k: v.astype(np.float64) for k, v in model.params.items()}
    if adapter is not None:
        for name, p in adapter.pairs.items():
            w[name] = w[name] + delta64(p)
    return w


def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layernorm_back(dy, g, cache):
    xhat, inv = cache
    ghat = dy * g
    dx = inv * (ghat - ghat.mean(axis=-1, keepdims=True) - xhat * (ghat * xhat).mean(axis=-1, keepdims=True))
    return dx, (dy * xhat).sum(axis=0), dy.sum(axis=0)


def _as_batch(ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    return ids[None, :] if ids.ndim == 1 else ids


def _forward(w: dict, cfg: ModelConfig, ids: np.ndarray, keep_cache: bool):
    B, T = ids.shape
    if T > cfg.max_seq:
        raise SequenceTooLong(f"sequence length {T} exceeds max_seq {cfg.max_seq}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValidationError("token id out of range")
    d = cfg.d_model
    # activations are kept flat as (B * T, D); attention reshapes to (B, T, D)
    x = (w["tok_emb"][ids] + w["pos_emb"][:T]).reshape(B * T, d)
    causal = np.tril(np.ones((T, T), dtype=bool))
    scale = 1.0 / np.sqrt(d)
    caches = []
    for i in range(cfg.n_layers):
        p = f"l{i}."
        h, ln1 = _layernorm(x, w[p + "ln1.g"], w[p + "ln1.b"])
        q = (h @ w[p + "Wq"].T).reshape(B, T, d)
        k = (h @ w[p + "Wk"].T).reshape(B, T, d)
        v = (h @ w[p + "Wv"].T).reshape(B, T, d)
        s = np.where(causal, (q @ k.transpose(0, 2, 1)) * scale, -np.inf)
        s = s - s.max(axis=-1, keepdims=True)
        e = np.exp(s)
        a = e / e.sum(axis=-1, keepdims=True)
        o = (a @ v).reshape(B * T, d)
        x = x + o @ w[p + "Wo"].T
        h2, ln2 = _layernorm(x, w[p + "ln2.g"], w[p + "ln2.b"])
        u = h2 @ w[p + "W1"].T
        r = np.maximum(u, 0.0)
        x = x + r @ w[p + "W2"].T
        if keep_cache:
            caches.append((h, ln1, q, k, v, a, o, h2, ln2, u, r))
    xf, lnf = _layernorm(x, w["lnf.g"], w["lnf.b"])
    logits = (xf @ w["Wout"].T).reshape(B, T, -1)
    return logits, (caches, xf, lnf, scale)


def forward(model: BaseModel, adapter: AdapterBundle | None, seq) -> np.ndarray:
    """Logits of shape (T, V) for one sequence or (B, T, V) for a batch."""
    _check_adapter(model, adapter)
    arr = np.asarray(seq)
    logits, _ = _forward(effective_weights(model, adapter), model.cfg, _as_batch(arr), keep_cache=False)
    return logits[0] if arr.ndim == 1 else logits


def _backward(w, cfg, ids, dlogits, cache, want):
    """Gradients of the loss w.r.t. every weight named in ``want``."""
    caches, xf, lnf, scale = cache
    B, T = ids.shape
    d = cfg.d_model
    grads = {}
    dlogits = dlogits.reshape(B * T, -1)
    if "Wout" in want:
        grads["Wout"] = dlogits.T @ xf
    dx, grads["lnf.g"], grads["lnf.b"] = _layernorm_back(dlogits @ w["Wout"], w["lnf.g"], lnf)
    for i in reversed(range(cfg.n_layers)):
        p = f"l{i}."
        h, ln1, q, k, v, a, o, h2, ln2, u, r = caches[i]
        # MLP block
        if p + "W2" in want:
            grads[p + "W2"] = dx.T @ r
        du = (dx @ w[p + "W2"]) * (u > 0)
        if p + "W1" in want:
            grads[p + "W1"] = du.T @ h2
        dres, grads[p + "ln2.g"], grads[p + "ln2.b"] = _layernorm_back(du @ w[p + "W1"], w[p + "ln2.g"], ln2)
        dx = dx + dres
        # attention block
        if p + "Wo" in want:
            grads[p + "Wo"] = dx.T @ o
        do = (dx @ w[p + "Wo"]).reshape(B, T, d)
        da = do @ v.transpose(0, 2, 1)
        dv = a.transpose(0, 2, 1) @ do
        ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) * scale
        dq = (ds @ k).reshape(B * T, d)
        dk = (ds.transpose(0, 2, 1) @ q).reshape(B * T, d)
        dv = dv.reshape(B * T, d)
        for name, dy in (("Wq", dq), ("Wk", dk), ("Wv", dv)):
            if p + name in want:
                grads[p + name] = dy.T @ h
        dh = dq @ w[p + "Wq"] + dk @ w[p + "Wk"] + dv @ w[p + "Wv"]
        dres, grads[p + "ln1.g"], grads[p + "ln1.b"] = _layernorm_back(dh, w[p + "ln1.g"], ln1)
        dx = dx + dres
    if "tok_emb" in want:
        g = np.zeros_like(w["tok_emb"])
        np.add.at(g, ids.reshape(-1), dx)
        grads["tok_emb"] = g
    if "pos_emb" in want:
        g = np.zeros_like(w["pos_emb"])
        g[:T] = dx.reshape(B, T, d).sum(axis=0)
        grads["pos_emb"] = g
    return grads


@dataclass(frozen=True)
class Batch:
    """Right-padded token ids plus a mask of positions whose next token is scored."""

    ids: np.ndarray
    mask: np.ndarray

    @classmethod
    def from_sequences(cls, seqs, sep_id: int, pad_id: int = 0, full_lm: bool = False) -> "Batch":
        T = max(len(s) for s in seqs)
        ids = np.full((len(seqs), T), pad_id, dtype=np.int64)
        mask = np.zeros((len(seqs), T), dtype=bool)
        for row, s in enumerate(seqs):
            s = list(s)
            ids[row, : len(s)] = s
            if full_lm:
                mask[row, : len(s) - 1] = True
                continue
            if sep_id not in s:
                raise NoTargetTokens("sequence has no SEP")
            sep = s.index(sep_id)
            # position t predicts token t + 1; score every token after SEP
            mask[row, sep: len(s) - 1] = True
        if not mask.any():
            raise NoTargetTokens("batch has no target tokens after SEP")
        return cls(ids, mask)


def _loss_from_logits(logits, batch: Batch):
    ids, mask = batch.ids, batch.mask
    nxt = np.zeros_like(ids)
    nxt[:, :-1] = ids[:, 1:]
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    n = mask.sum()
    picked = np.take_along_axis(logp, nxt[..., None], axis=-1)[..., 0]
    loss = -(picked * mask).sum() / n
    dlogits = np.exp(logp)
    np.put_along_axis(dlogits, nxt[..., None], np.take_along_axis(dlogits, nxt[..., None], -1) - 1.0, axis=-1)
    dlogits *= (mask / n)[..., None]
    return float(loss), dlogits


def batch_loss(model: BaseModel, adapter: AdapterBundle | None, batch: Batch) -> float:
    _check_adapter(model, adapter)
    logits, _ = _forward(effective_weights(model, adapter), model.cfg, batch.ids, keep_cache=False)
    return _loss_from_logits(logits, batch)[0]


def loss_and_grads(model: BaseModel, adapter: AdapterBundle, batch: Batch):
    """Masked cross-entropy and gradients for the adapter factors only.

    Returns ``(loss, grads)`` where ``grads[name] = (dA, dB)``.
    """
    _check_adapter(model, adapter)
    w = effective_weights(model, adapter)
    logits, cache = _forward(w, model.cfg, batch.ids, keep_cache=True)
    loss, dlogits = _loss_from_logits(logits, batch)
    gw = _backward(w, model.cfg, batch.ids, dlogits, cache, want=set(adapter.pairs))
    grads = {}
    for name, p in adapter.pairs.items():
        G = gw[name]
        a, b = p.a.astype(np.float64), p.b.astype(np.float64)
        grads[name] = (p.scale * (b.T @ G), p.scale * (G @ a.T))
    return loss, grads


def full_loss_and_grads(model: BaseModel, batch: Batch):
    """Loss and gradients for every base parameter (pretraining)."""
    w = effective_weights(model, None)
    logits, cache = _forward(w, model.cfg, batch.ids, keep_cache=True)
    loss, dlogits = _loss_from_logits(logits, batch)
    grads = _backward(w, model.cfg, batch.ids, dlogits, cache, want=set(model.params))
    return loss, grads


def greedy_decode_batch(model: BaseModel, adapter: AdapterBundle | None, prefixes, max_new: int,
                        eos_id: int) -> list[list[int]]:
    """Append argmax tokens (ties to the lowest id) until EOS or ``max_new``.

    All prefixes must have equal length; the returned lists include the prefix.
    """
    _check_adapter(model, adapter)
    ids = np.asarray(prefixes, dtype=np.int64)
    if ids.ndim != 2:
        raise ValidationError("prefixes must be equal-length sequences")
    if ids.shape[1] + max_new > model.cfg.max_seq:
        raise SequenceTooLong(f"prefix {ids.shape[1]} + {max_new} new tokens exceeds max_seq {model.cfg.max_seq}")
    w = effective_weights(model, adapter)
    done = np.zeros(len(ids), dtype=bool)
    lengths = np.full(len(ids), ids.shape[1])
    for _ in range(max_new):
        if done.all():
            break
        logits, _ = _forward(w, model.cfg, ids, keep_cache=False)
        nxt = logits[:, -1].argmax(axis=-1)
        nxt = np.where(done, eos_id, nxt)
        lengths = lengths + ~done
        done = done | (nxt == eos_id)
        ids = np.concatenate([ids, nxt[:, None]], axis=1)
    return [row[:n].tolist() for row, n in zip(ids, lengths)]


def greedy_decode(model: BaseModel, adapter: AdapterBundle | None, prefix, max_new: int, eos_id: int,
                  sep_id: int | None = None) -> list[int]:
    prefix = list(prefix)
    if sep_id is not None and (not prefix or prefix[-1] != sep_id):
        raise ValidationError("prefix must end with SEP")
    return greedy_decode_batch(model, adapter, [prefix], max_new, eos_id)[0]


def save_base(model: BaseModel, path) -> None:
    names = model.cfg.param_names()
    header = {
        "config": model.cfg.to_json(),
        "matrices": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
    }
    Path(path).write_bytes(pack_container(BASE_MAGIC, header, [model.params[n] for n in names]))


def load_base(path) -> BaseModel:
    header, payload = unpack_container(BASE_MAGIC, Path(path).read_bytes())
    try:
        cfg = ModelConfig.from_json(header["config"])
        mats = header["matrices"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad checkpoint header: {exc}") from exc
    params, off = {}, 0
    for m in mats:
        shape = tuple(m["shape"])
        rows, cols = (1, shape[0]) if len(shape) == 1 else shape
        arr, off = read_f32(payload, off, rows, cols)
        params[m["name"]] = arr.reshape(shape).astype(cfg.dtype)
    if off != len(payload):
        raise FormatError("trailing bytes after payload")
    if set(params) != set(cfg.param_names()):
        raise FormatError("checkpoint matrices do not match its config")
    return BaseModel(cfg, params)


def checkpoint_header(path) -> dict:
    header, _ = unpack_container(BASE_MAGIC, Path(path).read_bytes())
    return json.loads(json.dumps(header))
