"""Deterministic seeded pre-norm transformer in numpy.

Not a trained model: weights are Gaussian noise. It exists so the decode
loop, cache rollback and artifact-driven drafting can be exercised against
a real causal attention stack with per-head maps and per-layer states.
Arithmetic runs in float64 so chunked and token-by-token passes agree far
below any argmax gap; exported artifacts are float32.
"""

from __future__ import annotations

import functools
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from copydraft.backend.base import Backend, ForwardResult
from copydraft.core import ModelDims

INIT_SCALE = 0.02
LN_EPS = 1e-5


@dataclass(frozen=True)
class ToyTransformerSpec:
    layers: int = 4
    heads: int = 4
    dim: int = 64
    vocab: int = 256
    mlp_dim: int | None = None
    seed: int = 0
    max_seq_len: int = 2048

    def __post_init__(self) -> None:
        ModelDims(self.layers, self.heads, self.dim, self.vocab)
        if self.dim % self.heads:
            raise ValueError(f"dim={self.dim} not divisible by heads={self.heads}")
        if self.mlp_dim is None:
            object.__setattr__(self, "mlp_dim", 4 * self.dim)
        if self.mlp_dim <= 0 or self.max_seq_len <= 0:
            raise ValueError("mlp_dim and max_seq_len must be positive")

    @property
    def dims(self) -> ModelDims:
        return ModelDims(self.layers, self.heads, self.dim, self.vocab)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> ToyTransformerSpec:
        known = {"layers", "heads", "dim", "mlp_dim", "vocab", "seed", "max_seq_len"}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown toy spec keys: {sorted(unknown)}")
        return cls(**{k: int(v) for k, v in obj.items() if v is not None})

    @classmethod
    def load(cls, path: str | Path) -> ToyTransformerSpec:
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class _Block:
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True)
class _Weights:
    tok_emb: np.ndarray
    pos_emb: np.ndarray
    blocks: tuple[_Block, ...]
    lnf_g: np.ndarray
    lnf_b: np.ndarray
    w_out: np.ndarray


@functools.lru_cache(maxsize=16)
def _init_weights(spec: ToyTransformerSpec) -> _Weights:
    rng = np.random.default_rng(spec.seed)
    d, f = spec.dim, spec.mlp_dim

    def gauss(*shape: int) -> np.ndarray:
        w = rng.normal(0.0, INIT_SCALE, size=shape)
        w.setflags(write=False)
        return w

    def const(value: float, n: int) -> np.ndarray:
        w = np.full(n, value)
        w.setflags(write=False)
        return w

    tok_emb = gauss(spec.vocab, d)
    pos_emb = gauss(spec.max_seq_len, d)
    blocks = tuple(
        _Block(
            ln1_g=const(1.0, d), ln1_b=const(0.0, d),
            wq=gauss(d, d), wk=gauss(d, d), wv=gauss(d, d), wo=gauss(d, d),
            ln2_g=const(1.0, d), ln2_b=const(0.0, d),
            w1=gauss(d, f), b1=const(0.0, f), w2=gauss(f, d), b2=const(0.0, d),
        )
        for _ in range(spec.layers)
    )
    return _Weights(tok_emb, pos_emb, blocks, const(1.0, d), const(0.0, d), gauss(d, spec.vocab))


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * g + b


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


class ToyTransformer(Backend):
    def __init__(self, spec: ToyTransformerSpec):
        super().__init__()
        self.spec = spec
        self.dims = spec.dims
        self.max_seq_len = spec.max_seq_len
        self._w = _init_weights(spec)
        self._head_dim = spec.dim // spec.heads
        shape = (spec.layers, spec.max_seq_len, spec.heads, self._head_dim)
        self._k = np.zeros(shape)
        self._v = np.zeros(shape)

    def _forward(self, tokens: list[int]) -> ForwardResult:
        w, spec = self._w, self.spec
        c, n = self.cache_len, len(tokens)
        total = c + n
        G, dh = spec.heads, self._head_dim

        x = w.tok_emb[tokens] + w.pos_emb[c:total]
        hidden = [x]
        # key m is visible to new query i iff m <= c + i
        mask = np.arange(total)[None, :] > (c + np.arange(n))[:, None]
        probs_per_layer = []
        for li, blk in enumerate(w.blocks):
            h = _layer_norm(x, blk.ln1_g, blk.ln1_b)
            q = (h @ blk.wq).reshape(n, G, dh)
            self._k[li, c:total] = (h @ blk.wk).reshape(n, G, dh)
            self._v[li, c:total] = (h @ blk.wv).reshape(n, G, dh)
            keys, vals = self._k[li, :total], self._v[li, :total]
            scores = np.einsum("ngd,mgd->gnm", q, keys) / np.sqrt(dh)
            scores = np.where(mask[None], -np.inf, scores)
            scores -= scores.max(axis=-1, keepdims=True)
            probs = np.exp(scores)
            probs /= probs.sum(axis=-1, keepdims=True)
            probs_per_layer.append(probs)
            attn_out = np.einsum("gnm,mgd->ngd", probs, vals).reshape(n, spec.dim)
            x = x + attn_out @ blk.wo
            h2 = _layer_norm(x, blk.ln2_g, blk.ln2_b)
            x = x + _gelu(h2 @ blk.w1 + blk.b1) @ blk.w2 + blk.b2
            hidden.append(x)

        logits = _layer_norm(x, w.lnf_g, w.lnf_b) @ w.w_out
        stacked = np.stack(probs_per_layer)  # (L, G, n, total)
        attn = tuple(
            stacked[:, :, i, : c + i + 1].astype(np.float32) for i in range(n)
        )
        hidden_arr = np.stack(hidden, axis=1).astype(np.float32)
        return ForwardResult(logits=logits, hidden=hidden_arr, attn=attn, start_pos=c + 1)

    def _truncate(self, new_len: int) -> None:
        # stale K/V rows beyond new_len are overwritten before they are read
        pass


def toy_transformer_build(spec: ToyTransformerSpec) -> ToyTransformer:
    return ToyTransformer(spec)
