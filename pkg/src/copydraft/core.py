"""Shared domain types: token context, artifact store, drafter configuration.

Positions are 1-based everywhere in the public API (position 1 is the first
prompt token). Conversion to 0-based storage indices happens inside this
module and nowhere else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

ROW_SUM_TOL = 1e-6


class CapacityError(ValueError):
    """A forward pass would exceed the backend's positional capacity."""


class ArtifactMissingError(LookupError):
    """A ranking step asked for an artifact the store does not hold."""


class Mode(str, Enum):
    AUTOREGRESSIVE = "ar"
    PLD = "pld"
    PLD_PLUS_ATTENTION = "pld+a"
    PLD_PLUS_HIDDEN = "pld+h"


class Aggregation(str, Enum):
    MAX = "max"
    SUM = "sum"


@dataclass(frozen=True)
class ModelDims:
    num_layers: int
    num_heads: int
    hidden_dim: int
    vocab_size: int

    def __post_init__(self) -> None:
        for name in ("num_layers", "num_heads", "hidden_dim", "vocab_size"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    def to_json(self) -> dict:
        return {
            "layers": self.num_layers,
            "heads": self.num_heads,
            "dim": self.hidden_dim,
            "vocab": self.vocab_size,
        }

    @classmethod
    def from_json(cls, obj: dict) -> ModelDims:
        return cls(int(obj["layers"]), int(obj["heads"]), int(obj["dim"]), int(obj["vocab"]))


@dataclass(frozen=True, order=True)
class HeadRef:
    layer: int
    head: int

    def check(self, dims: ModelDims) -> None:
        if not 1 <= self.layer <= dims.num_layers:
            raise ValueError(f"head layer {self.layer} outside [1, {dims.num_layers}]")
        if not 1 <= self.head <= dims.num_heads:
            raise ValueError(f"head index {self.head} outside [1, {dims.num_heads}]")


def all_heads(dims: ModelDims) -> tuple[HeadRef, ...]:
    return tuple(
        HeadRef(layer, head)
        for layer in range(1, dims.num_layers + 1)
        for head in range(1, dims.num_heads + 1)
    )


class TokenContext:
    """Prompt plus committed generation.

    Append-only except for :meth:`truncate`. ``token(p)`` reads the token at
    1-based position ``p``.
    """

    def __init__(self, tokens: Iterable[int], prompt_len: int | None = None):
        self._tokens: list[int] = [int(t) for t in tokens]
        if any(t < 0 for t in self._tokens):
            raise ValueError("token ids must be non-negative")
        self.prompt_len = len(self._tokens) if prompt_len is None else int(prompt_len)
        if not 0 <= self.prompt_len <= len(self._tokens):
            raise ValueError(
                f"prompt_len {self.prompt_len} exceeds context length {len(self._tokens)}"
            )

    def __len__(self) -> int:
        return len(self._tokens)

    def __repr__(self) -> str:
        return f"TokenContext(len={len(self)}, prompt_len={self.prompt_len})"

    @property
    def tokens(self) -> tuple[int, ...]:
        return tuple(self._tokens)

    @property
    def generated(self) -> tuple[int, ...]:
        return tuple(self._tokens[self.prompt_len :])

    @property
    def last(self) -> int:
        return self._tokens[-1]

    def token(self, pos: int) -> int:
        if not 1 <= pos <= len(self._tokens):
            raise IndexError(f"position {pos} outside [1, {len(self._tokens)}]")
        return self._tokens[pos - 1]

    def span(self, start: int, stop: int) -> list[int]:
        """Tokens at positions ``start..stop`` inclusive (clipped to the context)."""
        start = max(start, 1)
        stop = min(stop, len(self._tokens))
        return self._tokens[start - 1 : stop] if stop >= start else []

    def append(self, token: int) -> None:
        if token < 0:
            raise ValueError("token ids must be non-negative")
        self._tokens.append(int(token))

    def extend(self, tokens: Iterable[int]) -> None:
        for t in tokens:
            self.append(t)

    def truncate(self, new_len: int) -> None:
        if not self.prompt_len <= new_len <= len(self._tokens):
            raise IndexError(
                f"cannot truncate context of length {len(self._tokens)} to {new_len}"
            )
        del self._tokens[new_len:]

    def copy(self) -> TokenContext:
        return TokenContext(self._tokens, self.prompt_len)


class ArtifactStore:
    """Per-position hidden states and attention rows.

    ``hidden`` holds layers ``0..L`` (0 = embedding output). ``attn`` holds,
    for every covered query position ``p``, an ``(L, G, p)`` array whose
    ``[l-1, g-1]`` slice is the post-softmax row of head ``(l, g)``.
    Values are kept in float32; readers upcast to float64.
    """

    def __init__(self, dims: ModelDims):
        self.dims = dims
        self._hidden: list[np.ndarray] = []
        self._attn: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._hidden)

    def append(self, hidden: np.ndarray, attn: Sequence[np.ndarray]) -> None:
        """Append artifacts for the next ``n`` positions.

        ``hidden`` has shape ``(n, L+1, d)``; ``attn[i]`` has shape
        ``(L, G, n0+i+1)`` where ``n0`` is the current covered length.
        """
        dims = self.dims
        hidden = np.asarray(hidden, dtype=np.float32)
        n = hidden.shape[0]
        if hidden.shape != (n, dims.num_layers + 1, dims.hidden_dim):
            raise ValueError(f"hidden block has shape {hidden.shape}")
        if len(attn) != n:
            raise ValueError(f"{len(attn)} attention blocks for {n} positions")
        base = len(self._hidden)
        rows = []
        for i, block in enumerate(attn):
            block = np.asarray(block, dtype=np.float32)
            pos = base + i + 1
            if block.shape != (dims.num_layers, dims.num_heads, pos):
                raise ValueError(f"attention block for position {pos} has shape {block.shape}")
            check_rows(block)
            rows.append(block)
        self._hidden.extend(hidden[i].copy() for i in range(n))
        self._attn.extend(rows)

    def truncate(self, new_len: int) -> None:
        if not 0 <= new_len <= len(self._hidden):
            raise IndexError(f"cannot truncate store of length {len(self._hidden)} to {new_len}")
        del self._hidden[new_len:]
        del self._attn[new_len:]

    def hidden(self, layer: int, pos: int) -> np.ndarray:
        self._check_pos(pos)
        if not 0 <= layer <= self.dims.num_layers:
            raise ValueError(f"layer {layer} outside [0, {self.dims.num_layers}]")
        return self._hidden[pos - 1][layer].astype(np.float64)

    def hidden_mean(self, layer: int, end: int, m: int) -> np.ndarray:
        """Mean of the hidden vectors at positions ``max(1, end-m+1)..end``."""
        start = max(1, end - m + 1)
        vecs = [self.hidden(layer, p) for p in range(start, end + 1)]
        return np.mean(vecs, axis=0)

    def attn_row(self, layer: int, head: int, pos: int) -> np.ndarray:
        self._check_pos(pos)
        HeadRef(layer, head).check(self.dims)
        return self._attn[pos - 1][layer - 1, head - 1].astype(np.float64)

    def attn_block(self, pos: int) -> np.ndarray:
        """All heads' rows for query ``pos`` as an ``(L, G, pos)`` float64 array."""
        self._check_pos(pos)
        return self._attn[pos - 1].astype(np.float64)

    def _check_pos(self, pos: int) -> None:
        if not 1 <= pos <= len(self._hidden):
            raise ArtifactMissingError(f"position {pos} not in store (covers 1..{len(self._hidden)})")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ArtifactStore):
            return NotImplemented
        return (
            self.dims == other.dims
            and len(self) == len(other)
            and all(np.array_equal(a, b) for a, b in zip(self._hidden, other._hidden))
            and all(np.array_equal(a, b) for a, b in zip(self._attn, other._attn))
        )


def truncate_artifacts(store: ArtifactStore, new_len: int) -> ArtifactStore:
    store.truncate(new_len)
    return store


def check_rows(block: np.ndarray) -> None:
    """Raise unless every row in ``block`` (last axis) is a probability vector."""
    if np.any(block < 0):
        raise ValueError("attention rows must be non-negative")
    sums = block.astype(np.float64).sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValueError(f"attention rows not normalized (max deviation {worst:.3g})")


@dataclass(frozen=True)
class DrafterConfig:
    """How drafts are retrieved and ranked.

    Defaults are the tuned operating point: K=70, hidden layer 9, MAX
    aggregation, no threshold, no averaging. ``theta=None`` disables the
    cosine threshold.
    """

    mode: Mode = Mode.PLD_PLUS_HIDDEN
    k: int = 70
    layer: int = 9
    heads: tuple[HeadRef, ...] = ()
    aggregation: Aggregation = Aggregation.MAX
    theta: float | None = None
    avg_prefix_m: int = 1
    ngram_max: int = 3

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "aggregation", Aggregation(self.aggregation))
        object.__setattr__(self, "heads", tuple(self.heads))
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.avg_prefix_m < 1:
            raise ValueError(f"avg_prefix_m must be >= 1, got {self.avg_prefix_m}")
        if self.ngram_max < 1:
            raise ValueError(f"ngram_max must be >= 1, got {self.ngram_max}")
        if self.theta is not None and not (-1.0 <= self.theta <= 1.0 and not math.isnan(self.theta)):
            raise ValueError(f"theta must lie in [-1, 1], got {self.theta}")
        if self.mode is Mode.PLD_PLUS_ATTENTION and not self.heads:
            raise ValueError("attention mode needs at least one head")

    def check(self, dims: ModelDims) -> None:
        """Validate dimension-dependent fields against a backend."""
        if self.mode is Mode.PLD_PLUS_HIDDEN and not 0 <= self.layer <= dims.num_layers:
            raise ValueError(f"layer {self.layer} outside [0, {dims.num_layers}]")
        if self.mode is Mode.PLD_PLUS_ATTENTION:
            for h in self.heads:
                h.check(dims)

    @property
    def label(self) -> str:
        return self.mode.value

    def to_json(self) -> dict:
        return {
            "mode": self.mode.value,
            "k": self.k,
            "layer": self.layer,
            "heads": [[h.layer, h.head] for h in self.heads],
            "aggregation": self.aggregation.value,
            "theta": self.theta,
            "avg_prefix_m": self.avg_prefix_m,
            "ngram_max": self.ngram_max,
        }


@dataclass(frozen=True)
class DraftProposal:
    source_pos: int | None = None
    tokens: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if (self.source_pos is None) != (len(self.tokens) == 0):
            raise ValueError("a proposal has a source position iff it has tokens")

    def __len__(self) -> int:
        return len(self.tokens)


EMPTY_PROPOSAL = DraftProposal()


@dataclass(frozen=True)
class RunMetrics:
    committed_tokens: int = 0
    steps: int = 0
    forward_passes: int = 0
    wall_seconds: float = 0.0
    drafted_tokens: int = 0
    accepted_tokens: int = 0
    speedup: float | None = None

    @property
    def avg_accept_len(self) -> float:
        return self.committed_tokens / self.steps if self.steps else 0.0

    @property
    def throughput(self) -> float:
        if self.wall_seconds <= 0:
            return math.inf if self.committed_tokens else 0.0
        return self.committed_tokens / self.wall_seconds

    def to_json(self) -> dict:
        return {
            "committed_tokens": self.committed_tokens,
            "steps": self.steps,
            "forward_passes": self.forward_passes,
            "wall_seconds": self.wall_seconds,
            "drafted_tokens": self.drafted_tokens,
            "accepted_tokens": self.accepted_tokens,
            "avg_accept_len": self.avg_accept_len,
            "throughput": self.throughput,
            "speedup": self.speedup,
        }
