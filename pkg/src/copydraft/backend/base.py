from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from copydraft.core import CapacityError, ModelDims


@dataclass(frozen=True)
class ForwardResult:
    """Outputs for the positions processed by one ``forward_extend`` call.

    ``logits[i]`` is the next-token row produced at the i-th new position.
    ``hidden`` is ``(n, L+1, d)``; ``attn[i]`` is ``(L, G, p_i)`` where
    ``p_i`` is the 1-based absolute position of the i-th new token.
    """

    logits: np.ndarray
    hidden: np.ndarray
    attn: tuple[np.ndarray, ...]
    start_pos: int

    def __len__(self) -> int:
        return self.logits.shape[0]


class Backend(abc.ABC):
    """A causal target model with a truncatable cache."""

    dims: ModelDims
    max_seq_len: int

    def __init__(self) -> None:
        self._cache_len = 0

    @property
    def cache_len(self) -> int:
        return self._cache_len

    def forward_extend(self, tokens: Sequence[int]) -> ForwardResult:
        tokens = [int(t) for t in tokens]
        if not tokens:
            raise ValueError("forward_extend needs at least one token")
        if any(not 0 <= t < self.dims.vocab_size for t in tokens):
            raise ValueError(f"token id outside [0, {self.dims.vocab_size})")
        if self._cache_len + len(tokens) > self.max_seq_len:
            raise CapacityError(
                f"cache holds {self._cache_len}, +{len(tokens)} exceeds max_seq_len={self.max_seq_len}"
            )
        result = self._forward(tokens)
        self._cache_len += len(tokens)
        return result

    def truncate_cache(self, new_len: int) -> None:
        if not 0 <= new_len <= self._cache_len:
            raise IndexError(f"cannot truncate cache of length {self._cache_len} to {new_len}")
        self._truncate(new_len)
        self._cache_len = new_len

    def reset(self) -> None:
        self.truncate_cache(0)

    @abc.abstractmethod
    def _forward(self, tokens: list[int]) -> ForwardResult:
        """Process ``tokens`` at positions ``cache_len+1 ..``; cache_len is updated by the caller."""

    def _truncate(self, new_len: int) -> None:
        """Drop backend state beyond ``new_len``. Default: nothing to drop."""


def forward_extend(backend: Backend, tokens: Sequence[int]) -> ForwardResult:
    return backend.forward_extend(tokens)


def truncate_cache(backend: Backend, new_len: int) -> None:
    backend.truncate_cache(new_len)
