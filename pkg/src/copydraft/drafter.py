"""Draft retrieval from the running context.

Every ranker returns the chosen copy-source position ``j*`` (1-based) or
``None`` when no candidate survives. The draft is the span right after
``j*``.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from copydraft.core import (
    EMPTY_PROPOSAL,
    Aggregation,
    ArtifactMissingError,
    ArtifactStore,
    DraftProposal,
    DrafterConfig,
    HeadRef,
    Mode,
    TokenContext,
)

# cosines closer than this count as tied, so exact ties that rounding split
# still go to the smallest position
COS_TIE_EPS = 1e-12


def find_occurrences(ctx: TokenContext | Sequence[int]) -> list[int]:
    """Positions ``j < t`` holding the same token as the last position ``t``."""
    tokens = ctx.tokens if isinstance(ctx, TokenContext) else tuple(ctx)
    if not tokens:
        raise ValueError("empty context")
    last = tokens[-1]
    return [j + 1 for j in range(len(tokens) - 1) if tokens[j] == last]


def rank_by_attention(
    candidates: Sequence[int],
    store: ArtifactStore,
    heads: Sequence[HeadRef],
    agg: Aggregation | str = Aggregation.MAX,
    query_pos: int | None = None,
) -> int | None:
    """Pick the candidate with the largest aggregated attention from the query row.

    The query row defaults to the last position the store covers (``t-1``).
    Ties go to the smallest position.
    """
    if not candidates:
        return None
    if not heads:
        raise ValueError("no heads to aggregate")
    agg = Aggregation(agg)
    q = len(store) if query_pos is None else query_pos
    if q < 1:
        raise ArtifactMissingError("no attention row available for ranking")
    block = store.attn_block(q)
    rows = np.stack([block[h.layer - 1, h.head - 1] for h in heads])
    return best_by_attention(rows, candidates, agg)


def best_by_attention(rows: np.ndarray, candidates: Sequence[int], agg: Aggregation | str) -> int:
    """Candidate with the top aggregated score over ``rows``; the smallest wins ties."""
    scores = attention_scores(rows, candidates, agg)
    # np.argmax returns the first maximum; candidates are ascending
    return int(candidates[int(np.argmax(scores))])


def attention_scores(
    rows: np.ndarray, candidates: Sequence[int], agg: Aggregation | str
) -> np.ndarray:
    """Aggregate ``rows`` (one per head, 1-based key columns) at each candidate column."""
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(candidates) - 1
    if cols.min() < 0 or cols.max() >= rows.shape[1]:
        raise ValueError(f"candidate outside an attention row of length {rows.shape[1]}")
    picked = rows[:, cols]
    return picked.max(axis=0) if Aggregation(agg) is Aggregation.MAX else picked.sum(axis=0)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in float64, clipped to [-1, 1]; -inf if either vector is zero."""
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return -math.inf
    return min(1.0, max(-1.0, float(np.dot(a, b)) / (na * nb)))


def hidden_scores(
    candidates: Sequence[int],
    store: ArtifactStore,
    layer: int,
    m: int = 1,
    query_pos: int | None = None,
) -> dict[int, float]:
    """Cosine score per candidate ``j`` comparing the states at ``j-1`` and the query.

    Candidates at position 1 have no preceding state and are omitted.
    """
    q = len(store) if query_pos is None else query_pos
    if q < 1:
        raise ArtifactMissingError("no hidden state available for ranking")
    query = store.hidden_mean(layer, q, m)
    return {j: cosine(store.hidden_mean(layer, j - 1, m), query) for j in candidates if j >= 2}


def rank_by_hidden(
    candidates: Sequence[int],
    store: ArtifactStore,
    layer: int,
    theta: float | None = None,
    m: int = 1,
    query_pos: int | None = None,
) -> int | None:
    """Pick the candidate whose preceding hidden state best matches the query state.

    With ``theta`` set, only candidates scoring strictly above it are kept.
    Zero vectors score -inf and never win. Scores within ``COS_TIE_EPS``
    count as equal, both between candidates and against ``theta``.
    """
    scores = hidden_scores(candidates, store, layer, m, query_pos)
    best, best_score = None, -math.inf
    for j, s in scores.items():
        if s == -math.inf or (theta is not None and not s > theta + COS_TIE_EPS):
            continue
        if best is None or s > best_score + COS_TIE_EPS:
            best, best_score = j, s
    return best


def rank_by_ngram(ctx: TokenContext | Sequence[int], ngram_max: int = 3) -> int | None:
    """Classic prompt lookup: longest earlier match of the current suffix.

    Returns the position of the matched occurrence's last token. At equal
    n-gram length the most recent occurrence wins.
    """
    tokens = ctx.tokens if isinstance(ctx, TokenContext) else tuple(ctx)
    t = len(tokens)
    for n in range(min(ngram_max, t - 1), 0, -1):
        suffix = tokens[t - n :]
        for end in range(t - 1, n - 1, -1):
            if tokens[end - n : end] == suffix:
                return end
    return None


def extract_draft(ctx: TokenContext, j_star: int, k: int) -> DraftProposal:
    t = len(ctx)
    if not 1 <= j_star < t:
        raise ValueError(f"source position {j_star} must lie in [1, {t - 1}]")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    tokens = ctx.span(j_star + 1, j_star + k)
    return DraftProposal(j_star, tokens) if tokens else EMPTY_PROPOSAL


def choose_source(ctx: TokenContext, store: ArtifactStore, cfg: DrafterConfig) -> int | None:
    if cfg.mode is Mode.AUTOREGRESSIVE:
        return None
    if cfg.mode is Mode.PLD:
        return rank_by_ngram(ctx, cfg.ngram_max)
    candidates = find_occurrences(ctx)
    if not candidates:
        return None
    q = len(ctx) - 1
    if cfg.mode is Mode.PLD_PLUS_ATTENTION:
        return rank_by_attention(candidates, store, cfg.heads, cfg.aggregation, query_pos=q)
    return rank_by_hidden(candidates, store, cfg.layer, cfg.theta, cfg.avg_prefix_m, query_pos=q)


def propose(
    ctx: TokenContext,
    store: ArtifactStore,
    cfg: DrafterConfig,
    k: int | None = None,
) -> DraftProposal:
    """Draft up to ``k`` tokens (default ``cfg.k``) for the next verification step."""
    k = cfg.k if k is None else k
    if k < 1:
        return EMPTY_PROPOSAL
    j_star = choose_source(ctx, store, cfg)
    if j_star is None:
        return EMPTY_PROPOSAL
    return extract_draft(ctx, j_star, k)
