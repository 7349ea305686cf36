"""Draft-and-verify decode loop.

State between steps: the context holds ``t`` tokens and the backend cache
(and artifact store) hold positions ``1..t-1``. Each step feeds the last
committed token plus the draft, so one pass yields a row for every draft
position and one extra row for the bonus token. Rejected positions are
truncated away, which restores the invariant.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from copydraft.backend.base import Backend
from copydraft.core import (
    EMPTY_PROPOSAL,
    ArtifactStore,
    DraftProposal,
    DrafterConfig,
    Mode,
    RunMetrics,
    TokenContext,
)
from copydraft.drafter import propose

logger = logging.getLogger(__name__)

PROB_SUM_TOL = 1e-4


@dataclass(frozen=True)
class SamplerConfig:
    """Token selection. ``temperature == 0`` means greedy argmax.

    Sampling randomness is keyed on ``(seed, absolute position)`` so the
    token drawn for a position does not depend on how many passes came
    before it.
    """

    temperature: float = 0.0
    seed: int = 0
    rng_discipline: str = "per_position"

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.rng_discipline != "per_position":
            raise ValueError(f"unsupported rng discipline {self.rng_discipline!r}")

    @property
    def greedy(self) -> bool:
        return self.temperature == 0

    def to_json(self) -> dict:
        return {"temperature": self.temperature, "seed": self.seed, "rng_discipline": self.rng_discipline}


GREEDY = SamplerConfig()


@dataclass(frozen=True)
class StepOutcome:
    accepted: int
    committed: tuple[int, ...]
    source_pos: int | None = None
    context_len: int = 0
    drafted: int = 0


class Decoded(NamedTuple):
    context: TokenContext
    metrics: RunMetrics
    steps: list[StepOutcome]


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=-1, keepdims=True)


def sample_token(probs: np.ndarray, seed: int, position: int) -> int:
    """Inverse-CDF draw from ``probs`` using the uniform keyed on ``(seed, position)``."""
    u = np.random.default_rng([seed, position]).random()
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    if idx >= len(probs):
        idx = int(np.flatnonzero(probs > 0)[-1])
    return idx


def verify_greedy(draft: DraftProposal, logits_rows: np.ndarray) -> StepOutcome:
    """Accept drafts while they equal the row argmax; commit the first disagreement.

    ``logits_rows`` has one row per draft token plus the row for the
    position before the first draft token.
    """
    logits_rows = np.asarray(logits_rows)
    if logits_rows.shape[0] != len(draft) + 1:
        raise ValueError(f"{logits_rows.shape[0]} rows for a draft of {len(draft)} tokens")
    choices = [int(i) for i in np.argmax(logits_rows, axis=-1)]
    return _walk(draft, choices)


def verify_sampling(
    draft: DraftProposal,
    prob_rows: np.ndarray,
    sampler: SamplerConfig,
    positions: Sequence[int],
) -> StepOutcome:
    """Sample every row with position-keyed randomness; accept while samples equal drafts.

    Because each committed token is the keyed sample for its position, the
    output matches plain sampling token for token.
    """
    prob_rows = np.asarray(prob_rows, dtype=np.float64)
    if prob_rows.shape[0] != len(draft) + 1 or len(positions) != prob_rows.shape[0]:
        raise ValueError("need one probability row and one position per draft token plus one")
    if sampler.greedy:
        raise ValueError("verify_sampling needs temperature > 0")
    sums = prob_rows.sum(axis=-1)
    if np.any(prob_rows < 0) or np.any(np.abs(sums - 1.0) > PROB_SUM_TOL):
        raise ValueError("probability rows are not normalized")
    choices = []
    for i, pos in enumerate(positions):
        tok = sample_token(prob_rows[i], sampler.seed, pos)
        choices.append(tok)
        if i < len(draft) and tok != draft.tokens[i]:
            break
    return _walk(draft, choices)


def _walk(draft: DraftProposal, choices: Sequence[int]) -> StepOutcome:
    accepted = 0
    while accepted < len(draft) and choices[accepted] == draft.tokens[accepted]:
        accepted += 1
    committed = tuple(draft.tokens[:accepted]) + (choices[accepted],)
    return StepOutcome(accepted, committed, draft.source_pos, drafted=len(draft))


def decode(
    backend: Backend,
    prompt: TokenContext | Sequence[int],
    dcfg: DrafterConfig,
    scfg: SamplerConfig = GREEDY,
    max_new: int = 64,
    eos: int | None = None,
    store: ArtifactStore | None = None,
) -> Decoded:
    """Generate up to ``max_new`` tokens with draft-and-verify steps.

    The prefill pass covers the prompt minus its last token; that token is
    fed with the first step's draft, whose first row yields the first
    generated token. ``store`` may be passed in to keep the artifacts.
    """
    ctx = prompt.copy() if isinstance(prompt, TokenContext) else TokenContext(prompt)
    if len(ctx) == 0:
        raise ValueError("empty prompt")
    if backend.cache_len != 0:
        raise ValueError(f"backend cache not empty ({backend.cache_len} positions)")
    if max_new < 0:
        raise ValueError("max_new must be >= 0")
    dcfg.check(backend.dims)
    store = ArtifactStore(backend.dims) if store is None else store
    if len(store):
        raise ValueError("artifact store not empty")

    outcomes: list[StepOutcome] = []
    passes = drafted = accepted = 0
    start = time.perf_counter()
    if max_new and len(ctx) > 1:
        res = backend.forward_extend(ctx.tokens[:-1])
        store.append(res.hidden, res.attn)
        passes += 1

    generated = 0
    done = max_new == 0
    while not done:
        budget = max_new - generated
        t = len(ctx)
        if dcfg.mode is Mode.AUTOREGRESSIVE or budget == 1:
            draft = EMPTY_PROPOSAL
        else:
            draft = propose(ctx, store, dcfg, k=min(dcfg.k, budget - 1))
        res = backend.forward_extend((ctx.last,) + draft.tokens)
        store.append(res.hidden, res.attn)
        passes += 1

        if scfg.greedy:
            out = verify_greedy(draft, res.logits)
        else:
            probs = softmax(res.logits, scfg.temperature)
            out = verify_sampling(draft, probs, scfg, range(t + 1, t + 2 + len(draft)))
        committed = out.committed
        if eos is not None and eos in committed:
            committed = committed[: committed.index(eos) + 1]
            done = True
        out = StepOutcome(min(out.accepted, len(committed) - 1), committed, out.source_pos, t, len(draft))
        outcomes.append(out)
        drafted += len(draft)
        accepted += out.accepted

        ctx.extend(committed)
        generated += len(committed)
        backend.truncate_cache(len(ctx) - 1)
        store.truncate(len(ctx) - 1)
        done = done or generated >= max_new

    metrics = RunMetrics(
        committed_tokens=generated,
        steps=len(outcomes),
        forward_passes=passes,
        wall_seconds=time.perf_counter() - start,
        drafted_tokens=drafted,
        accepted_tokens=accepted,
    )
    logger.debug("decode %s: %d tokens in %d steps", dcfg.mode.value, generated, len(outcomes))
    return Decoded(ctx, metrics, outcomes)


AR_CONFIG = DrafterConfig(mode=Mode.AUTOREGRESSIVE)


def run_baseline(
    backend: Backend,
    prompt: TokenContext | Sequence[int],
    scfg: SamplerConfig = GREEDY,
    max_new: int = 64,
    eos: int | None = None,
) -> tuple[TokenContext, RunMetrics]:
    ctx, metrics, _ = decode(backend, prompt, AR_CONFIG, scfg, max_new, eos)
    return ctx, metrics


def speedup(run: RunMetrics, baseline: RunMetrics) -> float:
    """Wall-clock throughput ratio against the autoregressive run."""
    return run.throughput / baseline.throughput


def forward_pass_ratio(run: RunMetrics, baseline: RunMetrics) -> float:
    """Baseline decode passes over this run's decode passes (prefill excluded from both)."""
    return baseline.steps / run.steps if run.steps else float("nan")
