"""Locate induction-style heads from calibration generations.

A head is credited for a copy event when, on the row of the query that
produced a generated token, its attention peaks at the prompt position the
token was most plausibly copied from. A peak shared by ``n`` columns earns
``1/n`` of a hit, kept as an exact fraction so totals do not depend on
summation order.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from copydraft.backend.base import Backend
from copydraft.core import ArtifactStore, HeadRef, ModelDims, TokenContext
from copydraft.engine import AR_CONFIG, GREEDY, SamplerConfig, decode

BackendSource = Union[Backend, Callable[[tuple[int, ...]], Backend]]


@dataclass
class HeadScoreTable:
    hits: Counter = field(default_factory=Counter)
    total_events: int = 0

    def __add__(self, other: HeadScoreTable) -> HeadScoreTable:
        return HeadScoreTable(self.hits + other.hits, self.total_events + other.total_events)

    def __len__(self) -> int:
        return len(self.hits)

    def ranked(self) -> list[tuple[HeadRef, int]]:
        return sorted(self.hits.items(), key=lambda kv: (-kv[1], kv[0]))


def longest_copy_source(
    ctx: TokenContext | Sequence[int], generated: Sequence[int], t: int
) -> int | None:
    """Occurrence of ``generated[t]`` in ``ctx`` whose continuation matches the generation longest.

    ``t`` is 1-based. Ties go to the smallest position.
    """
    src = ctx.tokens if isinstance(ctx, TokenContext) else tuple(ctx)
    gen = tuple(generated)
    target = gen[t - 1]
    best, best_len = None, -1
    for r in range(1, len(src) + 1):
        if src[r - 1] != target:
            continue
        n = 0
        while r + n < len(src) and t + n < len(gen) and src[r + n] == gen[t + n]:
            n += 1
        if n > best_len:
            best, best_len = r, n
    return best


def score_generation(
    prompt: Sequence[int], generated: Sequence[int], store: ArtifactStore
) -> HeadScoreTable:
    """Credit heads for every generated token that also appears in the prompt."""
    prompt = tuple(prompt)
    n0 = len(prompt)
    present = set(prompt)
    table = HeadScoreTable()
    for i, tok in enumerate(generated, start=1):
        if tok not in present:
            continue
        r_star = longest_copy_source(prompt, generated, i)
        # the row that produced the token at position n0+i
        block = store.attn_block(n0 + i - 1)
        peak = block.max(axis=-1, keepdims=True)
        at_peak = block == peak
        table.total_events += 1
        for li, gi in np.argwhere(at_peak[:, :, r_star - 1]):
            share = int(at_peak[li, gi].sum())
            table.hits[HeadRef(int(li) + 1, int(gi) + 1)] += Fraction(1, share)
    return table


def identify_heads(
    backend: BackendSource,
    calib: Iterable[Sequence[int]],
    gen_len: int,
    scfg: SamplerConfig = GREEDY,
    eos: int | None = None,
) -> HeadScoreTable:
    """Decode each calibration prompt autoregressively and accumulate head hits.

    ``backend`` is either one backend (reset between prompts) or a factory
    called with each prompt.
    """
    calib = [tuple(p) for p in calib]
    if not calib:
        raise ValueError("calibration corpus is empty")
    total = HeadScoreTable()
    for prompt in calib:
        be = backend(prompt) if callable(backend) and not isinstance(backend, Backend) else backend
        be.reset()
        store = ArtifactStore(be.dims)
        ctx, _, _ = decode(be, prompt, AR_CONFIG, scfg, gen_len, eos, store=store)
        total = total + score_generation(prompt, ctx.generated, store)
    return total


def select_top_heads(table: HeadScoreTable, k: int) -> list[HeadRef]:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return [h for h, _ in table.ranked()[:k]]


def write_head_file(path: str | Path, table: HeadScoreTable, top: int | None = None) -> None:
    """Write the ranked heads as a JSON array plus a ``.meta.json`` sidecar."""
    ranked = table.ranked()[:top] if top else table.ranked()
    path = Path(path)
    rows = [{"layer": h.layer, "head": h.head, "score": _number(s)} for h, s in ranked]
    path.write_text(json.dumps(rows, indent=1))
    meta = path.with_name(path.stem + ".meta.json")
    meta.write_text(json.dumps({"total_events": table.total_events, "num_heads": len(table)}))


def _number(x: Fraction | int) -> int | float:
    x = Fraction(x)
    return x.numerator if x.denominator == 1 else float(x)


def load_head_file(path: str | Path, dims: ModelDims | None = None) -> list[HeadRef]:
    obj = json.loads(Path(path).read_text())
    if isinstance(obj, dict):
        obj = obj["heads"]
    if not isinstance(obj, list):
        raise ValueError(f"{path}: expected a JSON array of heads")
    heads = []
    for item in sorted(obj, key=lambda it: -float(it.get("score", 0.0))):
        h = HeadRef(int(item["layer"]), int(item["head"]))
        if dims is not None:
            h.check(dims)
        heads.append(h)
    return heads
