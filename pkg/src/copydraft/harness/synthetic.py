"""Scripted corpora whose correct copy sources are known by construction.

Each entry comes with a scripted backend that emits the planted
continuation, hidden states that mark the true source, and attention
rows where a few planted heads peak on it while the rest attend to the
previous token. Token 0 is never used, 1 is
the line separator and 2 a header so that position 1 never competes as a
copy source.
"""

from __future__ import annotations

from enum import Enum
from typing import Sequence

import numpy as np

from copydraft.backend.scripted import ScriptBook, ScriptedBackendSpec
from copydraft.core import HeadRef, ModelDims
from copydraft.harness.corpus import CorpusEntry

SCRIPT_DIMS = ModelDims(num_layers=4, num_heads=4, hidden_dim=16, vocab_size=512)
PLANTED_HEADS = (HeadRef(2, 3), HeadRef(4, 1))
NEWLINE = 1
HEADER = 2
FIRST_FREE = 3
PEAK = 0.9


class CorpusKind(str, Enum):
    COPY_HEAVY = "copy"
    ADVERSARIAL_NGRAM = "adversarial"
    RANDOM = "random"


def _distinct(rng: np.random.Generator, n: int, vocab: int, exclude: Sequence[int] = ()) -> list[int]:
    pool = np.setdiff1d(np.arange(FIRST_FREE, vocab), np.asarray(exclude, dtype=int))
    if n > len(pool):
        raise ValueError(f"need {n} distinct tokens, vocabulary offers {len(pool)}")
    return [int(t) for t in rng.choice(pool, size=n, replace=False)]


def _int_vec(rng: np.random.Generator, d: int) -> np.ndarray:
    # small integer vectors are exact in JSON; redraw the rare all-zero one
    while True:
        v = rng.integers(-9, 10, size=d).astype(np.float64)
        if np.any(v):
            return v


def build_script(
    prompt: Sequence[int],
    continuation: Sequence[int],
    sources: dict[int, int],
    rng: np.random.Generator,
    dims: ModelDims = SCRIPT_DIMS,
    heads: Sequence[HeadRef] = PLANTED_HEADS,
) -> ScriptedBackendSpec:
    """Script a backend that emits ``continuation`` after ``prompt``.

    ``sources[t]`` is the true copy source for the step whose context has
    ``t`` tokens. The query state at ``t-1`` is set equal to the state at
    ``sources[t]-1`` and the planted heads peak on ``sources[t]`` there.
    """
    tokens = list(prompt) + list(continuation)
    n0, total = len(prompt), len(tokens)
    sem = {p: _int_vec(rng, dims.hidden_dim) for p in range(1, total + 1)}
    for t in range(max(2, n0), total):
        s = sources.get(t)
        if s is not None and s >= 2:
            sem[t - 1] = sem[s - 1]
    emb = {tok: _int_vec(rng, dims.hidden_dim) for tok in set(tokens)}
    hidden: dict = {(None, p): v for p, v in sem.items()}
    hidden.update({(0, p): emb[tok] for p, tok in enumerate(tokens, start=1)})
    # every other head looks at the previous token, so only planted heads
    # peak on copy sources
    attn = {}
    for q in range(max(2, n0 - 1), total):
        for layer in range(1, dims.num_layers + 1):
            for head in range(1, dims.num_heads + 1):
                attn[(layer, head, q)] = {q - 1: PEAK}
    for t, s in sources.items():
        if t >= 2 and s < t:
            for h in heads:
                attn[(h.layer, h.head, t - 1)] = {s: PEAK}
    return ScriptedBackendSpec(
        dims=dims,
        next_tokens={n0 + i: tok for i, tok in enumerate(continuation)},
        hidden=hidden,
        attn=attn,
        max_seq_len=total + 1,
    )


def _finish(eid, prompt, continuation, sources, rng, dims, entries, book):
    entries.append(CorpusEntry(eid, tuple(prompt), len(continuation)))
    book.entries[eid] = build_script(prompt, continuation, sources, rng, dims)
    book.sources[eid] = dict(sources)


def pure_copy_case(
    rng: np.random.Generator, doc_len: int, max_new: int | None = None
) -> tuple[list[int], list[int], dict[int, int]]:
    """Header, a document of distinct tokens, then its first token as a cue.

    The continuation copies the rest of the document verbatim.
    """
    max_new = doc_len - 1 if max_new is None else max_new
    if not 1 <= max_new <= doc_len - 1:
        raise ValueError("max_new must be in [1, doc_len - 1]")
    doc = _distinct(rng, doc_len, SCRIPT_DIMS.vocab_size)
    prompt = [HEADER] + doc + [doc[0]]
    continuation = doc[1 : 1 + max_new]
    n0 = len(prompt)
    sources = {n0: 2}
    sources.update({n0 + 1 + i: 3 + i for i in range(max_new - 1)})
    return prompt, continuation, sources


def _line_order(rng: np.random.Generator, m: int) -> list[int]:
    # no line may directly follow its prompt neighbour and line m may not open
    while True:
        order = [int(x) + 1 for x in rng.permutation(m)]
        if order[0] != m and all(b != a + 1 for a, b in zip(order, order[1:])):
            return order


def adversarial_case(
    rng: np.random.Generator, n_lines: int | None = None
) -> tuple[list[int], list[int], dict[int, int]]:
    """Lines of distinct tokens separated by NEWLINE, regenerated in a shuffled order.

    At every line boundary the longest suffix match sits at the end of the
    line just copied, so n-gram lookup drafts that line's prompt successor,
    while the planted states point at the separator before the next line
    actually generated.
    """
    m = int(rng.integers(4, 9)) if n_lines is None else n_lines
    if m < 4:
        raise ValueError("need at least 4 lines")
    lengths = [int(x) for x in rng.integers(3, 11, size=m)]
    pool = _distinct(rng, sum(lengths), SCRIPT_DIMS.vocab_size)
    lines, at = [], 0
    for n in lengths:
        lines.append(pool[at : at + n])
        at += n
    prompt = [HEADER, NEWLINE]
    starts, nl = {}, {0: 2}
    for k, line in enumerate(lines, start=1):
        starts[k] = len(prompt) + 1
        prompt += line + [NEWLINE]
        nl[k] = len(prompt)
    order = _line_order(rng, m)
    continuation = []
    for k in order:
        continuation += lines[k - 1] + [NEWLINE]

    sources = {}
    t = len(prompt)
    for k in order:
        sources[t] = nl[k - 1]
        for i in range(lengths[k - 1]):
            t += 1
            sources[t] = starts[k] + i
        t += 1
    return prompt, continuation, sources


def random_case(
    rng: np.random.Generator, prompt_len: int | None = None, max_new: int | None = None
) -> tuple[list[int], list[int], dict[int, int]]:
    """Distinct prompt tokens followed by fresh tokens, so no occurrence ever exists."""
    n = int(rng.integers(20, 60)) if prompt_len is None else prompt_len
    g = int(rng.integers(10, 40)) if max_new is None else max_new
    toks = _distinct(rng, n + g - 1, SCRIPT_DIMS.vocab_size)
    return [HEADER] + toks[: n - 1], toks[n - 1 :], {}


def gen_synthetic_corpus(
    kind: CorpusKind | str, size: int, seed: int = 0
) -> tuple[list[CorpusEntry], ScriptBook]:
    kind = CorpusKind(kind)
    if size < 1:
        raise ValueError("size must be >= 1")
    rng = np.random.default_rng([seed, list(CorpusKind).index(kind)])
    entries: list[CorpusEntry] = []
    book = ScriptBook(SCRIPT_DIMS, {})
    for i in range(size):
        if kind is CorpusKind.COPY_HEAVY:
            case = pure_copy_case(rng, int(rng.integers(60, 161)))
        elif kind is CorpusKind.ADVERSARIAL_NGRAM:
            case = adversarial_case(rng)
        else:
            case = random_case(rng)
        _finish(f"{kind.value}-{i:04d}", *case, rng, SCRIPT_DIMS, entries, book)
    return entries, book


def pure_copy_corpus(size: int, doc_len: int, max_new: int, seed: int = 0) -> tuple[list[CorpusEntry], ScriptBook]:
    """Fixed-length pure-copy entries for exact acceptance arithmetic."""
    rng = np.random.default_rng(seed)
    entries: list[CorpusEntry] = []
    book = ScriptBook(SCRIPT_DIMS, {})
    for i in range(size):
        _finish(f"pure-{i:04d}", *pure_copy_case(rng, doc_len, max_new), rng, SCRIPT_DIMS, entries, book)
    return entries, book


def planted_head_corpus(
    n_prompts: int,
    head: HeadRef,
    dims: ModelDims = ModelDims(8, 8, 16, 64),
    seed: int = 0,
    prompt_len: int = 40,
    alphabet: int = 20,
    gen_len: int = 10,
) -> tuple[list[tuple[int, ...]], ScriptBook]:
    """Calibration prompts where one head attends to the copied span and the rest are random.

    Each continuation copies a random span of its prompt. On every query
    row that emits a generated token, ``head`` puts most of its mass on the
    source of that token and all other heads get random rows.
    """
    head.check(dims)
    rng = np.random.default_rng(seed)
    prompts: list[tuple[int, ...]] = []
    book = ScriptBook(dims, {})
    symbols = np.arange(FIRST_FREE, FIRST_FREE + alphabet)
    for i in range(n_prompts):
        prompt = [HEADER] + [int(x) for x in rng.choice(symbols, size=prompt_len - 1)]
        start = int(rng.integers(2, prompt_len - gen_len + 2))
        continuation = prompt[start - 1 : start - 1 + gen_len]
        n0 = len(prompt)
        blocks = {}
        for g in range(gen_len):
            q = n0 + g
            block = rng.random((dims.num_layers, dims.num_heads, q))
            row = np.full(q, 0.1 / q)
            row[start + g - 1] += 0.9
            block[head.layer - 1, head.head - 1] = row
            blocks[q] = block / block.sum(axis=-1, keepdims=True)
        eid = f"calib-{i:04d}"
        book.entries[eid] = ScriptedBackendSpec(
            dims=dims,
            next_tokens={n0 + g: tok for g, tok in enumerate(continuation)},
            attn_blocks=blocks,
            max_seq_len=n0 + gen_len + 1,
        )
        book.sources[eid] = {n0 + g: start + g for g in range(gen_len)}
        prompts.append(tuple(prompt))
    return prompts, book
