"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import json
import time

import numpy as np
import pytest

import oracles
from conftest import TOY_SPEC, repetitive_prompt
from copydraft.backend import ScriptedBackend, ScriptedBackendSpec, ToyTransformer
from copydraft.core import ArtifactStore, DrafterConfig, HeadRef, Mode, ModelDims, all_heads
from copydraft.drafter import (
    best_by_attention,
    find_occurrences,
    rank_by_attention,
    rank_by_hidden,
    rank_by_ngram,
)
from copydraft.engine import SamplerConfig, decode, forward_pass_ratio, run_baseline
from copydraft.harness.bench import BenchmarkReport, ScriptFactory, compute_aggregates, run_benchmark, sweep
from copydraft.harness.synthetic import (
    PLANTED_HEADS,
    gen_synthetic_corpus,
    planted_head_corpus,
    pure_copy_corpus,
)
from copydraft.headfinder import identify_heads, longest_copy_source, select_top_heads

N_PROMPTS = 100
GEN_LEN = 32


@pytest.fixture
def verdict(capsys):
    def emit(criterion: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
        assert ok, detail

    return emit


@pytest.fixture(scope="module")
def toy_prompts():
    rng = np.random.default_rng(2024)
    return [repetitive_prompt(rng, int(rng.integers(16, 40)), TOY_SPEC.vocab) for _ in range(N_PROMPTS)]


def _toy_modes():
    return [
        DrafterConfig(mode=Mode.PLD),
        DrafterConfig(mode=Mode.PLD_PLUS_ATTENTION, heads=all_heads(TOY_SPEC.dims)),
        DrafterConfig(mode=Mode.PLD_PLUS_HIDDEN, layer=2),
    ]


def _exactness(prompts, scfg):
    start = time.perf_counter()
    mismatches, drafted = 0, 0
    for prompt in prompts:
        ref, _ = run_baseline(ToyTransformer(TOY_SPEC), prompt, scfg, max_new=GEN_LEN)
        for cfg in _toy_modes():
            ctx, m, _ = decode(ToyTransformer(TOY_SPEC), prompt, cfg, scfg, max_new=GEN_LEN)
            mismatches += ctx.tokens != ref.tokens
            drafted += m.accepted_tokens
    return mismatches, drafted, time.perf_counter() - start


def test_c1_greedy_exactness(toy_prompts, verdict):
    bad, accepted, secs = _exactness(toy_prompts, SamplerConfig())
    verdict(
        "C1 greedy exactness",
        bad == 0 and secs <= 120 and accepted > 0,
        f"{bad} mismatching runs over {len(toy_prompts)} prompts x 3 modes, "
        f"{accepted} accepted draft tokens, {secs:.1f}s",
    )


def test_c2_sampling_exactness(toy_prompts, verdict):
    bad, accepted, secs = _exactness(toy_prompts, SamplerConfig(temperature=1.0, seed=17))
    verdict(
        "C2 sampling exactness",
        bad == 0 and accepted > 0,
        f"{bad} mismatching runs over {len(toy_prompts)} prompts x 3 modes at T=1, {accepted} accepted draft tokens",
    )


def _scripted_instance(rng, dims):
    """Random tokens plus a scripted backend whose artifacts have frequent exact ties."""
    t = int(rng.integers(3, 20))
    tokens = [int(x) for x in rng.integers(0, 4, size=t)]
    n = t - 1
    hidden = {}
    for p in range(1, n + 1):
        for layer in range(dims.num_layers + 1):
            hidden[(layer, p)] = rng.integers(-2, 3, size=dims.hidden_dim).astype(float)
    blocks = {}
    for p in range(1, n + 1):
        counts = rng.integers(0, 4, size=(dims.num_layers, dims.num_heads, p)).astype(float)
        counts[..., 0] += counts.sum(-1) == 0
        blocks[p] = counts / counts.sum(-1, keepdims=True)
    be = ScriptedBackend(ScriptedBackendSpec(dims, hidden=hidden, attn_blocks=blocks))
    store = ArtifactStore(dims)
    res = be.forward_extend(tokens[:-1])
    store.append(res.hidden, res.attn)
    return tokens, store


def test_c3_ranking_oracles(verdict):
    rng = np.random.default_rng(3)
    dims = ModelDims(2, 3, 4, 8)
    heads = [HeadRef(1, 1), HeadRef(1, 3), HeadRef(2, 2)]
    checks = disagreements = 0
    for _ in range(1000):
        tokens, store = _scripted_instance(rng, dims)
        t = len(tokens)
        for n in (1, 2, 3):
            checks += 1
            disagreements += rank_by_ngram(tokens, n) != oracles.ngram_choice(tokens, n)
        gen = [int(x) for x in rng.integers(0, 4, size=int(rng.integers(1, 8)))]
        i = int(rng.integers(1, len(gen) + 1))
        checks += 1
        disagreements += longest_copy_source(tokens, gen, i) != oracles.copy_source(tokens, gen, i)
        cand = find_occurrences(tokens)
        if not cand:
            continue
        for agg in ("max", "sum"):
            checks += 1
            got = rank_by_attention(cand, store, heads, agg, query_pos=t - 1)
            disagreements += got != oracles.attention_choice(store, cand, heads, agg, t - 1)
        for theta in (None, -0.5, 0.0, 0.5, 1.0):
            for m in (1, 2, 3):
                for layer in (0, 2):
                    checks += 1
                    got = rank_by_hidden(cand, store, layer, theta, m, query_pos=t - 1)
                    disagreements += got != oracles.hidden_choice(store, cand, layer, theta, m, t - 1)
    verdict("C3 ranking oracles", disagreements == 0, f"{disagreements} disagreements in {checks} comparisons")


def test_c4_invariance(verdict):
    rng = np.random.default_rng(4)
    attn_changes = hidden_changes = 0
    for trial in range(1000):
        p, n_heads = int(rng.integers(4, 30)), int(rng.integers(1, 5))
        rows = rng.dirichlet(np.ones(p), size=n_heads)
        cand = sorted(rng.choice(np.arange(1, p + 1), size=int(rng.integers(1, min(p, 8) + 1)), replace=False))
        if len(cand) > 1 and trial % 3 == 0:
            rows[:, cand[-1] - 1] = rows[:, cand[0] - 1]  # planted exact tie
        c = float(np.exp(rng.uniform(-5, 5)))
        for agg in ("max", "sum"):
            attn_changes += best_by_attention(rows, cand, agg) != best_by_attention(rows * c, cand, agg)

    dims = ModelDims(1, 1, 8, 16)
    for trial in range(1000):
        t = int(rng.integers(4, 25))
        tokens = [int(x) for x in rng.integers(0, 3, size=t)]
        cand = find_occurrences(tokens)
        hid = rng.normal(size=(t - 1, 2, 8))
        if len(cand) > 1 and cand[0] >= 2 and trial % 3 == 0:
            hid[cand[-1] - 2] = hid[cand[0] - 2]  # planted exact tie
            scales = 2.0 ** rng.integers(-8, 9, size=t - 1)  # exact in float32, keeps the tie exact
        else:
            scales = np.exp(rng.uniform(-4, 4, size=t - 1))
        plain, scaled = ArtifactStore(dims), ArtifactStore(dims)
        attn = [np.full((1, 1, p), 1.0 / p) for p in range(1, t)]
        plain.append(hid, attn)
        scaled.append(hid * scales[:, None, None], attn)
        for layer in (0, 1):
            a = rank_by_hidden(cand, plain, layer, query_pos=t - 1)
            b = rank_by_hidden(cand, scaled, layer, query_pos=t - 1)
            hidden_changes += a != b
    verdict(
        "C4 invariance",
        attn_changes == 0 and hidden_changes == 0,
        f"j* changed in {attn_changes} attention and {hidden_changes} hidden-state comparisons "
        "(1000 trials each)",
    )


def test_c5_acceptance_arithmetic(verdict):
    entries, book = pure_copy_corpus(5, doc_len=121, max_new=110, seed=5)
    cfgs = [
        DrafterConfig(mode=Mode.PLD_PLUS_HIDDEN, k=10, layer=2),
        DrafterConfig(mode=Mode.PLD_PLUS_ATTENTION, k=10, heads=PLANTED_HEADS),
    ]
    commits, ratios, avgs = set(), set(), set()
    for e in entries:
        _, base = run_baseline(book.backend_for(e.id), e.prompt, max_new=e.max_new_tokens)
        for cfg in cfgs:
            _, m, steps = decode(book.backend_for(e.id), e.prompt, cfg, max_new=e.max_new_tokens)
            commits |= {len(s.committed) for s in steps}
            avgs.add(m.avg_accept_len)
            ratios.add(forward_pass_ratio(m, base))
    report = run_benchmark(entries, cfgs[:1], ScriptFactory(book), repeats=1)
    report_ratio = report.aggregates["pld+h"]["forward_pass_ratio_mean"]
    verdict(
        "C5 acceptance arithmetic",
        commits == {11} and avgs == {11.0} and ratios == {11.0} and report_ratio == 11.0,
        f"tokens per step {sorted(commits)}, avg_accept_len {sorted(avgs)}, forward-pass ratio {sorted(ratios)}",
    )


def test_c6_adversarial_separation(verdict):
    entries, book = gen_synthetic_corpus("adversarial", 60, seed=6)
    wins = hits = draft_steps = 0
    for e in entries:
        truth = book.sources[e.id]
        args = (e.prompt,)
        _, pld, _ = decode(book.backend_for(e.id), *args, DrafterConfig(mode=Mode.PLD, k=10), max_new=e.max_new_tokens)
        hcfg = DrafterConfig(mode=Mode.PLD_PLUS_HIDDEN, k=10, layer=2)
        _, hm, steps = decode(book.backend_for(e.id), *args, hcfg, max_new=e.max_new_tokens)
        wins += hm.avg_accept_len > pld.avg_accept_len
        for s in steps:
            if s.source_pos is not None:
                draft_steps += 1
                hits += s.source_pos == truth.get(s.context_len)
    share = hits / draft_steps
    verdict(
        "C6 adversarial separation",
        wins == len(entries) and share >= 0.95,
        f"PLD+h beats PLD on {wins}/{len(entries)} entries; true source chosen on "
        f"{hits}/{draft_steps} draft steps ({share:.1%})",
    )


def test_c7_head_recovery(verdict):
    dims = ModelDims(8, 8, 16, 64)
    rng = np.random.default_rng(7)
    first = 0
    for trial in range(100):
        head = HeadRef(int(rng.integers(1, 9)), int(rng.integers(1, 9)))
        prompts, book = planted_head_corpus(20, head, dims, seed=trial)
        lookup = {p: book.backend_for(f"calib-{i:04d}") for i, p in enumerate(prompts)}
        table = identify_heads(lambda p: lookup[tuple(p)], prompts, gen_len=10)
        first += select_top_heads(table, 1) == [head]
    verdict("C7 head-finder recovery", first >= 95, f"planted head ranked first in {first}/100 constructions")


def test_c8_cache_rollback(verdict):
    rng = np.random.default_rng(8)
    worst, checked = 0.0, 0
    for _ in range(500):
        be = ToyTransformer(TOY_SPEC)
        seq: list[int] = []
        for _ in range(int(rng.integers(2, 7))):
            if seq and rng.random() < 0.4:
                keep = int(rng.integers(0, len(seq) + 1))
                be.truncate_cache(keep)
                del seq[keep:]
            chunk = [int(x) for x in rng.integers(0, TOY_SPEC.vocab, size=int(rng.integers(1, 9)))]
            got = be.forward_extend(chunk).logits
            seq += chunk
            clean = ToyTransformer(TOY_SPEC).forward_extend(seq).logits[-len(chunk):]
            worst = max(worst, float(np.max(np.abs(got - clean))))
            checked += len(chunk)
    verdict("C8 cache rollback", worst <= 1e-5, f"max |logit diff| {worst:.2e} over {checked} positions")


SWEEPS = {
    "k": list(range(10, 101, 10)),
    "layer": list(range(0, 5)),
    "theta": [None, -0.75, -0.5, 0.0, 0.5, 0.75, 1.0],
    "m": [1, 2, 3, 4, 5, 6],
}


def test_c9_sweep_machinery(tmp_path, verdict):
    base = DrafterConfig(mode=Mode.PLD_PLUS_HIDDEN, k=10, layer=2)
    problems = []
    theta_one = []
    for kind in ("copy", "adversarial", "random"):
        entries, book = gen_synthetic_corpus(kind, 8, seed=9)
        for param, values in SWEEPS.items():
            report = sweep(entries, base, param, values, ScriptFactory(book))
            path = tmp_path / f"{kind}-{param}.json"
            report.save(path)
            obj = json.loads(path.read_text())
            loaded = BenchmarkReport.from_json(obj)
            if compute_aggregates(obj["entries"], list(obj["aggregates"])) != obj["aggregates"]:
                problems.append(f"{kind}/{param}: aggregates differ from recomputation")
            if len(loaded.labels) != len(values) + 1:
                problems.append(f"{kind}/{param}: {len(loaded.labels)} variants")
            errs = sum(a["n_errors"] for a in loaded.aggregates.values())
            if errs:
                problems.append(f"{kind}/{param}: {errs} error rows")
            if param == "theta":
                theta_one.append(loaded.aggregates["theta=1.0"]["avg_accept_len"])
    ok = not problems and all(v == 1.0 for v in theta_one)
    verdict(
        "C9 sweep machinery",
        ok,
        f"{3 * len(SWEEPS)} sweeps, problems={problems or 'none'}, theta=1.0 avg_accept_len={theta_one}",
    )
