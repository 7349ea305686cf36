import numpy as np
import pytest

from conftest import random_store
from copydraft.core import (
    ArtifactMissingError,
    DraftProposal,
    DrafterConfig,
    HeadRef,
    Mode,
    ModelDims,
    RunMetrics,
    TokenContext,
    all_heads,
    truncate_artifacts,
)

DIMS = ModelDims(2, 3, 4, 32)


def test_truncate_identity(rng):
    store = random_store(rng, DIMS, 10)
    before = random_store(np.random.default_rng(1234), DIMS, 10)
    truncate_artifacts(store, 10)
    assert len(store) == 10
    assert store == before


def test_truncate_drops_tail(rng):
    store = random_store(rng, DIMS, 10)
    truncate_artifacts(store, 7)
    assert len(store) == 7
    store.hidden(0, 7)
    store.attn_block(7)
    for p in (8, 9, 10):
        with pytest.raises(ArtifactMissingError):
            store.hidden(1, p)
        with pytest.raises(ArtifactMissingError):
            store.attn_block(p)


def test_truncate_past_end_raises(rng):
    store = random_store(rng, DIMS, 5)
    with pytest.raises(IndexError):
        truncate_artifacts(store, 9)


def test_truncate_then_reappend_is_identical(rng):
    n = 12
    hidden = rng.normal(size=(n, DIMS.num_layers + 1, DIMS.hidden_dim)).astype(np.float32)
    attn = [rng.dirichlet(np.ones(p), size=(2, 3)).astype(np.float32) for p in range(1, n + 1)]
    full = random_store(rng, DIMS, 0)
    full.append(hidden, attn)
    rolled = random_store(rng, DIMS, 0)
    rolled.append(hidden, attn)
    rolled.truncate(5)
    rolled.append(hidden[5:], attn[5:])
    assert rolled == full


def test_store_rejects_unnormalized_rows(rng):
    store = random_store(rng, DIMS, 0)
    bad = np.full((2, 3, 1), 0.5, dtype=np.float32)
    with pytest.raises(ValueError, match="normalized"):
        store.append(np.zeros((1, 3, 4)), [bad])


def test_store_rejects_wrong_row_length(rng):
    store = random_store(rng, DIMS, 0)
    with pytest.raises(ValueError, match="shape"):
        store.append(np.zeros((1, 3, 4)), [np.full((2, 3, 2), 0.5)])


def test_hidden_mean_window(rng):
    store = random_store(rng, DIMS, 6)
    expect = np.mean([store.hidden(1, p) for p in (3, 4, 5)], axis=0)
    assert np.allclose(store.hidden_mean(1, 5, 3), expect)
    # the window is clipped at position 1
    assert np.allclose(store.hidden_mean(1, 2, 5), np.mean([store.hidden(1, 1), store.hidden(1, 2)], axis=0))


def test_token_context_positions_are_one_based():
    ctx = TokenContext([5, 7, 9], prompt_len=2)
    assert ctx.token(1) == 5 and ctx.token(3) == 9
    assert ctx.generated == (9,)
    assert ctx.span(2, 10) == [7, 9]
    ctx.extend([1, 2])
    ctx.truncate(4)
    assert ctx.tokens == (5, 7, 9, 1)
    with pytest.raises(IndexError):
        ctx.truncate(1)


def test_model_dims_positive():
    with pytest.raises(ValueError):
        ModelDims(0, 1, 1, 1)


def test_head_ref_bounds():
    HeadRef(2, 3).check(DIMS)
    with pytest.raises(ValueError):
        HeadRef(3, 1).check(DIMS)
    assert len(all_heads(DIMS)) == 6


def test_drafter_config_validation():
    with pytest.raises(ValueError):
        DrafterConfig(mode=Mode.PLD_PLUS_ATTENTION)
    with pytest.raises(ValueError):
        DrafterConfig(k=0)
    with pytest.raises(ValueError):
        DrafterConfig(theta=1.5)
    with pytest.raises(ValueError):
        DrafterConfig(layer=9).check(DIMS)
    cfg = DrafterConfig(mode="pld", aggregation="sum")
    assert cfg.mode is Mode.PLD


def test_draft_proposal_invariant():
    with pytest.raises(ValueError):
        DraftProposal(None, (1, 2))
    with pytest.raises(ValueError):
        DraftProposal(3, ())


def test_run_metrics_derived_fields():
    m = RunMetrics(committed_tokens=22, steps=2, forward_passes=3, wall_seconds=2.0)
    assert m.avg_accept_len == 11.0
    assert m.throughput == 11.0
