import numpy as np
import pytest

from copydraft.backend import ScriptedBackend, ScriptedBackendSpec, ToyTransformerSpec
from copydraft.core import ArtifactStore, ModelDims

TOY_SPEC = ToyTransformerSpec(layers=4, heads=4, dim=64, vocab=256, seed=0)
SMALL_SPEC = ToyTransformerSpec(layers=2, heads=2, dim=16, vocab=64, seed=7)


def random_store(rng, dims: ModelDims, n: int, hidden=None) -> ArtifactStore:
    """Store covering ``n`` positions with Gaussian states and Dirichlet attention rows."""
    store = ArtifactStore(dims)
    if hidden is None:
        hidden = rng.normal(size=(n, dims.num_layers + 1, dims.hidden_dim))
    attn = [rng.dirichlet(np.ones(p), size=(dims.num_layers, dims.num_heads)) for p in range(1, n + 1)]
    store.append(np.asarray(hidden, dtype=np.float32), [a.astype(np.float32) for a in attn])
    return store


def repetitive_prompt(rng, length: int, vocab: int, alphabet: int = 12) -> list[int]:
    """Random tokens from a small alphabet so that occurrences are common."""
    symbols = rng.choice(vocab, size=alphabet, replace=False)
    return [int(t) for t in rng.choice(symbols, size=length)]


def copy_script(prompt, continuation, dims=ModelDims(2, 2, 4, 64)) -> ScriptedBackend:
    n0 = len(prompt)
    return ScriptedBackend(
        ScriptedBackendSpec(dims, next_tokens={n0 + i: t for i, t in enumerate(continuation)})
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
