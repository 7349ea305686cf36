"""Speculative decoding with drafts retrieved from the context."""

from copydraft.core import (
    Aggregation,
    ArtifactStore,
    DraftProposal,
    DrafterConfig,
    HeadRef,
    Mode,
    ModelDims,
    RunMetrics,
    TokenContext,
)
from copydraft.engine import GREEDY, SamplerConfig, decode, run_baseline

__version__ = "0.1.0"

__all__ = [
    "Aggregation",
    "ArtifactStore",
    "DraftProposal",
    "DrafterConfig",
    "GREEDY",
    "HeadRef",
    "Mode",
    "ModelDims",
    "RunMetrics",
    "SamplerConfig",
    "TokenContext",
    "decode",
    "run_baseline",
]
