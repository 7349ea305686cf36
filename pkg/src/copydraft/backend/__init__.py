from copydraft.backend.base import Backend, ForwardResult, forward_extend, truncate_cache
from copydraft.backend.scripted import ScriptBook, ScriptedBackend, ScriptedBackendSpec
from copydraft.backend.toy import ToyTransformer, ToyTransformerSpec, toy_transformer_build

__all__ = [
    "Backend",
    "ForwardResult",
    "ScriptBook",
    "ScriptedBackend",
    "ScriptedBackendSpec",
    "ToyTransformer",
    "ToyTransformerSpec",
    "forward_extend",
    "toy_transformer_build",
    "truncate_cache",
]
