"""Oracle backend that replays scripted logits and artifacts by position.

Inputs are ignored apart from validation: whatever tokens are fed, the row
emitted at absolute position ``p`` is the scripted one. This makes exact
expectations about rankings and acceptance lengths trivial to construct.

JSON layout (positions, layers and heads are 1-based; layer 0 is the
embedding output)::

    {"dims": {"layers": L, "heads": G, "dim": d, "vocab": V},
     "next_tokens": {"p": tok},            # point-mass row at p
     "logits": {"p": [V floats]},          # dense row at p (wins over next_tokens)
     "hidden": {"l:p": [d floats]},        # l may be "*" for every block layer 1..L
     "attn": {"l:g:p": [p floats] | {"j": w, ...}},
     "attn_blocks": {"p": [[[p floats] x G] x L]}}  # whole query row, wins over attn

A sparse attention row puts weight ``w`` on column ``j`` and spreads the
remaining mass uniformly over all ``p`` columns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from copydraft.backend.base import Backend, ForwardResult
from copydraft.core import ModelDims, check_rows

# exp(-1e9) underflows to exactly 0, so scripted point masses are exact
MASKED_LOGIT = -1e9

AttnScript = Union[np.ndarray, Mapping[int, float]]


@dataclass
class ScriptedBackendSpec:
    dims: ModelDims
    next_tokens: dict[int, int] = field(default_factory=dict)
    logits: dict[int, np.ndarray] = field(default_factory=dict)
    hidden: dict[tuple[int | None, int], np.ndarray] = field(default_factory=dict)
    attn: dict[tuple[int, int, int], AttnScript] = field(default_factory=dict)
    attn_blocks: dict[int, np.ndarray] = field(default_factory=dict)
    max_seq_len: int = 2048

    def __post_init__(self) -> None:
        d = self.dims
        for p, tok in self.next_tokens.items():
            if not 0 <= tok < d.vocab_size:
                raise ValueError(f"next token {tok} at position {p} out of vocab")
        self.logits = {int(p): np.asarray(r, dtype=np.float64) for p, r in self.logits.items()}
        for p, row in self.logits.items():
            if row.shape != (d.vocab_size,):
                raise ValueError(f"logits row at position {p} has shape {row.shape}")
        self.hidden = {k: np.asarray(v, dtype=np.float64) for k, v in self.hidden.items()}
        for (layer, p), vec in self.hidden.items():
            if vec.shape != (d.hidden_dim,):
                raise ValueError(f"hidden vector ({layer}, {p}) has shape {vec.shape}")
            if layer is not None and not 0 <= layer <= d.num_layers:
                raise ValueError(f"hidden layer {layer} out of range")
        for key in list(self.attn):
            layer, head, p = key
            if not (1 <= layer <= d.num_layers and 1 <= head <= d.num_heads and p >= 1):
                raise ValueError(f"attention key {key} out of range")
            self.attn[key] = _materialize_row(self.attn[key], p)
        self._attn_positions = {p for _, _, p in self.attn}
        self.attn_blocks = {int(p): np.asarray(b, dtype=np.float64) for p, b in self.attn_blocks.items()}
        for p, block in self.attn_blocks.items():
            if block.shape != (d.num_layers, d.num_heads, p):
                raise ValueError(f"attention block for query {p} has shape {block.shape}")
            check_rows(block)

    def logits_row(self, pos: int) -> np.ndarray:
        if pos in self.logits:
            return self.logits[pos].copy()
        row = np.zeros(self.dims.vocab_size)
        if pos in self.next_tokens:
            row[:] = MASKED_LOGIT
            row[self.next_tokens[pos]] = 0.0
        return row

    def hidden_vec(self, layer: int, pos: int) -> np.ndarray:
        vec = self.hidden.get((layer, pos))
        if vec is None and layer >= 1:
            vec = self.hidden.get((None, pos))
        return np.zeros(self.dims.hidden_dim) if vec is None else vec

    def attn_row(self, layer: int, head: int, pos: int) -> np.ndarray:
        if pos in self.attn_blocks:
            return self.attn_blocks[pos][layer - 1, head - 1]
        row = self.attn.get((layer, head, pos))
        return np.full(pos, 1.0 / pos) if row is None else row

    def attn_block(self, pos: int) -> np.ndarray:
        if pos in self.attn_blocks:
            return self.attn_blocks[pos]
        d = self.dims
        if pos not in self._attn_positions:
            return np.full((d.num_layers, d.num_heads, pos), 1.0 / pos)
        return np.array(
            [[self.attn_row(layer, head, pos) for head in range(1, d.num_heads + 1)]
             for layer in range(1, d.num_layers + 1)]
        )

    def to_json(self) -> dict:
        return {
            "dims": self.dims.to_json(),
            "max_seq_len": self.max_seq_len,
            **self._script_json(),
        }

    def _script_json(self) -> dict:
        hidden = {
            f"{'*' if layer is None else layer}:{p}": vec.tolist()
            for (layer, p), vec in self.hidden.items()
        }
        attn = {}
        for (layer, head, p), row in self.attn.items():
            attn[f"{layer}:{head}:{p}"] = _compact_row(row)
        return {
            "next_tokens": {str(p): t for p, t in self.next_tokens.items()},
            "logits": {str(p): r.tolist() for p, r in self.logits.items()},
            "hidden": hidden,
            "attn": attn,
            "attn_blocks": {str(p): b.tolist() for p, b in self.attn_blocks.items()},
        }

    @classmethod
    def from_json(cls, obj: dict, dims: ModelDims | None = None) -> ScriptedBackendSpec:
        dims = dims or ModelDims.from_json(obj["dims"])
        hidden = {}
        for key, vec in obj.get("hidden", {}).items():
            layer, p = key.split(":")
            hidden[(None if layer == "*" else int(layer), int(p))] = vec
        attn = {}
        for key, row in obj.get("attn", {}).items():
            layer, head, p = (int(x) for x in key.split(":"))
            attn[(layer, head, p)] = {int(j): w for j, w in row.items()} if isinstance(row, dict) else row
        return cls(
            dims=dims,
            next_tokens={int(p): int(t) for p, t in obj.get("next_tokens", {}).items()},
            logits={int(p): r for p, r in obj.get("logits", {}).items()},
            hidden=hidden,
            attn=attn,
            attn_blocks={int(p): b for p, b in obj.get("attn_blocks", {}).items()},
            max_seq_len=int(obj.get("max_seq_len", 2048)),
        )


def _materialize_row(row: AttnScript, pos: int) -> np.ndarray:
    if isinstance(row, Mapping):
        weights = {int(j): float(w) for j, w in row.items()}
        if any(not 1 <= j <= pos for j in weights):
            raise ValueError(f"sparse attention column outside [1, {pos}]")
        if any(w < 0 for w in weights.values()):
            raise ValueError("attention weights must be non-negative")
        rest = 1.0 - sum(weights.values())
        if rest < -1e-9:
            raise ValueError("sparse attention weights sum above 1")
        dense = np.full(pos, max(rest, 0.0) / pos)
        for j, w in weights.items():
            dense[j - 1] += w
        return dense
    dense = np.asarray(row, dtype=np.float64)
    if dense.shape != (pos,):
        raise ValueError(f"attention row for query {pos} has length {dense.shape}")
    check_rows(dense)
    return dense


def _compact_row(row: np.ndarray) -> list[float] | dict[str, float]:
    """Re-express a row in sparse form when it is uniform off a few peaks."""
    base = float(np.min(row))
    peaks = np.nonzero(row != base)[0]
    if len(peaks) < len(row) // 2:
        return {str(j + 1): float(row[j] - base) for j in peaks}
    return row.tolist()


class ScriptedBackend(Backend):
    def __init__(self, spec: ScriptedBackendSpec):
        super().__init__()
        self.spec = spec
        self.dims = spec.dims
        self.max_seq_len = spec.max_seq_len

    def _forward(self, tokens: list[int]) -> ForwardResult:
        s, d = self.spec, self.dims
        start = self.cache_len + 1
        positions = range(start, start + len(tokens))
        logits = np.stack([s.logits_row(p) for p in positions])
        hidden = np.stack(
            [[s.hidden_vec(layer, p) for layer in range(d.num_layers + 1)] for p in positions]
        ).astype(np.float32)
        attn = tuple(s.attn_block(p).astype(np.float32) for p in positions)
        return ForwardResult(logits=logits, hidden=hidden, attn=attn, start_pos=start)


@dataclass
class ScriptBook:
    """One script per corpus entry id, sharing model dimensions."""

    dims: ModelDims
    entries: dict[str, ScriptedBackendSpec]
    # entry id -> {context length t: planted copy source for the step drafting at t}
    sources: dict[str, dict[int, int]] = field(default_factory=dict)

    def backend_for(self, entry_id: str) -> ScriptedBackend:
        try:
            return ScriptedBackend(self.entries[entry_id])
        except KeyError:
            raise KeyError(f"no script for corpus entry {entry_id!r}") from None

    def to_json(self) -> dict:
        return {
            "dims": self.dims.to_json(),
            "entries": {
                eid: {"max_seq_len": s.max_seq_len, **s._script_json()}
                for eid, s in self.entries.items()
            },
            "sources": {
                eid: {str(t): j for t, j in src.items()} for eid, src in self.sources.items()
            },
        }

    @classmethod
    def from_json(cls, obj: dict) -> ScriptBook:
        dims = ModelDims.from_json(obj["dims"])
        entries = {eid: ScriptedBackendSpec.from_json(e, dims) for eid, e in obj["entries"].items()}
        sources = {
            eid: {int(t): int(j) for t, j in src.items()}
            for eid, src in obj.get("sources", {}).items()
        }
        return cls(dims, entries, sources)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> ScriptBook:
        return cls.from_json(json.loads(Path(path).read_text()))
