"""Benchmark orchestration: mode comparisons, sweeps and report assembly."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from copydraft.backend.base import Backend
from copydraft.backend.scripted import ScriptBook
from copydraft.backend.toy import ToyTransformer, ToyTransformerSpec
from copydraft.core import Aggregation, DrafterConfig, HeadRef, Mode, ModelDims, all_heads
from copydraft.engine import AR_CONFIG, GREEDY, SamplerConfig, decode
from copydraft.harness.corpus import CorpusEntry

logger = logging.getLogger(__name__)

BASELINE = "ar"
COUNT_FIELDS = ("committed_tokens", "steps", "forward_passes", "drafted_tokens", "accepted_tokens")
INFORMATIONAL = ("wall_seconds", "throughput", "speedup_mean", "speedup_std", "speedup")
FLOAT_TOL = 1e-9


class ReportError(ValueError):
    pass


# -- backends ---------------------------------------------------------------


@dataclass
class ToyFactory:
    spec: ToyTransformerSpec = field(default_factory=ToyTransformerSpec)

    @property
    def dims(self) -> ModelDims:
        return self.spec.dims

    def __call__(self, entry: CorpusEntry) -> Backend:
        return ToyTransformer(self.spec)

    def describe(self) -> dict:
        return {"kind": "toy", **self.spec.to_json()}


@dataclass
class ScriptFactory:
    book: ScriptBook
    path: str | None = None

    @property
    def dims(self) -> ModelDims:
        return self.book.dims

    def __call__(self, entry: CorpusEntry) -> Backend:
        return self.book.backend_for(entry.id)

    def describe(self) -> dict:
        return {"kind": "scripted", "path": self.path, "dims": self.dims.to_json()}


BackendFactory = Callable[[CorpusEntry], Backend]


def make_backend_factory(arg: str | None):
    """``None``/``"toy"`` -> default toy model, ``scripted:<path>`` -> script book, else a toy spec JSON."""
    if arg is None or arg == "toy":
        return ToyFactory()
    if arg.startswith("scripted:"):
        path = arg[len("scripted:") :]
        return ScriptFactory(ScriptBook.load(path), path)
    return ToyFactory(ToyTransformerSpec.load(arg))


# -- variants ---------------------------------------------------------------


@dataclass(frozen=True)
class Variant:
    label: str
    config: DrafterConfig | None
    error: str | None = None


def as_variant(v: Variant | DrafterConfig) -> Variant:
    return v if isinstance(v, Variant) else Variant(v.label, v)


def output_digest(tokens: Sequence[int]) -> str:
    return hashlib.sha256(json.dumps(list(tokens)).encode()).hexdigest()[:16]


def _ratio(num: float, den: float) -> float | None:
    if den == 0 or math.isinf(den) or math.isinf(num):
        return None
    return num / den


def _run_entry(entry: CorpusEntry, variants: list[Variant], factory, scfg: SamplerConfig, repeats: int) -> list[dict]:
    rows = []
    for r in range(repeats):
        base = None
        for v in variants:
            row = {"entry": entry.id, "variant": v.label, "repeat": r,
                   "mode": v.config.mode.value if v.config else None,
                   "metrics": None, "speedup": None, "forward_pass_ratio": None,
                   "digest": None, "error": v.error}
            if v.error is None:
                try:
                    ctx, m, _ = decode(factory(entry), entry.prompt, v.config, scfg, entry.max_new_tokens, entry.eos)
                except Exception as exc:  # recorded per row, the batch goes on
                    logger.warning("entry %s variant %s failed: %s", entry.id, v.label, exc)
                    row["error"] = f"{type(exc).__name__}: {exc}"
                else:
                    row["metrics"] = m.to_json()
                    row["digest"] = output_digest(ctx.generated)
                    if v.label == BASELINE:
                        base = m
                        row["speedup"] = row["forward_pass_ratio"] = 1.0
                    elif base is not None:
                        row["speedup"] = _ratio(m.throughput, base.throughput)
                        row["forward_pass_ratio"] = _ratio(base.steps, m.steps)
            rows.append(row)
    return rows


def _mean(xs: list[float]) -> float | None:
    return math.fsum(xs) / len(xs) if xs else None


def compute_aggregates(rows: Sequence[dict], labels: Sequence[str]) -> dict:
    """Per-variant summaries; a pure function of the rows."""
    out = {}
    for label in labels:
        mine = [r for r in rows if r["variant"] == label]
        ok = [r for r in mine if r["error"] is None]
        agg = {"n_rows": len(mine), "n_errors": len(mine) - len(ok)}
        for f in COUNT_FIELDS:
            agg[f] = sum(r["metrics"][f] for r in ok)
        # mean of per-row acceptance lengths is the tuning metric
        agg["avg_accept_len"] = _mean([r["metrics"]["avg_accept_len"] for r in ok])
        agg["pooled_accept_len"] = agg["committed_tokens"] / agg["steps"] if agg["steps"] else None
        fpr = [r["forward_pass_ratio"] for r in ok if r["forward_pass_ratio"] is not None]
        agg["forward_pass_ratio_mean"] = _mean(fpr)
        sp = [r["speedup"] for r in ok if r["speedup"] is not None]
        agg["speedup_mean"] = _mean(sp)
        per_repeat = []
        for rep in sorted({r["repeat"] for r in ok}):
            vals = [r["speedup"] for r in ok if r["repeat"] == rep and r["speedup"] is not None]
            if vals:
                per_repeat.append(_mean(vals))
        agg["speedup_std"] = statistics.stdev(per_repeat) if len(per_repeat) > 1 else 0.0
        wall = math.fsum(r["metrics"]["wall_seconds"] for r in ok)
        agg["wall_seconds"] = wall
        agg["throughput"] = agg["committed_tokens"] / wall if wall > 0 else None
        out[label] = agg
    return out


@dataclass
class BenchmarkReport:
    entries: list[dict]
    aggregates: dict
    config: dict

    @property
    def labels(self) -> list[str]:
        return list(self.aggregates)

    def rows_for(self, label: str) -> list[dict]:
        return [r for r in self.entries if r["variant"] == label]

    def to_json(self) -> dict:
        return {"entries": self.entries, "aggregates": self.aggregates, "config": self.config}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    def verify(self) -> None:
        """Raise ``ReportError`` unless the aggregates recompute from the rows."""
        again = compute_aggregates(self.entries, self.labels)
        for label, agg in self.aggregates.items():
            for key, val in again[label].items():
                have = agg.get(key)
                if isinstance(val, float) and isinstance(have, (int, float)):
                    if abs(val - have) > FLOAT_TOL * max(1.0, abs(val)):
                        raise ReportError(f"aggregate {label}.{key}: stored {have}, recomputed {val}")
                elif have != val:
                    raise ReportError(f"aggregate {label}.{key}: stored {have}, recomputed {val}")

    @classmethod
    def from_json(cls, obj: dict, verify: bool = True) -> BenchmarkReport:
        try:
            report = cls(obj["entries"], obj["aggregates"], obj["config"])
        except KeyError as exc:
            raise ReportError(f"report missing key {exc}") from None
        if verify:
            report.verify()
        return report

    @classmethod
    def load(cls, path: str | Path, verify: bool = True) -> BenchmarkReport:
        return cls.from_json(json.loads(Path(path).read_text()), verify)


def run_benchmark(
    corpus: Sequence[CorpusEntry],
    variants: Sequence[Variant | DrafterConfig],
    factory,
    scfg: SamplerConfig = GREEDY,
    repeats: int = 3,
    workers: int = 1,
    extra_config: dict | None = None,
) -> BenchmarkReport:
    """Decode every entry under every variant ``repeats`` times, each on a fresh backend.

    The autoregressive baseline is added when missing. Rows come back in
    corpus order whatever the worker count.
    """
    if not corpus:
        raise ValueError("corpus is empty")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    vs = [as_variant(v) for v in variants]
    vs = [v for v in vs if v.label != BASELINE]
    vs.insert(0, Variant(BASELINE, AR_CONFIG))
    labels = [v.label for v in vs]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate variant labels in {labels}")

    def job(entry):
        return _run_entry(entry, vs, factory, scfg, repeats)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(job, corpus))
    else:
        chunks = [job(e) for e in corpus]
    rows = [r for chunk in chunks for r in chunk]

    describe = getattr(factory, "describe", None)
    config = {
        "backend": describe() if describe else repr(factory),
        "variants": {v.label: (v.config.to_json() if v.config else None) for v in vs},
        "sampler": scfg.to_json(),
        "repeats": repeats,
        "corpus_size": len(corpus),
        "informational": list(INFORMATIONAL),
    }
    config.update(extra_config or {})
    return BenchmarkReport(rows, compute_aggregates(rows, labels), config)


# -- sweeps -----------------------------------------------------------------

SWEEP_PARAMS = ("k", "layer", "top_heads", "theta", "m", "aggregation")
PARAM_ALIASES = {"K": "k", "agg": "aggregation"}


def parse_values(text: str, param: str) -> list:
    """``"1,2,5"``, ``"10..100:10"`` (inclusive), plus ``off`` for theta and ``all`` for top_heads."""
    param = PARAM_ALIASES.get(param, param)
    text = text.strip()
    if not text:
        raise ValueError("empty value list")
    if ".." in text:
        lo, rest = text.split("..", 1)
        hi, _, step = rest.partition(":")
        return _range(lo, hi, step or "1", param)
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if param == "theta" and tok.lower() in ("off", "none"):
            out.append(None)
        elif param == "top_heads" and tok.lower() == "all":
            out.append("all")
        elif param == "aggregation":
            out.append(tok.lower())
        elif param == "theta":
            out.append(float(tok))
        else:
            out.append(int(tok))
    return out


def _range(lo: str, hi: str, step: str, param: str) -> list:
    if param == "theta":
        a, b, s = float(lo), float(hi), float(step)
        if s <= 0:
            raise ValueError("step must be positive")
        n = int(math.floor((b - a) / s + 1e-9)) + 1
        return [round(a + i * s, 12) for i in range(n)]
    a, b, s = int(lo), int(hi), int(step)
    if s <= 0:
        raise ValueError("step must be positive")
    return list(range(a, b + 1, s))


def substitute(base: DrafterConfig, param: str, value, ranked_heads: Sequence[HeadRef] = ()) -> DrafterConfig:
    param = PARAM_ALIASES.get(param, param)
    if param == "k":
        return dataclasses.replace(base, k=int(value))
    if param == "layer":
        return dataclasses.replace(base, layer=int(value))
    if param == "theta":
        return dataclasses.replace(base, theta=None if value is None else float(value))
    if param == "m":
        return dataclasses.replace(base, avg_prefix_m=int(value))
    if param == "aggregation":
        return dataclasses.replace(base, aggregation=Aggregation(value))
    if param == "top_heads":
        if value == "all":
            return dataclasses.replace(base, heads=tuple(ranked_heads))
        n = int(value)
        if not 1 <= n <= len(ranked_heads):
            raise ValueError(f"top_heads={n} outside [1, {len(ranked_heads)}]")
        return dataclasses.replace(base, heads=tuple(ranked_heads[:n]))
    raise ValueError(f"unknown sweep parameter {param!r}; expected one of {SWEEP_PARAMS}")


def _value_label(value) -> str:
    return "off" if value is None else str(value)


def sweep(
    corpus: Sequence[CorpusEntry],
    base: DrafterConfig,
    param: str,
    values: Sequence,
    factory,
    scfg: SamplerConfig = GREEDY,
    repeats: int = 1,
    workers: int = 1,
    ranked_heads: Sequence[HeadRef] | None = None,
) -> BenchmarkReport:
    """One variant per value, labelled ``param=value``, against a shared baseline.

    Values that make an invalid config, or that the backend rejects, end
    up as error rows rather than aborting the sweep.
    """
    param = PARAM_ALIASES.get(param, param)
    if param not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {param!r}; expected one of {SWEEP_PARAMS}")
    if not values:
        raise ValueError("values must be non-empty")
    dims = getattr(factory, "dims", None)
    if ranked_heads is None:
        ranked_heads = all_heads(dims) if dims is not None else ()
    if param in ("top_heads", "aggregation") and base.mode is not Mode.PLD_PLUS_ATTENTION:
        logger.warning("sweeping %s has no effect in mode %s", param, base.mode.value)
    variants = []
    for v in values:
        label = f"{param}={_value_label(v)}"
        try:
            cfg = substitute(base, param, v, ranked_heads)
            if dims is not None:
                cfg.check(dims)
            variants.append(Variant(label, cfg))
        except (ValueError, TypeError) as exc:
            variants.append(Variant(label, None, error=f"{type(exc).__name__}: {exc}"))
    extra = {"sweep": {"param": param, "values": [_value_label(v) for v in values], "base": base.to_json()}}
    return run_benchmark(corpus, variants, factory, scfg, repeats, workers, extra)
