from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from copydraft.core import Aggregation, DrafterConfig, Mode, all_heads
from copydraft.engine import SamplerConfig
from copydraft.harness.bench import (
    ScriptFactory,
    make_backend_factory,
    parse_values,
    run_benchmark,
    sweep,
)
from copydraft.harness.corpus import CorpusError, load_corpus, write_corpus
from copydraft.harness.synthetic import CorpusKind, gen_synthetic_corpus
from copydraft.headfinder import HeadScoreTable, identify_heads, load_head_file, write_head_file

logger = logging.getLogger("copydraft")

DEFAULT_LAYER = 9


def _theta(text: str) -> float | None:
    if text.lower() in ("off", "none"):
        return None
    return float(text)


def _add_backend(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", default=None,
                   help="toy spec JSON, 'toy' for the default toy model, or scripted:<book.json>")


def _add_shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", type=int, default=70)
    p.add_argument("--layer", type=int, default=DEFAULT_LAYER)
    p.add_argument("--heads", default=None, help="head set JSON; all heads when omitted")
    p.add_argument("--top-heads", type=int, default=None, help="use only the first N heads of --heads")
    p.add_argument("--agg", choices=[a.value for a in Aggregation], default="max")
    p.add_argument("--theta", type=_theta, default=None, help="cosine threshold or 'off'")
    p.add_argument("--m", type=int, default=1, help="hidden-state averaging window")
    p.add_argument("--ngram-max", type=int, default=3)
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--encode-bytes", action="store_true", help="accept 'text' lines, byte-encoded")
    _add_backend(p)
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="copydraft", description="Context-retrieval speculative decoding harness")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="benchmark one mode against the baseline")
    _add_shared(run)
    run.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.PLD_PLUS_HIDDEN.value)

    cmp_ = sub.add_parser("compare", help="benchmark several modes in one report")
    _add_shared(cmp_)
    cmp_.add_argument("--modes", default="pld,pld+a,pld+h")

    sw = sub.add_parser("sweep", help="vary one drafter parameter")
    _add_shared(sw)
    sw.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.PLD_PLUS_HIDDEN.value)
    sw.add_argument("--param", required=True, choices=["k", "layer", "top_heads", "theta", "m", "agg"])
    sw.add_argument("--values", required=True)
    sw.set_defaults(repeats=1)

    fh = sub.add_parser("find-heads", help="rank attention heads on a calibration corpus")
    fh.add_argument("--corpus", required=True)
    fh.add_argument("--gen-len", type=int, default=32)
    fh.add_argument("--top", type=int, default=50)
    fh.add_argument("--temperature", type=float, default=0.0)
    fh.add_argument("--seed", type=int, default=0)
    fh.add_argument("--encode-bytes", action="store_true")
    _add_backend(fh)
    fh.add_argument("--out", required=True)

    gen = sub.add_parser("gen-corpus", help="write a synthetic corpus and its scripted backend")
    gen.add_argument("--kind", required=True, choices=[k.value for k in CorpusKind])
    gen.add_argument("--size", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.add_argument("--backend-out", default=None, help="script book path (default <out>.scripts.json)")
    return parser


def _load(args, factory):
    entries = load_corpus(args.corpus, factory.dims.vocab_size, encode_text=args.encode_bytes)
    if not entries:
        raise CorpusError(f"corpus {args.corpus} has no entries")
    return entries


def _drafter(args, factory, mode: str) -> DrafterConfig:
    dims = factory.dims
    layer = args.layer
    if layer > dims.num_layers:
        logger.warning("layer %d exceeds the backend's %d layers; using %d", layer, dims.num_layers, dims.num_layers)
        layer = dims.num_layers
    heads = load_head_file(args.heads, dims) if args.heads else all_heads(dims)
    if args.top_heads:
        heads = heads[: args.top_heads]
    return DrafterConfig(
        mode=Mode(mode),
        k=args.k,
        layer=layer,
        heads=tuple(heads),
        aggregation=Aggregation(args.agg),
        theta=args.theta,
        avg_prefix_m=args.m,
        ngram_max=args.ngram_max,
    )


def _summary(report) -> str:
    lines = []
    for label, agg in report.aggregates.items():
        acc = agg["avg_accept_len"]
        fpr = agg["forward_pass_ratio_mean"]
        lines.append(
            f"{label:>16}  accept={acc if acc is None else round(acc, 3)}  "
            f"fp_ratio={fpr if fpr is None else round(fpr, 3)}  errors={agg['n_errors']}"
        )
    return "\n".join(lines)


def cmd_bench(args) -> int:
    factory = make_backend_factory(args.backend)
    entries = _load(args, factory)
    scfg = SamplerConfig(temperature=args.temperature, seed=args.seed)
    if args.command == "run":
        variants = [_drafter(args, factory, args.mode)]
        report = run_benchmark(entries, variants, factory, scfg, args.repeats, args.workers)
    elif args.command == "compare":
        modes = [m.strip() for m in args.modes.split(",") if m.strip()]
        variants = [_drafter(args, factory, m) for m in modes]
        report = run_benchmark(entries, variants, factory, scfg, args.repeats, args.workers)
    else:
        base = _drafter(args, factory, args.mode)
        ranked = base.heads if args.heads else None
        values = parse_values(args.values, args.param)
        report = sweep(entries, base, args.param, values, factory, scfg, args.repeats, args.workers, ranked)
    report.save(args.out)
    print(_summary(report))
    return 0


def cmd_find_heads(args) -> int:
    factory = make_backend_factory(args.backend)
    entries = _load(args, factory)
    scfg = SamplerConfig(temperature=args.temperature, seed=args.seed)
    if isinstance(factory, ScriptFactory):
        table = HeadScoreTable()
        # a script covers only its entry's own continuation
        for e in entries:
            gen_len = min(args.gen_len, e.max_new_tokens)
            table = table + identify_heads(factory(e), [e.prompt], gen_len, scfg, e.eos)
    else:
        table = identify_heads(factory(entries[0]), [e.prompt for e in entries], args.gen_len, scfg)
    write_head_file(args.out, table, args.top)
    print(f"{table.total_events} copy events, {len(table)} heads credited")
    for h, n in table.ranked()[: min(args.top, 10)]:
        print(f"  L{h.layer} H{h.head}: {float(n):g}")
    return 0


def cmd_gen_corpus(args) -> int:
    entries, book = gen_synthetic_corpus(args.kind, args.size, args.seed)
    write_corpus(args.out, entries)
    out = Path(args.out)
    book_path = Path(args.backend_out) if args.backend_out else out.with_name(out.stem + ".scripts.json")
    book.save(book_path)
    print(f"wrote {len(entries)} entries to {out}; use --backend scripted:{book_path}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"run": cmd_bench, "compare": cmd_bench, "sweep": cmd_bench,
                "find-heads": cmd_find_heads, "gen-corpus": cmd_gen_corpus}
    try:
        return handlers[args.command](args)
    except (CorpusError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
