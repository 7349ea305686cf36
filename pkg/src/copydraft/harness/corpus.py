from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

logger = logging.getLogger(__name__)


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusEntry:
    id: str
    prompt: tuple[int, ...]
    max_new_tokens: int
    eos: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "prompt", tuple(int(t) for t in self.prompt))
        if not self.prompt:
            raise CorpusError(f"entry {self.id!r}: empty prompt")
        if self.max_new_tokens < 1:
            raise CorpusError(f"entry {self.id!r}: max_new_tokens must be >= 1")
        if any(t < 0 for t in self.prompt):
            raise CorpusError(f"entry {self.id!r}: negative token id")

    def to_json(self) -> dict:
        obj = {"id": self.id, "prompt": list(self.prompt), "max_new_tokens": self.max_new_tokens}
        if self.eos is not None:
            obj["eos"] = self.eos
        return obj


def encode_bytes(text: str, vocab_size: int) -> list[int]:
    """UTF-8 bytes mapped into the vocabulary by ``byte % vocab_size``."""
    return [b % vocab_size for b in text.encode("utf-8")]


def load_corpus(
    path: str | Path,
    vocab_size: int | None = None,
    encode_text: bool = False,
) -> list[CorpusEntry]:
    """Parse a JSONL corpus, one entry per non-blank line.

    With ``encode_text`` a line may carry ``"text"`` instead of ``"prompt"``;
    it is byte-encoded against ``vocab_size``.
    """
    entries: list[CorpusEntry] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if encode_text and "prompt" not in obj and "text" in obj:
                    if vocab_size is None:
                        raise CorpusError("byte encoding needs a vocab size")
                    obj["prompt"] = encode_bytes(obj["text"], vocab_size)
                entry = CorpusEntry(
                    id=str(obj["id"]),
                    prompt=obj["prompt"],
                    max_new_tokens=int(obj["max_new_tokens"]),
                    eos=None if obj.get("eos") is None else int(obj["eos"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
            if vocab_size is not None:
                bad = [t for t in entry.prompt if t >= vocab_size]
                if bad or (entry.eos is not None and entry.eos >= vocab_size):
                    raise CorpusError(
                        f"{path}:{lineno}: token id {(bad or [entry.eos])[0]} outside vocab of {vocab_size}"
                    )
            if entry.id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate entry id {entry.id!r}")
            seen.add(entry.id)
            entries.append(entry)
    if not entries:
        logger.warning("corpus %s is empty", path)
    return entries


def write_corpus(path: str | Path, entries: Iterable[CorpusEntry]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_json()) + "\n")
