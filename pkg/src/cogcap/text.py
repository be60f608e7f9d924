"""Whitespace/punctuation tokenizer and frozen vocabulary."""

from __future__ import annotations

import os
import re
from pathlib import Path
from typing import Iterable

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1
MAX_TOKENS = 15
PLACEHOLDER_TEXT = "a frame of { }"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    def __init__(self, tokens: Iterable[str]):
        self.itos: list[str] = [PAD, UNK]
        for tok in tokens:
            if tok not in (PAD, UNK):
                self.itos.append(tok)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocabulary":
        """Sorted vocabulary over ``texts``; the placeholder sentence is always included."""
        seen = set(tokenize(PLACEHOLDER_TEXT))
        for t in texts:
            seen.update(tokenize(t))
        return cls(sorted(seen))

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, text: str) -> list[int]:
        return [self.stoi.get(tok, UNK_ID) for tok in tokenize(text)]

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if lines[:2] != [PAD, UNK]:
            raise ValueError(f"{path}: vocabulary must start with {PAD} and {UNK}")
        return cls(lines)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos


def pad_ids(ids: list[int], length: int = MAX_TOKENS) -> list[int]:
    """Truncate or right-pad with ``PAD_ID`` to exactly ``length`` ids."""
    ids = list(ids)[:length]
    return ids + [PAD_ID] * (length - len(ids))
