"""Lexical tokenizer and a fixed-capacity vocabulary built at train time."""

from __future__ import annotations

import re
from collections import Counter
from typing import Sequence

# IR-style lexical classes: strings, sigil identifiers, words, numbers,
# single punctuation; one newline token per line break
_TOKEN_RE = re.compile(
    r'"(?:\\.|[^"\\\n])*"'
    r"|[%@#!][A-Za-z0-9_$.]*"
    r"|[A-Za-z_][A-Za-z0-9_$.]*"
    r"|0x[0-9a-fA-F]+"
    r"|\d+\.\d*(?:[eE][+-]?\d+)?"
    r"|\d+"
    r"|\S"
)

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
SPECIALS = (PAD, UNK, BOS, EOS)


def tokenize(text: str) -> list[str]:
    out: list[str] = []
    for i, line in enumerate(text.split("\n")):
        if i:
            out.append("\n")
        out.extend(_TOKEN_RE.findall(line))
    return out


class Vocab:
    """Frequency-ranked token table with a hard capacity and UNK fallback."""

    def __init__(self, tokens: Sequence[str]):
        self.id_to_token = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    @classmethod
    def build(cls, programs: Sequence[str], capacity: int) -> "Vocab":
        if capacity <= len(SPECIALS):
            raise ValueError(f"capacity must exceed {len(SPECIALS)}")
        counts: Counter[str] = Counter()
        for text in programs:
            counts.update(tokenize(text))
        # most frequent first; ties broken lexically so builds are stable
        ranked = sorted(counts, key=lambda t: (-counts[t], t))
        table = list(SPECIALS) + ranked[: capacity - len(SPECIALS)]
        return cls(table)

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    @property
    def bos_id(self) -> int:
        return self.token_to_id[BOS]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[EOS]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.token_to_id.get(t, self.unk_id) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def to_dict(self) -> dict:
        return {"tokens": self.id_to_token}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(d["tokens"])
