"""Shared tokenizer and closed vocabulary.

One tokenizer is used everywhere (model inputs, metric scoring, annotation
similarity) so that token-level comparisons across modules agree: lowercase,
split on whitespace and punctuation, punctuation dropped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ContractError

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens; punctuation acts as a separator and is dropped."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Vocabulary:
    """Closed token vocabulary with fixed special ids 0..3.

    Built from training text only; unseen tokens map to the unknown id at
    encode time. Token order (and therefore every id) is deterministic:
    specials first, then sorted unique tokens.
    """

    tokens: list[str]
    index: dict[str, int] = field(repr=False)

    PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocabulary":
        seen: set[str] = set()
        for text in texts:
            seen.update(tokenize(text))
        tokens = list(SPECIALS) + sorted(seen - set(SPECIALS))
        return cls(tokens=tokens, index={t: i for i, t in enumerate(tokens)})

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Vocabulary":
        if list(tokens[:4]) != list(SPECIALS):
            raise ContractError("vocabulary token list must start with the four specials")
        return cls(tokens=list(tokens), index={t: i for i, t in enumerate(tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, words: Sequence[str]) -> list[int]:
        unk = self.UNK_ID
        return [self.index.get(w, unk) for w in words]

    def decode(self, ids: Sequence[int]) -> list[str]:
        """Ids back to tokens, with special ids skipped."""
        return [self.tokens[i] for i in ids if i >= len(SPECIALS)]
