"""Rule-based SMILES tokenizer and bounded vocabulary."""

from __future__ import annotations

from typing import Iterable, Sequence

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from molpretrain.errors import InputError, TokenizeError

PAD, UNK, CLS, SEP, MASK = "<pad>", "<unk>", "<cls>", "<sep>", "<mask>"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)

MAX_VOCAB_SIZE = 591
MAX_LENGTH = 512

# bracket atom, two-letter organic element, %nn ring closure, any single character
TOKEN_PATTERN = re.compile(r"\[[^\]]*\]|Br|Cl|%\d{2}|.")


def tokenize(smiles: str) -> list[str]:
    """Split a SMILES string into tokens.

    The split is lossless: ``"".join(tokenize(s)) == s``.

    Raises
    ------
    TokenizeError
        If a ``[`` is never closed
    """
    tokens = TOKEN_PATTERN.findall(smiles)
    if "[" in smiles:
        offset = 0
        for token in tokens:
            if token == "[":
                raise TokenizeError("unterminated '['", offset)
            offset += len(token)
    return tokens


@dataclass(frozen=True)
class TokenSeq:
    """Encoded sequence: ``ids[0]`` is CLS and the last non-pad id is SEP."""

    ids: np.ndarray
    attention_mask: np.ndarray
    n_unk: int = 0
    truncated: bool = False

    def __len__(self) -> int:
        return int(self.attention_mask.sum())


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    max_size: int = MAX_VOCAB_SIZE
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if tuple(self.tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise InputError("vocabulary must start with the special tokens")
        if len(self.tokens) > self.max_size:
            raise InputError(f"vocabulary has {len(self.tokens)} > {self.max_size} tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise InputError("vocabulary contains duplicate tokens")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def save(self, path: str | Path) -> None:
        """Write one token per line; the line number is the id."""
        Path(path).write_text("".join(t + "\n" for t in self.tokens))

    @classmethod
    def load(cls, path: str | Path, max_size: int = MAX_VOCAB_SIZE) -> Vocab:
        path = Path(path)
        if not path.is_file():
            raise InputError(f"no vocabulary file at {path}")
        return cls(tuple(path.read_text().splitlines()), max_size=max_size)


def build_vocab(corpus: Iterable[str], max_size: int = MAX_VOCAB_SIZE) -> Vocab:
    """Build a vocabulary from a SMILES stream.

    Tokens are ranked by frequency, ties broken lexicographically, and the top
    ``max_size - 5`` are kept after the five special tokens. The result only
    depends on the corpus multiset.

    Parameters
    ----------
    corpus : Iterable[str]
        SMILES strings
    max_size : int
        Cap on the vocabulary size, specials included

    Returns
    -------
    Vocab
        The vocabulary

    Raises
    ------
    InputError
        If the corpus is empty
    """
    counts: Counter[str] = Counter()
    n_rows = 0
    for smiles in corpus:
        counts.update(tokenize(smiles))
        n_rows += 1
    if n_rows == 0:
        raise InputError("cannot build a vocabulary from an empty corpus")
    for special in SPECIAL_TOKENS:
        counts.pop(special, None)
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    keep = [token for token, _ in ranked[: max_size - len(SPECIAL_TOKENS)]]
    return Vocab(SPECIAL_TOKENS + tuple(keep), max_size=max_size)


def encode(
    tokens: Sequence[str], vocab: Vocab, max_length: int = MAX_LENGTH, pad_to: int | None = None
) -> TokenSeq:
    """CLS + token ids + SEP, truncated to ``max_length`` and optionally padded.

    Unknown tokens become UNK and are counted in ``n_unk``.
    """
    body = [vocab.id_of(t) for t in tokens[: max_length - 2]]
    n_unk = sum(1 for i in body if i == UNK_ID)
    ids = [CLS_ID, *body, SEP_ID]
    length = len(ids)
    width = max(length, pad_to or 0)
    out = np.full(width, PAD_ID, dtype=np.int64)
    out[:length] = ids
    mask = np.zeros(width, dtype=np.int64)
    mask[:length] = 1
    return TokenSeq(out, mask, n_unk=n_unk, truncated=len(tokens) > max_length - 2)


def decode(seq: TokenSeq | Sequence[int], vocab: Vocab) -> str:
    ids = seq.ids if isinstance(seq, TokenSeq) else seq
    return "".join(vocab.tokens[int(i)] for i in ids if int(i) >= len(SPECIAL_TOKENS))


def pad_batch(seqs: Sequence[TokenSeq]) -> tuple[np.ndarray, np.ndarray]:
    """Stack sequences into ``[batch, max_len]`` id and mask arrays."""
    width = max(len(s.ids) for s in seqs)
    ids = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=np.int64)
    for row, seq in enumerate(seqs):
        ids[row, : len(seq.ids)] = seq.ids
        mask[row, : len(seq.ids)] = seq.attention_mask
    return ids, mask
