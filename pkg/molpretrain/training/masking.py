from __future__ import annotations

import math

import numpy as np

from molpretrain.tensor.functional import IGNORE_INDEX
from molpretrain.tokenizer import MASK_ID, SPECIAL_TOKENS, TokenSeq

N_SPECIAL = len(SPECIAL_TOKENS)


def n_to_mask(n_maskable: int, p: float) -> int:
    """``round(p * n)`` with halves rounded up, at least one."""
    return max(1, math.floor(p * n_maskable + 0.5))


def mask_tokens(
    seq: TokenSeq | np.ndarray,
    rng: np.random.Generator,
    vocab_size: int,
    p: float = 0.15,
    attention_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Select and corrupt tokens for masked language modelling.

    ``round(p * n)`` (minimum 1) of the ``n`` maskable positions (real tokens
    that are not special) are drawn without replacement. Of those, 80% become
    MASK, 10% a uniformly drawn non-special token and 10% stay unchanged.

    Parameters
    ----------
    seq : TokenSeq | np.ndarray
        Encoded sequence, or a 1-d id array
    rng : np.random.Generator
        Randomness for selection and replacement
    vocab_size : int
        Vocabulary size; random replacements are drawn from ``[5, vocab_size)``
    p : float
        Masking rate
    attention_mask : np.ndarray | None
        Needed when ``seq`` is a plain id array containing padding

    Returns
    -------
    tuple[np.ndarray, np.ndarray]
        Corrupted ids and labels (original id at selected positions,
        ``IGNORE_INDEX`` elsewhere). A sequence without maskable tokens comes
        back unchanged with all labels ignored.
    """
    if isinstance(seq, TokenSeq):
        ids, attention_mask = seq.ids, seq.attention_mask
    else:
        ids = np.asarray(seq)
    if attention_mask is None:
        attention_mask = np.ones_like(ids)
    ids = ids.copy()
    labels = np.full(ids.shape, IGNORE_INDEX, dtype=np.int64)
    candidates = np.flatnonzero((ids >= N_SPECIAL) & (np.asarray(attention_mask) == 1))
    if candidates.size == 0:
        return ids, labels
    chosen = rng.choice(candidates, size=n_to_mask(candidates.size, p), replace=False)
    labels[chosen] = ids[chosen]
    roll = rng.random(chosen.size)
    replace_random = chosen[(roll >= 0.8) & (roll < 0.9)]
    ids[chosen[roll < 0.8]] = MASK_ID
    if replace_random.size:
        ids[replace_random] = rng.integers(N_SPECIAL, vocab_size, size=replace_random.size)
    return ids, labels


def mask_batch(
    ids: np.ndarray,
    attention_mask: np.ndarray,
    rng: np.random.Generator,
    vocab_size: int,
    p: float = 0.15,
) -> tuple[np.ndarray, np.ndarray]:
    """Apply :func:`mask_tokens` row by row to a padded batch."""
    masked = np.empty_like(ids)
    labels = np.empty(ids.shape, dtype=np.int64)
    for row in range(ids.shape[0]):
        masked[row], labels[row] = mask_tokens(ids[row], rng, vocab_size, p, attention_mask[row])
    return masked, labels
