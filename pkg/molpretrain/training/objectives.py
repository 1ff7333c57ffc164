"""Training objectives: how a batch of rows becomes model inputs and a loss.

Every objective turns the raw rows of a :class:`~molpretrain.training.loader.Batch`
into padded token ids plus targets (:meth:`prepare`) and computes a scalar
loss together with the weight that batch carries in a dataset-level mean
(:meth:`loss`). The weight is the number of terms averaged inside the batch,
so :func:`mean_loss` reproduces the exact mean over a whole held-out set.
"""

from __future__ import annotations

from typing import Iterable, Sequence

from abc import abstractmethod
from dataclasses import dataclass

import numpy as np

from molpretrain.errors import ConfigError, SkipBatch
from molpretrain.featurize.normalizer import NormStats
from molpretrain.model.encoder import TransformerModel
from molpretrain.model.heads import TASK_TYPES, finetune_loss, mlm_loss, mtr_loss
from molpretrain.tensor.functional import IGNORE_INDEX
from molpretrain.tensor.tensor import Tensor, current_tape, no_grad
from molpretrain.tokenizer import MAX_LENGTH, Vocab, encode, pad_batch, tokenize
from molpretrain.training.masking import mask_batch

OBJECTIVES = ("mlm", "mtr")


@dataclass
class PreparedBatch:
    ids: np.ndarray
    attention_mask: np.ndarray
    targets: np.ndarray
    n_unk: int = 0

    def __len__(self) -> int:
        return int(self.ids.shape[0])


def encode_smiles(
    smiles: Sequence[str], vocab: Vocab, max_length: int = MAX_LENGTH
) -> tuple[np.ndarray, np.ndarray, int]:
    """Padded ``[batch, length]`` ids and mask for SMILES strings, plus the UNK count."""
    seqs = [encode(tokenize(s), vocab, max_length) for s in smiles]
    ids, mask = pad_batch(seqs)
    return ids, mask, sum(s.n_unk for s in seqs)


class AbstractObjective(object):
    """Base class of the pretraining and finetuning objectives."""

    name: str = ""

    def __init__(self, vocab: Vocab) -> None:
        self.vocab = vocab

    @abstractmethod
    def prepare(
        self, smiles: Sequence[str], labels: np.ndarray | None, rng: np.random.Generator | None = None
    ) -> PreparedBatch:
        """Encode rows into model inputs and targets."""
        ...

    @abstractmethod
    def batch_loss(self, model: TransformerModel, hidden: Tensor, batch: PreparedBatch) -> tuple[Tensor, float]:
        """Scalar loss of the encoded batch and its weight."""
        ...

    def loss(
        self,
        model: TransformerModel,
        batch: PreparedBatch,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, float]:
        hidden = model.forward(batch.ids, batch.attention_mask, training=training, rng=rng)
        return self.batch_loss(model, hidden, batch)


class MLMObjective(AbstractObjective):
    """Masked-token prediction; a batch weighs as many as its masked positions."""

    name = "mlm"

    def __init__(self, vocab: Vocab, mask_prob: float = 0.15) -> None:
        super().__init__(vocab)
        if not 0.0 < mask_prob < 1.0:
            raise ConfigError(f"mask_prob must lie in (0, 1), got {mask_prob}")
        self.mask_prob = mask_prob

    def prepare(
        self, smiles: Sequence[str], labels: np.ndarray | None, rng: np.random.Generator | None = None
    ) -> PreparedBatch:
        ids, mask, n_unk = encode_smiles(smiles, self.vocab)
        masked, mlm_labels = mask_batch(ids, mask, rng, len(self.vocab), self.mask_prob)
        return PreparedBatch(masked, mask, mlm_labels, n_unk)

    def batch_loss(self, model: TransformerModel, hidden: Tensor, batch: PreparedBatch) -> tuple[Tensor, float]:
        return mlm_loss(model, hidden, batch.targets), float(np.count_nonzero(batch.targets != IGNORE_INDEX))


class MTRObjective(AbstractObjective):
    """Regression of standardised descriptors from the pooled representation."""

    name = "mtr"

    def __init__(self, vocab: Vocab, norm: NormStats) -> None:
        super().__init__(vocab)
        self.norm = norm

    def prepare(
        self, smiles: Sequence[str], labels: np.ndarray | None, rng: np.random.Generator | None = None
    ) -> PreparedBatch:
        if labels is None:
            raise ConfigError("the MTR objective needs a labelled corpus")
        ids, mask, n_unk = encode_smiles(smiles, self.vocab)
        return PreparedBatch(ids, mask, self.norm.apply(labels), n_unk)

    def batch_loss(self, model: TransformerModel, hidden: Tensor, batch: PreparedBatch) -> tuple[Tensor, float]:
        task_mask = self.norm.task_mask
        return mtr_loss(model, hidden, batch.targets, task_mask), float(len(batch) * task_mask.sum())


class FinetuneObjective(AbstractObjective):
    """Single-task head: standardised MSE for regression, weighted cross-entropy for binary tasks.

    Parameters
    ----------
    vocab : Vocab
        Vocabulary of the pretrained checkpoint
    task_type : str
        ``"regression"`` or ``"binary"``
    norm : NormStats | None
        Statistics of the finetuning train split (regression only)
    class_weight : np.ndarray | None
        Per-class weights (binary only)
    """

    name = "finetune"

    def __init__(
        self,
        vocab: Vocab,
        task_type: str,
        norm: NormStats | None = None,
        class_weight: np.ndarray | None = None,
    ) -> None:
        super().__init__(vocab)
        if task_type not in TASK_TYPES:
            raise ConfigError(f"task_type must be one of {TASK_TYPES}, got {task_type!r}")
        if task_type == "regression" and norm is None:
            raise ConfigError("regression finetuning needs train-split normalisation statistics")
        self.task_type = task_type
        self.norm = norm
        self.class_weight = class_weight

    def prepare(
        self, smiles: Sequence[str], labels: np.ndarray | None, rng: np.random.Generator | None = None
    ) -> PreparedBatch:
        if labels is None:
            raise ConfigError("finetuning needs labels")
        ids, mask, n_unk = encode_smiles(smiles, self.vocab)
        labels = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
        if self.task_type == "regression":
            targets = self.norm.apply(labels).reshape(-1)
        else:
            targets = labels.reshape(-1).astype(np.int64)
        return PreparedBatch(ids, mask, targets, n_unk)

    def batch_loss(self, model: TransformerModel, hidden: Tensor, batch: PreparedBatch) -> tuple[Tensor, float]:
        loss = finetune_loss(model, hidden, batch.targets, self.task_type, self.class_weight)
        if self.task_type == "binary" and self.class_weight is not None:
            return loss, float(np.asarray(self.class_weight)[batch.targets].sum())
        return loss, float(len(batch))


def mean_loss(
    model: TransformerModel,
    objective: AbstractObjective,
    batches: Iterable[PreparedBatch],
) -> float:
    """Weighted mean loss over prepared batches in eval mode, without recording gradients."""
    total = weight = 0.0
    with no_grad():
        for batch in batches:
            try:
                loss, w = objective.loss(model, batch, training=False)
            except SkipBatch:
                continue
            total += float(loss.data) * w
            weight += w
    current_tape().clear()
    if weight == 0:
        raise SkipBatch("nothing to evaluate")
    return total / weight
