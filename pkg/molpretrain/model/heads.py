"""Pretraining and finetuning heads on top of the encoder."""

from __future__ import annotations

import numpy as np
from scipy import stats

from molpretrain.errors import ConfigError, ShapeError, SkipBatch
from molpretrain.model.encoder import INIT_STD, TransformerModel, pool_cls
from molpretrain.tensor import functional as F
from molpretrain.tensor.functional import IGNORE_INDEX
from molpretrain.tensor.tensor import Tensor, default_dtype

TASK_TYPES = ("regression", "binary")


def mlm_loss(model: TransformerModel, hidden: Tensor, mlm_labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of the vocabulary head over masked positions only.

    Only the masked rows are projected to the vocabulary.

    Raises
    ------
    SkipBatch
        If no position carries a label
    """
    labels = np.asarray(mlm_labels).reshape(-1)
    batch, length, width = hidden.shape
    if labels.shape[0] != batch * length:
        raise ShapeError(f"labels {np.shape(mlm_labels)} do not match hidden {hidden.shape}")
    positions = np.flatnonzero(labels != IGNORE_INDEX)
    if positions.size == 0:
        raise SkipBatch("batch has no masked positions")
    rows = F.index(F.reshape(hidden, (batch * length, width)), positions)
    logits = F.add(F.matmul(rows, model.params["mlm.weight"]), model.params["mlm.bias"])
    return F.cross_entropy(logits, labels[positions])


def mtr_predict(model: TransformerModel, hidden: Tensor) -> Tensor:
    if "mtr.weight" not in model.params:
        raise ConfigError("model has no regression head (mtr_task_count = 0)")
    pooled = pool_cls(hidden)
    return F.add(F.matmul(pooled, model.params["mtr.weight"]), model.params["mtr.bias"])


def mtr_loss(
    model: TransformerModel,
    hidden: Tensor,
    normalized_labels: np.ndarray,
    task_mask: np.ndarray | None = None,
) -> Tensor:
    """MSE of the pooled regression head, averaged over non-constant tasks and the batch."""
    labels = np.asarray(normalized_labels)
    d = model.config.mtr_task_count
    if labels.ndim != 2 or labels.shape[1] != d:
        raise ShapeError(f"expected labels of shape [batch, {d}], got {labels.shape}")
    return F.mse(mtr_predict(model, hidden), labels, task_mask)


def init_finetune_head(model: TransformerModel, task_type: str, rng: np.random.Generator) -> None:
    """Attach (or replace) a fresh linear head: one output for regression, two logits for binary."""
    if task_type not in TASK_TYPES:
        raise ConfigError(f"task_type must be one of {TASK_TYPES}, got {task_type!r}")
    width = model.config.hidden_size
    outputs = 1 if task_type == "regression" else 2
    weight = stats.truncnorm(-2.0, 2.0, loc=0.0, scale=INIT_STD).rvs(size=(width, outputs), random_state=rng)
    model.params["finetune.weight"] = Tensor(weight.astype(default_dtype()), requires_grad=True, name="finetune.weight")
    bias = np.zeros(outputs, dtype=default_dtype())
    model.params["finetune.bias"] = Tensor(bias, requires_grad=True, name="finetune.bias")


def finetune_head(model: TransformerModel, hidden: Tensor) -> Tensor:
    """Raw head output ``[batch, 1]`` (normalised regression) or ``[batch, 2]`` (binary logits)."""
    if "finetune.weight" not in model.params:
        raise ConfigError("call init_finetune_head before finetune_head")
    pooled = pool_cls(hidden)
    return F.add(F.matmul(pooled, model.params["finetune.weight"]), model.params["finetune.bias"])


def finetune_loss(
    model: TransformerModel,
    hidden: Tensor,
    labels: np.ndarray,
    task_type: str,
    class_weight: np.ndarray | None = None,
) -> Tensor:
    out = finetune_head(model, hidden)
    if task_type == "regression":
        return F.mse(out, np.asarray(labels, dtype=np.float64).reshape(-1, 1))
    return F.cross_entropy(out, np.asarray(labels, dtype=np.int64), weight=class_weight)
