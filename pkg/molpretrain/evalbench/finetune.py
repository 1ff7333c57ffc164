"""Scaffold-split finetuning with a small grid search.

Every grid point (learning rate, seed, batch size) loads the encoder afresh,
attaches a new head, trains with early stopping on the validation loss and
keeps the parameters of its best epoch. The grid point with the lowest
validation loss is then scored once on the test split. Test labels are read
only by :func:`score_test`.
"""

from __future__ import annotations

from typing import Any, Mapping, Sequence

import itertools
import json
import logging
import math
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from tqdm import tqdm

from molpretrain.chem.canon import canonicalize
from molpretrain.chem.fragments import largest_fragment
from molpretrain.chem.smiles import parse_smiles
from molpretrain.errors import CheckpointError, ConfigError, InputError, MolPretrainError, NonFiniteError
from molpretrain.evalbench.metrics import class_weights, rmse, roc_auc
from molpretrain.featurize.normalizer import NormStats, fit_normalizer
from molpretrain.model.config import ModelConfig
from molpretrain.model.encoder import TransformerModel
from molpretrain.model.heads import TASK_TYPES, finetune_head, init_finetune_head
from molpretrain.seeding import make_rng
from molpretrain.tensor.optim import AdamState, adam_step
from molpretrain.tensor.tensor import Tensor, backward, current_tape, no_grad
from molpretrain.tokenizer import Vocab, build_vocab
from molpretrain.training import checkpoint as ckpt
from molpretrain.training.hpsearch import ARCH_KEYS
from molpretrain.training.objectives import FinetuneObjective, PreparedBatch, encode_smiles, mean_loss

logger = logging.getLogger(__name__)

REPORT_SCHEMA = 1


@dataclass
class FinetuneSpec:
    """One finetuning task and its search grid.

    ``checkpoint`` is a model directory (``config.txt``, ``params.bin``,
    ``vocab.txt``), usually the ``best/`` directory of a pretraining run.
    Without it the encoder is randomly initialised from ``arch`` and the
    vocabulary is built from the train split.
    """

    train_path: str
    valid_path: str
    test_path: str
    task_type: str
    checkpoint: str | None = None
    dataset: str = ""
    label_column: str = "label"
    smiles_column: str = "smiles"
    max_epochs: int = 100
    patience: int = 10
    lrs: tuple[float, ...] = (1e-5, 3e-5, 1e-4)
    seeds: tuple[int, ...] = (0, 1, 2)
    batch_sizes: tuple[int, ...] = (16, 32)
    arch: dict[str, Any] = field(default_factory=dict)
    pretrain_loss: float | None = None

    def __post_init__(self) -> None:
        if self.task_type not in TASK_TYPES:
            raise ConfigError(f"task_type must be one of {TASK_TYPES}, got {self.task_type!r}")
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("max_epochs and patience must be >= 1")
        if not (self.lrs and self.seeds and self.batch_sizes):
            raise ConfigError("the finetuning grid is empty")
        self.lrs = tuple(float(v) for v in self.lrs)
        self.seeds = tuple(int(v) for v in self.seeds)
        self.batch_sizes = tuple(int(v) for v in self.batch_sizes)
        if not self.dataset:
            self.dataset = Path(self.train_path).parent.name or Path(self.train_path).stem

    def grid(self) -> list[tuple[float, int, int]]:
        return list(itertools.product(self.lrs, self.seeds, self.batch_sizes))


@dataclass
class MetricReport:
    dataset: str
    task_type: str
    metric: str
    value: float
    sizes: dict[str, int]
    config: dict[str, Any]
    valid_loss: float
    checkpoint: str | None
    pretrain_loss: float | None
    grid_size: int
    schema_version: int = REPORT_SCHEMA

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TaskData:
    smiles: list[str]
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.smiles)


def load_task_rows(
    path: str | Path,
    spec: FinetuneSpec,
    rejects: list[dict],
) -> TaskData:
    """Canonical largest-fragment SMILES and labels of one split file.

    Rows that fail to parse or carry a non-numeric label go to ``rejects``.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    frame = pd.read_csv(path, dtype={spec.smiles_column: str}, keep_default_na=False)
    for column in (spec.smiles_column, spec.label_column):
        if column not in frame.columns:
            raise InputError(f"{path} has no {column!r} column")
    values = pd.to_numeric(frame[spec.label_column], errors="coerce").to_numpy(np.float64)
    smiles: list[str] = []
    labels: list[float] = []
    for pos, (raw, value) in enumerate(zip(frame[spec.smiles_column], values)):
        line = pos + 2
        if not np.isfinite(value):
            rejects.append({"file": path.name, "line": line, "smiles": raw, "error": "non-numeric label"})
            continue
        try:
            smiles.append(canonicalize(largest_fragment(parse_smiles(raw))))
        except MolPretrainError as err:
            rejects.append({"file": path.name, "line": line, "smiles": raw, "error": str(err)})
            continue
        labels.append(value)
    array = np.asarray(labels, dtype=np.float64)
    if spec.task_type == "binary" and not np.isin(array, (0.0, 1.0)).all():
        raise InputError(f"{path}: binary labels must be 0 or 1")
    return TaskData(smiles, array)


def load_encoder(spec: FinetuneSpec, vocab: Vocab, seed: int) -> TransformerModel:
    if spec.checkpoint is not None:
        return ckpt.load_model(spec.checkpoint)
    config = ModelConfig(vocab_size=len(vocab), **spec.arch)
    return TransformerModel(config, rng=make_rng(seed, "finetune_init"))


def load_vocab(spec: FinetuneSpec, train: TaskData) -> Vocab:
    if spec.checkpoint is None:
        return build_vocab(train.smiles)
    path = Path(spec.checkpoint) / ckpt.VOCAB_FILE
    if not path.is_file():
        raise CheckpointError(f"{spec.checkpoint} has no {ckpt.VOCAB_FILE}")
    return Vocab.load(path)


def _batches(
    objective: FinetuneObjective,
    data: TaskData,
    batch_size: int,
    order: np.ndarray | None = None,
) -> list[PreparedBatch]:
    order = np.arange(len(data)) if order is None else order
    out = []
    for start in range(0, len(order), batch_size):
        rows = order[start : start + batch_size]
        out.append(objective.prepare([data.smiles[i] for i in rows], data.labels[rows]))
    return out


@dataclass
class GridResult:
    lr: float
    seed: int
    batch_size: int
    valid_loss: float
    best_epoch: int
    epochs: int
    params: OrderedDict[str, np.ndarray] = field(repr=False, default_factory=OrderedDict)

    def config(self) -> dict[str, Any]:
        return {
            "lr": self.lr,
            "seed": self.seed,
            "batch_size": self.batch_size,
            "best_epoch": self.best_epoch,
            "epochs": self.epochs,
        }


def fit_grid_point(
    spec: FinetuneSpec,
    vocab: Vocab,
    objective: FinetuneObjective,
    train: TaskData,
    valid: TaskData,
    lr: float,
    seed: int,
    batch_size: int,
) -> GridResult:
    """Train one grid point with epoch-level early stopping on the validation loss."""
    model = load_encoder(spec, vocab, seed)
    init_finetune_head(model, spec.task_type, make_rng(seed, "finetune_head"))
    adam = AdamState.zeros_like(model.params)
    rng = make_rng(seed, "finetune")
    valid_batches = _batches(objective, valid, batch_size)
    best = GridResult(lr, seed, batch_size, float("inf"), 0, 0)
    for epoch in range(1, spec.max_epochs + 1):
        for batch in _batches(objective, train, batch_size, rng.permutation(len(train))):
            loss, _ = objective.loss(model, batch, training=True, rng=rng)
            model.zero_grad()
            backward(loss)
            adam_step(model.params, adam, lr)
        val = mean_loss(model, objective, valid_batches)
        best.epochs = epoch
        if val < best.valid_loss:
            best.valid_loss, best.best_epoch = val, epoch
            best.params = OrderedDict((n, p.data.copy()) for n, p in model.params.items())
        elif epoch - best.best_epoch >= spec.patience:
            break
    current_tape().clear()
    return best


def _fit_job(args: tuple) -> GridResult:
    return fit_grid_point(*args)


def predict(model: TransformerModel, vocab: Vocab, smiles: Sequence[str], batch_size: int = 64) -> np.ndarray:
    """Raw head outputs in eval mode: ``[n, 1]`` standardised values or ``[n, 2]`` logits."""
    outputs = []
    with no_grad():
        for start in range(0, len(smiles), batch_size):
            ids, mask, _ = encode_smiles(smiles[start : start + batch_size], vocab)
            outputs.append(finetune_head(model, model.forward(ids, mask)).data.astype(np.float64))
    return np.concatenate(outputs, axis=0)


def score_test(
    model: TransformerModel,
    vocab: Vocab,
    spec: FinetuneSpec,
    norm: NormStats | None,
    rejects: list[dict],
) -> tuple[str, float, int]:
    """Load the test split and compute the task metric: RMSE in label units or ROC-AUC."""
    test = load_task_rows(spec.test_path, spec, rejects)
    if len(test) == 0:
        raise InputError(f"{spec.test_path} has no usable rows")
    out = predict(model, vocab, test.smiles)
    if spec.task_type == "regression":
        return "rmse", rmse(out[:, 0], test.labels, norm), len(test)
    logits = out - out.max(axis=1, keepdims=True)
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    return "roc_auc", roc_auc(probs[:, 1], test.labels), len(test)


def finetune(spec: FinetuneSpec, out_dir: str | Path | None = None, n_jobs: int = 1) -> MetricReport:
    """Run the grid, pick the best validation loss and score it on the test split.

    Parameters
    ----------
    spec : FinetuneSpec
        Task, checkpoint and grid
    out_dir : str | Path | None
        Receives ``report.jsonl``, ``grid.csv`` and ``rejects.csv`` when given
    n_jobs : int
        Grid points trained in parallel processes

    Returns
    -------
    MetricReport
        Test metric of the best grid point
    """
    rejects: list[dict] = []
    train = load_task_rows(spec.train_path, spec, rejects)
    valid = load_task_rows(spec.valid_path, spec, rejects)
    if len(train) < 2 or len(valid) == 0:
        raise InputError("finetuning needs at least two train rows and one valid row")
    vocab = load_vocab(spec, train)
    norm = None
    weights = None
    if spec.task_type == "regression":
        norm = fit_normalizer(train.labels.reshape(-1, 1), (spec.label_column,))
    else:
        weights = class_weights(train.labels)
    objective = FinetuneObjective(vocab, spec.task_type, norm, weights)

    jobs = [(spec, vocab, objective, train, valid, lr, seed, bs) for lr, seed, bs in spec.grid()]
    logger.info(
        "finetuning %s: %d grid points, %d train / %d valid rows", spec.dataset, len(jobs), len(train), len(valid)
    )
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(tqdm(pool.map(_fit_job, jobs), total=len(jobs), desc="finetune", leave=False))
    else:
        results = [_fit_job(job) for job in tqdm(jobs, desc="finetune", leave=False)]
    best = min(results, key=lambda r: r.valid_loss)
    if not math.isfinite(best.valid_loss):
        raise NonFiniteError(f"every grid point diverged on {spec.dataset}")

    model = load_encoder(spec, vocab, best.seed)
    init_finetune_head(model, spec.task_type, make_rng(best.seed, "finetune_head"))
    for name, array in best.params.items():
        model.params[name] = Tensor(array, requires_grad=True, name=name, dtype=array.dtype)
    metric, value, n_test = score_test(model, vocab, spec, norm, rejects)

    report = MetricReport(
        dataset=spec.dataset,
        task_type=spec.task_type,
        metric=metric,
        value=value,
        sizes={"train": len(train), "valid": len(valid), "test": n_test},
        config=best.config(),
        valid_loss=best.valid_loss,
        checkpoint=spec.checkpoint,
        pretrain_loss=spec.pretrain_loss if spec.pretrain_loss is not None else source_pretrain_loss(spec.checkpoint),
        grid_size=len(jobs),
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with (out_dir / "report.jsonl").open("a") as fh:
            fh.write(report.to_json() + "\n")
        grid = pd.DataFrame([{**r.config(), "valid_loss": r.valid_loss} for r in results])
        grid.to_csv(out_dir / "grid.csv", index=False)
        pd.DataFrame(rejects, columns=["file", "line", "smiles", "error"]).to_csv(out_dir / "rejects.csv", index=False)
    logger.info(
        "%s: %s = %.4f (lr %g, seed %d, batch %d)", spec.dataset, metric, value, best.lr, best.seed, best.batch_size
    )
    return report


def source_pretrain_loss(checkpoint: str | Path | None) -> float | None:
    """Best validation loss of the pretraining run a model directory came from, if recorded."""
    if checkpoint is None:
        return None
    checkpoint = Path(checkpoint)
    for candidate in (checkpoint / ckpt.CURSOR_FILE, checkpoint.parent / ckpt.CURSOR_FILE):
        if candidate.is_file():
            best = json.loads(candidate.read_text()).get("best_val")
            return float(best) if best is not None else None
    return None


def read_reports(paths: Sequence[str | Path]) -> list[dict[str, Any]]:
    reports = []
    for path in paths:
        reports += [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    return reports


def spec_from_mapping(values: Mapping[str, Any]) -> FinetuneSpec:
    """Build a spec from flat configuration keys (``finetune_*`` and split paths)."""
    split_dir = Path(values["split_dir"]) if values.get("split_dir") else None

    def path(name: str) -> str:
        given = values.get(f"{name}_path")
        if given:
            return str(given)
        if split_dir is None:
            raise ConfigError(f"set split_dir or {name}_path")
        return str(split_dir / f"{name}.csv")

    return FinetuneSpec(
        train_path=path("train"),
        valid_path=path("valid"),
        test_path=path("test"),
        task_type=str(values["task_type"]),
        checkpoint=str(values["checkpoint"]) if values.get("checkpoint") else None,
        dataset=str(values.get("dataset") or ""),
        label_column=str(values.get("label_column", "label")),
        max_epochs=int(values.get("finetune_max_epochs", 100)),
        patience=int(values.get("finetune_patience", 10)),
        lrs=tuple(values.get("finetune_lrs", (1e-5, 3e-5, 1e-4))),
        seeds=tuple(values.get("finetune_seeds", (0, 1, 2))),
        batch_sizes=tuple(values.get("finetune_batch_sizes", (16, 32))),
        arch={k: values[k] for k in ARCH_KEYS if k in values},
    )
