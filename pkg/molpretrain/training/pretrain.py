"""MLM and MTR pretraining with one-epoch patience and exact resume.

A run directory holds the latest full training state (see
:mod:`molpretrain.training.checkpoint`), ``log.jsonl`` with one record per
evaluation and ``best/`` with the model of the best validation loss so far.

Randomness: parameters are initialised from the ``"init"`` stream, masking
and dropout draw from the ``"train"`` stream (saved with every checkpoint) and
each evaluation re-creates the ``"eval"`` stream, so evaluations neither
depend on nor disturb the training stream.

Ctrl-C writes a checkpoint before re-raising. Each optimizer step and each
logged evaluation is committed with Ctrl-C held back, and an evaluation that
was cut short runs again on resume, so an interrupted run continues exactly
like an uninterrupted one.
"""

from __future__ import annotations

from typing import Any, Iterator, Mapping

import json
import logging
import math
import signal
import threading
import warnings
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from tqdm import tqdm

from molpretrain.errors import ConfigError, InputError, NonFiniteError, SkipBatch
from molpretrain.featurize.descriptors import resolve_names
from molpretrain.featurize.normalizer import NormStats, fit_normalizer
from molpretrain.model.config import ModelConfig, param_count
from molpretrain.model.encoder import TransformerModel
from molpretrain.seeding import make_rng
from molpretrain.tensor.optim import AdamState, adam_step
from molpretrain.tensor.tensor import backward, current_tape
from molpretrain.tokenizer import Vocab, build_vocab
from molpretrain.training import checkpoint as ckpt
from molpretrain.training.loader import StreamLoader, prefetch
from molpretrain.training.objectives import OBJECTIVES, AbstractObjective, MLMObjective, MTRObjective, mean_loss

logger = logging.getLogger(__name__)

BEST_DIR = "best"
DIAGNOSTIC_DIR = "diagnostic"


def scaled_lr(base_lr: float, base_batch_size: int, batch_size: int) -> float:
    """Linear learning-rate scaling: ``base_lr * batch_size / base_batch_size``."""
    if base_lr <= 0 or base_batch_size <= 0 or batch_size <= 0:
        raise ConfigError("learning rate and batch sizes must be positive")
    return base_lr * batch_size / base_batch_size


@contextmanager
def deferred_interrupt() -> Iterator[None]:
    """Hold back Ctrl-C until the block has run, then raise ``KeyboardInterrupt``.

    Outside the main thread signals cannot be handled and the block runs as is.
    """
    if threading.current_thread() is not threading.main_thread():
        yield
        return
    received: list[int] = []
    previous = signal.signal(signal.SIGINT, lambda signum, frame: received.append(signum))
    try:
        yield
    finally:
        signal.signal(signal.SIGINT, previous if previous is not None else signal.default_int_handler)
    if received:
        raise KeyboardInterrupt


@dataclass
class TrainConfig:
    """Settings of one pretraining run.

    ``patience_steps`` defaults to one epoch, ``ceil(train_rows / batch_size)``.
    ``stop_after_steps`` ends the run early with a full checkpoint, the same
    way an interruption would; it is not carried over by :func:`resume`.
    """

    train_path: str
    valid_path: str
    out_dir: str
    objective: str = "mlm"
    batch_size: int = 32
    base_lr: float = 1e-4
    base_batch_size: int = 32
    seed: int = 0
    eval_interval: int = 25
    max_steps: int = 10_000
    checkpoint_interval: int = 100
    mask_prob: float = 0.15
    patience_steps: int = 0
    stop_after_steps: int = 0
    prefetch: int = 2
    deterministic: bool = False
    descriptors: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        for name in ("batch_size", "base_batch_size", "eval_interval", "max_steps", "checkpoint_interval"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.objective == "mtr":
            self.descriptors = resolve_names(self.descriptors or None)

    @property
    def lr(self) -> float:
        return scaled_lr(self.base_lr, self.base_batch_size, self.batch_size)

    @property
    def label_names(self) -> tuple[str, ...]:
        return tuple(self.descriptors) if self.objective == "mtr" else ()

    def to_settings(self) -> dict[str, str]:
        values = asdict(self)
        values["descriptors"] = " ".join(self.descriptors)
        return {k: str(v) for k, v in values.items()}

    @classmethod
    def from_settings(cls, settings: Mapping[str, str]) -> TrainConfig:
        kinds = {f.name: f.type for f in fields(cls)}
        unknown = set(settings) - set(kinds)
        if unknown:
            raise ConfigError(f"unknown training settings {sorted(unknown)}")
        values: dict[str, Any] = {}
        for key, raw in settings.items():
            kind = kinds[key]
            if kind == "int":
                values[key] = int(raw)
            elif kind == "float":
                values[key] = float(raw)
            elif kind == "bool":
                values[key] = raw == "True"
            elif key == "descriptors":
                values[key] = tuple(raw.split())
            else:
                values[key] = raw
        return cls(**values)


@dataclass
class PretrainResult:
    out_dir: Path
    model_config: ModelConfig
    best_val: float
    best_step: int
    steps: int
    stopped_by: str | None
    n_params: int
    log: list[dict] = field(default_factory=list)

    @property
    def finished(self) -> bool:
        return self.stopped_by is not None

    def as_dict(self) -> dict:
        return {
            "out_dir": str(self.out_dir),
            "best_val": self.best_val,
            "best_step": self.best_step,
            "steps": self.steps,
            "stopped_by": self.stopped_by,
            "n_params": self.n_params,
            **{k: v for k, v in asdict(self.model_config).items()},
        }


def make_objective(config: TrainConfig, vocab: Vocab, norm: NormStats | None) -> AbstractObjective:
    if config.objective == "mlm":
        return MLMObjective(vocab, config.mask_prob)
    if norm is None:
        raise ConfigError("the MTR objective needs normalisation statistics")
    return MTRObjective(vocab, norm)


def pretrain(
    config: TrainConfig,
    arch: Mapping[str, Any] | None = None,
) -> PretrainResult:
    """Pretrain a fresh model until early stopping or ``max_steps``.

    The vocabulary and, for MTR, the label normalisation are fitted on the
    training file only and stored in the run directory.

    Parameters
    ----------
    config : TrainConfig
        Run settings
    arch : Mapping[str, Any] | None
        Architecture keys of :class:`ModelConfig` (``hidden_size``,
        ``num_attention_heads`` ...); ``vocab_size`` and ``mtr_task_count``
        are filled in from the data

    Returns
    -------
    PretrainResult
        Best validation loss, step counts and the evaluation log
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_loader = StreamLoader(Path(config.train_path), config.batch_size, config.label_names)

    vocab = build_vocab(train_loader.read_smiles())
    vocab.save(out_dir / ckpt.VOCAB_FILE)
    norm = None
    if config.objective == "mtr":
        norm = fit_normalizer(train_loader.read_labels(), config.label_names)
        norm.save(out_dir / ckpt.NORM_FILE)
        if norm.constant.any():
            constant = np.asarray(norm.names)[norm.constant].tolist()
            warnings.warn(f"constant descriptors excluded from the loss: {constant}")

    arch = dict(arch or {})
    arch.pop("vocab_size", None)
    arch["mtr_task_count"] = norm.task_count if norm is not None else 0
    model_config = ModelConfig(vocab_size=len(vocab), **arch)
    model = TransformerModel(model_config, rng=make_rng(config.seed, "init"))
    logger.info(
        "pretraining %s: %d parameters, vocab %d, lr %.3g",
        config.objective,
        param_count(model_config),
        len(vocab),
        config.lr,
    )
    (out_dir / ckpt.LOG_FILE).write_text("")
    return _run(
        config,
        model,
        AdamState.zeros_like(model.params),
        make_rng(config.seed, "train"),
        ckpt.Cursor(),
        vocab,
        norm,
    )


def resume(checkpoint_dir: str | Path) -> PretrainResult:
    """Continue an interrupted run from its latest checkpoint.

    A finished run is left untouched.

    Raises
    ------
    CheckpointError
        If any checkpoint file is missing, truncated or inconsistent
    """
    checkpoint_dir = Path(checkpoint_dir)
    model, adam, rng, cursor, settings = ckpt.load_training_state(checkpoint_dir)
    config = TrainConfig.from_settings(settings)
    config.out_dir = str(checkpoint_dir)
    config.stop_after_steps = 0
    if cursor.stopped_by is not None:
        logger.info(
            "run in %s already finished at step %d (%s); nothing to do", checkpoint_dir, cursor.step, cursor.stopped_by
        )
        return _result(config, model.config, cursor)
    vocab = Vocab.load(checkpoint_dir / ckpt.VOCAB_FILE)
    norm = NormStats.load(checkpoint_dir / ckpt.NORM_FILE) if config.objective == "mtr" else None
    logger.info("resuming %s at step %d (pass %d, row %d)", checkpoint_dir, cursor.step, cursor.pass_index, cursor.row)
    return _run(config, model, adam, rng, cursor, vocab, norm)


def _result(config: TrainConfig, model_config: ModelConfig, cursor: ckpt.Cursor) -> PretrainResult:
    log_path = Path(config.out_dir) / ckpt.LOG_FILE
    log = [json.loads(line) for line in log_path.read_text().splitlines()] if log_path.is_file() else []
    return PretrainResult(
        out_dir=Path(config.out_dir),
        model_config=model_config,
        best_val=cursor.best_val,
        best_step=cursor.best_step,
        steps=cursor.step,
        stopped_by=cursor.stopped_by,
        n_params=param_count(model_config),
        log=log,
    )


def effective_eval_interval(eval_interval: int, patience: int) -> int:
    """Largest interval not above ``eval_interval`` that divides ``patience``.

    Evaluations then fall exactly on the patience boundary, so a stopped run
    has gone exactly ``patience`` steps without improvement.
    """
    interval = math.gcd(eval_interval, patience)
    if interval != eval_interval:
        warnings.warn(
            f"eval_interval {eval_interval} does not divide the patience of {patience} steps; using {interval}"
        )
    return interval


def _run(
    config: TrainConfig,
    model: TransformerModel,
    adam: AdamState,
    rng: np.random.Generator,
    cursor: ckpt.Cursor,
    vocab: Vocab,
    norm: NormStats | None,
) -> PretrainResult:
    out_dir = Path(config.out_dir)
    objective = make_objective(config, vocab, norm)
    train_loader = StreamLoader(Path(config.train_path), config.batch_size, config.label_names)
    valid_loader = StreamLoader(Path(config.valid_path), config.batch_size, config.label_names)
    if train_loader.n_rows == 0 or valid_loader.n_rows == 0:
        raise InputError("training and validation files must both contain rows")
    steps_per_epoch = math.ceil(train_loader.n_rows / config.batch_size)
    patience = config.patience_steps or steps_per_epoch
    interval = effective_eval_interval(config.eval_interval, patience)
    lr = config.lr
    depth = 0 if config.deterministic else config.prefetch
    settings = config.to_settings()
    settings.pop("stop_after_steps")

    def evaluate() -> float:
        eval_rng = make_rng(config.seed, "eval")
        prepared = (objective.prepare(b.smiles, b.labels, eval_rng) for b in valid_loader.batches())
        return mean_loss(model, objective, prepared)

    def save_state(target: Path = out_dir) -> None:
        ckpt.save_training_state(target, model, adam, rng, cursor, settings)

    def save_best() -> None:
        best = out_dir / BEST_DIR
        ckpt.save_model(best, model)
        vocab.save(best / ckpt.VOCAB_FILE)
        if norm is not None:
            norm.save(best / ckpt.NORM_FILE)

    def log_eval(val_loss: float) -> None:
        train_loss = cursor.loss_sum / cursor.loss_count if cursor.loss_count else None
        improved = val_loss < cursor.best_val
        if improved:
            cursor.best_val, cursor.best_step = val_loss, cursor.step
            save_best()
        record = {
            "step": cursor.step,
            "epoch": cursor.pass_index,
            "train_loss": train_loss,
            "val_loss": val_loss,
            "lr": lr,
            "best": improved,
        }
        with (out_dir / ckpt.LOG_FILE).open("a") as fh:
            fh.write(json.dumps(record) + "\n")
        logger.info("step %d epoch %d val %.4f%s", cursor.step, cursor.pass_index, val_loss, " *" if improved else "")
        cursor.loss_sum, cursor.loss_count = 0.0, 0

    def evaluate_and_check() -> None:
        val_loss = evaluate()
        with deferred_interrupt():
            log_eval(val_loss)
            if cursor.step - cursor.best_step >= patience:
                cursor.stopped_by = "early_stopping"
            cursor.eval_pending = False

    n_unk = n_tokens = 0
    snapshot = rng.bit_generator.state
    pbar = tqdm(total=config.max_steps, initial=cursor.step, desc=config.objective, unit="step", leave=False)
    try:
        if cursor.eval_pending or (cursor.step == 0 and math.isinf(cursor.best_val)):
            evaluate_and_check()
        if cursor.stopped_by is None and cursor.step >= config.max_steps:
            cursor.stopped_by = "max_steps"
        while cursor.stopped_by is None:
            for batch in prefetch(train_loader.batches(cursor.pass_index, cursor.row), depth):
                snapshot = rng.bit_generator.state
                prepared = objective.prepare(batch.smiles, batch.labels, rng)
                n_unk += prepared.n_unk
                n_tokens += int(prepared.attention_mask.sum())
                try:
                    loss, weight = objective.loss(model, prepared, training=True, rng=rng)
                except SkipBatch:
                    current_tape().clear()
                    cursor.row = batch.end_row
                    continue
                value = float(loss.data)
                if not math.isfinite(value):
                    current_tape().clear()
                    save_state(out_dir / DIAGNOSTIC_DIR)
                    raise NonFiniteError(
                        f"non-finite training loss at step {cursor.step + 1}; state saved in {out_dir / DIAGNOSTIC_DIR}"
                    )
                model.zero_grad()
                backward(loss)
                with deferred_interrupt():
                    adam_step(model.params, adam, lr)
                    cursor.step += 1
                    cursor.row = batch.end_row
                    cursor.loss_sum += value
                    cursor.loss_count += 1
                    cursor.eval_pending = cursor.step % interval == 0
                    snapshot = rng.bit_generator.state
                pbar.update(1)

                if cursor.eval_pending:
                    evaluate_and_check()
                if cursor.stopped_by is None and cursor.step >= config.max_steps:
                    cursor.stopped_by = "max_steps"
                if cursor.stopped_by is not None:
                    break
                if cursor.step % config.checkpoint_interval == 0:
                    save_state()
                if config.stop_after_steps and cursor.step >= config.stop_after_steps:
                    save_state()
                    logger.info("stopping at step %d as requested; resume with the run directory", cursor.step)
                    return _result(config, model.config, cursor)
            else:
                cursor.pass_index += 1
                cursor.row = 0
    except KeyboardInterrupt:
        # an uncommitted step is dropped by rewinding the stream; a pending evaluation reruns on resume
        current_tape().clear()
        rng.bit_generator.state = snapshot
        save_state()
        logger.warning("interrupted at step %d; checkpoint written to %s", cursor.step, out_dir)
        raise
    finally:
        pbar.close()

    if n_tokens and n_unk / n_tokens > 0.01:
        warnings.warn(f"{100 * n_unk / n_tokens:.1f}% of training tokens were mapped to <unk>")
    save_state()
    logger.info(
        "finished after %d steps (%s); best val %.4f at step %d",
        cursor.step,
        cursor.stopped_by,
        cursor.best_val,
        cursor.best_step,
    )
    return _result(config, model.config, cursor)

