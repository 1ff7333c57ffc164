"""Random architecture search and loss-spanning configuration selection.

Configurations are drawn independently (learning rate log-uniform, the rest
uniform), hidden sizes are built as ``heads * head_width`` so divisibility
holds by construction, and draws whose parameter count falls outside the
declared bounds are rejected. Each configuration is pretrained with the MLM
and/or MTR objective; :func:`select_configs` then picks configurations at
evenly spaced quantiles of the validation loss.
"""

from __future__ import annotations

from typing import Any, Iterable, Mapping, Sequence

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from tqdm import tqdm

from molpretrain.errors import ConfigError, MolPretrainError
from molpretrain.model.config import ModelConfig, param_count
from molpretrain.seeding import make_rng
from molpretrain.tokenizer import build_vocab
from molpretrain.training.loader import StreamLoader
from molpretrain.training.pretrain import TrainConfig, pretrain

logger = logging.getLogger(__name__)

RESULTS_FILE = "results.jsonl"
ARCH_KEYS = ("hidden_size", "num_attention_heads", "num_hidden_layers", "intermediate_size", "dropout")


@dataclass(frozen=True)
class SearchSpace:
    """Inclusive ranges of the six searched quantities plus parameter-count bounds.

    The defaults are desk-scale choices; they are not taken from any published
    search.
    """

    heads_min: int = 1
    heads_max: int = 4
    head_width_min: int = 8
    head_width_max: int = 32
    layers_min: int = 1
    layers_max: int = 4
    intermediate_min: int = 32
    intermediate_max: int = 256
    dropout_min: float = 0.0
    dropout_max: float = 0.2
    lr_min: float = 1e-5
    lr_max: float = 1e-3
    min_params: int = 10_000
    max_params: int = 2_000_000

    def __post_init__(self) -> None:
        pairs = [
            ("heads", self.heads_min, self.heads_max),
            ("head_width", self.head_width_min, self.head_width_max),
            ("layers", self.layers_min, self.layers_max),
            ("intermediate", self.intermediate_min, self.intermediate_max),
            ("dropout", self.dropout_min, self.dropout_max),
            ("lr", self.lr_min, self.lr_max),
            ("params", self.min_params, self.max_params),
        ]
        for name, low, high in pairs:
            if low > high:
                raise ConfigError(f"search range for {name} is empty: [{low}, {high}]")
        if self.heads_min < 1 or self.head_width_min < 1 or self.layers_min < 1 or self.intermediate_min < 1:
            raise ConfigError("integer search ranges must start at 1 or above")
        if self.lr_min <= 0 or not 0 <= self.dropout_min <= self.dropout_max < 1:
            raise ConfigError("learning rates must be positive and dropout must lie in [0, 1)")

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any], prefix: str = "hp_") -> SearchSpace:
        """Read ``hp_<field>`` keys (e.g. ``hp_heads_max``) from a flat configuration."""
        kinds = {f.name: f.type for f in fields(cls)}
        picked = {}
        for key, value in values.items():
            if key.startswith(prefix) and key[len(prefix) :] in kinds:
                name = key[len(prefix) :]
                picked[name] = float(value) if kinds[name] == "float" else int(value)
        return cls(**picked)


@dataclass(frozen=True)
class Hyperparams:
    index: int
    config: ModelConfig
    lr: float

    def arch(self) -> dict[str, Any]:
        values = asdict(self.config)
        return {k: values[k] for k in ARCH_KEYS}

    def as_dict(self) -> dict[str, Any]:
        return {"index": self.index, "lr": self.lr, **self.arch()}


def sample_hyperparams(
    n: int = 50,
    seed: int = 0,
    space: SearchSpace | None = None,
    vocab_size: int = 591,
    mtr_task_count: int = 0,
) -> list[Hyperparams]:
    """Draw ``n`` configurations from ``space``.

    Parameters
    ----------
    n : int
        Number of configurations
    seed : int
        Run seed; draws use the derived ``"hpsearch"`` stream
    space : SearchSpace | None
        Ranges and parameter bounds
    vocab_size : int
        Vocabulary size used for the parameter count
    mtr_task_count : int
        Regression targets counted in the parameter count

    Returns
    -------
    list[Hyperparams]
        Configurations in draw order

    Raises
    ------
    ConfigError
        If fewer than ``n`` draws fall within the parameter bounds after
        ``100 * n`` attempts
    """
    space = space or SearchSpace()
    rng = make_rng(seed, "hpsearch")
    accepted: list[Hyperparams] = []
    for _ in range(100 * n):
        if len(accepted) == n:
            break
        heads = int(rng.integers(space.heads_min, space.heads_max + 1))
        width = int(rng.integers(space.head_width_min, space.head_width_max + 1))
        layers = int(rng.integers(space.layers_min, space.layers_max + 1))
        intermediate = int(rng.integers(space.intermediate_min, space.intermediate_max + 1))
        dropout = float(rng.uniform(space.dropout_min, space.dropout_max))
        lr = float(math.exp(rng.uniform(math.log(space.lr_min), math.log(space.lr_max))))
        config = ModelConfig(
            vocab_size=vocab_size,
            hidden_size=heads * width,
            num_attention_heads=heads,
            num_hidden_layers=layers,
            intermediate_size=intermediate,
            dropout=dropout,
            mtr_task_count=mtr_task_count,
        )
        if space.min_params <= param_count(config) <= space.max_params:
            accepted.append(Hyperparams(len(accepted), config, lr))
    if len(accepted) < n:
        raise ConfigError(
            f"only {len(accepted)} of {n} configurations fit the parameter bounds "
            f"[{space.min_params}, {space.max_params}]; widen the search space"
        )
    return accepted


def quantile_indices(n: int, k: int) -> list[int]:
    """Indices ``round((n - 1) * i / (k - 1))`` (halves up) for ``i = 0 .. k-1``."""
    if k == 1:
        return [0]
    return [math.floor((n - 1) * i / (k - 1) + 0.5) for i in range(k)]


def select_configs(results: Sequence[Mapping[str, Any]], k: int = 5, key: str = "best_val") -> list[dict[str, Any]]:
    """Pick ``k`` finished runs spanning the range of validation losses.

    Runs whose loss is missing or non-finite are ignored. The survivors are
    sorted by loss (ties by ``index``) and taken at evenly spaced quantiles,
    best first. With ``k`` or fewer survivors all of them are returned.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    finished = [dict(r) for r in results if r.get(key) is not None and math.isfinite(r[key])]
    finished.sort(key=lambda r: (r[key], r.get("index", 0)))
    if len(finished) <= k:
        return finished
    return [finished[i] for i in quantile_indices(len(finished), k)]


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def write_jsonl(path: str | Path, records: Iterable[Mapping[str, Any]]) -> None:
    Path(path).write_text("".join(json.dumps(dict(r), sort_keys=True) + "\n" for r in records))


def train_one(job: Mapping[str, Any]) -> dict[str, Any]:
    """Pretrain one configuration; failures are recorded rather than raised."""
    settings = dict(job["train"])
    arch = dict(job["arch"])
    record = {**job["meta"]}
    try:
        result = pretrain(TrainConfig(**settings), arch)
    except MolPretrainError as err:
        logger.warning("run %s failed: %s", settings["out_dir"], err)
        return {**record, "best_val": None, "status": "diverged", "error": str(err)}
    return {**record, **result.as_dict(), "status": "ok"}


def run_pretraining_jobs(
    jobs: Sequence[Mapping[str, Any]], n_jobs: int = 1, desc: str = "runs"
) -> list[dict[str, Any]]:
    """Run independent pretraining jobs, in parallel processes when ``n_jobs > 1``.

    Results come back in job order whatever order the processes finish in.
    """
    if n_jobs <= 1:
        return [train_one(job) for job in tqdm(jobs, desc=desc, leave=False)]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(tqdm(pool.map(train_one, jobs), total=len(jobs), desc=desc, leave=False))


def run_hpsearch(
    train_path: str | Path,
    valid_path: str | Path,
    out_dir: str | Path,
    n: int = 50,
    k: int = 5,
    seed: int = 0,
    space: SearchSpace | None = None,
    objectives: Sequence[str] = ("mlm",),
    train_settings: Mapping[str, Any] | None = None,
    n_jobs: int = 1,
) -> dict[str, list[dict[str, Any]]]:
    """Sample ``n`` configurations, pretrain each under every objective and select ``k`` per objective.

    Writes ``results.jsonl`` (one record per run) and ``selected_<objective>.jsonl``.

    Returns
    -------
    dict[str, list[dict[str, Any]]]
        ``"results"`` plus one selection per objective
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_settings = dict(train_settings or {})
    if train_settings.get("deterministic"):
        n_jobs = 1
    vocab = build_vocab(StreamLoader(Path(train_path), 1).read_smiles())
    candidates = sample_hyperparams(n, seed, space, vocab_size=len(vocab))
    write_jsonl(out_dir / "configs.jsonl", (h.as_dict() for h in candidates))

    jobs = []
    for objective in objectives:
        for hp in candidates:
            settings = {
                **train_settings,
                "train_path": str(train_path),
                "valid_path": str(valid_path),
                "out_dir": str(out_dir / "runs" / f"{objective}_{hp.index:03d}"),
                "objective": objective,
                "base_lr": hp.lr,
                "base_batch_size": train_settings.get("batch_size", 32),
                "seed": seed,
            }
            jobs.append({"train": settings, "arch": hp.arch(), "meta": {"objective": objective, **hp.as_dict()}})
    logger.info("hpsearch: %d configurations x %d objectives, %d parallel jobs", n, len(objectives), n_jobs)
    results = run_pretraining_jobs(jobs, n_jobs, desc="hpsearch")
    write_jsonl(out_dir / RESULTS_FILE, results)

    out: dict[str, list[dict[str, Any]]] = {"results": results}
    for objective in objectives:
        chosen = select_configs([r for r in results if r["objective"] == objective], k)
        write_jsonl(out_dir / f"selected_{objective}.jsonl", chosen)
        out[objective] = chosen
        diverged = sum(1 for r in results if r["objective"] == objective and r["status"] != "ok")
        if diverged:
            logger.warning("%d %s runs diverged and were excluded from selection", diverged, objective)
    return out

