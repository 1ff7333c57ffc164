"""Command-line entry point: one hydra application, one subcommand per run.

Every run executes inside its own hydra run directory and leaves a
``manifest.json`` there (command, resolved configuration, input hashes, seed,
version and timestamps) plus the flat ``config.txt`` it can be re-run from::

    molpretrain canonicalize --in raw.smi --out canon.smi
    molpretrain pretrain --objective mtr --data train.csv --seed 3
    molpretrain experiment transfer reports=[a/report.jsonl,b/report.jsonl]
    molpretrain pretrain --config runs/pretrain/.../config.txt
"""

from __future__ import annotations

from typing import Any, Callable, Mapping, Sequence

import datetime
import hashlib
import json
import logging
import shutil
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import hydra
import numpy as np
import pandas as pd
from hydra.core.hydra_config import HydraConfig
from hydra.utils import to_absolute_path
from omegaconf import DictConfig, OmegaConf
from rich import print as printr
from tqdm import tqdm

import molpretrain
from molpretrain.chem.canon import canonicalize
from molpretrain.chem.fragments import largest_fragment
from molpretrain.chem.io import read_smiles_file, write_lines
from molpretrain.chem.smiles import parse_smiles
from molpretrain.errors import ConfigError, InputError, MolPretrainError, NumericalError
from molpretrain.evalbench.embeddings import export_embeddings
from molpretrain.evalbench.experiments import experiment_loss_correlation, experiment_scaling, experiment_transfer
from molpretrain.evalbench.finetune import finetune, read_reports, spec_from_mapping
from molpretrain.featurize.descriptors import compute_descriptors, resolve_names
from molpretrain.splits import read_dataset, scaffold_split, write_split
from molpretrain.tokenizer import build_vocab, tokenize
from molpretrain.training.hpsearch import ARCH_KEYS, SearchSpace, read_jsonl, run_hpsearch
from molpretrain.training.loader import PreparedCorpus, prepare_corpus
from molpretrain.training.pretrain import TrainConfig, pretrain, resume

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
CONFIG_TEXT_FILE = "config.txt"
EXIT_INPUT = 1
EXIT_NUMERICAL = 2
EXPERIMENTS = ("correlation", "scaling", "transfer")
# keys whose values name input files or directories
INPUT_KEYS = (
    "in_path",
    "train_path",
    "valid_path",
    "test_path",
    "split_dir",
    "checkpoint",
    "vocab_path",
    "selected_path",
    "results_path",
)
TRAIN_KEYS = (
    "batch_size",
    "eval_interval",
    "max_steps",
    "checkpoint_interval",
    "mask_prob",
    "patience_steps",
    "stop_after_steps",
    "prefetch",
    "deterministic",
)
FLAG_ALIASES = {
    "--config": "config_file",
    "--out-dir": "output_dir",
    "--in": "in_path",
    "--data": "in_path",
    "--out": "out_path",
}
# hydra's own flags pass through untouched
HYDRA_SWITCHES = ("--help", "-h", "--hydra-help", "--multirun", "-m", "--resolve")
HYDRA_OPTIONS = ("--cfg", "-c", "--package", "-p", "--info", "-i")


@dataclass
class RunManifest:
    """Everything needed to re-run a command: its flat configuration plus input fingerprints."""

    command: str
    config: dict[str, Any]
    inputs: dict[str, str]
    seed: int
    version: str = molpretrain.version
    start: str = ""
    end: str = ""
    exit_code: int | None = None
    outputs: list[str] = field(default_factory=list)

    def write(self, run_dir: str | Path) -> None:
        run_dir = Path(run_dir)
        (run_dir / MANIFEST_FILE).write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=str) + "\n")
        (run_dir / CONFIG_TEXT_FILE).write_text(to_config_text(self.config))


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def to_config_text(config: Mapping[str, Any]) -> str:
    """Render a flat configuration as ``key=value`` lines that parse back as overrides."""
    lines = []
    for key in sorted(config):
        value = config[key]
        if isinstance(value, (list, tuple)):
            text = "[" + ",".join(str(v) for v in value) + "]"
        elif value is None:
            text = "null"
        elif isinstance(value, bool):
            text = str(value).lower()
        elif value == "":
            text = "''"
        else:
            text = str(value)
        lines.append(f"{key}={text}")
    return "\n".join(lines) + "\n"


def read_config_text(path: str | Path) -> list[str]:
    """Read ``key=value`` lines, skipping blanks and ``#`` comments."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no such config file: {path}")
    lines = []
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected key=value, got {line!r}")
        lines.append(line)
    return lines


def merge_config_file(cfg: DictConfig, lines: Sequence[str], overrides: Sequence[str]) -> DictConfig:
    """Merge a flat config file under the command-line overrides.

    Raises
    ------
    ConfigError
        If the file names a key the configuration does not have
    """
    unknown = sorted({line.split("=", 1)[0].strip() for line in lines} - set(cfg.keys()))
    if unknown:
        raise ConfigError(f"unknown keys in config file: {unknown}")
    # group selections, additions and deletions are not plain values
    flags = [o for o in overrides if not o.startswith(("+", "~")) and not o.startswith("hydra")]
    merged = OmegaConf.merge(cfg, OmegaConf.from_dotlist(list(lines)), OmegaConf.from_dotlist(flags))
    OmegaConf.set_struct(merged, True)
    return merged


def hash_path(path: str | Path) -> str:
    """SHA-256 of a file, or of every file below a directory in sorted order."""
    path = Path(path)
    digest = hashlib.sha256()
    files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
    for item in files:
        if path.is_dir():
            digest.update(str(item.relative_to(path)).encode())
        with item.open("rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                digest.update(chunk)
    return digest.hexdigest()


def input_hashes(cfg: Mapping[str, Any]) -> dict[str, str]:
    hashes = {}
    for key in INPUT_KEYS:
        value = cfg.get(key)
        if value and Path(to_absolute_path(str(value))).exists():
            hashes[key] = hash_path(to_absolute_path(str(value)))
    for report in cfg.get("reports") or ():
        if Path(to_absolute_path(str(report))).is_file():
            hashes[f"reports:{report}"] = hash_path(to_absolute_path(str(report)))
    return hashes


def _path(cfg: DictConfig, key: str) -> Path:
    value = cfg.get(key)
    if not value:
        raise ConfigError(f"{cfg.command} needs {key}")
    return Path(to_absolute_path(str(value)))


def _optional_path(cfg: DictConfig, key: str) -> Path | None:
    return _path(cfg, key) if cfg.get(key) else None


def _descriptor_names(cfg: DictConfig) -> tuple[str, ...] | None:
    return tuple(cfg.descriptors) if cfg.descriptors else None


def _train_settings(cfg: DictConfig) -> dict[str, Any]:
    settings = {key: cfg[key] for key in TRAIN_KEYS}
    settings["descriptors"] = _descriptor_names(cfg) or ()
    return settings


def _arch(cfg: DictConfig) -> dict[str, Any]:
    return {key: cfg[key] for key in ARCH_KEYS}


def _prepared(cfg: DictConfig, labelled: bool) -> tuple[Path, Path]:
    """Training and validation files: given directly, or prepared from ``in_path`` into ``data/``."""
    if cfg.train_path:
        return _path(cfg, "train_path"), _path(cfg, "valid_path")
    corpus: PreparedCorpus = prepare_corpus(
        _path(cfg, "in_path"),
        Path("data").resolve(),
        cfg.seed,
        label_names=(_descriptor_names(cfg) or resolve_names(None)) if labelled else None,
        holdout_rows=cfg.holdout_rows,
        valid_path=_optional_path(cfg, "valid_path"),
        strip_salts=cfg.strip_salts,
    )
    logger.info(
        "prepared %d training and %d validation rows (%d rejects)", corpus.n_train, corpus.n_valid, corpus.n_rejects
    )
    return corpus.train_path, corpus.valid_path


def _parse_rows(cfg: DictConfig, strip: bool, desc: str) -> tuple[list[tuple[int, str, Any]], list[dict[str, Any]]]:
    """Parse every row of ``in_path``; failures go to the rejects list."""
    rows, rejects = [], []
    for line, raw in tqdm(read_smiles_file(_path(cfg, "in_path"), cfg.smiles_column), desc=desc, leave=False):
        try:
            mol = parse_smiles(raw)
            rows.append((line, raw, largest_fragment(mol) if strip else mol))
        except MolPretrainError as err:
            rejects.append({"line": line, "smiles": raw, "error": str(err)})
    return rows, rejects


def _write_rejects(rejects: list[dict[str, Any]]) -> None:
    pd.DataFrame(rejects, columns=["line", "smiles", "error"]).to_csv("rejects.csv", index=False)
    if rejects:
        logger.warning("%d rows rejected, see rejects.csv", len(rejects))


def cmd_canonicalize(cfg: DictConfig) -> None:
    rows, rejects = _parse_rows(cfg, cfg.strip_salts, "canonicalize")
    out = cfg.out_path or "canonical.smi"
    n = write_lines(out, (canonicalize(mol) for _, _, mol in rows))
    _write_rejects(rejects)
    logger.info("wrote %d canonical SMILES to %s", n, out)


def cmd_tokenize(cfg: DictConfig) -> None:
    records, rejects = [], []
    for line, raw in read_smiles_file(_path(cfg, "in_path"), cfg.smiles_column):
        try:
            tokens = tokenize(raw)
        except MolPretrainError as err:
            rejects.append({"line": line, "smiles": raw, "error": str(err)})
            continue
        records.append({"line": line, "smiles": raw, "n_tokens": len(tokens), "tokens": " ".join(tokens)})
    frame = pd.DataFrame(records, columns=["line", "smiles", "n_tokens", "tokens"])
    frame.to_csv(cfg.out_path or "tokens.csv", index=False)
    _write_rejects(rejects)


def cmd_vocab(cfg: DictConfig) -> None:
    smiles, rejects = [], []
    for line, raw in read_smiles_file(_path(cfg, "in_path"), cfg.smiles_column):
        try:
            tokenize(raw)
        except MolPretrainError as err:
            rejects.append({"line": line, "smiles": raw, "error": str(err)})
            continue
        smiles.append(raw)
    vocab = build_vocab(smiles, cfg.max_vocab_size)
    vocab.save(cfg.out_path or "vocab.txt")
    _write_rejects(rejects)
    logger.info("vocabulary of %d tokens", len(vocab))


def cmd_descriptors(cfg: DictConfig) -> None:
    rows, rejects = _parse_rows(cfg, cfg.strip_salts, "descriptors")
    names = resolve_names(_descriptor_names(cfg))
    kept, values = [], []
    for line, raw, mol in rows:
        try:
            values.append(compute_descriptors(mol, names).values)
        except NumericalError as err:
            rejects.append({"line": line, "smiles": raw, "error": str(err)})
            continue
        kept.append(raw)
    frame = pd.DataFrame(np.array(values).reshape(len(values), len(names)), columns=list(names))
    frame.insert(0, "smiles", kept)
    frame.to_csv(cfg.out_path or "descriptors.csv", index=False)
    _write_rejects(sorted(rejects, key=lambda r: r["line"]))


def cmd_split(cfg: DictConfig) -> None:
    data = read_dataset(_path(cfg, "in_path"), cfg.smiles_column)
    result = scaffold_split(data, (cfg.frac_train, cfg.frac_valid, cfg.frac_test), cfg.smiles_column)
    summary = write_split(result, ".")
    printr(summary)


def cmd_pretrain(cfg: DictConfig) -> None:
    train_path, valid_path = _prepared(cfg, labelled=cfg.objective == "mtr")
    config = TrainConfig(
        train_path=str(train_path),
        valid_path=str(valid_path),
        out_dir=str(Path("checkpoint").resolve()),
        objective=cfg.objective,
        base_lr=cfg.base_lr,
        base_batch_size=cfg.base_batch_size,
        seed=cfg.seed,
        **_train_settings(cfg),
    )
    result = pretrain(config, _arch(cfg))
    printr(result.as_dict())


def cmd_resume(cfg: DictConfig) -> None:
    target = Path("checkpoint").resolve()
    shutil.copytree(_path(cfg, "checkpoint"), target)
    result = resume(target)
    printr(result.as_dict())


def cmd_hpsearch(cfg: DictConfig) -> None:
    objectives = tuple(cfg.objectives)
    train_path, valid_path = _prepared(cfg, labelled="mtr" in objectives)
    search = run_hpsearch(
        train_path,
        valid_path,
        Path(".").resolve(),
        n=cfg.n_configs,
        k=cfg.k_select,
        seed=cfg.seed,
        space=SearchSpace.from_mapping(cfg),
        objectives=objectives,
        train_settings=_train_settings(cfg),
        n_jobs=cfg.n_jobs,
    )
    for objective in objectives:
        printr({objective: [r["index"] for r in search[objective]]})


def cmd_finetune(cfg: DictConfig) -> None:
    values = OmegaConf.to_container(cfg, resolve=True)
    for key in ("split_dir", "train_path", "valid_path", "test_path", "checkpoint"):
        if values.get(key):
            values[key] = to_absolute_path(str(values[key]))
    n_jobs = 1 if cfg.deterministic else cfg.n_jobs
    report = finetune(spec_from_mapping(values), Path(".").resolve(), n_jobs=n_jobs)
    printr(json.loads(report.to_json()))


def cmd_experiment(cfg: DictConfig) -> None:
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {cfg.experiment!r}")
    out_dir = Path(".").resolve()
    if cfg.experiment == "correlation":
        train_path, valid_path = _prepared(cfg, labelled=True)
        _, rho = experiment_loss_correlation(
            train_path,
            valid_path,
            out_dir,
            n_configs=cfg.n_configs,
            seed=cfg.seed,
            space=SearchSpace.from_mapping(cfg),
            train_settings=_train_settings(cfg),
            n_jobs=cfg.n_jobs,
        )
        printr({"spearman_rho": rho})
    elif cfg.experiment == "scaling":
        train_path, valid_path = _prepared(cfg, labelled=cfg.objective == "mtr")
        table = experiment_scaling(
            train_path,
            valid_path,
            out_dir,
            read_jsonl(_path(cfg, "selected_path")),
            sizes=tuple(cfg.sizes),
            objective=cfg.objective,
            seed=cfg.seed,
            train_settings=_train_settings(cfg),
            n_jobs=cfg.n_jobs,
        )
        printr(table.pivot(index="config", columns="size", values="val_loss"))
    else:
        if not cfg.reports:
            raise ConfigError("experiment transfer needs reports=[...]")
        reports = read_reports([to_absolute_path(str(p)) for p in cfg.reports])
        results = read_jsonl(_path(cfg, "results_path")) if cfg.results_path else []
        _, fits = experiment_transfer(reports, out_dir, results)
        printr({name: fit._asdict() for name, fit in fits.items()})


def cmd_embed(cfg: DictConfig) -> None:
    export_embeddings(
        _path(cfg, "in_path"),
        ".",
        mode=cfg.mode,
        checkpoint=_optional_path(cfg, "checkpoint"),
        smiles_column=cfg.smiles_column,
        label_column=cfg.label_column,
        id_column=cfg.id_column,
        radius=cfg.radius,
        n_bits=cfg.n_bits,
        distance_matrix=cfg.distance_matrix,
    )


COMMANDS: dict[str, Callable[[DictConfig], None]] = {
    "canonicalize": cmd_canonicalize,
    "tokenize": cmd_tokenize,
    "vocab": cmd_vocab,
    "descriptors": cmd_descriptors,
    "split": cmd_split,
    "pretrain": cmd_pretrain,
    "resume": cmd_resume,
    "hpsearch": cmd_hpsearch,
    "finetune": cmd_finetune,
    "experiment": cmd_experiment,
    "embed": cmd_embed,
}


def dispatch(cfg: DictConfig) -> None:
    try:
        command = COMMANDS[cfg.command]
    except KeyError:
        raise ConfigError(f"unknown command {cfg.command!r}; choose from {sorted(COMMANDS)}") from None
    command(cfg)


def run_command(cfg: DictConfig, overrides: Sequence[str] = (), run_dir: str | Path = ".") -> int:
    """Run the configured command and write its manifest.

    Parameters
    ----------
    cfg : DictConfig
        Composed configuration
    overrides : Sequence[str]
        Command-line overrides, re-applied on top of ``config_file``
    run_dir : str | Path
        Directory receiving the manifest

    Returns
    -------
    int
        Exit code: 0 on success, 1 on an input error, 2 on a numerical failure
    """
    logging.captureWarnings(True)
    manifest = RunManifest(
        command=str(cfg.get("command")), config={}, inputs={}, seed=int(cfg.get("seed", 0)), start=_now()
    )
    code = 0
    try:
        if cfg.get("config_file"):
            cfg = merge_config_file(cfg, read_config_text(to_absolute_path(str(cfg.config_file))), overrides)
        manifest.command = str(cfg.command)
        manifest.seed = int(cfg.seed)
        manifest.config = OmegaConf.to_container(cfg, resolve=True)
        manifest.inputs = input_hashes(cfg)
        printr(cfg)
        dispatch(cfg)
    except InputError as err:
        logger.error("%s: %s", type(err).__name__, err)
        code = EXIT_INPUT
    except NumericalError as err:
        logger.error("%s: %s", type(err).__name__, err)
        code = EXIT_NUMERICAL
    finally:
        manifest.end = _now()
        manifest.exit_code = code
        root = Path(run_dir).resolve()
        files = (p for p in root.rglob("*") if p.is_file() and ".hydra" not in p.parts)
        manifest.outputs = sorted(str(p.relative_to(root)) for p in files)
        manifest.write(run_dir)
    return code


@hydra.main("configs", "base", version_base="1.1")  # type: ignore[misc]
def run(cfg: DictConfig) -> None:
    """Hydra application behind :func:`main`.

    Parameters
    ----------
    cfg : DictConfig
        Composed configuration
    """
    code = run_command(cfg, HydraConfig.get().overrides.task)
    if code:
        sys.exit(code)


def translate_argv(argv: Sequence[str]) -> list[str]:
    """Turn ``command [kind] --flag value`` arguments into hydra overrides.

    ``--deterministic`` is a switch; every other ``--some-flag value`` becomes
    ``some_flag=value``. Arguments already written as ``key=value`` pass
    through unchanged.
    """
    out: list[str] = []
    args = list(argv)
    positional = 0
    i = 0
    while i < len(args):
        arg = args[i]
        if arg == "--deterministic":
            out.append("deterministic=true")
        elif arg in HYDRA_SWITCHES:
            out.append(arg)
        elif arg in HYDRA_OPTIONS and i + 1 < len(args):
            out += [arg, args[i + 1]]
            i += 1
        elif arg.startswith("--"):
            key, _, value = arg[2:].partition("=")
            if not value:
                if i + 1 >= len(args):
                    raise ConfigError(f"flag {arg} needs a value")
                i += 1
                value = args[i]
            out.append(f"{FLAG_ALIASES.get('--' + key, key.replace('-', '_'))}={value}")
        elif "=" not in arg and not arg.startswith("-"):
            out.append(f"command={arg}" if positional == 0 else f"experiment={arg}")
            positional += 1
        else:
            out.append(arg)
        i += 1
    return out


def main(argv: Sequence[str] | None = None) -> None:
    """Console script ``molpretrain``."""
    try:
        args = translate_argv(sys.argv[1:] if argv is None else argv)
    except ConfigError as err:
        printr(f"[red]{err}[/red]")
        sys.exit(EXIT_INPUT)
    sys.argv = [sys.argv[0], *args]
    run()


if __name__ == "__main__":
    main()
