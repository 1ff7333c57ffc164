"""The three pretraining analyses: loss correlation, corpus-size scaling and transfer.

Each experiment writes a CSV table, a PNG figure and a small JSON summary
into its output directory. Runs that diverge are kept in the table with
``status = "diverged"`` and left out of every statistic.
"""

from __future__ import annotations

from typing import Any, Mapping, Sequence

import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from molpretrain.errors import InputError
from molpretrain.evalbench import plots
from molpretrain.evalbench.metrics import LinearFit, linear_fit, spearman
from molpretrain.training.hpsearch import ARCH_KEYS, SearchSpace, run_hpsearch, run_pretraining_jobs
from molpretrain.training.loader import nested_subsets
from molpretrain.training.pretrain import BEST_DIR

logger = logging.getLogger(__name__)


def _write_summary(out_dir: Path, name: str, summary: Mapping[str, Any]) -> None:
    (out_dir / f"{name}_summary.json").write_text(json.dumps(dict(summary), indent=2, sort_keys=True) + "\n")


def loss_correlation_table(results: Sequence[Mapping[str, Any]]) -> pd.DataFrame:
    """One row per configuration with its MLM and MTR validation losses.

    A configuration is ``ok`` only when both of its runs finished with a
    finite loss.
    """
    rows: dict[int, dict[str, Any]] = {}
    for record in results:
        index = int(record["index"])
        row = rows.setdefault(index, {"config": index, "mlm_loss": np.nan, "mtr_loss": np.nan})
        value = record.get("best_val")
        if record.get("status") == "ok" and value is not None and np.isfinite(value):
            row[f"{record['objective']}_loss"] = float(value)
    table = pd.DataFrame(sorted(rows.values(), key=lambda r: r["config"]), columns=["config", "mlm_loss", "mtr_loss"])
    table["status"] = np.where(table[["mlm_loss", "mtr_loss"]].notna().all(axis=1), "ok", "diverged")
    return table


def experiment_loss_correlation(
    train_path: str | Path,
    valid_path: str | Path,
    out_dir: str | Path,
    n_configs: int = 5,
    seed: int = 0,
    space: SearchSpace | None = None,
    train_settings: Mapping[str, Any] | None = None,
    n_jobs: int = 1,
) -> tuple[pd.DataFrame, float]:
    """Train the same sampled configurations under both objectives and rank-correlate their losses.

    ``train_path`` must be a labelled (MTR) corpus; the MLM runs ignore the
    label columns.

    Returns
    -------
    tuple[pd.DataFrame, float]
        The ``config, mlm_loss, mtr_loss, status`` table and Spearman's rho
        over the ``ok`` rows (NaN with fewer than two)
    """
    if n_configs < 5:
        logger.warning("a loss correlation over %d configurations is not very informative", n_configs)
    out_dir = Path(out_dir)
    search = run_hpsearch(
        train_path,
        valid_path,
        out_dir,
        n=n_configs,
        k=min(5, n_configs),
        seed=seed,
        space=space,
        objectives=("mlm", "mtr"),
        train_settings=train_settings,
        n_jobs=n_jobs,
    )
    table = loss_correlation_table(search["results"])
    ok = table[table["status"] == "ok"]
    rho = spearman(ok["mlm_loss"], ok["mtr_loss"]) if len(ok) >= 2 else float("nan")
    table.to_csv(out_dir / "correlation.csv", index=False)
    plots.plot_loss_correlation(ok, out_dir / "correlation.png", rho)
    diverged = table.loc[table["status"] != "ok", "config"].tolist()
    _write_summary(
        out_dir,
        "correlation",
        {"n_configs": n_configs, "n_ok": len(ok), "diverged": diverged, "spearman_rho": rho},
    )
    logger.info("loss correlation over %d configurations: rho = %.3f", len(ok), rho)
    return table, rho


def experiment_scaling(
    train_path: str | Path,
    valid_path: str | Path,
    out_dir: str | Path,
    configs: Sequence[Mapping[str, Any]],
    sizes: Sequence[int] = (1000, 5000, 20000),
    objective: str = "mlm",
    seed: int = 0,
    train_settings: Mapping[str, Any] | None = None,
    n_jobs: int = 1,
) -> pd.DataFrame:
    """Pretrain each configuration to early stopping on nested prefixes of one shuffled corpus.

    Parameters
    ----------
    train_path, valid_path : str | Path
        Prepared (shuffled) training file and the shared held-out file
    out_dir : str | Path
        Receives the subsets, the runs and the ``scaling`` outputs
    configs : Sequence[Mapping[str, Any]]
        Selection records (architecture keys plus ``lr`` and ``index``), e.g.
        ``selected_mlm.jsonl`` of an hpsearch
    sizes : Sequence[int]
        Corpus sizes in rows
    objective : str
        ``"mlm"`` or ``"mtr"``; MLM picks may be reused for MTR runs

    Returns
    -------
    pd.DataFrame
        ``config, size, val_loss, status``, one row per configuration and size
    """
    if not configs:
        raise InputError("the scaling experiment needs at least one configuration")
    out_dir = Path(out_dir)
    subsets = nested_subsets(train_path, sorted(sizes), out_dir / "subsets")
    settings = dict(train_settings or {})
    jobs = []
    for record in configs:
        for size, subset in zip(sorted(sizes), subsets):
            index = int(record["index"])
            jobs.append(
                {
                    "train": {
                        **settings,
                        "train_path": str(subset),
                        "valid_path": str(valid_path),
                        "out_dir": str(out_dir / "runs" / f"{objective}_{index:03d}_{size}"),
                        "objective": objective,
                        "base_lr": float(record["lr"]),
                        "base_batch_size": settings.get("batch_size", 32),
                        "seed": seed,
                    },
                    "arch": {k: record[k] for k in ARCH_KEYS},
                    "meta": {"config": index, "size": size},
                }
            )
    results = run_pretraining_jobs(jobs, 1 if settings.get("deterministic") else n_jobs, desc="scaling")
    table = pd.DataFrame(
        [
            {
                "config": r["config"],
                "size": r["size"],
                "val_loss": r["best_val"] if r["status"] == "ok" else np.nan,
                "status": r["status"],
            }
            for r in results
        ]
    )
    table.to_csv(out_dir / "scaling.csv", index=False)
    plots.plot_scaling(table[table["status"] == "ok"], out_dir / "scaling.png")

    smallest, largest = min(sizes), max(sizes)
    wide = table.pivot(index="config", columns="size", values="val_loss")
    improved = int((wide[largest] <= wide[smallest]).sum())
    _write_summary(
        out_dir,
        "scaling",
        {"sizes": sorted(sizes), "n_configs": len(configs), "improved_with_size": improved, "objective": objective},
    )
    logger.info(
        "%d of %d configurations reached a lower loss on %d rows than on %d", improved, len(configs), largest, smallest
    )
    return table


def pretrain_losses(results: Sequence[Mapping[str, Any]]) -> dict[str, float]:
    """Map run and ``best/`` directories of pretraining results to their best validation loss."""
    losses = {}
    for record in results:
        if record.get("status") == "ok" and record.get("out_dir"):
            run = Path(record["out_dir"])
            losses[str(run)] = float(record["best_val"])
            losses[str(run / BEST_DIR)] = float(record["best_val"])
    return losses


def experiment_transfer(
    reports: Sequence[Mapping[str, Any]],
    out_dir: str | Path,
    results: Sequence[Mapping[str, Any]] = (),
) -> tuple[pd.DataFrame, dict[str, LinearFit]]:
    """Fit downstream metric against pretraining loss for every dataset.

    Parameters
    ----------
    reports : Sequence[Mapping[str, Any]]
        Finetuning reports (``report.jsonl`` records)
    out_dir : str | Path
        Receives ``transfer.csv``, ``transfer.png`` and the summary
    results : Sequence[Mapping[str, Any]]
        Pretraining results used to look up the loss of a report's
        checkpoint when the report does not carry it

    Returns
    -------
    tuple[pd.DataFrame, dict[str, LinearFit]]
        ``dataset, checkpoint, pretrain_loss, metric, value, slope,
        intercept, r`` rows and the fit per dataset
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    known = pretrain_losses(results)
    rows = []
    for report in reports:
        loss = report.get("pretrain_loss")
        if loss is None and report.get("checkpoint"):
            loss = known.get(str(Path(report["checkpoint"])))
        if loss is None:
            logger.warning("no pretraining loss for %s on %s; skipped", report.get("checkpoint"), report["dataset"])
            continue
        rows.append(
            {
                "dataset": report["dataset"],
                "checkpoint": report.get("checkpoint"),
                "pretrain_loss": float(loss),
                "metric": report["metric"],
                "value": float(report["value"]),
            }
        )
    table = pd.DataFrame(rows, columns=["dataset", "checkpoint", "pretrain_loss", "metric", "value"])
    if table.empty:
        raise InputError("no finetuning report could be matched to a pretraining loss")
    fits: dict[str, LinearFit] = {}
    for dataset, group in table.groupby("dataset", sort=True):
        if len(group) >= 2 and group["pretrain_loss"].nunique() >= 2:
            fits[str(dataset)] = linear_fit(group["pretrain_loss"].to_numpy(), group["value"].to_numpy())
        else:
            logger.warning("%s: need two distinct pretraining losses for a fit", dataset)
    for column in LinearFit._fields:
        table[column] = [getattr(fits[d], column) if d in fits else np.nan for d in table["dataset"]]
    table.to_csv(out_dir / "transfer.csv", index=False)
    plots.plot_transfer(table, fits, out_dir / "transfer.png")
    _write_summary(out_dir, "transfer", {d: f._asdict() for d, f in fits.items()})
    return table, fits
