from __future__ import annotations

from typing import Mapping

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import seaborn as sns  # noqa: E402

from molpretrain.evalbench.metrics import LinearFit  # noqa: E402

sns.set_theme(style="whitegrid")


def _save(fig: plt.Figure, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_loss_correlation(table: pd.DataFrame, path: str | Path, rho: float | None = None) -> Path:
    """Scatter of MLM against MTR validation loss, one point per configuration."""
    fig, ax = plt.subplots(figsize=(4.5, 4))
    sns.scatterplot(data=table, x="mlm_loss", y="mtr_loss", s=40, ax=ax)
    ax.set_xlabel("MLM validation loss")
    ax.set_ylabel("MTR validation loss")
    if rho is not None:
        ax.set_title(f"Spearman rho = {rho:.3f}")
    return _save(fig, path)


def plot_scaling(table: pd.DataFrame, path: str | Path) -> Path:
    """Validation loss against corpus size, one line per configuration.

    Configurations are ordered (and coloured) by their loss on the smallest
    corpus.
    """
    smallest = table[table["size"] == table["size"].min()].sort_values("val_loss")
    order = [str(c) for c in smallest["config"]]
    data = table.assign(config=table["config"].astype(str))
    fig, ax = plt.subplots(figsize=(5, 4))
    sns.lineplot(data=data, x="size", y="val_loss", hue="config", hue_order=order, marker="o", ax=ax)
    ax.set_xscale("log")
    ax.set_xlabel("pretraining rows")
    ax.set_ylabel("converged validation loss")
    return _save(fig, path)


def plot_transfer(table: pd.DataFrame, fits: Mapping[str, LinearFit], path: str | Path) -> Path:
    """Downstream metric against pretraining loss per dataset, with the fitted lines dotted."""
    fig, ax = plt.subplots(figsize=(5, 4))
    sns.scatterplot(data=table, x="pretrain_loss", y="value", hue="dataset", ax=ax)
    palette = dict(zip(table["dataset"].unique(), sns.color_palette(n_colors=table["dataset"].nunique())))
    for dataset, fit in fits.items():
        xs = table.loc[table["dataset"] == dataset, "pretrain_loss"]
        grid = np.linspace(xs.min(), xs.max(), 20)
        ax.plot(grid, fit.slope * grid + fit.intercept, ls=":", color=palette.get(dataset, "gray"))
    ax.set_xlabel("pretraining validation loss")
    ax.set_ylabel("test metric")
    return _save(fig, path)
