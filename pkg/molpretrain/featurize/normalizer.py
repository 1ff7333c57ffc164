from __future__ import annotations

from typing import Sequence

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from molpretrain.errors import DataFormatError, InputError

CONSTANT_TOLERANCE = 1e-12


@dataclass(frozen=True)
class NormStats:
    """Per-task population mean and standard deviation.

    Columns whose standard deviation is (numerically) zero are flagged
    ``constant``: they pass through :meth:`apply` and :meth:`invert` unchanged
    and are excluded from the regression loss via :attr:`task_mask`.
    """

    names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    @property
    def task_count(self) -> int:
        return len(self.names)

    @property
    def task_mask(self) -> np.ndarray:
        return (~self.constant).astype(np.float64)

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.task_count:
            raise InputError(f"expected {self.task_count} columns, got {x.shape[-1]}")
        return x

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x)
        scale = np.where(self.constant, 1.0, self.std)
        shift = np.where(self.constant, 0.0, self.mean)
        return (x - shift) / scale

    def invert(self, z: np.ndarray) -> np.ndarray:
        z = self._check(z)
        scale = np.where(self.constant, 1.0, self.std)
        shift = np.where(self.constant, 0.0, self.mean)
        return z * scale + shift

    def save(self, path: str | Path) -> None:
        pd.DataFrame(
            {"name": self.names, "mean": self.mean, "std": self.std, "constant": self.constant}
        ).to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def load(cls, path: str | Path) -> NormStats:
        frame = pd.read_csv(path)
        missing = {"name", "mean", "std", "constant"} - set(frame.columns)
        if missing:
            raise DataFormatError(f"normalisation file {path} lacks columns {sorted(missing)}", 1)
        return cls(
            tuple(frame["name"].astype(str)),
            frame["mean"].to_numpy(np.float64),
            frame["std"].to_numpy(np.float64),
            frame["constant"].astype(bool).to_numpy(),
        )


def fit_normalizer(matrix: np.ndarray, names: Sequence[str] | None = None) -> NormStats:
    """Fit per-column population statistics.

    Parameters
    ----------
    matrix : np.ndarray
        ``[rows, tasks]`` label matrix, at least two rows
    names : Sequence[str] | None
        Task names, defaults to ``task_0 ... task_{D-1}``

    Returns
    -------
    NormStats
        Fitted statistics

    Raises
    ------
    InputError
        If fewer than two rows are given
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 2:
        raise InputError("normalisation needs a 2-d matrix with at least two rows")
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)
    constant = std <= CONSTANT_TOLERANCE * np.maximum(1.0, np.abs(mean))
    if names is None:
        names = [f"task_{i}" for i in range(matrix.shape[1])]
    if len(names) != matrix.shape[1]:
        raise InputError("one name per column is required")
    return NormStats(tuple(names), mean, std, constant)
