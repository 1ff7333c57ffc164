"""Readers for SMILES files and the bundled corpus."""

from __future__ import annotations

from typing import Iterator

from importlib import resources
from pathlib import Path

import pandas as pd

from molpretrain.errors import DataFormatError, InputError

CHUNK_ROWS = 50_000


def read_smiles_file(path: str | Path, smiles_column: str = "smiles") -> Iterator[tuple[int, str]]:
    """Stream ``(line_number, smiles)`` pairs from a file.

    ``.smi``/``.txt`` files hold one SMILES per line; anything after the first
    whitespace (a name or id) is ignored, blank lines are skipped. ``.csv``
    files must have a header row containing ``smiles_column``. Line numbers are
    1-based and count the header.

    Parameters
    ----------
    path : str | Path
        Input file
    smiles_column : str
        Column holding SMILES in CSV input

    Yields
    ------
    tuple[int, str]
        Line number and raw SMILES
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    if path.suffix.lower() == ".csv":
        try:
            header = pd.read_csv(path, nrows=0).columns
        except pd.errors.EmptyDataError:
            raise DataFormatError("empty CSV file", 1) from None
        if smiles_column not in header:
            raise DataFormatError(f"CSV header lacks a {smiles_column!r} column", 1)
        line_number = 1
        chunks = pd.read_csv(
            path,
            usecols=[smiles_column],
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
            chunksize=CHUNK_ROWS,
        )
        for chunk in chunks:
            for smiles in chunk[smiles_column]:
                line_number += 1
                if smiles.strip():
                    yield line_number, smiles.strip()
        return
    with path.open() as fh:
        for line_number, line in enumerate(fh, start=1):
            fields = line.split()
            if fields:
                yield line_number, fields[0]


def bundled_corpus_path() -> Path:
    return Path(str(resources.files("molpretrain") / "data" / "corpus.smi"))


def bundled_corpus() -> list[str]:
    """The 1,000-molecule corpus shipped with the package."""
    return [smiles for _, smiles in read_smiles_file(bundled_corpus_path())]


def write_lines(path: str | Path, lines: list[str] | Iterator[str]) -> int:
    count = 0
    with Path(path).open("w") as fh:
        for line in lines:
            fh.write(line + "\n")
            count += 1
    return count
