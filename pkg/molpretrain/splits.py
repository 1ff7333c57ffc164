"""Bemis-Murcko scaffolds and the deterministic largest-first scaffold split."""

from __future__ import annotations

from typing import Sequence

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd

from molpretrain.chem.canon import canonicalize
from molpretrain.chem.molecule import Molecule
from molpretrain.chem.smiles import parse_smiles
from molpretrain.errors import InputError, MolPretrainError

logger = logging.getLogger(__name__)

PARTITIONS = ("train", "valid", "test")


def murcko_scaffold(mol: Molecule) -> str:
    """Canonical SMILES of the ring systems plus the linkers between them.

    Side chains are stripped by repeatedly deleting atoms that are not in a
    ring and have at most one remaining neighbour. Element identities are
    kept. Acyclic molecules give the empty string.

    Parameters
    ----------
    mol : Molecule
        Molecule

    Returns
    -------
    str
        Scaffold key
    """
    ring_atoms = set()
    for bond in mol.bonds:
        if bond.in_ring:
            ring_atoms.update((bond.begin, bond.end))
    if not ring_atoms:
        return ""
    alive = set(range(len(mol.atoms)))
    degree = [mol.degree(i) for i in range(len(mol.atoms))]
    frontier = [i for i in alive if i not in ring_atoms and degree[i] <= 1]
    while frontier:
        atom = frontier.pop()
        if atom not in alive:
            continue
        alive.discard(atom)
        for nbr, _ in mol.neighbors[atom]:
            if nbr in alive:
                degree[nbr] -= 1
                if nbr not in ring_atoms and degree[nbr] <= 1:
                    frontier.append(nbr)
    return canonicalize(mol.subgraph(alive))


@dataclass
class SplitResult:
    train: pd.DataFrame
    valid: pd.DataFrame
    test: pd.DataFrame
    rejects: pd.DataFrame
    n_groups: int
    keys: dict[str, list[str]] = field(default_factory=dict)

    def partitions(self) -> dict[str, pd.DataFrame]:
        return {"train": self.train, "valid": self.valid, "test": self.test}

    def leakage_free(self) -> bool:
        seen: dict[str, str] = {}
        for name, keys in self.keys.items():
            for key in keys:
                if seen.setdefault(key, name) != name:
                    return False
        return True

    def summary(self) -> dict:
        return {
            "n_rows": int(sum(len(p) for p in self.partitions().values())),
            "n_rejects": int(len(self.rejects)),
            "n_groups": self.n_groups,
            "sizes": {name: int(len(p)) for name, p in self.partitions().items()},
            "leakage_free": self.leakage_free(),
        }


def scaffold_split(
    data: pd.DataFrame,
    fractions: Sequence[float] = (0.8, 0.1, 0.1),
    smiles_column: str = "smiles",
) -> SplitResult:
    """Partition rows by scaffold, whole groups at a time.

    Groups are sorted by size (descending) then key (ascending). Each group
    goes to train while ``|train| < f_train * N``, otherwise to valid while
    ``|valid| < f_valid * N``, otherwise to test. No scaffold spans two
    partitions. Rows that do not parse are collected in ``rejects``.

    Parameters
    ----------
    data : pd.DataFrame
        Dataset with a SMILES column; all columns are carried over
    fractions : Sequence[float]
        Train, valid and test fractions, summing to one
    smiles_column : str
        Name of the SMILES column

    Returns
    -------
    SplitResult
        The three partitions, the rejects and summary information
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise InputError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    if smiles_column not in data.columns:
        raise InputError(f"dataset has no {smiles_column!r} column")
    if data.empty:
        raise InputError("cannot split an empty dataset")

    groups: dict[str, list[int]] = {}
    rejects = []
    for pos, smiles in enumerate(data[smiles_column].astype(str)):
        try:
            key = murcko_scaffold(parse_smiles(smiles))
        except MolPretrainError as err:
            rejects.append({"line": pos + 2, "smiles": smiles, "error": str(err)})
            continue
        groups.setdefault(key, []).append(pos)

    n_valid_rows = sum(len(rows) for rows in groups.values())
    ordered = sorted(groups.items(), key=lambda item: (-len(item[1]), item[0]))
    targets = [f * n_valid_rows for f in fractions]
    assigned: dict[str, list[int]] = {name: [] for name in PARTITIONS}
    keys: dict[str, list[str]] = {name: [] for name in PARTITIONS}
    for key, rows in ordered:
        if len(assigned["train"]) < targets[0] - 1e-9:
            name = "train"
        elif len(assigned["valid"]) < targets[1] - 1e-9:
            name = "valid"
        else:
            name = "test"
        assigned[name].extend(rows)
        keys[name].append(key)

    parts = {name: data.iloc[sorted(rows)] for name, rows in assigned.items()}
    for name, part in parts.items():
        if part.empty:
            warnings.warn(f"scaffold split left the {name} partition empty")
    if rejects:
        logger.warning("%d rows could not be parsed and were rejected", len(rejects))
    return SplitResult(
        parts["train"],
        parts["valid"],
        parts["test"],
        pd.DataFrame(rejects, columns=["line", "smiles", "error"]),
        len(groups),
        keys,
    )


def write_split(result: SplitResult, out_dir: str | Path) -> dict:
    """Write ``train.csv``, ``valid.csv``, ``test.csv``, ``rejects.csv`` and ``split_summary.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in result.partitions().items():
        part.to_csv(out_dir / f"{name}.csv", index=False)
    result.rejects.to_csv(out_dir / "rejects.csv", index=False)
    summary = result.summary()
    (out_dir / "split_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def read_dataset(path: str | Path, smiles_column: str = "smiles") -> pd.DataFrame:
    """Load a CSV (with header) or a one-SMILES-per-line file as a DataFrame."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    if path.suffix.lower() == ".csv":
        frame = pd.read_csv(path, dtype={smiles_column: str}, keep_default_na=False)
        if smiles_column not in frame.columns:
            raise InputError(f"{path} has no {smiles_column!r} column")
        return frame
    lines = [line.split()[0] for line in path.read_text().splitlines() if line.strip()]
    return pd.DataFrame({smiles_column: lines})
