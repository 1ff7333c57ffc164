"""Closed-form graph descriptors used as multi-task regression labels.

Every descriptor is a function ``Molecule -> float`` registered under a name
with :func:`descriptor`. The baseline set has twelve entries; runs can select
any subset (or register more) through the ``descriptors`` config key.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from molpretrain.chem.elements import HALOGENS
from molpretrain.chem.molecule import BondOrder, Molecule, circuit_rank
from molpretrain.errors import InputError, NumericalError

logger = logging.getLogger(__name__)

DESCRIPTORS: dict[str, Callable[[Molecule], float]] = {}


def descriptor(name: str) -> Callable[[Callable[[Molecule], float]], Callable[[Molecule], float]]:
    """Register a descriptor function under ``name``."""

    def register(fn: Callable[[Molecule], float]) -> Callable[[Molecule], float]:
        if name in DESCRIPTORS:
            raise ValueError(f"descriptor {name!r} registered twice")
        DESCRIPTORS[name] = fn
        return fn

    return register


def _heavy(mol: Molecule) -> list[int]:
    return [i for i, a in enumerate(mol.atoms) if a.element != "H"]


def _heavy_degree(mol: Molecule, index: int) -> int:
    return sum(1 for j, _ in mol.neighbors[index] if mol.atoms[j].element != "H")


@descriptor("mol_weight")
def mol_weight(mol: Molecule) -> float:
    return mol.molecular_weight


@descriptor("heavy_atom_count")
def heavy_atom_count(mol: Molecule) -> float:
    return float(len(_heavy(mol)))


@descriptor("bond_count")
def bond_count(mol: Molecule) -> float:
    """Bonds between two heavy atoms."""
    return float(
        sum(
            1
            for b in mol.bonds
            if mol.atoms[b.begin].element != "H" and mol.atoms[b.end].element != "H"
        )
    )


@descriptor("circuit_rank")
def _circuit_rank(mol: Molecule) -> float:
    return float(circuit_rank(mol))


@descriptor("aromatic_atom_count")
def aromatic_atom_count(mol: Molecule) -> float:
    return float(sum(1 for a in mol.atoms if a.aromatic))


@descriptor("hbd")
def hbd(mol: Molecule) -> float:
    """N and O atoms carrying at least one hydrogen."""
    return float(sum(1 for a in mol.atoms if a.element in ("N", "O") and a.total_h >= 1))


@descriptor("hba")
def hba(mol: Molecule) -> float:
    return float(sum(1 for a in mol.atoms if a.element in ("N", "O")))


@descriptor("rotatable_bonds")
def rotatable_bonds(mol: Molecule) -> float:
    """Acyclic single bonds whose endpoints both have heavy degree >= 2.

    Amide C-N bonds are counted.
    """
    return float(
        sum(
            1
            for b in mol.bonds
            if b.order is BondOrder.SINGLE
            and not b.in_ring
            and _heavy_degree(mol, b.begin) >= 2
            and _heavy_degree(mol, b.end) >= 2
        )
    )


@descriptor("fraction_csp3")
def fraction_csp3(mol: Molecule) -> float:
    """Share of carbons with only single bonds (0 for carbon-free molecules)."""
    carbons = [i for i, a in enumerate(mol.atoms) if a.element == "C"]
    if not carbons:
        return 0.0
    sp3 = sum(
        1
        for i in carbons
        if not mol.atoms[i].aromatic
        and all(mol.bonds[k].order is BondOrder.SINGLE for _, k in mol.neighbors[i])
    )
    return sp3 / len(carbons)


@descriptor("halogen_count")
def halogen_count(mol: Molecule) -> float:
    return float(sum(1 for a in mol.atoms if a.element in HALOGENS))


@descriptor("net_formal_charge")
def net_formal_charge(mol: Molecule) -> float:
    return float(sum(a.formal_charge for a in mol.atoms))


@descriptor("heteroatom_count")
def heteroatom_count(mol: Molecule) -> float:
    return float(sum(1 for a in mol.atoms if a.element not in ("C", "H")))


BASELINE_DESCRIPTORS: tuple[str, ...] = (
    "mol_weight",
    "heavy_atom_count",
    "bond_count",
    "circuit_rank",
    "aromatic_atom_count",
    "hbd",
    "hba",
    "rotatable_bonds",
    "fraction_csp3",
    "halogen_count",
    "net_formal_charge",
    "heteroatom_count",
)


@dataclass(frozen=True)
class DescriptorVector:
    names: tuple[str, ...]
    values: np.ndarray

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


def resolve_names(names: Sequence[str] | None) -> tuple[str, ...]:
    if names is None:
        return BASELINE_DESCRIPTORS
    unknown = [n for n in names if n not in DESCRIPTORS]
    if unknown:
        raise InputError(f"unknown descriptors {unknown}; known: {sorted(DESCRIPTORS)}")
    return tuple(names)


def compute_descriptors(mol: Molecule, names: Sequence[str] | None = None) -> DescriptorVector:
    """Compute the descriptor vector of a molecule.

    Parameters
    ----------
    mol : Molecule
        Parsed molecule (salt stripping, if wanted, is the caller's job)
    names : Sequence[str] | None
        Registered descriptor names; defaults to the twelve baseline descriptors

    Returns
    -------
    DescriptorVector
        Values in the order of ``names``
    """
    names = resolve_names(names)
    values = np.array([DESCRIPTORS[n](mol) for n in names], dtype=np.float64)
    if not np.all(np.isfinite(values)):
        bad = [n for n, v in zip(names, values) if not math.isfinite(v)]
        raise NumericalError(f"non-finite descriptors {bad} for {mol.source!r}")
    return DescriptorVector(names, values)


def descriptor_frame(
    smiles: Iterable[str], mols: Iterable[Molecule], names: Sequence[str] | None = None
) -> pd.DataFrame:
    """Descriptor cache table: a ``smiles`` column followed by one column per descriptor."""
    names = resolve_names(names)
    rows = [compute_descriptors(m, names).values for m in mols]
    frame = pd.DataFrame(np.array(rows).reshape(len(rows), len(names)), columns=list(names))
    frame.insert(0, "smiles", list(smiles))
    return frame
