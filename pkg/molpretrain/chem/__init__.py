from molpretrain.chem.canon import canonical_ranks, canonicalize
from molpretrain.chem.fragments import fragments, heavy_atom_count, largest_fragment
from molpretrain.chem.molecule import (
    Atom,
    Bond,
    BondOrder,
    Molecule,
    circuit_rank,
    implicit_hydrogens,
    ring_bonds,
)
from molpretrain.chem.smiles import parse_smiles, random_smiles, render, write_smiles

__all__ = [
    "Atom",
    "Bond",
    "BondOrder",
    "Molecule",
    "canonical_ranks",
    "canonicalize",
    "circuit_rank",
    "fragments",
    "heavy_atom_count",
    "implicit_hydrogens",
    "largest_fragment",
    "parse_smiles",
    "random_smiles",
    "render",
    "ring_bonds",
    "write_smiles",
]
