from __future__ import annotations

from molpretrain.chem.canon import canonicalize
from molpretrain.chem.molecule import Molecule


def heavy_atom_count(mol: Molecule) -> int:
    return sum(1 for atom in mol.atoms if atom.element != "H")


def fragments(mol: Molecule) -> list[Molecule]:
    """Split a molecule into its connected components."""
    comps = mol.components()
    if len(comps) == 1:
        return [mol]
    return [mol.subgraph(comp) for comp in comps]


def largest_fragment(mol: Molecule) -> Molecule:
    """Keep the component with the most heavy atoms, dropping salts and solvents.

    Ties are broken by higher molecular weight, then by the lexicographically
    smaller canonical SMILES.

    Parameters
    ----------
    mol : Molecule
        Any molecule

    Returns
    -------
    Molecule
        The selected fragment; ``mol`` itself when it has a single component
    """
    parts = fragments(mol)
    if len(parts) == 1:
        return mol
    return min(
        parts,
        key=lambda part: (
            -heavy_atom_count(part),
            -round(part.molecular_weight, 6),
            canonicalize(part),
        ),
    )
