"""Canonical atom ranking and canonical SMILES.

Atoms start from an invariant tuple (atomic number, charge, degree, hydrogen
count, aromatic flag, ring membership) and are refined Morgan style: each
round re-ranks atoms by their own rank plus the sorted ranks of their
neighbours, until the number of classes stops growing. Remaining ties are
broken by branch-and-rank: every member of the lowest tied class is
individualized in turn, the ranking is refined again, and the smallest SMILES
over all fully ranked leaves wins. Leaves that spell the same SMILES reveal
automorphisms, and branches an automorphism maps onto an already searched
branch are skipped.
"""

from __future__ import annotations

from typing import Hashable, NamedTuple, Sequence

import logging

from molpretrain.chem.elements import atomic_number
from molpretrain.chem.molecule import Molecule
from molpretrain.chem.smiles import atom_symbol, parse_smiles, write_smiles

logger = logging.getLogger(__name__)

MAX_LEAVES = 2048


def _dense_rank(keys: Sequence[Hashable]) -> list[int]:
    lookup = {key: r for r, key in enumerate(sorted(set(keys)))}  # type: ignore[type-var]
    return [lookup[key] for key in keys]


def atom_invariants(mol: Molecule) -> list[tuple[int, int, int, int, bool, bool]]:
    in_ring = [False] * len(mol.atoms)
    for bond in mol.bonds:
        if bond.in_ring:
            in_ring[bond.begin] = in_ring[bond.end] = True
    return [
        (
            atomic_number(atom.element),
            atom.formal_charge,
            mol.degree(i),
            atom.total_h,
            atom.aromatic,
            in_ring[i],
        )
        for i, atom in enumerate(mol.atoms)
    ]


def refine(mol: Molecule, ranks: Sequence[int]) -> list[int]:
    """Refine a ranking until it is stable.

    Refinement only ever splits classes, so atom ``a`` ranked below atom ``b``
    stays below it.
    """
    ranks = list(ranks)
    n_classes = len(set(ranks))
    nbrs = mol.neighbors
    codes = [bond.order.value for bond in mol.bonds]
    while True:
        keys = [
            (ranks[i], tuple(sorted((ranks[j], codes[k]) for j, k in nbrs[i])))
            for i in range(len(ranks))
        ]
        new = _dense_rank(keys)
        n_new = len(set(new))
        if n_new == n_classes:
            return new
        ranks, n_classes = new, n_new


def canonical_ranks(mol: Molecule, max_leaves: int = MAX_LEAVES) -> list[int]:
    """Canonical rank per atom: a permutation of ``range(len(mol))``.

    Parameters
    ----------
    mol : Molecule
        Molecule to rank
    max_leaves : int
        Maximum number of fully individualized rankings to compare. Symmetric
        branches are pruned with the automorphisms found along the way, so
        the budget is only reached by very large asymmetric ties.

    Returns
    -------
    list[int]
        Rank per atom
    """
    return _search(mol, max_leaves)[1]


def _individualize(ranks: Sequence[int], atom: int) -> list[int]:
    split = [2 * r for r in ranks]
    split[atom] -= 1
    return _dense_rank(split)


def _target_cell(ranks: Sequence[int]) -> list[int]:
    counts: dict[int, int] = {}
    for r in ranks:
        counts[r] = counts.get(r, 0) + 1
    tied = [r for r, c in counts.items() if c > 1]
    if not tied:
        return []
    target = min(tied)
    return [i for i, r in enumerate(ranks) if r == target]


class _Leaf(NamedTuple):
    text: str
    ranks: list[int]
    path: tuple[int, ...]


class _CanonicalSearch:
    """Individualize-and-refine search over tied atoms with automorphism pruning.

    Two leaves with the same SMILES are checked for an automorphism mapping
    one onto the other. Automorphisms that fix the atoms individualized so
    far merge sibling branches into orbits, and only one branch per orbit is
    searched.
    """

    def __init__(self, mol: Molecule, max_leaves: int) -> None:
        self.mol = mol
        self.max_leaves = max_leaves
        self.labels = [atom_symbol(mol, i) for i in range(len(mol.atoms))]
        self.edges = {frozenset((b.begin, b.end)): b.order for b in mol.bonds}
        self.generators: list[list[int]] = []
        self.first: _Leaf | None = None
        self.best: _Leaf | None = None
        self.leaves = 0
        self.exhausted = False

    def run(self) -> tuple[str, list[int]]:
        if not self.mol.atoms:
            return "", []
        self._visit(refine(self.mol, _dense_rank(atom_invariants(self.mol))), ())
        assert self.best is not None
        return self.best.text, self.best.ranks

    def _visit(self, ranks: list[int], path: tuple[int, ...]) -> int | None:
        """Search below one node; returns the depth to jump back to, if any."""
        cell = _target_cell(ranks)
        if not cell:
            return self._leaf(ranks, path)
        tried: list[int] = []
        for atom in cell:
            if tried and self._same_orbit(atom, tried, path):
                continue
            tried.append(atom)
            jump = self._visit(refine(self.mol, _individualize(ranks, atom)), path + (atom,))
            if self.exhausted:
                return None
            if jump is not None and jump < len(path):
                return jump
        return None

    def _leaf(self, ranks: list[int], path: tuple[int, ...]) -> int | None:
        self.leaves += 1
        if self.leaves >= self.max_leaves:
            logger.debug("canonical search budget exhausted after %d leaves", self.leaves)
            self.exhausted = True
        leaf = _Leaf(write_smiles(self.mol, ranks), ranks, path)
        if self.first is None or self.best is None:
            self.first = self.best = leaf
            return None
        jump = None
        for ref in (self.first, self.best):
            if leaf.text != ref.text:
                continue
            gamma = self._mapping(leaf.ranks, ref.ranks)
            if not self._is_automorphism(gamma):
                continue
            self.generators.append(gamma)
            jump = self._jump_depth(gamma, leaf.path, ref.path)
            break
        if leaf.text < self.best.text:
            self.best = leaf
        return jump

    @staticmethod
    def _mapping(ranks: Sequence[int], ref_ranks: Sequence[int]) -> list[int]:
        atom_at = [0] * len(ref_ranks)
        for atom, r in enumerate(ref_ranks):
            atom_at[r] = atom
        return [atom_at[r] for r in ranks]

    def _is_automorphism(self, gamma: Sequence[int]) -> bool:
        if all(i == g for i, g in enumerate(gamma)):
            return False
        if any(self.labels[i] != self.labels[g] for i, g in enumerate(gamma)):
            return False
        for bond in self.mol.bonds:
            image = frozenset((gamma[bond.begin], gamma[bond.end]))
            if self.edges.get(image) is not bond.order:
                return False
        return True

    @staticmethod
    def _jump_depth(gamma: Sequence[int], path: tuple[int, ...], ref_path: tuple[int, ...]) -> int | None:
        """Depth whose remaining subtree mirrors an already searched one under ``gamma``."""
        k = 0
        while k < min(len(path), len(ref_path)) and path[k] == ref_path[k]:
            k += 1
        if k >= len(path) or k >= len(ref_path):
            return None
        if any(gamma[a] != a for a in path[:k]) or gamma[path[k]] != ref_path[k]:
            return None
        return k

    def _same_orbit(self, atom: int, tried: Sequence[int], path: tuple[int, ...]) -> bool:
        parent = list(range(len(self.mol.atoms)))

        def find(a: int) -> int:
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for gamma in self.generators:
            if any(gamma[a] != a for a in path):
                continue
            for a, b in enumerate(gamma):
                parent[find(a)] = find(b)
        root = find(atom)
        return any(find(t) == root for t in tried)


def _search(mol: Molecule, max_leaves: int) -> tuple[str, list[int]]:
    return _CanonicalSearch(mol, max_leaves).run()


def canonicalize(mol: Molecule | str) -> str:
    """Canonical SMILES of a molecule.

    The result does not depend on the input atom order and is a fixed point:
    ``canonicalize(parse_smiles(canonicalize(m))) == canonicalize(m)``.

    Parameters
    ----------
    mol : Molecule | str
        Molecule, or a SMILES string that is parsed first

    Returns
    -------
    str
        Canonical SMILES

    Raises
    ------
    SmilesError
        If ``mol`` is a string that does not parse
    """
    if isinstance(mol, str):
        mol = parse_smiles(mol)
    if "canonical" not in mol._cache:
        mol._cache["canonical"] = _search(mol, MAX_LEAVES)[0]
    return mol._cache["canonical"]
