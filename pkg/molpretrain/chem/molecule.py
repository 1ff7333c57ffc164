"""Immutable molecular graph: atoms, bonds, implicit hydrogens and ring flags."""

from __future__ import annotations

from typing import Iterable, Sequence

import enum
import math
from dataclasses import dataclass, field, replace

import networkx as nx

from molpretrain.chem.elements import HYDROGEN_MASS, ORGANIC_VALENCES, atomic_mass
from molpretrain.errors import HypervalenceError, InputError


class BondOrder(enum.Enum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4

    @property
    def valence(self) -> float:
        """Contribution to the bond order sum of each endpoint."""
        return 1.5 if self is BondOrder.AROMATIC else float(self.value)

    @property
    def symbol(self) -> str:
        return {1: "-", 2: "=", 3: "#", 4: ":"}[self.value]

    @classmethod
    def from_symbol(cls, symbol: str) -> BondOrder:
        return {"-": cls.SINGLE, "=": cls.DOUBLE, "#": cls.TRIPLE, ":": cls.AROMATIC}[symbol]


@dataclass(frozen=True, slots=True)
class Atom:
    """A heavy atom.

    Bracket atoms carry their hydrogen count in ``explicit_h`` and always have
    ``implicit_h == 0``; organic-subset atoms written without brackets get
    ``implicit_h`` from the default valence rules.
    """

    element: str
    aromatic: bool = False
    formal_charge: int = 0
    explicit_h: int = 0
    implicit_h: int = 0
    bracket: bool = False

    @property
    def total_h(self) -> int:
        return self.explicit_h + self.implicit_h


@dataclass(frozen=True, slots=True)
class Bond:
    begin: int
    end: int
    order: BondOrder = BondOrder.SINGLE
    in_ring: bool = False

    def other(self, index: int) -> int:
        return self.end if index == self.begin else self.begin


@dataclass(frozen=True)
class Molecule:
    """Attributed graph of heavy atoms parsed from a SMILES string.

    Use :meth:`from_graph` to build one: it fills in implicit hydrogens and
    ring flags so that every ``Molecule`` in circulation is fully annotated.
    """

    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    source: str = ""
    lossy: bool = False
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @classmethod
    def from_graph(
        cls,
        atoms: Sequence[Atom],
        bonds: Iterable[tuple[int, int, BondOrder]],
        source: str = "",
        lossy: bool = False,
        atom_offsets: Sequence[int] | None = None,
    ) -> Molecule:
        """Annotate a raw atom/bond list and freeze it.

        Parameters
        ----------
        atoms : Sequence[Atom]
            Atoms; ``implicit_h`` of non-bracket atoms is recomputed
        bonds : Iterable[tuple[int, int, BondOrder]]
            Bonds as (begin, end, order)
        source : str
            SMILES the graph was parsed from
        lossy : bool
            Whether stereo or isotope information was discarded
        atom_offsets : Sequence[int] | None
            Byte offset of every atom in ``source``, used in error messages

        Returns
        -------
        Molecule
            Annotated molecule

        Raises
        ------
        HypervalenceError
            If an organic-subset atom exceeds its largest allowed valence
        """
        raw_bonds = [Bond(a, b, order) for a, b, order in bonds]
        sums = [0.0] * len(atoms)
        for bond in raw_bonds:
            sums[bond.begin] += bond.order.valence
            sums[bond.end] += bond.order.valence
        annotated = []
        for i, atom in enumerate(atoms):
            if atom.bracket:
                annotated.append(replace(atom, implicit_h=0))
                continue
            try:
                h = implicit_hydrogens(atom, sums[i])
            except HypervalenceError as err:
                offset = atom_offsets[i] if atom_offsets is not None else i
                raise HypervalenceError(err.reason, offset) from None
            annotated.append(replace(atom, implicit_h=h))
        mol = cls(tuple(annotated), tuple(raw_bonds), source, lossy)
        flags, _ = ring_bonds(mol)
        return cls(
            mol.atoms,
            tuple(replace(b, in_ring=f) for b, f in zip(raw_bonds, flags)),
            source,
            lossy,
        )

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def neighbors(self) -> list[list[tuple[int, int]]]:
        """Per atom, the list of (neighbour atom, bond index) in bond order."""
        if "neighbors" not in self._cache:
            adj: list[list[tuple[int, int]]] = [[] for _ in self.atoms]
            for k, bond in enumerate(self.bonds):
                adj[bond.begin].append((bond.end, k))
                adj[bond.end].append((bond.begin, k))
            self._cache["neighbors"] = adj
        return self._cache["neighbors"]

    def degree(self, index: int) -> int:
        return len(self.neighbors[index])

    def bond_order_sum(self, index: int) -> float:
        return sum(self.bonds[k].order.valence for _, k in self.neighbors[index])

    @property
    def molecular_weight(self) -> float:
        """Average molecular weight including implicit and explicit hydrogens."""
        return sum(atomic_mass(a.element) + a.total_h * HYDROGEN_MASS for a in self.atoms)

    @property
    def graph(self) -> nx.Graph:
        if "graph" not in self._cache:
            g = nx.Graph()
            g.add_nodes_from(range(len(self.atoms)))
            g.add_edges_from((b.begin, b.end, {"index": k}) for k, b in enumerate(self.bonds))
            self._cache["graph"] = g
        return self._cache["graph"]

    def components(self) -> list[list[int]]:
        """Connected components as sorted atom index lists, ordered by first atom."""
        comps = [sorted(c) for c in nx.connected_components(self.graph)]
        return sorted(comps, key=lambda c: c[0])

    def subgraph(self, indices: Iterable[int]) -> Molecule:
        """Induced subgraph on ``indices`` (kept in ascending order).

        Implicit hydrogens of non-bracket atoms are recomputed, so removed
        neighbours become hydrogens. Ring flags are recomputed as well.
        """
        keep = sorted(set(indices))
        remap = {old: new for new, old in enumerate(keep)}
        atoms = [self.atoms[i] for i in keep]
        bonds = [
            (remap[b.begin], remap[b.end], b.order)
            for b in self.bonds
            if b.begin in remap and b.end in remap
        ]
        return Molecule.from_graph(atoms, bonds, source="", lossy=self.lossy)


def implicit_hydrogens(atom: Atom, bond_order_sum: float) -> int:
    """Implicit hydrogen count of an organic-subset atom written without brackets.

    The count is the smallest allowed valence at or above the bond order sum,
    minus that sum. Aromatic bonds contribute 1.5. For lowercase atoms the
    sigma valence ``floor(sum - 1)`` is matched against the valence tiers and
    one unit is reserved for the aromatic system, so a benzene carbon gets one
    hydrogen and a pyridine nitrogen none.

    Parameters
    ----------
    atom : Atom
        Non-bracket organic-subset atom
    bond_order_sum : float
        Sum of the valence contributions of the atom's bonds

    Returns
    -------
    int
        Implicit hydrogen count

    Raises
    ------
    HypervalenceError
        If the bond order sum exceeds the largest allowed valence
    """
    if atom.bracket:
        return 0
    valences = ORGANIC_VALENCES.get(atom.element)
    if valences is None:
        raise InputError(f"{atom.element} is not in the organic subset")
    if atom.aromatic:
        sigma = max(0, math.floor(bond_order_sum - 1))
        if sigma > valences[-1]:
            raise HypervalenceError(f"hypervalent aromatic {atom.element}")
        target = next(v for v in valences if v >= sigma)
        return max(0, target - sigma - 1)
    if bond_order_sum > valences[-1]:
        raise HypervalenceError(
            f"hypervalent {atom.element} (bond order sum {bond_order_sum:g})"
        )
    target = next(v for v in valences if v >= bond_order_sum)
    return int(math.floor(target - bond_order_sum))


def ring_bonds(mol: Molecule) -> tuple[list[bool], list[int]]:
    """Flag ring bonds and count independent cycles.

    A bond is a ring bond exactly when it is not a bridge of the molecular
    graph.

    Parameters
    ----------
    mol : Molecule
        Any molecule

    Returns
    -------
    tuple[list[bool], list[int]]
        Per-bond ring flags, and the circuit rank of every connected component
        (in the order of :meth:`Molecule.components`)
    """
    graph = mol.graph
    bridges = {frozenset(edge) for edge in nx.bridges(graph)}
    flags = [frozenset((b.begin, b.end)) not in bridges for b in mol.bonds]
    ranks = []
    for comp in mol.components():
        sub = graph.subgraph(comp)
        ranks.append(sub.number_of_edges() - sub.number_of_nodes() + 1)
    return flags, ranks


def circuit_rank(mol: Molecule) -> int:
    """|bonds| - |atoms| + number of components."""
    return len(mol.bonds) - len(mol.atoms) + len(mol.components())
