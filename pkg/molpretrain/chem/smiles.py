"""SMILES grammar: parser and rank-driven writer.

The parser covers organic-subset atoms, bracket atoms
``[isotope? element chirality? Hn? charge? class?]``, the bond symbols
``- = # :`` (``/`` and ``\\`` are read as plain bonds), branches, ring
closures ``1``-``9`` and ``%nn`` and dot-separated fragments. Isotopes, stereo
marks and atom classes are dropped and flagged on the molecule as ``lossy``.
"""

from __future__ import annotations

from typing import Sequence

import logging
from dataclasses import dataclass

import numpy as np

from molpretrain.chem.elements import (
    AROMATIC_BRACKET,
    AROMATIC_ORGANIC,
    ELEMENTS,
    ORGANIC_VALENCES,
)
from molpretrain.chem.molecule import Atom, BondOrder, Molecule, implicit_hydrogens
from molpretrain.errors import HypervalenceError, SmilesError

logger = logging.getLogger(__name__)

_ORGANIC_UPPER = ("B", "C", "N", "O", "P", "S", "F", "I")
_BOND_SYMBOLS = "-=#:/\\"


@dataclass
class _Ring:
    atom: int
    symbol: str | None
    offset: int


class _Parser:
    def __init__(self, text: str) -> None:
        self.text = text
        self.atoms: list[Atom] = []
        self.offsets: list[int] = []
        self.bonds: dict[frozenset[int], tuple[int, int, BondOrder]] = {}
        self.rings: dict[int, _Ring] = {}
        self.branches: list[tuple[int, int]] = []
        self.prev: int | None = None
        self.pending: tuple[str, int] | None = None
        self.lossy = False

    def parse(self) -> Molecule:
        text = self.text
        if not text:
            raise SmilesError("empty SMILES", 0)
        for pos, ch in enumerate(text):
            if not ch.isascii():
                raise SmilesError(f"non-ASCII character {ch!r}", pos)
        i = 0
        while i < len(text):
            ch = text[i]
            if ch == "[":
                i = self._bracket_atom(i)
            elif ch.isalpha():
                i = self._organic_atom(i)
            elif ch in _BOND_SYMBOLS:
                if self.pending is not None:
                    raise SmilesError("two consecutive bond symbols", i)
                if self.prev is None:
                    raise SmilesError(f"bond symbol {ch!r} without a preceding atom", i)
                if ch in "/\\":
                    self.lossy = True
                self.pending = (ch, i)
                i += 1
            elif ch == "(":
                if self.prev is None:
                    raise SmilesError("branch without a preceding atom", i)
                if self.pending is not None:
                    raise SmilesError("bond symbol before branch", self.pending[1])
                if i + 1 < len(text) and text[i + 1] == ")":
                    raise SmilesError("empty branch", i)
                self.branches.append((self.prev, i))
                i += 1
            elif ch == ")":
                if not self.branches:
                    raise SmilesError("unmatched ')'", i)
                self._no_dangling_bond()
                self.prev = self.branches.pop()[0]
                i += 1
            elif ch.isdigit() or ch == "%":
                i = self._ring_closure(i)
            elif ch == ".":
                self._no_dangling_bond()
                if self.prev is None:
                    raise SmilesError("empty fragment", i)
                if self.branches:
                    raise SmilesError("unclosed branch", self.branches[-1][1])
                self.prev = None
                i += 1
            else:
                raise SmilesError(f"unexpected character {ch!r}", i)

        self._no_dangling_bond()
        if self.branches:
            raise SmilesError("unclosed branch", self.branches[-1][1])
        if self.rings:
            number, ring = min(self.rings.items(), key=lambda item: item[1].offset)
            raise SmilesError(f"unclosed ring digit {number}", ring.offset)
        if self.prev is None:
            raise SmilesError("empty fragment", len(text))
        return Molecule.from_graph(
            self.atoms,
            self.bonds.values(),
            source=text,
            lossy=self.lossy,
            atom_offsets=self.offsets,
        )

    def _no_dangling_bond(self) -> None:
        if self.pending is not None:
            raise SmilesError("bond symbol not followed by an atom", self.pending[1])

    def _add_atom(self, atom: Atom, offset: int) -> None:
        index = len(self.atoms)
        self.atoms.append(atom)
        self.offsets.append(offset)
        if self.prev is not None:
            symbol = self.pending[0] if self.pending else None
            self._add_bond(self.prev, index, symbol, offset)
        self.pending = None
        self.prev = index

    def _bond_order(self, a: int, b: int, symbol: str | None) -> BondOrder:
        if symbol is None or symbol in "/\\":
            if self.atoms[a].aromatic and self.atoms[b].aromatic:
                return BondOrder.AROMATIC
            return BondOrder.SINGLE
        return BondOrder.from_symbol(symbol)

    def _add_bond(self, a: int, b: int, symbol: str | None, offset: int) -> None:
        if a == b:
            raise SmilesError("ring closure bonds an atom to itself", offset)
        key = frozenset((a, b))
        if key in self.bonds:
            raise SmilesError("duplicate bond between the same atoms", offset)
        self.bonds[key] = (a, b, self._bond_order(a, b, symbol))

    def _organic_atom(self, i: int) -> int:
        text = self.text
        two = text[i : i + 2]
        if two in ("Cl", "Br"):
            self._add_atom(Atom(two), i)
            return i + 2
        ch = text[i]
        if ch in _ORGANIC_UPPER:
            self._add_atom(Atom(ch), i)
        elif ch in AROMATIC_ORGANIC:
            self._add_atom(Atom(AROMATIC_ORGANIC[ch], aromatic=True), i)
        else:
            raise SmilesError(f"unknown element {ch!r} outside brackets", i)
        return i + 1

    def _bracket_atom(self, start: int) -> int:
        text = self.text
        end = text.find("]", start + 1)
        if end < 0:
            raise SmilesError("unclosed bracket atom", start)
        body = text[start + 1 : end]
        j = 0

        def at(k: int) -> str:
            return body[k] if k < len(body) else ""

        # isotope
        while at(j).isdigit():
            j += 1
            self.lossy = True

        # element: two-letter symbols win over one-letter ones
        aromatic = False
        element = None
        for width in (2, 1):
            candidate = body[j : j + width]
            if len(candidate) != width:
                continue
            if candidate in ELEMENTS and candidate[0].isupper():
                element = candidate
            elif candidate in AROMATIC_BRACKET:
                element, aromatic = AROMATIC_BRACKET[candidate], True
            if element is not None:
                j += width
                break
        if element is None:
            raise SmilesError(f"unknown element in [{body}]", start + 1 + j)

        # chirality: @, @@, @TH1, @SP2, ...
        if at(j) == "@":
            self.lossy = True
            j += 1
            if at(j) == "@":
                j += 1
            while at(j).isalpha() and at(j).isupper() and at(j) != "H":
                j += 1
            while at(j).isdigit():
                j += 1

        h_count = 0
        if at(j) == "H":
            j += 1
            h_count = 1
            digits = ""
            while at(j).isdigit():
                digits += at(j)
                j += 1
            if digits:
                h_count = int(digits)

        charge = 0
        if at(j) in ("+", "-"):
            sign = 1 if at(j) == "+" else -1
            symbol = at(j)
            j += 1
            digits = ""
            while at(j).isdigit():
                digits += at(j)
                j += 1
            if digits:
                charge = sign * int(digits)
            else:
                magnitude = 1
                while at(j) == symbol:
                    magnitude += 1
                    j += 1
                charge = sign * magnitude

        if at(j) == ":":
            j += 1
            if not at(j).isdigit():
                raise SmilesError("malformed atom class", start + 1 + j)
            while at(j).isdigit():
                j += 1
            self.lossy = True

        if j != len(body):
            raise SmilesError(f"malformed bracket atom [{body}]", start + 1 + j)
        atom = Atom(
            element,
            aromatic=aromatic,
            formal_charge=charge,
            explicit_h=h_count,
            bracket=True,
        )
        self._add_atom(atom, start)
        return end + 1

    def _ring_closure(self, i: int) -> int:
        text = self.text
        if text[i] == "%":
            digits = text[i + 1 : i + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise SmilesError("malformed %nn ring closure", i)
            number, nxt = int(digits), i + 3
        else:
            number, nxt = int(text[i]), i + 1
        if self.prev is None:
            raise SmilesError("ring closure without a preceding atom", i)
        symbol = self.pending[0] if self.pending else None
        self.pending = None
        if number in self.rings:
            ring = self.rings.pop(number)
            if ring.symbol is not None and symbol is not None and ring.symbol != symbol:
                raise SmilesError(f"conflicting bond symbols on ring closure {number}", i)
            self._add_bond(ring.atom, self.prev, ring.symbol or symbol, i)
        else:
            self.rings[number] = _Ring(self.prev, symbol, i)
        return nxt


def parse_smiles(smiles: str) -> Molecule:
    """Parse a SMILES string into a :class:`Molecule`.

    Parameters
    ----------
    smiles : str
        ASCII SMILES string

    Returns
    -------
    Molecule
        Parsed molecule with implicit hydrogens and ring flags

    Raises
    ------
    SmilesError
        If the string is not valid SMILES; ``offset`` names the byte position
    """
    return _Parser(smiles).parse()


# ---------------------------------------------------------------------------
# writer


def _needs_bracket(mol: Molecule, index: int) -> bool:
    atom = mol.atoms[index]
    if atom.formal_charge != 0 or atom.element not in ORGANIC_VALENCES:
        return True
    if atom.aromatic and atom.element.lower() not in AROMATIC_ORGANIC:
        return True
    plain = Atom(atom.element, aromatic=atom.aromatic)
    try:
        return implicit_hydrogens(plain, mol.bond_order_sum(index)) != atom.total_h
    except HypervalenceError:
        return True


def atom_symbol(mol: Molecule, index: int) -> str:
    atom = mol.atoms[index]
    element = atom.element.lower() if atom.aromatic else atom.element
    if not _needs_bracket(mol, index):
        return element
    text = "[" + element
    if atom.total_h:
        text += "H" if atom.total_h == 1 else f"H{atom.total_h}"
    if atom.formal_charge:
        text += "+" if atom.formal_charge > 0 else "-"
        if abs(atom.formal_charge) > 1:
            text += str(abs(atom.formal_charge))
    return text + "]"


def bond_symbol(mol: Molecule, bond_index: int) -> str:
    bond = mol.bonds[bond_index]
    both_aromatic = mol.atoms[bond.begin].aromatic and mol.atoms[bond.end].aromatic
    if bond.order is BondOrder.SINGLE:
        return "-" if both_aromatic else ""
    if bond.order is BondOrder.AROMATIC:
        return "" if both_aromatic else ":"
    return bond.order.symbol


def _ring_label(number: int) -> str:
    return str(number) if number < 10 else f"%{number:02d}"


def write_smiles(mol: Molecule, ranks: Sequence[int]) -> str:
    """Write ``mol`` as SMILES, visiting atoms in the order given by ``ranks``.

    Each fragment is written by depth-first search from its lowest-ranked atom,
    taking neighbours in rank order. Ring closure digits are assigned in the
    order the closures are written, reusing the lowest free digit.

    Parameters
    ----------
    mol : Molecule
        Molecule to write
    ranks : Sequence[int]
        Rank per atom; lower ranks are visited first

    Returns
    -------
    str
        SMILES string
    """
    n = len(mol.atoms)
    if n == 0:
        return ""
    order = sorted(range(n), key=lambda i: (ranks[i], i))
    position = {atom: pos for pos, atom in enumerate(order)}
    sorted_nbrs = [
        sorted(mol.neighbors[i], key=lambda item: position[item[0]]) for i in range(n)
    ]

    visited = [False] * n
    children: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    opens: list[list[tuple[int, int]]] = [[] for _ in range(n)]  # (bond, partner)
    closes: list[list[int]] = [[] for _ in range(n)]  # bond indices
    used_bonds: set[int] = set()
    roots = []

    # pass 1: spanning forest and ring closures
    for root in order:
        if visited[root]:
            continue
        roots.append(root)
        visited[root] = True
        stack = [(root, iter(sorted_nbrs[root]))]
        while stack:
            atom, it = stack[-1]
            for nbr, k in it:
                if k in used_bonds:
                    continue
                used_bonds.add(k)
                if visited[nbr]:
                    closes[atom].append(k)
                    opens[nbr].append((k, atom))
                    continue
                visited[nbr] = True
                children[atom].append((nbr, k))
                stack.append((nbr, iter(sorted_nbrs[nbr])))
                break
            else:
                stack.pop()

    # pass 2: emit text
    free: list[int] = []
    next_digit = 1
    digit_of: dict[int, int] = {}
    out: list[str] = []
    fragments = []
    for root in roots:
        out = []
        work: list[tuple[str, int, int]] = [("atom", root, -1)]
        while work:
            kind, atom, via = work.pop()
            if kind == "text":
                out.append(")" if atom == 1 else "(")
                continue
            if via >= 0:
                out.append(bond_symbol(mol, via))
            out.append(atom_symbol(mol, atom))
            released = []
            for k in closes[atom]:
                number = digit_of.pop(k)
                out.append(_ring_label(number))
                released.append(number)
            for k, _ in opens[atom]:
                if free:
                    number = min(free)
                    free.remove(number)
                else:
                    number, next_digit = next_digit, next_digit + 1
                if number > 99:
                    raise SmilesError("more than 99 simultaneous ring closures", 0)
                digit_of[k] = number
                out.append(bond_symbol(mol, k) + _ring_label(number))
            free.extend(released)
            kids = children[atom]
            # pushed in reverse so the first child is written first
            if kids:
                last, last_bond = kids[-1]
                work.append(("atom", last, last_bond))
                for child, k in reversed(kids[:-1]):
                    work.append(("text", 1, -1))
                    work.append(("atom", child, k))
                    work.append(("text", 0, -1))
        fragments.append("".join(out))
    return ".".join(fragments)


def render(mol: Molecule) -> str:
    """Write ``mol`` as SMILES in input atom order (not canonical)."""
    return write_smiles(mol, range(len(mol.atoms)))


def random_smiles(mol: Molecule, rng: np.random.Generator) -> str:
    """Write ``mol`` as SMILES from a random atom order."""
    return write_smiles(mol, rng.permutation(len(mol.atoms)).tolist())
