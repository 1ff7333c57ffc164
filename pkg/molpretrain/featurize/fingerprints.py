"""Hashed circular (ECFP style) fingerprints and Jaccard distances.

Atom identifiers are 64 bit integers taken from BLAKE2b digests of
``repr`` of a tuple, so they are stable across processes and platforms.
Radius 0 hashes ``(atomic number, degree, charge, H count, in ring,
aromatic)``; every later iteration hashes ``(iteration, own id, sorted
(bond code, neighbour id) pairs)``. All identifiers from radius 0 up to
``radius`` set bit ``id % n_bits``.
"""

from __future__ import annotations

from typing import Sequence

import hashlib
from dataclasses import dataclass

import numpy as np

from molpretrain.chem.canon import atom_invariants
from molpretrain.chem.molecule import Molecule
from molpretrain.errors import InputError, ShapeError


def _hash(key: tuple) -> int:
    return int.from_bytes(hashlib.blake2b(repr(key).encode(), digest_size=8).digest(), "little")


@dataclass(frozen=True)
class Fingerprint:
    bits: np.ndarray
    radius: int = 2

    @property
    def n_bits(self) -> int:
        return int(self.bits.shape[0])

    def on_bits(self) -> list[int]:
        return np.flatnonzero(self.bits).tolist()

    @classmethod
    def from_on_bits(cls, on: Sequence[int], n_bits: int = 2048, radius: int = 2) -> Fingerprint:
        bits = np.zeros(n_bits, dtype=bool)
        bits[list(on)] = True
        return cls(bits, radius)


def ecfp(mol: Molecule, radius: int = 2, n_bits: int = 2048) -> Fingerprint:
    """Circular fingerprint of a molecule.

    Parameters
    ----------
    mol : Molecule
        Molecule
    radius : int
        Number of neighbourhood iterations
    n_bits : int
        Fingerprint length, a power of two

    Returns
    -------
    Fingerprint
        Bitset, independent of input atom order
    """
    if n_bits <= 0 or n_bits & (n_bits - 1):
        raise InputError(f"n_bits must be a power of two, got {n_bits}")
    if radius < 0:
        raise InputError("radius must be >= 0")
    # (atomic number, charge, degree, H, aromatic, in_ring) reordered to the documented key
    ids = [
        _hash((z, degree, charge, h, ring, aromatic))
        for z, charge, degree, h, aromatic, ring in atom_invariants(mol)
    ]
    seen = set(ids)
    codes = [b.order.value for b in mol.bonds]
    for iteration in range(1, radius + 1):
        ids = [
            _hash(
                (
                    iteration,
                    ids[i],
                    tuple(sorted((codes[k], ids[j]) for j, k in mol.neighbors[i])),
                )
            )
            for i in range(len(ids))
        ]
        seen.update(ids)
    bits = np.zeros(n_bits, dtype=bool)
    bits[[x % n_bits for x in seen]] = True
    return Fingerprint(bits, radius)


def jaccard_distance(a: Fingerprint, b: Fingerprint) -> float:
    """1 - |a & b| / |a | b|, defined as 0 when both bitsets are empty."""
    if a.n_bits != b.n_bits:
        raise ShapeError(f"fingerprint lengths differ: {a.n_bits} vs {b.n_bits}")
    union = np.count_nonzero(a.bits | b.bits)
    if union == 0:
        return 0.0
    return 1.0 - np.count_nonzero(a.bits & b.bits) / union


def jaccard_matrix(bits: np.ndarray) -> np.ndarray:
    """Pairwise Jaccard distances between the rows of a boolean ``[n, n_bits]`` matrix."""
    x = np.asarray(bits, dtype=np.float64)
    inter = x @ x.T
    counts = x.sum(axis=1)
    union = counts[:, None] + counts[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        dist = np.where(union > 0, 1.0 - inter / np.where(union > 0, union, 1.0), 0.0)
    np.fill_diagonal(dist, 0.0)
    return dist
