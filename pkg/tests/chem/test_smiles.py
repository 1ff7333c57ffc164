import unittest

import numpy as np
import pytest

from molpretrain.chem import BondOrder, circuit_rank, parse_smiles, random_smiles, render
from molpretrain.chem.io import bundled_corpus, read_smiles_file
from molpretrain.chem.molecule import Atom, implicit_hydrogens, ring_bonds
from molpretrain.errors import DataFormatError, HypervalenceError, SmilesError


class TestParse(unittest.TestCase):
    def test_ethanol(self):
        mol = parse_smiles("CCO")
        self.assertEqual([a.element for a in mol.atoms], ["C", "C", "O"])
        self.assertEqual([a.implicit_h for a in mol.atoms], [3, 2, 1])
        self.assertEqual(len(mol.bonds), 2)
        self.assertTrue(all(b.order is BondOrder.SINGLE for b in mol.bonds))
        self.assertFalse(any(b.in_ring for b in mol.bonds))
        self.assertEqual(circuit_rank(mol), 0)

    def test_benzene(self):
        mol = parse_smiles("c1ccccc1")
        self.assertEqual(len(mol.atoms), 6)
        self.assertTrue(all(a.aromatic and a.implicit_h == 1 for a in mol.atoms))
        self.assertEqual(len(mol.bonds), 6)
        self.assertTrue(all(b.order is BondOrder.AROMATIC and b.in_ring for b in mol.bonds))
        self.assertEqual(circuit_rank(mol), 1)

    def test_naphthalene(self):
        mol = parse_smiles("c1ccc2ccccc2c1")
        self.assertEqual(sum(b.in_ring for b in mol.bonds), 11)
        self.assertEqual(circuit_rank(mol), 2)

    def test_pyrrole_bracket_hydrogen(self):
        mol = parse_smiles("c1cc[nH]c1")
        nitrogen = mol.atoms[3]
        self.assertTrue(nitrogen.bracket)
        self.assertEqual(nitrogen.explicit_h, 1)
        self.assertEqual(nitrogen.implicit_h, 0)

    def test_unclosed_ring(self):
        with self.assertRaises(SmilesError) as ctx:
            parse_smiles("C1CC")
        self.assertEqual(ctx.exception.offset, 1)
        self.assertIn("unclosed ring digit 1", str(ctx.exception))

    def test_hypervalent_carbon(self):
        """Five bonds on an uppercase carbon has no allowed valence."""
        with self.assertRaises(HypervalenceError):
            parse_smiles("CC(C)(C)(C)C")

    def test_malformed(self):
        for bad in ["", "C(", "C)", "CC=", "[CH4", "C..C", "Xy"]:
            with self.subTest(smiles=bad):
                with self.assertRaises(SmilesError):
                    parse_smiles(bad)

    def test_stereo_marks_are_dropped(self):
        mol = parse_smiles("C[C@H](N)O")
        self.assertTrue(mol.lossy)
        self.assertEqual(len(mol.atoms), 4)


class TestImplicitHydrogens(unittest.TestCase):
    def test_valence_tiers(self):
        self.assertEqual(implicit_hydrogens(Atom("O"), 1.0), 1)
        self.assertEqual(implicit_hydrogens(Atom("N"), 4.0), 1)
        self.assertEqual(implicit_hydrogens(Atom("F"), 1.0), 0)
        self.assertEqual(implicit_hydrogens(Atom("C"), 0.0), 4)

    def test_hypervalence(self):
        with self.assertRaises(HypervalenceError):
            implicit_hydrogens(Atom("C"), 5.0)

    def test_bracket_atoms_get_none(self):
        self.assertEqual(implicit_hydrogens(Atom("N", bracket=True, explicit_h=2), 1.0), 0)


def test_ring_bonds_flags_and_cycle_counts():
    flags, ranks = ring_bonds(parse_smiles("C1CC1CC.c1ccc2ccccc2c1"))
    assert sum(flags) == 14
    assert len(flags) - sum(flags) == 2
    assert ranks == [1, 2]


def test_render_round_trips_input_order():
    mol = parse_smiles("CC(=O)Oc1ccccc1C(=O)O")
    again = parse_smiles(render(mol))
    assert [a.element for a in again.atoms] == [a.element for a in mol.atoms]
    assert len(again.bonds) == len(mol.bonds)


def test_random_smiles_parses_to_same_formula():
    rng = np.random.default_rng(0)
    mol = parse_smiles("OC(=O)c1ccc(N)cc1")
    for _ in range(10):
        other = parse_smiles(random_smiles(mol, rng))
        assert sorted(a.element for a in other.atoms) == sorted(a.element for a in mol.atoms)
        assert sum(a.total_h for a in other.atoms) == sum(a.total_h for a in mol.atoms)


def test_read_smiles_file_formats(tmp_path):
    smi = tmp_path / "in.smi"
    smi.write_text("CCO ethanol\n\nc1ccccc1\n")
    assert list(read_smiles_file(smi)) == [(1, "CCO"), (3, "c1ccccc1")]

    csv = tmp_path / "in.csv"
    csv.write_text("id,smiles\n1,CCO\n2,O\n")
    assert list(read_smiles_file(csv)) == [(2, "CCO"), (3, "O")]

    bad = tmp_path / "bad.csv"
    bad.write_text("id,structure\n1,CCO\n")
    with pytest.raises(DataFormatError):
        list(read_smiles_file(bad))


def test_bundled_corpus_parses():
    corpus = bundled_corpus()
    assert len(corpus) == 1000
    for smiles in corpus:
        parse_smiles(smiles)


if __name__ == "__main__":
    unittest.main()
