import unittest

import numpy as np
import pytest

from molpretrain.chem import canonical_ranks, canonicalize, parse_smiles, random_smiles
from molpretrain.chem.io import bundled_corpus


class TestCanonicalize(unittest.TestCase):
    def test_atom_order_does_not_matter(self):
        self.assertEqual(canonicalize("OCC"), canonicalize("CCO"))
        self.assertEqual(canonicalize("c1ccncc1"), canonicalize("n1ccccc1"))
        self.assertEqual(canonicalize("C(=O)(O)c1ccccc1"), canonicalize("OC(=O)c1ccccc1"))

    def test_distinct_molecules_differ(self):
        self.assertNotEqual(canonicalize("CCO"), canonicalize("COC"))
        self.assertNotEqual(canonicalize("c1ccncc1"), canonicalize("c1ccccc1"))

    def test_fixed_point(self):
        for smiles in ["CC(=O)Oc1ccccc1C(=O)O", "C1CC2CCC1C2", "[NH4+].[Cl-]", "O=S(=O)(O)O"]:
            with self.subTest(smiles=smiles):
                once = canonicalize(smiles)
                self.assertEqual(canonicalize(parse_smiles(once)), once)

    def test_symmetric_cage(self):
        """Highly symmetric graphs must still canonicalise consistently."""
        cubane = "C12C3C4C1C5C2C3C45"
        rng = np.random.default_rng(7)
        mol = parse_smiles(cubane)
        expected = canonicalize(mol)
        for _ in range(5):
            self.assertEqual(canonicalize(random_smiles(mol, rng)), expected)

    def test_symmetric_groups_next_to_unequal_rings(self):
        """Ring atoms of different rings start tied; the fluorines multiply the branches."""
        rng = np.random.default_rng(11)
        for smiles in [
            "C1CC1.C1CCCCC1.FC(F)(F)C(C(F)(F)F)(C(F)(F)F)C(F)(F)F",
            "C1CCCCC1.CC(C)(C)C(C(C)(C)C)(C(C)(C)C)C(C)(C)C.C1CC1",
        ]:
            with self.subTest(smiles=smiles):
                mol = parse_smiles(smiles)
                expected = canonicalize(mol)
                seen = {canonicalize(random_smiles(mol, rng)) for _ in range(20)}
                self.assertEqual(seen, {expected})

    def test_ranks_are_a_permutation(self):
        mol = parse_smiles("C1CC1.C1CCCCC1.FC(F)(F)C(C(F)(F)F)(C(F)(F)F)C(F)(F)F")
        ranks = canonical_ranks(mol)
        self.assertEqual(sorted(ranks), list(range(len(mol.atoms))))


def _check_invariance(smiles_list, renderings, seed=0):
    rng = np.random.default_rng(seed)
    for smiles in smiles_list:
        mol = parse_smiles(smiles)
        expected = canonicalize(mol)
        assert canonicalize(parse_smiles(expected)) == expected, smiles
        for _ in range(renderings):
            assert canonicalize(random_smiles(mol, rng)) == expected, smiles


def test_invariance_on_corpus_sample():
    _check_invariance(bundled_corpus()[:40], renderings=5)


@pytest.mark.slow
def test_invariance_on_full_corpus():
    _check_invariance(bundled_corpus(), renderings=20)


if __name__ == "__main__":
    unittest.main()
