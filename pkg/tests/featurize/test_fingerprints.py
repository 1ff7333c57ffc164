import numpy as np
import pytest

from molpretrain.chem import parse_smiles, random_smiles
from molpretrain.errors import ShapeError
from molpretrain.featurize.fingerprints import Fingerprint, ecfp, jaccard_distance, jaccard_matrix


def test_atom_order_invariance():
    mol = parse_smiles("CC(=O)Nc1ccc(O)cc1")
    rng = np.random.default_rng(3)
    expected = ecfp(mol).bits
    for _ in range(5):
        np.testing.assert_array_equal(ecfp(parse_smiles(random_smiles(mol, rng))).bits, expected)


def test_radius_zero_separates_elements():
    methane = ecfp(parse_smiles("C"), radius=0)
    water = ecfp(parse_smiles("O"), radius=0)
    assert methane.on_bits() and water.on_bits()
    assert not set(methane.on_bits()) & set(water.on_bits())


def test_jaccard_examples():
    ethanol = ecfp(parse_smiles("CCO"))
    assert jaccard_distance(ethanol, ecfp(parse_smiles("OCC"))) == 0.0
    a = Fingerprint.from_on_bits([1, 2, 3], n_bits=16)
    b = Fingerprint.from_on_bits([2, 3, 4], n_bits=16)
    assert jaccard_distance(a, b) == pytest.approx(0.5)
    assert jaccard_distance(a, Fingerprint.from_on_bits([7, 8], n_bits=16)) == 1.0
    assert jaccard_distance(Fingerprint.from_on_bits([], 16), Fingerprint.from_on_bits([], 16)) == 0.0


def test_length_mismatch():
    with pytest.raises(ShapeError):
        jaccard_distance(Fingerprint.from_on_bits([1], 16), Fingerprint.from_on_bits([1], 32))


def test_matrix_matches_pairwise():
    fps = [ecfp(parse_smiles(s), n_bits=256) for s in ["CCO", "c1ccccc1", "CC(=O)O", "CCN"]]
    matrix = jaccard_matrix(np.stack([f.bits for f in fps]))
    for i, a in enumerate(fps):
        for j, b in enumerate(fps):
            assert matrix[i, j] == pytest.approx(jaccard_distance(a, b))
