import unittest

import pandas as pd
import pytest

from molpretrain.chem import canonicalize, parse_smiles
from molpretrain.chem.io import bundled_corpus
from molpretrain.errors import InputError
from molpretrain.splits import murcko_scaffold, read_dataset, scaffold_split, write_split

RINGS = [
    "c1ccccc1",
    "C1CC1",
    "C1CCC1",
    "C1CCCC1",
    "C1CCCCC1",
    "C1CCCCCC1",
    "c1ccncc1",
    "c1ccoc1",
    "c1ccsc1",
    "C1CCNCC1",
]
BENZENES = [
    "Cc1ccccc1",
    "CCc1ccccc1",
    "Oc1ccccc1",
    "Nc1ccccc1",
    "Clc1ccccc1",
    "c1ccccc1",
    "CCCc1ccccc1",
    "OCc1ccccc1",
    "Fc1ccccc1",
]


class TestMurckoScaffold(unittest.TestCase):
    def test_side_chain_removed(self):
        self.assertEqual(murcko_scaffold(parse_smiles("Cc1ccccc1")), canonicalize("c1ccccc1"))

    def test_acyclic(self):
        self.assertEqual(murcko_scaffold(parse_smiles("CCO")), "")

    def test_ring_is_fixed_point(self):
        self.assertEqual(murcko_scaffold(parse_smiles("c1ccccc1")), canonicalize("c1ccccc1"))

    def test_linker_kept(self):
        """Two rings joined by a chain keep the chain."""
        self.assertEqual(murcko_scaffold(parse_smiles("Oc1ccccc1CCc1ccccc1C")), canonicalize("c1ccccc1CCc1ccccc1"))


class TestScaffoldSplit(unittest.TestCase):
    def test_distinct_scaffolds(self):
        result = scaffold_split(pd.DataFrame({"smiles": RINGS}))
        self.assertEqual(result.summary()["sizes"], {"train": 8, "valid": 1, "test": 1})
        self.assertTrue(result.leakage_free())

    def test_whole_groups(self):
        data = pd.DataFrame({"smiles": BENZENES + ["C1CC1"]})
        with pytest.warns(UserWarning, match="test partition empty"):
            result = scaffold_split(data)
        self.assertEqual(len(result.train), 9)
        self.assertEqual(list(result.valid["smiles"]), ["C1CC1"])
        self.assertTrue(result.test.empty)

    def test_rejects(self):
        data = pd.DataFrame({"smiles": RINGS + ["C1CC", "not smiles"]})
        result = scaffold_split(data)
        self.assertEqual(list(result.rejects["line"]), [12, 13])
        self.assertEqual(result.summary()["n_rows"], 10)

    def test_bad_fractions(self):
        with self.assertRaises(InputError):
            scaffold_split(pd.DataFrame({"smiles": RINGS}), (0.5, 0.5, 0.5))


def test_corpus_split_is_leakage_free_and_deterministic(tmp_path):
    data = pd.DataFrame({"smiles": bundled_corpus(), "label": range(1000)})
    first = write_split(scaffold_split(data), tmp_path / "a")
    write_split(scaffold_split(data), tmp_path / "b")
    assert first["leakage_free"]
    for name in ("train.csv", "valid.csv", "test.csv", "rejects.csv", "split_summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    sizes = first["sizes"]
    assert sizes["train"] >= 800
    assert sum(sizes.values()) == 1000 - first["n_rejects"]


def test_read_dataset(tmp_path):
    (tmp_path / "d.csv").write_text("smiles,label\nCCO,1.5\n")
    frame = read_dataset(tmp_path / "d.csv")
    assert list(frame.columns) == ["smiles", "label"]
    with pytest.raises(InputError):
        read_dataset(tmp_path / "missing.csv")
