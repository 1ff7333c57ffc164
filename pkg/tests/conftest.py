from pathlib import Path

import pytest

from molpretrain.chem.io import bundled_corpus, write_lines
from molpretrain.training.loader import prepare_corpus

TINY = {
    "hidden_size": 8,
    "num_attention_heads": 2,
    "num_hidden_layers": 1,
    "intermediate_size": 16,
    "dropout": 0.1,
}


@pytest.fixture
def corpus_file(tmp_path: Path) -> Path:
    path = tmp_path / "raw.smi"
    write_lines(path, bundled_corpus()[:60])
    return path


@pytest.fixture
def prepared(corpus_file: Path, tmp_path: Path):
    return prepare_corpus(corpus_file, tmp_path / "data", seed=0, holdout_rows=12)


@pytest.fixture
def prepared_mtr(corpus_file: Path, tmp_path: Path):
    names = ("mol_weight", "heavy_atom_count", "hbd", "aromatic_atom_count")
    return prepare_corpus(corpus_file, tmp_path / "data_mtr", seed=0, label_names=names, holdout_rows=12)


@pytest.fixture
def tiny_arch() -> dict:
    return dict(TINY)
