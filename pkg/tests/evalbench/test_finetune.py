import json
import unittest
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from molpretrain.chem.io import bundled_corpus
from molpretrain.chem.smiles import parse_smiles
from molpretrain.errors import ConfigError, InputError
from molpretrain.evalbench.finetune import FinetuneSpec, finetune, read_reports, spec_from_mapping
from molpretrain.featurize.descriptors import compute_descriptors
from molpretrain.training.pretrain import BEST_DIR, TrainConfig, pretrain


def write_task(out_dir: Path, task_type: str, n_train: int = 60, n_valid: int = 20, n_test: int = 20) -> Path:
    """Train/valid/test CSVs cut from the bundled corpus; labels are simple descriptors."""
    out_dir.mkdir(parents=True, exist_ok=True)
    smiles = bundled_corpus()[: n_train + n_valid + n_test]
    if task_type == "regression":
        labels = [compute_descriptors(parse_smiles(s), ["heavy_atom_count"]).values[0] for s in smiles]
    else:
        labels = [int(compute_descriptors(parse_smiles(s), ["aromatic_atom_count"]).values[0] > 0) for s in smiles]
    frame = pd.DataFrame({"smiles": smiles, "label": labels})
    bounds = {"train": (0, n_train), "valid": (n_train, n_train + n_valid), "test": (n_train + n_valid, len(smiles))}
    for name, (lo, hi) in bounds.items():
        frame.iloc[lo:hi].to_csv(out_dir / f"{name}.csv", index=False)
    return out_dir


def tiny_spec(split_dir: Path, task_type: str = "regression", **overrides) -> FinetuneSpec:
    values = dict(
        train_path=str(split_dir / "train.csv"),
        valid_path=str(split_dir / "valid.csv"),
        test_path=str(split_dir / "test.csv"),
        task_type=task_type,
        max_epochs=2,
        patience=1,
        lrs=(1e-3,),
        seeds=(0,),
        batch_sizes=(16,),
        arch={"hidden_size": 8, "num_attention_heads": 2, "num_hidden_layers": 1, "intermediate_size": 16},
    )
    values.update(overrides)
    return FinetuneSpec(**values)


class TestSpec(unittest.TestCase):
    def test_task_type(self):
        with self.assertRaises(ConfigError):
            FinetuneSpec("a/train.csv", "a/valid.csv", "a/test.csv", task_type="multiclass")

    def test_empty_grid(self):
        with self.assertRaises(ConfigError):
            FinetuneSpec("a/train.csv", "a/valid.csv", "a/test.csv", task_type="binary", lrs=())

    def test_dataset_name_from_directory(self):
        spec = FinetuneSpec("data/esol/train.csv", "v", "t", task_type="regression")
        self.assertEqual(spec.dataset, "esol")
        self.assertEqual(len(spec.grid()), 12)

    def test_from_mapping(self):
        spec = spec_from_mapping(
            {"split_dir": "splits/bbbp", "task_type": "binary", "finetune_lrs": [1e-4], "hidden_size": 16}
        )
        self.assertEqual(spec.test_path, str(Path("splits/bbbp") / "test.csv"))
        self.assertEqual(spec.lrs, (1e-4,))
        self.assertEqual(spec.arch, {"hidden_size": 16})
        with self.assertRaises(ConfigError):
            spec_from_mapping({"task_type": "binary"})


def test_regression_report(tmp_path):
    split = write_task(tmp_path / "toy", "regression")
    report = finetune(tiny_spec(split), tmp_path / "out")
    assert report.metric == "rmse"
    assert report.dataset == "toy"
    assert report.sizes == {"train": 60, "valid": 20, "test": 20}
    assert np.isfinite(report.value) and report.value >= 0
    assert report.grid_size == 1
    assert report.checkpoint is None
    (stored,) = read_reports([tmp_path / "out" / "report.jsonl"])
    assert stored["value"] == report.value
    assert (tmp_path / "out" / "grid.csv").is_file()


def test_same_spec_same_metric(tmp_path):
    split = write_task(tmp_path / "toy", "regression")
    first = finetune(tiny_spec(split))
    second = finetune(tiny_spec(split))
    assert first.value == second.value
    assert first.config == second.config


def test_grid_picks_lowest_validation_loss(tmp_path):
    split = write_task(tmp_path / "toy", "regression")
    report = finetune(tiny_spec(split, lrs=(1e-4, 1e-3), seeds=(0, 1)), tmp_path / "out")
    grid = pd.read_csv(tmp_path / "out" / "grid.csv")
    assert len(grid) == 4
    assert report.valid_loss == pytest.approx(grid["valid_loss"].min())


def test_bad_rows_are_rejected(tmp_path):
    split = write_task(tmp_path / "toy", "regression")
    train = pd.read_csv(split / "train.csv")
    extra = pd.DataFrame({"smiles": ["C1CC", "CCO"], "label": ["1.0", "n/a"]})
    pd.concat([train, extra]).to_csv(split / "train.csv", index=False)
    report = finetune(tiny_spec(split), tmp_path / "out")
    assert report.sizes["train"] == 60
    rejects = pd.read_csv(tmp_path / "out" / "rejects.csv")
    assert sorted(rejects["line"]) == [62, 63]


def test_binary_needs_both_classes(tmp_path):
    split = write_task(tmp_path / "toy", "binary")
    train = pd.read_csv(split / "train.csv")
    train.assign(label=1).to_csv(split / "train.csv", index=False)
    with pytest.raises(InputError):
        finetune(tiny_spec(split, task_type="binary"))


def test_from_pretrained_checkpoint(prepared, tmp_path, tiny_arch):
    config = TrainConfig(
        train_path=str(prepared.train_path),
        valid_path=str(prepared.valid_path),
        out_dir=str(tmp_path / "run"),
        batch_size=8,
        base_batch_size=8,
        base_lr=1e-3,
        max_steps=4,
        eval_interval=2,
        patience_steps=100,
        deterministic=True,
    )
    result = pretrain(config, tiny_arch)
    split = write_task(tmp_path / "toy", "regression")
    report = finetune(tiny_spec(split, checkpoint=str(tmp_path / "run" / BEST_DIR)))
    assert report.checkpoint == str(tmp_path / "run" / BEST_DIR)
    assert report.pretrain_loss == pytest.approx(result.best_val)
    assert json.loads(report.to_json())["schema_version"] == 1


@pytest.mark.slow
def test_separable_binary_task(tmp_path):
    split = write_task(tmp_path / "aromatic", "binary", n_train=300, n_valid=60, n_test=100)
    spec = tiny_spec(
        split,
        task_type="binary",
        max_epochs=30,
        patience=5,
        lrs=(1e-3,),
        batch_sizes=(32,),
        arch={"hidden_size": 32, "num_attention_heads": 4, "num_hidden_layers": 2, "intermediate_size": 64},
    )
    report = finetune(spec)
    assert report.metric == "roc_auc"
    assert report.value > 0.8


if __name__ == "__main__":
    unittest.main()
