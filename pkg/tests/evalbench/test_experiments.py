import json
import math

import numpy as np
import pytest

from molpretrain.errors import InputError
from molpretrain.evalbench.experiments import (
    experiment_loss_correlation,
    experiment_scaling,
    experiment_transfer,
    loss_correlation_table,
    pretrain_losses,
)
from molpretrain.training.hpsearch import SearchSpace

SMALL_SPACE = SearchSpace(
    heads_min=1,
    heads_max=2,
    head_width_min=4,
    head_width_max=8,
    layers_min=1,
    layers_max=1,
    intermediate_min=8,
    intermediate_max=16,
    min_params=1,
    max_params=1_000_000,
)
SETTINGS = {"batch_size": 8, "max_steps": 4, "eval_interval": 2, "patience_steps": 100, "deterministic": True}


def test_loss_correlation_table():
    results = [
        {"index": 0, "objective": "mlm", "status": "ok", "best_val": 2.0},
        {"index": 0, "objective": "mtr", "status": "ok", "best_val": 0.5},
        {"index": 1, "objective": "mlm", "status": "ok", "best_val": 1.5},
        {"index": 1, "objective": "mtr", "status": "diverged", "best_val": None},
    ]
    table = loss_correlation_table(results)
    assert list(table["config"]) == [0, 1]
    assert list(table["status"]) == ["ok", "diverged"]
    assert table.loc[0, "mtr_loss"] == 0.5
    assert math.isnan(table.loc[1, "mtr_loss"])


def test_transfer_fits_per_dataset(tmp_path):
    reports = [
        {"dataset": "esol", "checkpoint": "a", "pretrain_loss": 1.0, "metric": "rmse", "value": 1.0},
        {"dataset": "esol", "checkpoint": "b", "pretrain_loss": 2.0, "metric": "rmse", "value": 1.5},
        {"dataset": "esol", "checkpoint": "c", "pretrain_loss": 3.0, "metric": "rmse", "value": 2.0},
        {"dataset": "bbbp", "checkpoint": "a", "pretrain_loss": 1.0, "metric": "roc_auc", "value": 0.9},
        {"dataset": "bbbp", "checkpoint": "b", "pretrain_loss": 2.0, "metric": "roc_auc", "value": 0.8},
    ]
    table, fits = experiment_transfer(reports, tmp_path)
    assert set(fits) == {"esol", "bbbp"}
    assert fits["esol"].slope == pytest.approx(0.5)
    assert fits["esol"].intercept == pytest.approx(0.5)
    assert fits["esol"].r == pytest.approx(1.0)
    assert fits["bbbp"].slope == pytest.approx(-0.1)
    assert len(table) == 5
    for name in ("transfer.csv", "transfer.png", "transfer_summary.json"):
        assert (tmp_path / name).is_file()
    summary = json.loads((tmp_path / "transfer_summary.json").read_text())
    assert summary["esol"]["slope"] == pytest.approx(0.5)


def test_transfer_looks_up_pretraining_loss(tmp_path):
    results = [{"status": "ok", "out_dir": "runs/mlm_000", "best_val": 1.25}]
    assert pretrain_losses(results)["runs/mlm_000/best"] == 1.25
    reports = [
        {"dataset": "esol", "checkpoint": "runs/mlm_000/best", "metric": "rmse", "value": 1.0},
        {"dataset": "esol", "checkpoint": "unknown", "metric": "rmse", "value": 2.0},
    ]
    table, fits = experiment_transfer(reports, tmp_path, results)
    assert list(table["pretrain_loss"]) == [1.25]
    assert fits == {}
    assert np.isnan(table.loc[0, "slope"])


def test_transfer_without_losses(tmp_path):
    with pytest.raises(InputError):
        experiment_transfer([{"dataset": "x", "metric": "rmse", "value": 1.0}], tmp_path)


def test_loss_correlation_end_to_end(prepared_mtr, tmp_path):
    table, rho = experiment_loss_correlation(
        prepared_mtr.train_path,
        prepared_mtr.valid_path,
        tmp_path / "corr",
        n_configs=3,
        space=SMALL_SPACE,
        train_settings={**SETTINGS, "descriptors": prepared_mtr.label_names},
    )
    assert list(table.columns) == ["config", "mlm_loss", "mtr_loss", "status"]
    assert len(table) == 3
    assert -1.0 <= rho <= 1.0 or math.isnan(rho)
    for name in ("correlation.csv", "correlation.png", "correlation_summary.json"):
        assert (tmp_path / "corr" / name).is_file()


def test_scaling_end_to_end(prepared, tmp_path):
    configs = [
        {"index": 0, "lr": 1e-3, "hidden_size": 8, "num_attention_heads": 2, "num_hidden_layers": 1,
         "intermediate_size": 16, "dropout": 0.0},
    ]
    table = experiment_scaling(
        prepared.train_path, prepared.valid_path, tmp_path / "scale", configs, sizes=[10, 40], train_settings=SETTINGS
    )
    assert sorted(table["size"]) == [10, 40]
    assert (table["status"] == "ok").all()
    summary = json.loads((tmp_path / "scale" / "scaling_summary.json").read_text())
    assert summary["sizes"] == [10, 40]
    assert (tmp_path / "scale" / "scaling.png").is_file()
    with pytest.raises(InputError):
        experiment_scaling(prepared.train_path, prepared.valid_path, tmp_path / "none", [], sizes=[10])
