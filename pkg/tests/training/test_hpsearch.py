import math
import unittest

import pytest

from molpretrain.errors import ConfigError
from molpretrain.model.config import param_count
from molpretrain.training.hpsearch import (
    SearchSpace,
    quantile_indices,
    read_jsonl,
    run_hpsearch,
    sample_hyperparams,
    select_configs,
)

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


class TestSampling(unittest.TestCase):
    def test_reproducible(self):
        first = sample_hyperparams(50, seed=0)
        second = sample_hyperparams(50, seed=0)
        self.assertEqual([h.as_dict() for h in first], [h.as_dict() for h in second])
        self.assertNotEqual(
            [h.as_dict() for h in first], [h.as_dict() for h in sample_hyperparams(50, seed=1)]
        )

    def test_within_space(self):
        space = SearchSpace()
        for hp in sample_hyperparams(50, seed=3, space=space):
            config = hp.config
            self.assertEqual(config.hidden_size % config.num_attention_heads, 0)
            self.assertTrue(space.heads_min <= config.num_attention_heads <= space.heads_max)
            self.assertTrue(space.layers_min <= config.num_hidden_layers <= space.layers_max)
            self.assertTrue(space.dropout_min <= config.dropout <= space.dropout_max)
            self.assertTrue(space.lr_min <= hp.lr <= space.lr_max)
            self.assertTrue(space.min_params <= param_count(config) <= space.max_params)
        self.assertEqual([h.index for h in sample_hyperparams(5)], list(range(5)))

    def test_impossible_bounds(self):
        with self.assertRaises(ConfigError):
            sample_hyperparams(3, space=SearchSpace(min_params=10**9, max_params=10**10))

    def test_empty_range(self):
        with self.assertRaises(ConfigError):
            SearchSpace(heads_min=4, heads_max=2)
        with self.assertRaises(ConfigError):
            SearchSpace(lr_min=0.0)

    def test_from_mapping(self):
        space = SearchSpace.from_mapping({"hp_heads_max": 8, "hp_lr_min": "1e-6", "seed": 3, "hp_unknown": 1})
        self.assertEqual(space.heads_max, 8)
        self.assertEqual(space.lr_min, 1e-6)
        self.assertIsInstance(space.heads_max, int)


class TestSelection(unittest.TestCase):
    def test_quantile_indices(self):
        self.assertEqual(quantile_indices(50, 5), [0, 12, 25, 37, 49])
        self.assertEqual(quantile_indices(10, 1), [0])

    def test_span_of_losses(self):
        results = [{"index": i, "best_val": float(50 - i)} for i in range(50)]
        chosen = select_configs(results, 5)
        self.assertEqual([r["best_val"] for r in chosen], [1.0, 13.0, 26.0, 38.0, 50.0])

    def test_skips_failed_runs(self):
        results = [
            {"index": 0, "best_val": 2.0},
            {"index": 1, "best_val": None},
            {"index": 2, "best_val": math.nan},
            {"index": 3, "best_val": 1.0},
        ]
        self.assertEqual([r["index"] for r in select_configs(results, 5)], [3, 0])

    def test_k_positive(self):
        with self.assertRaises(ConfigError):
            select_configs([], 0)


def test_run_hpsearch_writes_records(prepared, tmp_path):
    settings = {"batch_size": 8, "max_steps": 4, "eval_interval": 2, "patience_steps": 100, "deterministic": True}
    out = run_hpsearch(
        prepared.train_path,
        prepared.valid_path,
        tmp_path / "search",
        n=3,
        k=2,
        space=SMALL_SPACE,
        train_settings=settings,
    )
    results = read_jsonl(tmp_path / "search" / "results.jsonl")
    assert len(results) == 3
    assert all(r["status"] == "ok" for r in results)
    assert len(read_jsonl(tmp_path / "search" / "configs.jsonl")) == 3
    selected = read_jsonl(tmp_path / "search" / "selected_mlm.jsonl")
    assert selected == out["mlm"]
    assert len(selected) == 2
    assert selected[0]["best_val"] <= selected[1]["best_val"]
    assert (tmp_path / "search" / "runs" / "mlm_000" / "best").is_dir()


@pytest.mark.parametrize("n,k", [(5, 5), (7, 3), (100, 2)])
def test_quantile_endpoints(n, k):
    picks = quantile_indices(n, k)
    assert picks[0] == 0
    assert picks[-1] == n - 1
    assert picks == sorted(picks)


if __name__ == "__main__":
    unittest.main()
