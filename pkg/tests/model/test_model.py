import math
import unittest

import numpy as np
import pytest

from molpretrain.errors import ConfigError, SkipBatch
from molpretrain.featurize.normalizer import fit_normalizer
from molpretrain.model import (
    ModelConfig,
    TransformerModel,
    finetune_head,
    finetune_loss,
    init_finetune_head,
    mlm_loss,
    mtr_loss,
    param_count,
    param_shapes,
    pool_cls,
)
from molpretrain.tensor import grad_check, no_grad, precision
from molpretrain.tensor.functional import IGNORE_INDEX


def _batch(vocab_size, batch=3, length=9, seed=0):
    rng = np.random.default_rng(seed)
    ids = rng.integers(5, vocab_size, size=(batch, length))
    ids[:, 0] = 2
    mask = np.ones_like(ids)
    mask[0, 6:] = 0
    ids[0, 6:] = 0
    return ids, mask


class TestConfig(unittest.TestCase):
    def test_param_count_matches_shapes(self):
        config = ModelConfig(
            vocab_size=600,
            hidden_size=64,
            num_attention_heads=4,
            num_hidden_layers=2,
            intermediate_size=256,
            mtr_task_count=12,
        )
        self.assertEqual(param_count(config), sum(math.prod(shape) for _, shape in param_shapes(config)))
        model = TransformerModel(config, rng=np.random.default_rng(0))
        self.assertEqual(param_count(config), sum(p.size for p in model.params.values()))

    def test_divisibility(self):
        with self.assertRaises(ConfigError):
            ModelConfig(vocab_size=50, hidden_size=30, num_attention_heads=4)

    def test_text_round_trip(self):
        config = ModelConfig(vocab_size=50, dropout=0.05, mtr_task_count=3)
        self.assertEqual(ModelConfig.from_text(config.to_text()), config)


class TestEncoder(unittest.TestCase):
    def setUp(self):
        self.config = ModelConfig(
            vocab_size=40,
            hidden_size=16,
            num_attention_heads=2,
            num_hidden_layers=2,
            intermediate_size=32,
        )
        self.model = TransformerModel(self.config, rng=np.random.default_rng(1))
        self.ids, self.mask = _batch(40)

    def test_shapes(self):
        with no_grad():
            hidden = self.model.forward(self.ids, self.mask)
        self.assertEqual(hidden.shape, (3, 9, 16))
        self.assertEqual(pool_cls(hidden).shape, (3, 16))

    def test_eval_is_deterministic(self):
        with no_grad():
            a = self.model.forward(self.ids, self.mask).data
            b = self.model.forward(self.ids, self.mask).data
        np.testing.assert_array_equal(a, b)

    def test_dropout_only_in_training(self):
        with no_grad():
            a = self.model.forward(self.ids, self.mask, training=True, rng=np.random.default_rng(0)).data
            b = self.model.forward(self.ids, self.mask).data
        self.assertFalse(np.allclose(a, b))

    def test_padding_does_not_leak(self):
        """Extra padding leaves the hidden states of real tokens unchanged."""
        ids = np.pad(self.ids, ((0, 0), (0, 4)))
        mask = np.pad(self.mask, ((0, 0), (0, 4)))
        with no_grad():
            short = self.model.forward(self.ids, self.mask).data
            long = self.model.forward(ids, mask).data
        np.testing.assert_allclose(long[1, :9], short[1], atol=1e-5)
        np.testing.assert_allclose(long[0, :6], short[0, :6], atol=1e-5)


class TestHeads(unittest.TestCase):
    def test_initial_mlm_loss_is_near_uniform(self):
        config = ModelConfig(vocab_size=591)
        model = TransformerModel(config, rng=np.random.default_rng(0))
        ids, mask = _batch(591, batch=8, length=20)
        labels = np.full(ids.shape, IGNORE_INDEX)
        labels[:, 3:6] = ids[:, 3:6]
        with no_grad():
            loss = mlm_loss(model, model.forward(ids, mask), labels).item()
        self.assertAlmostEqual(loss, math.log(591), delta=0.3)

    def test_mlm_without_labels_skips(self):
        config = ModelConfig(
            vocab_size=40,
            hidden_size=16,
            num_attention_heads=2,
            num_hidden_layers=1,
            intermediate_size=32,
        )
        model = TransformerModel(config, rng=np.random.default_rng(0))
        ids, mask = _batch(40)
        with no_grad(), self.assertRaises(SkipBatch):
            mlm_loss(model, model.forward(ids, mask), np.full(ids.shape, IGNORE_INDEX))

    def test_initial_mtr_loss_on_standardised_labels(self):
        config = ModelConfig(
            vocab_size=40,
            hidden_size=32,
            num_attention_heads=4,
            num_hidden_layers=2,
            intermediate_size=64,
            mtr_task_count=12,
        )
        model = TransformerModel(config, rng=np.random.default_rng(0))
        ids, mask = _batch(40, batch=64, length=12)
        raw = np.random.default_rng(2).normal(3.0, 2.0, size=(64, 12))
        norm = fit_normalizer(raw)
        with no_grad():
            loss = mtr_loss(model, model.forward(ids, mask), norm.apply(raw), norm.task_mask).item()
        self.assertAlmostEqual(loss, 1.0, delta=0.1)

    def test_finetune_head_shapes(self):
        config = ModelConfig(
            vocab_size=40,
            hidden_size=16,
            num_attention_heads=2,
            num_hidden_layers=1,
            intermediate_size=32,
        )
        model = TransformerModel(config, rng=np.random.default_rng(0))
        ids, mask = _batch(40)
        for task_type, width in (("regression", 1), ("binary", 2)):
            init_finetune_head(model, task_type, np.random.default_rng(0))
            with no_grad():
                self.assertEqual(finetune_head(model, model.forward(ids, mask)).shape, (3, width))
        with self.assertRaises(ConfigError):
            init_finetune_head(model, "multiclass", np.random.default_rng(0))

    def test_regression_normalisation_round_trip(self):
        labels = np.array([[1.5], [-2.0], [7.25], [0.0]])
        norm = fit_normalizer(labels)
        np.testing.assert_allclose(norm.invert(norm.apply(labels)), labels, rtol=1e-12)


def _tiny_model(mtr_task_count=0):
    config = ModelConfig(
        vocab_size=12,
        hidden_size=8,
        num_attention_heads=2,
        num_hidden_layers=2,
        intermediate_size=16,
        dropout=0.0,
        mtr_task_count=mtr_task_count,
    )
    with precision(np.float64):
        return TransformerModel(config, rng=np.random.default_rng(4))


PROBED = [
    "embeddings.word",
    "embeddings.position",
    "layer.0.attn.qkv.weight",
    "layer.0.ffn.in.weight",
    "layer.1.ln1.gamma",
    "final_ln.beta",
]


def test_mlm_loss_gradient():
    model = _tiny_model()
    ids, mask = _batch(12, batch=2, length=7, seed=3)
    labels = np.full(ids.shape, IGNORE_INDEX)
    labels[:, 2] = ids[:, 2]
    labels[1, 5] = ids[1, 5]

    def loss(*_):
        return mlm_loss(model, model.forward(ids, mask), labels)

    inputs = [model.params[name] for name in PROBED + ["mlm.weight"]]
    assert grad_check(loss, inputs, h=1e-3, floor=1e-6, max_coords=6) < 1e-4


def test_mtr_loss_gradient():
    model = _tiny_model(mtr_task_count=3)
    ids, mask = _batch(12, batch=4, length=6, seed=5)
    labels = np.random.default_rng(6).normal(size=(4, 3))

    def loss(*_):
        return mtr_loss(model, model.forward(ids, mask), labels, np.array([1.0, 0.0, 1.0]))

    inputs = [model.params[name] for name in PROBED + ["mtr.weight", "mtr.bias"]]
    assert grad_check(loss, inputs, h=1e-3, floor=1e-6, max_coords=6) < 1e-4


def test_binary_finetune_loss_gradient():
    model = _tiny_model()
    with precision(np.float64):
        init_finetune_head(model, "binary", np.random.default_rng(0))
    ids, mask = _batch(12, batch=4, length=6, seed=7)
    labels = np.array([0, 1, 1, 0])
    weights = np.array([1.0, 2.0])

    def loss(*_):
        return finetune_loss(model, model.forward(ids, mask), labels, "binary", weights)

    inputs = [model.params[name] for name in ["layer.1.ffn.out.weight", "finetune.weight", "finetune.bias"]]
    assert grad_check(loss, inputs, h=1e-3, floor=1e-6, max_coords=6) < 1e-4


@pytest.mark.parametrize("seed", [0, 1])
def test_initialisation_is_seeded(seed):
    config = ModelConfig(vocab_size=20, hidden_size=8, num_attention_heads=2, num_hidden_layers=1, intermediate_size=8)
    a = TransformerModel(config, rng=np.random.default_rng(seed))
    b = TransformerModel(config, rng=np.random.default_rng(seed))
    for name in a.params:
        np.testing.assert_array_equal(a.params[name].data, b.params[name].data)
