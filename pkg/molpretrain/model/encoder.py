"""Pre-norm transformer encoder over token ids.

Layout per layer::

    h = x + Dropout(SelfAttention(LayerNorm(x)))
    y = h + Dropout(FFN(LayerNorm(h)))

with GELU inside the feed-forward block, learned absolute positions and a
final layer norm. Pooling uses the CLS (first) position.
"""

from __future__ import annotations

from typing import Iterator

import math
from collections import OrderedDict

import numpy as np
from scipy import stats

from molpretrain.errors import ShapeError
from molpretrain.model.config import ModelConfig, param_shapes
from molpretrain.tensor import functional as F
from molpretrain.tensor.tensor import Tensor, default_dtype

INIT_STD = 0.02


def init_params(config: ModelConfig, rng: np.random.Generator) -> OrderedDict[str, Tensor]:
    """Fresh parameters: truncated normal (std 0.02, cut at 2 std) weights, zero biases, unit gammas."""
    params: OrderedDict[str, Tensor] = OrderedDict()
    truncnorm = stats.truncnorm(-2.0, 2.0, loc=0.0, scale=INIT_STD)
    for name, shape in param_shapes(config):
        if name.endswith(".gamma"):
            data = np.ones(shape)
        elif name.endswith((".bias", ".beta")):
            data = np.zeros(shape)
        else:
            data = truncnorm.rvs(size=shape, random_state=rng)
        params[name] = Tensor(data.astype(default_dtype()), requires_grad=True, name=name)
    return params


def _linear(x: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    return F.add(F.matmul(x, params[prefix + ".weight"]), params[prefix + ".bias"])


def _attention(
    x: Tensor,
    key_mask: np.ndarray,
    params: dict[str, Tensor],
    prefix: str,
    config: ModelConfig,
    training: bool,
    rng: np.random.Generator | None,
) -> Tensor:
    batch, length, hidden = x.shape
    heads, head_dim = config.num_attention_heads, config.head_dim
    qkv = _linear(x, params, prefix + ".qkv")
    qkv = F.transpose(F.reshape(qkv, (batch, length, 3, heads, head_dim)), (2, 0, 3, 1, 4))
    q, k, v = F.index(qkv, 0), F.index(qkv, 1), F.index(qkv, 2)
    scores = F.scale(F.matmul(q, F.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(head_dim))
    probs = F.softmax(scores, mask=key_mask[:, None, None, :])
    probs = F.dropout(probs, config.dropout, rng, training)
    context = F.matmul(probs, v)
    context = F.reshape(F.transpose(context, (0, 2, 1, 3)), (batch, length, hidden))
    return _linear(context, params, prefix + ".out")


def forward_encoder(
    params: dict[str, Tensor],
    config: ModelConfig,
    ids: np.ndarray,
    attention_mask: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Hidden states ``[batch, length, hidden]`` for a padded batch of token ids.

    Parameters
    ----------
    params : dict[str, Tensor]
        Named parameters
    config : ModelConfig
        Model configuration
    ids : np.ndarray
        ``[batch, length]`` integer token ids
    attention_mask : np.ndarray
        ``[batch, length]`` with 1 at real tokens, 0 at padding
    training : bool
        Enables dropout
    rng : np.random.Generator | None
        Dropout randomness, required when training with dropout > 0

    Returns
    -------
    Tensor
        Final hidden states
    """
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise ShapeError(f"expected [batch, length] ids, got shape {ids.shape}")
    batch, length = ids.shape
    if length > config.max_position:
        raise ShapeError(f"sequence length {length} exceeds {config.max_position}")
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise ShapeError(f"token ids must lie in [0, {config.vocab_size})")
    key_mask = np.asarray(attention_mask).astype(bool)
    if key_mask.shape != ids.shape:
        raise ShapeError(f"attention mask {key_mask.shape} does not match ids {ids.shape}")

    positions = F.index(params["embeddings.position"], slice(0, length))
    x = F.add(F.embedding(params["embeddings.word"], ids), positions)
    x = F.dropout(x, config.dropout, rng, training)
    for layer in range(config.num_hidden_layers):
        p = f"layer.{layer}."
        normed = F.layer_norm(x, params[p + "ln1.gamma"], params[p + "ln1.beta"])
        attn = _attention(normed, key_mask, params, p + "attn", config, training, rng)
        x = F.add(x, F.dropout(attn, config.dropout, rng, training))
        normed = F.layer_norm(x, params[p + "ln2.gamma"], params[p + "ln2.beta"])
        ffn = _linear(F.gelu(_linear(normed, params, p + "ffn.in")), params, p + "ffn.out")
        x = F.add(x, F.dropout(ffn, config.dropout, rng, training))
    return F.layer_norm(x, params["final_ln.gamma"], params["final_ln.beta"])


def pool_cls(hidden: Tensor) -> Tensor:
    return F.index(hidden, (slice(None), 0))


class TransformerModel:
    """Configuration plus named, ordered parameters.

    Parameters
    ----------
    config : ModelConfig
        Architecture
    params : OrderedDict[str, Tensor] | None
        Existing parameters; freshly initialised from ``rng`` when omitted
    rng : np.random.Generator | None
        Initialisation randomness
    """

    def __init__(
        self,
        config: ModelConfig,
        params: OrderedDict[str, Tensor] | None = None,
        rng: np.random.Generator | None = None,
    ) -> None:
        self.config = config
        if params is None:
            params = init_params(config, rng if rng is not None else np.random.default_rng(0))
        expected = [name for name, _ in param_shapes(config)]
        if list(params)[: len(expected)] != expected:
            raise ShapeError("parameter names do not follow the configuration")
        self.params: OrderedDict[str, Tensor] = params

    def __iter__(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.params.items())

    def forward(
        self,
        ids: np.ndarray,
        attention_mask: np.ndarray,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        return forward_encoder(self.params, self.config, ids, attention_mask, training, rng)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def encoder_names(self) -> list[str]:
        return [n for n in self.params if not n.startswith(("mlm.", "mtr.", "finetune."))]

    def state_arrays(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict((name, p.data) for name, p in self.params.items())
