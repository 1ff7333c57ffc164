from molpretrain.model.config import ModelConfig, layer_param_count, param_count, param_shapes
from molpretrain.model.encoder import TransformerModel, forward_encoder, init_params, pool_cls
from molpretrain.model.heads import (
    finetune_head,
    finetune_loss,
    init_finetune_head,
    mlm_loss,
    mtr_loss,
    mtr_predict,
)

__all__ = [
    "ModelConfig",
    "TransformerModel",
    "finetune_head",
    "finetune_loss",
    "forward_encoder",
    "init_finetune_head",
    "init_params",
    "layer_param_count",
    "mlm_loss",
    "mtr_loss",
    "mtr_predict",
    "param_count",
    "param_shapes",
    "pool_cls",
]
