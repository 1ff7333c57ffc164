from molpretrain.training.checkpoint import Cursor, load_model, load_training_state, save_model, save_training_state
from molpretrain.training.hpsearch import SearchSpace, run_hpsearch, sample_hyperparams, select_configs
from molpretrain.training.loader import StreamLoader, nested_subsets, prepare_corpus
from molpretrain.training.masking import mask_batch, mask_tokens
from molpretrain.training.pretrain import TrainConfig, pretrain, resume, scaled_lr

__all__ = [
    "Cursor",
    "SearchSpace",
    "StreamLoader",
    "TrainConfig",
    "load_model",
    "load_training_state",
    "mask_batch",
    "mask_tokens",
    "nested_subsets",
    "prepare_corpus",
    "pretrain",
    "resume",
    "run_hpsearch",
    "sample_hyperparams",
    "save_model",
    "save_training_state",
    "scaled_lr",
    "select_configs",
]
