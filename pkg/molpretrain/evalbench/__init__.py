from molpretrain.evalbench.embeddings import export_embeddings
from molpretrain.evalbench.experiments import experiment_loss_correlation, experiment_scaling, experiment_transfer
from molpretrain.evalbench.finetune import FinetuneSpec, MetricReport, finetune
from molpretrain.evalbench.metrics import class_weights, linear_fit, rmse, roc_auc, spearman

__all__ = [
    "FinetuneSpec",
    "MetricReport",
    "class_weights",
    "experiment_loss_correlation",
    "experiment_scaling",
    "experiment_transfer",
    "export_embeddings",
    "finetune",
    "linear_fit",
    "rmse",
    "roc_auc",
    "spearman",
]
