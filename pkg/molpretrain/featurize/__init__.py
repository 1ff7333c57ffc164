from molpretrain.featurize.descriptors import (
    BASELINE_DESCRIPTORS,
    DESCRIPTORS,
    DescriptorVector,
    compute_descriptors,
    descriptor,
    descriptor_frame,
)
from molpretrain.featurize.fingerprints import Fingerprint, ecfp, jaccard_distance, jaccard_matrix
from molpretrain.featurize.normalizer import NormStats, fit_normalizer

__all__ = [
    "BASELINE_DESCRIPTORS",
    "DESCRIPTORS",
    "DescriptorVector",
    "Fingerprint",
    "NormStats",
    "compute_descriptors",
    "descriptor",
    "descriptor_frame",
    "ecfp",
    "fit_normalizer",
    "jaccard_distance",
    "jaccard_matrix",
]
