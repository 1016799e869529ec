"""Transfer matrices and their analyses."""

from .aggregate import EffectTable, aggregate_effects, matrix_to_records
from .auc import ClusterabilityResult, clusterability_auc, weighted_auc
from .cosine import best_layer_oracle, cosine_similarity_matrix
from .crs import LabelMultiset, crs_matrix, crs_similarity
from .matrix import (
    TransferMatrix,
    baselined_transfer,
    build_transfer_matrices,
    build_transfer_matrix,
    read_matrix,
    symmetrize,
    write_matrix,
)
from .permutation import PermutationResult, difference_test, permutation_test

__all__ = [
    "ClusterabilityResult",
    "EffectTable",
    "LabelMultiset",
    "PermutationResult",
    "TransferMatrix",
    "aggregate_effects",
    "baselined_transfer",
    "best_layer_oracle",
    "build_transfer_matrices",
    "build_transfer_matrix",
    "clusterability_auc",
    "cosine_similarity_matrix",
    "crs_matrix",
    "crs_similarity",
    "difference_test",
    "matrix_to_records",
    "permutation_test",
    "read_matrix",
    "symmetrize",
    "weighted_auc",
    "write_matrix",
]
