"""Similarity analysis of image-classification datasets.

Finds redundant and influential training images from wavelet coefficients
(RRQR column selection plus clustering) or from pairwise similarity matrices
(SSIM or kernel similarities, graph-Laplacian eigen-gaps and spectral
clustering), and compares test splits against training splits.
"""

from .graph import SpectralClustering, eigen_gap_count, export_dot, isolation_scores, laplacian
from .ingest import (
    LabeledDataset,
    load_cifar10,
    load_cifar100,
    load_image_dir,
    load_mnist,
    to_grayscale,
)
from .numerics import (
    KMeans,
    RRQRColumnSelector,
    ThresholdAgglomerative,
    condition_number,
    kmeans,
    pivoted_qr,
    select_columns,
)
from .pipeline import (
    AnalysisReport,
    SimilarityRedundancyAnalyzer,
    WaveletRedundancyAnalyzer,
    algorithm1,
    algorithm2,
    cross_set_report,
    dedupe_by_threshold,
)
from .similarity import SimilarityMatrix, SsimParams, cross_similarity, similarity_matrix, ssim
from .wavelet import CoefficientMatrix, WaveletTransform, decompose_dataset

__version__ = "0.1.0"

__all__ = [
    "AnalysisReport", "CoefficientMatrix", "KMeans", "LabeledDataset", "RRQRColumnSelector",
    "SimilarityMatrix", "SimilarityRedundancyAnalyzer", "SpectralClustering", "SsimParams",
    "ThresholdAgglomerative", "WaveletRedundancyAnalyzer", "WaveletTransform", "algorithm1",
    "algorithm2", "condition_number", "cross_set_report", "cross_similarity",
    "decompose_dataset", "dedupe_by_threshold", "eigen_gap_count", "export_dot",
    "isolation_scores", "kmeans", "laplacian", "load_cifar10", "load_cifar100",
    "load_image_dir", "load_mnist", "pivoted_qr", "select_columns", "similarity_matrix",
    "ssim", "to_grayscale",
]
