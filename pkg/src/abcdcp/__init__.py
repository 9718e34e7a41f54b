"""Adaptive block-based change-point detection for high-dimensional series."""

__version__ = "0.1.0"

from .abcd import GraphConfig, ScanResult, abcd_detect, block_scans, localize, structure_max
from .blocking import BlockingPlan, BlockingStructure, default_plan, make_plan, parse_block_spec
from .core import (
    ComponentSelector,
    FormatError,
    SeriesTensor,
    ValidationError,
    counter_rng,
    load_series,
    save_series,
)
from .edgecount import edge_counts, null_moments, scan_curves
from .multicp import SegmentConfig, seeded_intervals, segment
from .simgraph import DistanceMatrix, SimilarityGraph, k_mst, knn_graph, mst, pairwise_distances

__all__ = [
    "__version__",
    "GraphConfig", "ScanResult", "abcd_detect", "block_scans", "localize", "structure_max",
    "BlockingPlan", "BlockingStructure", "default_plan", "make_plan", "parse_block_spec",
    "ComponentSelector", "FormatError", "SeriesTensor", "ValidationError", "counter_rng",
    "load_series", "save_series",
    "edge_counts", "null_moments", "scan_curves",
    "SegmentConfig", "seeded_intervals", "segment",
    "DistanceMatrix", "SimilarityGraph", "k_mst", "knn_graph", "mst", "pairwise_distances",
]
