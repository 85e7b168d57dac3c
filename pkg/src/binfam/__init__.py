"""Incremental malware-family hierarchy, shared-component discovery and lineage inference."""

from .features import BinaryFeatures, RawBinaryRecord, build_features
from .hierarchy import Hierarchy, HierarchyParams, UpdateReport
from .similarity import ChannelWeights, ThetaKind, combined_distance, distance_matrix, theta

__all__ = [
    "BinaryFeatures",
    "ChannelWeights",
    "Hierarchy",
    "HierarchyParams",
    "RawBinaryRecord",
    "ThetaKind",
    "UpdateReport",
    "build_features",
    "combined_distance",
    "distance_matrix",
    "theta",
]

__version__ = "0.1.0"
