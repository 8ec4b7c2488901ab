"""Streaming vector quantization with bounded disk I/O per update.

Quantized codes and codebooks live in memory; full-precision vectors live on
a simulated disk whose traffic is accounted in dependent rounds and words.
Updates (inserts and deletes) keep every structure equal to a fresh build on
the surviving point set, for a fixed seed.
"""

__version__ = "0.1.0"

from .store import DiskStore, IoLedger, IoReport, RecordTable
from .heap import HeapPq, run_plans_window
from .kdq import KdQuantizer, median_split, sample_rotation
from .product import ProductCodeq, ProductConfig
from .baselines import DeDriftPq, FrozenPq, KMeansResult, OnlinePq, PqIndex, RebuildPq, kmeans
from .quadsketch import GridParams, QuadSketch, scale_to_grid
from . import dataio, stream

__all__ = [
    "DiskStore",
    "IoLedger",
    "IoReport",
    "RecordTable",
    "HeapPq",
    "run_plans_window",
    "KdQuantizer",
    "median_split",
    "sample_rotation",
    "ProductCodeq",
    "ProductConfig",
    "PqIndex",
    "FrozenPq",
    "RebuildPq",
    "OnlinePq",
    "DeDriftPq",
    "KMeansResult",
    "kmeans",
    "GridParams",
    "QuadSketch",
    "scale_to_grid",
    "dataio",
    "stream",
    "__version__",
]
