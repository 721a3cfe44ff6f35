"""Distributed out-of-core graph processing on contiguous partitions and fixed-size batches."""
from .algorithms import bfs, pagerank, run_algorithm, sssp, wcc
from .layout import BatchLayout, DegreeTable, GraphMeta, PartitionLayout
from .preprocess import Manifest, PreprocessConfig, preprocess
from .runtime import Engine, EngineConfig
from .storage import BITMAP, VertexArray

__all__ = ["BITMAP", "BatchLayout", "DegreeTable", "Engine", "EngineConfig", "GraphMeta", "Manifest",
           "PartitionLayout", "PreprocessConfig", "VertexArray", "bfs", "pagerank", "preprocess",
           "run_algorithm", "sssp", "wcc"]
