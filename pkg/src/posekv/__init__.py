"""Pose-indexed KV memory, compression and retrieval for long-horizon world-model rollouts."""

from posekv.chunkstore import ChunkStore, KVChunk, TransferModel, byte_size
from posekv.compression import CompressionConfig, compress_chunk, redundancy_scores
from posekv.errors import ChunkError, ConfigError, NoCandidatesError, PoseKVError, StoreError
from posekv.geometry import DiscreteAction, Move, PoseState, StepConfig, accumulate, combined_distance
from posekv.retrieval import PoseBased, QueryBased, retrieve, select_strategy
from posekv.window import Mode, Window, WindowConfig, assemble_context, context_token_count, init_window, step

__version__ = "0.1.0"

__all__ = [
    "ChunkError",
    "ChunkStore",
    "CompressionConfig",
    "ConfigError",
    "DiscreteAction",
    "KVChunk",
    "Mode",
    "Move",
    "NoCandidatesError",
    "PoseBased",
    "PoseKVError",
    "PoseState",
    "QueryBased",
    "StepConfig",
    "StoreError",
    "TransferModel",
    "Window",
    "WindowConfig",
    "accumulate",
    "assemble_context",
    "byte_size",
    "combined_distance",
    "compress_chunk",
    "context_token_count",
    "init_window",
    "redundancy_scores",
    "retrieve",
    "select_strategy",
    "step",
]
