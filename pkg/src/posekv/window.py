"""The four-region attention window and its per-chunk update."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from posekv.chunkstore import ChunkStore, KVChunk, byte_size
from posekv.compression import CompressionConfig, compress_chunk, compressed_token_count
from posekv.errors import ChunkError, ConfigError
from posekv.geometry import PoseState
from posekv.retrieval import PoseBased, RetrievalStrategy, retrieve

log = logging.getLogger(__name__)


class Mode(str, enum.Enum):
    SLIDING = "sliding"
    FULL = "full"
    WORLDKV = "worldkv"


@dataclass(frozen=True)
class WindowConfig:
    sink_frames: int = 3
    retrieved_frames: int = 9
    recent_frames: int = 3
    denoising_frames: int = 3
    tokens_per_frame: int = 64
    chunk_frames: int = 3
    retrieved_chunks: int | None = None

    def __post_init__(self):
        for name in ("sink_frames", "retrieved_frames", "recent_frames", "denoising_frames", "tokens_per_frame", "chunk_frames"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.recent_frames % self.chunk_frames:
            raise ConfigError("recent_frames must be a multiple of chunk_frames")
        if self.retrieved_chunks is not None and self.retrieved_chunks < 1:
            raise ConfigError("retrieved_chunks must be >= 1")

    @property
    def max_context_tokens(self) -> int:
        frames = self.sink_frames + self.retrieved_frames + self.recent_frames + self.denoising_frames
        return frames * self.tokens_per_frame

    @property
    def recent_chunks(self) -> int:
        return self.recent_frames // self.chunk_frames

    @property
    def sliding_chunks(self) -> int:
        """Recent chunks kept when the retrieved region is given over to plain recency."""
        return (self.recent_frames + self.retrieved_frames) // self.chunk_frames

    def retrieval_capacity(self, compression: CompressionConfig) -> int:
        """Chunks fitting the retrieved region at the configured retention."""
        if self.retrieved_chunks is not None:
            return self.retrieved_chunks
        T, F = self.tokens_per_frame, self.chunk_frames
        fraction = compression.retention_fraction if compression.enabled else 1.0
        per_chunk = compressed_token_count(fraction, F, T)
        k = (self.retrieved_frames * T) // per_chunk
        if k < 1:
            raise ConfigError("retrieved region cannot hold a single chunk")
        return k


@dataclass
class Context:
    """Assembled attention context: per-layer K/V rows plus per-token tags."""

    keys: list[np.ndarray]
    values: list[np.ndarray]
    regions: np.ndarray
    chunk_ids: np.ndarray

    def __len__(self):
        return len(self.chunk_ids)


class Window:
    def __init__(self, cfg: WindowConfig, sink: KVChunk):
        self.cfg = cfg
        self.sink = sink
        self.retrieved: list[KVChunk] = []
        self.recent: list[KVChunk] = []
        self.denoising: KVChunk | None = None

    def regions(self):
        yield "sink", [self.sink]
        yield "retrieved", self.retrieved
        yield "recent", self.recent

    def resident_ids(self, include_retrieved: bool = True) -> set[int]:
        ids = {self.sink.chunk_id} | {c.chunk_id for c in self.recent}
        if self.denoising is not None:
            ids.add(self.denoising.chunk_id)
        if include_retrieved:
            ids |= {c.chunk_id for c in self.retrieved}
        return ids

    def context_token_count(self) -> int:
        return sum(c.token_count for _, chunks in self.regions() for c in chunks)

    def resident_bytes(self) -> int:
        return sum(byte_size(c) for _, chunks in self.regions() for c in chunks)

    def assemble_context(self) -> Context:
        """sink | retrieved | recent, every stored row emitted verbatim."""
        chunks = [(tag, c) for tag, cs in self.regions() for c in cs]
        layers = self.sink.num_layers
        keys = [np.concatenate([c.keys[l] for _, c in chunks]) for l in range(layers)]
        values = [np.concatenate([c.values[l] for _, c in chunks]) for l in range(layers)]
        regions = np.concatenate([np.full(c.token_count, tag, dtype=object) for tag, c in chunks])
        ids = np.concatenate([np.full(c.token_count, c.chunk_id, dtype=np.int64) for _, c in chunks])
        return Context(keys, values, regions, ids)


def init_window(cfg: WindowConfig, first_chunk: KVChunk) -> Window:
    if first_chunk.frames != cfg.sink_frames:
        raise ChunkError(f"sink needs {cfg.sink_frames} frames, chunk {first_chunk.chunk_id} has {first_chunk.frames}")
    if first_chunk.tokens_per_frame != cfg.tokens_per_frame:
        raise ChunkError("sink chunk tokens_per_frame does not match the window config")
    return Window(cfg, first_chunk)


def assemble_context(window: Window) -> Context:
    return window.assemble_context()


def context_token_count(window: Window) -> int:
    return window.context_token_count()


@dataclass
class EvictionReport:
    evicted: list[int] = field(default_factory=list)
    stored: list[int] = field(default_factory=list)
    discarded: list[int] = field(default_factory=list)


@dataclass
class RetrievalTrace:
    step: int
    strategy: str
    k: int
    chunk_ids: list[int] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)
    transfer_seconds: float = 0.0
    filled: list[int] = field(default_factory=list)
    refreshed: bool = True


def step(
    window: Window,
    store: ChunkStore | None,
    strategy: RetrievalStrategy | None,
    new_chunk: KVChunk,
    current_pose: PoseState,
    *,
    mode: Mode | str = Mode.WORLDKV,
    compression: CompressionConfig = CompressionConfig(),
    queries: np.ndarray | None = None,
    step_index: int = 0,
    stride: int = 1,
) -> tuple[Window, EvictionReport, RetrievalTrace | None]:
    """Admit ``new_chunk`` into the recent region and refresh the retrieved region.

    ``current_pose`` is the viewpoint of the next chunk to be generated. In
    sliding mode evicted chunks are dropped; in full mode nothing is evicted.
    """
    mode = Mode(mode)
    cfg = window.cfg
    if new_chunk.compressed:
        raise ChunkError("new chunks arrive uncompressed")
    if new_chunk.frames != cfg.chunk_frames or new_chunk.tokens_per_frame != cfg.tokens_per_frame:
        raise ChunkError(f"chunk {new_chunk.chunk_id} does not match the window's chunk shape")
    window.recent.append(new_chunk)
    report = EvictionReport()
    if mode is Mode.FULL:
        return window, report, None

    limit = cfg.sliding_chunks if mode is Mode.SLIDING else cfg.recent_chunks
    while len(window.recent) > limit:
        old = window.recent.pop(0)
        report.evicted.append(old.chunk_id)
        if mode is Mode.SLIDING:
            report.discarded.append(old.chunk_id)
            continue
        stored = compress_chunk(old, compression) if compression.enabled else old
        store.put(stored)
        report.stored.append(stored.chunk_id)
    if mode is Mode.SLIDING:
        return window, report, None

    strategy = strategy or PoseBased()
    k = cfg.retrieval_capacity(compression)
    trace = RetrievalTrace(step_index, strategy.kind, k)
    if step_index % stride and window.retrieved:
        trace.refreshed = False
        trace.chunk_ids = [c.chunk_id for c in window.retrieved]
        return window, report, trace
    excluded = window.resident_ids(include_retrieved=False)
    if len(store) == 0 or not store.candidates(excluded):
        window.retrieved = []
        return window, report, trace
    result = retrieve(strategy, store, k, excluded, pose=current_pose, queries=queries)
    chunks = list(result.chunks)
    costs = [result.transfer_seconds]
    if len(chunks) < k:
        taken = set(result.chunk_ids) | excluded
        for cid in reversed(list(store.index)):
            if len(chunks) >= k:
                break
            if cid in taken:
                continue
            chunk, cost = store.fetch(cid)
            chunks.append(chunk)
            costs.append(cost)
            trace.filled.append(cid)
    if trace.filled:
        log.debug("step %d: retrieval returned %d of %d, filled with %s", step_index, len(result), k, trace.filled)
    window.retrieved = sorted(chunks, key=lambda c: c.chunk_id)
    trace.chunk_ids = list(result.chunk_ids)
    trace.scores = list(result.scores)
    trace.transfer_seconds = math.fsum(costs)
    return window, report, trace
