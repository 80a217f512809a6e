"""Top-k chunk retrieval strategies over a ChunkStore."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from posekv.chunkstore import ChunkStore, KVChunk
from posekv.errors import ConfigError
from posekv.geometry import PoseState, combined_distance

STRATEGY_KINDS = ("pose", "query")


@dataclass(frozen=True)
class PoseBased:
    yaw_only: bool = False
    kind: str = field(default="pose", init=False)


@dataclass(frozen=True)
class QueryBased:
    layer: int = 0
    kind: str = field(default="query", init=False)

    def __post_init__(self):
        if self.layer < 0:
            raise ConfigError("scoring layer must be >= 0")


RetrievalStrategy = PoseBased | QueryBased


@dataclass
class RetrievalResult:
    chunk_ids: list[int] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)
    transfer_seconds: float = 0.0
    chunks: list[KVChunk] = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.chunk_ids)


def select_strategy(cfg: Mapping | str) -> RetrievalStrategy:
    if isinstance(cfg, str):
        cfg = {"kind": cfg}
    kind = cfg.get("kind")
    if kind == "pose":
        return PoseBased(yaw_only=bool(cfg.get("yaw_only", False)))
    if kind == "query":
        return QueryBased(layer=int(cfg.get("layer", 0)))
    raise ConfigError(f"unknown retrieval strategy {kind!r}; valid kinds: {', '.join(STRATEGY_KINDS)}")


def _fetch_all(store: ChunkStore, ranked: list[tuple[int, float]]) -> RetrievalResult:
    costs, chunks = [], []
    for cid, _ in ranked:
        chunk, cost = store.fetch(cid)
        chunks.append(chunk)
        costs.append(cost)
    return RetrievalResult(
        chunk_ids=[cid for cid, _ in ranked],
        scores=[s for _, s in ranked],
        transfer_seconds=math.fsum(costs),
        chunks=chunks,
    )


def rank_pose(store: ChunkStore, current: PoseState, k: int, excluded: Iterable[int] = (), yaw_only: bool = False):
    """(chunk_id, distance) pairs of the k nearest candidates, without fetching."""
    if k < 1:
        raise ValueError("k must be >= 1")
    cands = store.candidates(excluded)
    if not cands:
        return []
    dist = combined_distance(current, [pose for _, pose in cands], yaw_only)
    order = sorted(range(len(cands)), key=lambda i: (dist[i], cands[i][0]))
    return [(cands[i][0], float(dist[i])) for i in order[:k]]


def retrieve_pose(
    store: ChunkStore, current: PoseState, k: int, excluded: Iterable[int] = (), yaw_only: bool = False
) -> RetrievalResult:
    return _fetch_all(store, rank_pose(store, current, k, excluded, yaw_only))


def chunk_query_score(queries: np.ndarray, keys: np.ndarray) -> float:
    """Mean over queries of the max scaled dot product against the chunk's keys."""
    q = np.asarray(queries, dtype=np.float64)
    k = np.asarray(keys, dtype=np.float64)
    return float((q @ k.T / math.sqrt(q.shape[1])).max(axis=1).mean())


def rank_query(store: ChunkStore, queries: np.ndarray, k: int, excluded: Iterable[int] = (), layer: int = 0):
    if k < 1:
        raise ValueError("k must be >= 1")
    queries = np.atleast_2d(np.asarray(queries))
    if queries.shape[0] < 1:
        raise ValueError("need at least one query")
    scored = []
    for cid, _ in store.candidates(excluded):
        chunk = store.peek(cid)
        if layer >= chunk.num_layers:
            raise ConfigError(f"scoring layer {layer} out of range for chunk {cid}")
        keys = chunk.keys[layer]
        if keys.shape[1] != queries.shape[1]:
            raise ValueError(f"query dim {queries.shape[1]} does not match key dim {keys.shape[1]}")
        scored.append((cid, chunk_query_score(queries, keys)))
    scored.sort(key=lambda p: (-p[1], p[0]))
    return scored[:k]


def retrieve_query(
    store: ChunkStore, queries: np.ndarray, k: int, excluded: Iterable[int] = (), layer: int = 0
) -> RetrievalResult:
    return _fetch_all(store, rank_query(store, queries, k, excluded, layer))


def retrieve(
    strategy: RetrievalStrategy,
    store: ChunkStore,
    k: int,
    excluded: Iterable[int] = (),
    pose: PoseState | None = None,
    queries: np.ndarray | None = None,
) -> RetrievalResult:
    if isinstance(strategy, PoseBased):
        if pose is None:
            raise ValueError("pose-based retrieval needs the current pose")
        return retrieve_pose(store, pose, k, excluded, strategy.yaw_only)
    if queries is None:
        raise ValueError("query-based retrieval needs denoising queries")
    return retrieve_query(store, queries, k, excluded, strategy.layer)
