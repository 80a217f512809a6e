"""KV chunks and the tiered hot/cold chunk store."""

from __future__ import annotations

import json
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from posekv.errors import ChunkError, StoreError
from posekv.geometry import PoseState

METADATA_BYTES = 256

_DTYPES = {2: "<f2", 4: "<f4", 8: "<f8"}
_HEADER = struct.Struct("<QIIIIBB")


def dtype_for(dtype_bytes: int) -> np.dtype:
    try:
        return np.dtype(_DTYPES[dtype_bytes])
    except KeyError:
        raise ChunkError(f"unsupported dtype_bytes={dtype_bytes}; use one of {sorted(_DTYPES)}") from None


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class KVChunk:
    """Per-layer keys/values for ``frames`` consecutive frames.

    ``retained`` is ``None`` for an uncompressed chunk. For a compressed chunk
    it holds, per layer, the kept non-anchor positions (indices into the
    ``frames * tokens_per_frame`` token order); rows of ``keys``/``values``
    are the anchor frame followed by those positions.
    """

    chunk_id: int
    pose: PoseState
    frames: int
    tokens_per_frame: int
    keys: tuple
    values: tuple
    retained: tuple | None = None
    dtype_bytes: int = 2
    frame_poses: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.keys) != len(self.values):
            raise ChunkError("keys and values need the same number of layers")
        dt = dtype_for(self.dtype_bytes)
        object.__setattr__(self, "keys", tuple(_frozen(np.asarray(k, dtype=dt)) for k in self.keys))
        object.__setattr__(self, "values", tuple(_frozen(np.asarray(v, dtype=dt)) for v in self.values))
        if self.retained is not None:
            if len(self.retained) != len(self.keys):
                raise ChunkError("one retained-index list per layer required")
            object.__setattr__(
                self, "retained", tuple(_frozen(np.asarray(r, dtype=np.int64)) for r in self.retained)
            )
        self._check()

    def _check(self):
        T, F = self.tokens_per_frame, self.frames
        expected = None
        for layer, (k, v) in enumerate(zip(self.keys, self.values)):
            if k.ndim != 2 or k.shape != v.shape:
                raise ChunkError(f"layer {layer}: keys {k.shape} and values {v.shape} must be matching matrices")
            if self.retained is None:
                if k.shape[0] != F * T:
                    raise ChunkError(f"layer {layer}: expected {F * T} tokens, got {k.shape[0]}")
                continue
            r = self.retained[layer]
            if expected is None:
                expected = len(r)
            elif len(r) != expected:
                raise ChunkError("retained count must be identical across layers")
            if k.shape[0] != T + len(r):
                raise ChunkError(f"layer {layer}: expected {T + len(r)} tokens, got {k.shape[0]}")
            if len(r) and (r[0] < T or r[-1] >= F * T or np.any(np.diff(r) <= 0)):
                raise ChunkError(f"layer {layer}: retained indices must be strictly increasing non-anchor positions")

    @property
    def compressed(self) -> bool:
        return self.retained is not None

    @property
    def num_layers(self) -> int:
        return len(self.keys)

    @property
    def dim(self) -> int:
        return self.keys[0].shape[1] if self.keys else 0

    @property
    def token_count(self) -> int:
        """Tokens per layer."""
        if self.retained is None:
            return self.frames * self.tokens_per_frame
        return self.tokens_per_frame + (len(self.retained[0]) if self.retained else 0)

    def positions(self, layer: int = 0) -> np.ndarray:
        """Original token position (in ``frames * T`` order) of each stored row."""
        T = self.tokens_per_frame
        if self.retained is None:
            return np.arange(self.frames * T)
        return np.concatenate([np.arange(T), self.retained[layer]])

    def payload_bytes(self) -> int:
        return self.num_layers * 2 * self.token_count * self.dim * self.dtype_bytes


def byte_size(chunk: KVChunk) -> int:
    """K and V payload plus the fixed per-chunk metadata header."""
    return chunk.payload_bytes() + METADATA_BYTES


def payload_bytes_for(layers: int, tokens: int, d: int, dtype_bytes: int) -> int:
    return layers * 2 * tokens * d * dtype_bytes


@dataclass(frozen=True)
class TransferModel:
    latency_per_byte: float = 0.0
    fixed_latency: float = 0.0

    def __post_init__(self):
        if self.latency_per_byte < 0 or self.fixed_latency < 0:
            raise ValueError("transfer latencies must be >= 0")

    def cost(self, nbytes: int) -> float:
        return self.fixed_latency + self.latency_per_byte * nbytes


class ChunkStore:
    """Hot/cold tiered store of evicted chunks.

    New and promoted chunks enter the hot tier; when hot bytes exceed the
    budget, hot chunks are demoted to cold oldest-inserted first.
    ``hot_budget_bytes=None`` means unbounded.
    """

    def __init__(self, hot_budget_bytes: int | None = None, transfer: TransferModel | None = None):
        if hot_budget_bytes is not None and hot_budget_bytes < 0:
            raise ValueError("hot_budget_bytes must be >= 0")
        self.hot_budget_bytes = hot_budget_bytes
        self.transfer = transfer or TransferModel()
        self.hot: dict[int, KVChunk] = {}
        self.cold: dict[int, KVChunk] = {}
        self.index: OrderedDict[int, PoseState] = OrderedDict()
        self._hot_bytes = 0
        self._cold_bytes = 0

    def __len__(self):
        return len(self.index)

    def __contains__(self, chunk_id):
        return chunk_id in self.index

    def __iter__(self) -> Iterator[int]:
        return iter(self.index)

    def tier_of(self, chunk_id: int) -> str:
        if chunk_id in self.hot:
            return "hot"
        if chunk_id in self.cold:
            return "cold"
        raise StoreError(f"unknown chunk id {chunk_id}")

    def peek(self, chunk_id: int) -> KVChunk:
        """Read-only lookup; no promotion and no transfer cost."""
        if chunk_id in self.hot:
            return self.hot[chunk_id]
        if chunk_id in self.cold:
            return self.cold[chunk_id]
        raise StoreError(f"unknown chunk id {chunk_id}")

    def put(self, chunk: KVChunk) -> int:
        if chunk.chunk_id in self.index:
            raise StoreError(f"duplicate chunk id {chunk.chunk_id}")
        self.index[chunk.chunk_id] = chunk.pose
        self.hot[chunk.chunk_id] = chunk
        self._hot_bytes += byte_size(chunk)
        self._demote()
        return chunk.chunk_id

    def fetch(self, chunk_id: int) -> tuple[KVChunk, float]:
        if chunk_id in self.hot:
            return self.hot[chunk_id], 0.0
        if chunk_id not in self.cold:
            raise StoreError(f"unknown chunk id {chunk_id}")
        chunk = self.cold.pop(chunk_id)
        nbytes = byte_size(chunk)
        self._cold_bytes -= nbytes
        self.hot[chunk_id] = chunk
        self._hot_bytes += nbytes
        self._demote()
        # only the K/V payload crosses the host-device link
        return chunk, self.transfer.cost(chunk.payload_bytes())

    def _demote(self):
        if self.hot_budget_bytes is None or self._hot_bytes <= self.hot_budget_bytes:
            return
        # dict order is hot-tier entry order, so promoted chunks count as newest
        for cid in list(self.hot):
            if self._hot_bytes <= self.hot_budget_bytes:
                break
            chunk = self.hot.pop(cid)
            nbytes = byte_size(chunk)
            self._hot_bytes -= nbytes
            self.cold[cid] = chunk
            self._cold_bytes += nbytes

    def footprint(self) -> tuple[int, int, int]:
        return self._hot_bytes, self._cold_bytes, len(self.index)

    def candidates(self, excluded=()) -> list[tuple[int, PoseState]]:
        excluded = set(excluded)
        return [(cid, pose) for cid, pose in self.index.items() if cid not in excluded]


# -- persistence ---------------------------------------------------------------


def write_chunk(chunk: KVChunk, path: str | os.PathLike) -> None:
    dt = dtype_for(chunk.dtype_bytes)
    parts = [
        _HEADER.pack(
            chunk.chunk_id,
            chunk.frames,
            chunk.tokens_per_frame,
            chunk.num_layers,
            chunk.dim,
            int(chunk.compressed),
            chunk.dtype_bytes,
        ),
        chunk.pose.to_bytes(),
    ]
    for layer in range(chunk.num_layers):
        idx = chunk.retained[layer] if chunk.compressed else np.empty(0, dtype=np.int64)
        parts.append(struct.pack("<I", len(idx)))
        parts.append(np.asarray(idx, dtype="<u4").tobytes())
        parts.append(np.asarray(chunk.keys[layer], dtype=dt).tobytes())
        parts.append(np.asarray(chunk.values[layer], dtype=dt).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_chunk(path: str | os.PathLike) -> KVChunk:
    data = Path(path).read_bytes()
    cid, F, T, layers, d, compressed, dtype_bytes = _HEADER.unpack_from(data, 0)
    off = _HEADER.size
    pose = PoseState.from_bytes(data[off : off + 56])
    off += 56
    dt = dtype_for(dtype_bytes)
    keys, values, retained = [], [], []
    for _ in range(layers):
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        idx = np.frombuffer(data, dtype="<u4", count=n, offset=off).astype(np.int64)
        off += 4 * n
        rows = T + n if compressed else F * T
        size = rows * d * dtype_bytes
        keys.append(np.frombuffer(data, dtype=dt, count=rows * d, offset=off).reshape(rows, d))
        off += size
        values.append(np.frombuffer(data, dtype=dt, count=rows * d, offset=off).reshape(rows, d))
        off += size
        retained.append(idx)
    if off != len(data):
        raise ChunkError(f"{path}: {len(data) - off} trailing bytes")
    return KVChunk(
        chunk_id=cid,
        pose=pose,
        frames=F,
        tokens_per_frame=T,
        keys=tuple(keys),
        values=tuple(values),
        retained=tuple(retained) if compressed else None,
        dtype_bytes=dtype_bytes,
    )


def save_store(store: ChunkStore, directory: str | os.PathLike) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ids = list(store.index)
    for cid in ids:
        write_chunk(store.peek(cid), directory / f"chunk_{cid:08d}.bin")
    manifest = {
        "ids": ids,
        "tiers": {str(cid): store.tier_of(cid) for cid in ids},
        "hot_budget_bytes": store.hot_budget_bytes,
        "transfer": {"latency_per_byte": store.transfer.latency_per_byte, "fixed_latency": store.transfer.fixed_latency},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_store(directory: str | os.PathLike) -> ChunkStore:
    """Rebuild a store; tiers are restored as saved, without demotion."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    store = ChunkStore(manifest.get("hot_budget_bytes"), TransferModel(**manifest.get("transfer", {})))
    tiers = manifest.get("tiers", {})
    for cid in manifest["ids"]:
        chunk = read_chunk(directory / f"chunk_{cid:08d}.bin")
        store.index[cid] = chunk.pose
        if tiers.get(str(cid), "hot") == "cold":
            store.cold[cid] = chunk
            store._cold_bytes += byte_size(chunk)
        else:
            store.hot[cid] = chunk
            store._hot_bytes += byte_size(chunk)
    return store
