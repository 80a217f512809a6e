"""Anchor-frame key-similarity token pruning for stored chunks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from posekv.chunkstore import KVChunk
from posekv.errors import ChunkError, ConfigError

TIE_BREAKS = ("frame_token",)


@dataclass(frozen=True)
class CompressionConfig:
    retention_fraction: float = 0.25
    enabled: bool = True
    tie_break: str = "frame_token"
    per_head: int | None = None

    def __post_init__(self):
        if not 0.0 < self.retention_fraction <= 1.0:
            raise ConfigError(f"retention_fraction must be in (0, 1], got {self.retention_fraction}")
        if self.tie_break not in TIE_BREAKS:
            raise ConfigError(f"unknown tie_break {self.tie_break!r}; valid: {', '.join(TIE_BREAKS)}")
        if self.per_head is not None and self.per_head < 1:
            raise ConfigError("per_head must be a positive head count")

    @classmethod
    def for_frame_equivalents(cls, frames_kept: float, frames: int, tokens_per_frame: int) -> "CompressionConfig":
        """Retention giving ``frames_kept`` frame-equivalents out of ``frames``.

        Anchor-only (``frames_kept == 1``) is approximated by keeping a single
        non-anchor token, since at least one always survives.
        """
        if frames_kept >= frames:
            return cls(1.0)
        p = (frames_kept - 1.0) / (frames - 1)
        if p <= 0.0:
            p = 1.0 / ((frames - 1) * tokens_per_frame)
        return cls(p)


def retained_count(fraction: float, frames: int, tokens_per_frame: int) -> int:
    """Non-anchor tokens kept: ceil(fraction * (F - 1) * T)."""
    # round first so that e.g. 0.1 * 30 does not ceil to 4
    return math.ceil(round(fraction * (frames - 1) * tokens_per_frame, 9))


def compressed_token_count(fraction: float, frames: int, tokens_per_frame: int) -> int:
    return tokens_per_frame + retained_count(fraction, frames, tokens_per_frame)


def _unit_rows(x: np.ndarray, layer: int, first_frame: int, T: int) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        pos = int(bad[0])
        raise ChunkError(f"zero-norm key at layer {layer}, frame {first_frame + pos // T}, token {pos % T}")
    return x / norms[:, None]


def redundancy_scores(chunk: KVChunk, layer: int, heads: int | None = None) -> np.ndarray:
    """Mean cosine similarity of each non-anchor key to all anchor keys.

    Returns an ``(F - 1, T)`` array; row ``f`` scores frame ``f + 1``.
    With ``heads`` the key dimension is split into that many heads and the
    per-head scores are averaged.
    """
    if chunk.compressed:
        raise ChunkError(f"chunk {chunk.chunk_id} is already compressed")
    F, T = chunk.frames, chunk.tokens_per_frame
    if F < 2:
        raise ChunkError("scoring needs at least one non-anchor frame")
    keys = np.asarray(chunk.keys[layer], dtype=np.float64)
    if heads is None:
        anchor = _unit_rows(keys[:T], layer, 0, T)
        rest = _unit_rows(keys[T:], layer, 1, T)
        return (rest @ anchor.T).mean(axis=1).reshape(F - 1, T)
    d = keys.shape[1]
    if d % heads:
        raise ChunkError(f"key dim {d} not divisible into {heads} heads")
    hd = d // heads
    total = np.zeros((F - 1) * T)
    for h in range(heads):
        part = keys[:, h * hd : (h + 1) * hd]
        anchor = _unit_rows(part[:T], layer, 0, T)
        rest = _unit_rows(part[T:], layer, 1, T)
        total += (rest @ anchor.T).mean(axis=1)
    return (total / heads).reshape(F - 1, T)


def bottom_indices(scores: np.ndarray, r: int) -> np.ndarray:
    """Flat indices of the ``r`` lowest scores; ties go to the lower (frame, token)."""
    flat = scores.reshape(-1)
    order = np.argsort(flat, kind="stable")
    return np.sort(order[:r])


def compress_chunk(chunk: KVChunk, cfg: CompressionConfig) -> KVChunk:
    """Keep the anchor frame plus the bottom-P non-anchor tokens, per layer."""
    if chunk.compressed:
        raise ChunkError(f"chunk {chunk.chunk_id} is already compressed")
    F, T = chunk.frames, chunk.tokens_per_frame
    if F < 2:
        raise ChunkError("compression needs at least one non-anchor frame")
    r = retained_count(cfg.retention_fraction, F, T)
    keys, values, retained = [], [], []
    for layer in range(chunk.num_layers):
        scores = redundancy_scores(chunk, layer, cfg.per_head)
        idx = bottom_indices(scores, r) + T
        rows = np.concatenate([np.arange(T), idx])
        keys.append(chunk.keys[layer][rows])
        values.append(chunk.values[layer][rows])
        retained.append(idx)
    return KVChunk(
        chunk_id=chunk.chunk_id,
        pose=chunk.pose,
        frames=F,
        tokens_per_frame=T,
        keys=tuple(keys),
        values=tuple(values),
        retained=tuple(retained),
        dtype_bytes=chunk.dtype_bytes,
        frame_poses=chunk.frame_poses,
    )


def retained_mask(chunk: KVChunk, layer: int, fraction: float, grid: tuple[int, int]) -> np.ndarray:
    """Binary ``(F - 1, H, W)`` grid marking the bottom-``fraction`` non-anchor tokens."""
    H, W = grid
    F, T = chunk.frames, chunk.tokens_per_frame
    if H * W != T:
        raise ChunkError(f"grid {H}x{W} does not cover T={T} tokens")
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    scores = redundancy_scores(chunk, layer)
    mask = np.zeros((F - 1) * T, dtype=np.uint8)
    mask[bottom_indices(scores, retained_count(fraction, F, T))] = 1
    return mask.reshape(F - 1, H, W)


def mask_rows(mask: np.ndarray):
    """(frame, row, col, marked) rows, frames numbered from 2 like the chunk."""
    for f in range(mask.shape[0]):
        for i in range(mask.shape[1]):
            for j in range(mask.shape[2]):
                yield f + 2, i, j, int(mask[f, i, j])


def mask_to_pgm(mask: np.ndarray) -> str:
    """Plain-text PGM (P2) with non-anchor frames stacked vertically."""
    frames, H, W = mask.shape
    lines = ["P2", f"{W} {H * frames}", "1"]
    for f in range(frames):
        for i in range(H):
            lines.append(" ".join(str(int(v)) for v in mask[f, i]))
    return "\n".join(lines) + "\n"
