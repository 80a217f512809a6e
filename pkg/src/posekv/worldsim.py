"""Deterministic synthetic world used as the ground-truth oracle.

The world is a grid of cells on the ground plane, each carrying a unit-norm
feature embedding. A camera frame is rendered as a ``rows x cols`` token grid:
columns sweep the horizontal field of view, rows sample depth bands from far
(top) to near (bottom). Each token's key is the embedding of the cell its ray
lands on, so adjacent frames share most tokens and motion reveals new content
at the frame borders. A small set of *dynamic* cells changes appearance with
the frame phase inside a chunk.

``WorldGenerator`` stands in for the video backbone: content seen for the first
time is generated faithfully, content still present in the attention context
is reproduced, and previously seen content that has fallen out of context is
hallucinated afresh.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from posekv.chunkstore import KVChunk
from posekv.errors import ChunkError, ConfigError
from posekv.geometry import PoseState, interpolate

DEFAULT_DRIFT_YAW = 0.05
MIN_TOKENS = 4

# LingBot-World-Fast operating points used to fit the default cost model
LINGBOT_TOKENS_PER_FRAME = 1560
LINGBOT_EARLY_FPS = 8.87
LINGBOT_LATE_FPS = 3.61
LINGBOT_EARLY_TOKENS = 3 * LINGBOT_TOKENS_PER_FRAME
LINGBOT_LATE_TOKENS = 60 * 3 * LINGBOT_TOKENS_PER_FRAME


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng([abs(int(k)) for k in key])


def token_grid(T: int) -> tuple[int, int]:
    """(rows, cols) with rows * cols == T and rows the largest divisor <= sqrt(T)."""
    if T < MIN_TOKENS:
        raise ChunkError(f"tokens_per_frame={T} is too small; need at least {MIN_TOKENS}")
    rows = max(r for r in range(1, math.isqrt(T) + 1) if T % r == 0)
    return rows, T // rows


@dataclass(frozen=True, eq=False)
class Scene:
    seed: int
    grid: tuple[int, int]
    d: int
    embeddings: np.ndarray  # (cells, phases, d), unit rows
    dynamic: np.ndarray  # (cells,) bool
    cell_size: float = 0.5
    half_angle: float = math.pi / 4
    view_range: float = 3.0

    @property
    def phases(self) -> int:
        return self.embeddings.shape[1]

    @property
    def num_cells(self) -> int:
        return self.grid[0] * self.grid[1]

    def cell_centers(self) -> np.ndarray:
        H, W = self.grid
        ii, jj = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
        x = (jj + 0.5) * self.cell_size - W * self.cell_size / 2
        y = (ii + 0.5) * self.cell_size - H * self.cell_size / 2
        return np.stack([x.ravel(), y.ravel()], axis=1)

    def item(self, cells: np.ndarray, phase: int) -> np.ndarray:
        """Content-item ids: static cells ignore the phase."""
        cells = np.asarray(cells)
        ph = np.where(self.dynamic[cells], phase % self.phases, 0)
        return cells * self.phases + ph

    def item_embedding(self, items: np.ndarray) -> np.ndarray:
        items = np.asarray(items)
        return self.embeddings[items // self.phases, items % self.phases]

    def cells_at(self, points: np.ndarray) -> np.ndarray:
        """Cell index under each ground-plane point; points off the grid clamp to the border."""
        H, W = self.grid
        j = np.floor((points[:, 0] + W * self.cell_size / 2) / self.cell_size).astype(np.int64)
        i = np.floor((points[:, 1] + H * self.cell_size / 2) / self.cell_size).astype(np.int64)
        return np.clip(i, 0, H - 1) * W + np.clip(j, 0, W - 1)

    def render(self, pose: PoseState, T: int, phase: int = 0) -> np.ndarray:
        """Item id per token, row-major over the (rows, cols) token grid."""
        rows, cols = token_grid(T)
        bearings = pose.yaw + self.half_angle * (1.0 - 2.0 * (np.arange(cols) + 0.5) / cols)
        depths = self.view_range * (rows - np.arange(rows) - 0.5) / rows
        b = np.broadcast_to(bearings, (rows, cols)).ravel()
        r = np.broadcast_to(depths[:, None], (rows, cols)).ravel()
        x0, y0, _ = pose.translation
        pts = np.stack([x0 + r * np.cos(b), y0 + r * np.sin(b)], axis=1)
        return self.item(self.cells_at(pts), phase)

    def visible_items(self, frame_poses: Sequence[PoseState], T: int) -> np.ndarray:
        """Distinct ground-truth content items over the frames of one chunk."""
        return np.unique(np.concatenate([self.render(p, T, f) for f, p in enumerate(frame_poses)]))


def generate_scene(
    seed: int,
    grid: tuple[int, int] = (32, 32),
    d: int = 128,
    *,
    dynamic_fraction: float = 0.05,
    phases: int = 3,
    cell_size: float = 0.5,
    half_angle: float = math.pi / 4,
    view_range: float = 3.0,
) -> Scene:
    H, W = grid
    if min(H, W, d) < 1:
        raise ConfigError("grid dimensions and d must be >= 1")
    if not 0.0 <= dynamic_fraction <= 1.0:
        raise ConfigError("dynamic_fraction must lie in [0, 1]")
    rng = _rng(seed, 0x5CE7E)
    emb = rng.standard_normal((H * W, phases, d))
    dynamic = rng.random(H * W) < dynamic_fraction
    emb[~dynamic, 1:] = emb[~dynamic, :1]
    emb /= np.linalg.norm(emb, axis=2, keepdims=True)
    emb.setflags(write=False)
    dynamic.setflags(write=False)
    return Scene(seed, (H, W), d, emb, dynamic, cell_size, half_angle, view_range)


def frame_poses(pose: PoseState, frames: int, end_pose: PoseState | None = None, drift_yaw: float = DEFAULT_DRIFT_YAW):
    """Per-frame poses of a chunk moving from ``pose`` towards ``end_pose``.

    Without ``end_pose`` the camera drifts by ``drift_yaw`` radians per frame.
    """
    if end_pose is None:
        end_pose = PoseState.from_yaw_pitch(pose.translation, pose.yaw + drift_yaw * frames, pose.pitch, pose.pseudo)
    return tuple(interpolate(pose, end_pose, f / frames) for f in range(frames))


def layer_transform(seed: int, layer: int, d: int):
    """Signed permutation mapping base keys to ``layer`` keys (identity at layer 0)."""
    if layer == 0:
        return np.arange(d), np.ones(d)
    rng = _rng(seed, 0x1A7E5, layer)
    return rng.permutation(d), rng.choice([-1.0, 1.0], size=d)


def _build_chunk(
    scene: Scene,
    chunk_id: int,
    poses: Sequence[PoseState],
    T: int,
    item_vectors,
    noise: float,
    layers: int,
    dtype_bytes: int,
) -> KVChunk:
    items = np.concatenate([scene.render(p, T, f) for f, p in enumerate(poses)])
    base = item_vectors(items)
    cells = items // scene.phases
    H, W = scene.grid
    values = np.array(base, copy=True)
    values[:, 0] = cells // W
    values[:, 1] = cells % W
    values[:, 2] = items % scene.phases
    keys_l, values_l = [], []
    for layer in range(layers):
        k = base
        if noise > 0:
            rng = _rng(scene.seed, 0x9015E, chunk_id + 1, layer)
            k = k + rng.standard_normal(k.shape) * (noise / math.sqrt(scene.d))
            k = k / np.linalg.norm(k, axis=1, keepdims=True)
        perm, sign = layer_transform(scene.seed, layer, scene.d)
        keys_l.append(k[:, perm] * sign)
        values_l.append(values[:, perm] * sign)
    return KVChunk(
        chunk_id=chunk_id,
        pose=poses[0],
        frames=len(poses),
        tokens_per_frame=T,
        keys=tuple(keys_l),
        values=tuple(values_l),
        dtype_bytes=dtype_bytes,
        frame_poses=tuple(poses),
    )


def observe(
    scene: Scene,
    pose: PoseState,
    F: int,
    T: int,
    noise: float = 0.0,
    *,
    end_pose: PoseState | None = None,
    chunk_id: int = 0,
    layers: int = 1,
    dtype_bytes: int = 4,
    drift_yaw: float = DEFAULT_DRIFT_YAW,
) -> KVChunk:
    """Ground-truth KV chunk of ``F`` frames starting at ``pose``."""
    token_grid(T)
    poses = frame_poses(pose, F, end_pose, drift_yaw)
    return _build_chunk(scene, chunk_id, poses, T, scene.item_embedding, noise, layers, dtype_bytes)


def _unit(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x / np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), 1e-300)


def context_keys(context, layer: int = 0) -> np.ndarray:
    """Layer keys of an assembled context (or a raw key matrix)."""
    if isinstance(context, np.ndarray):
        return context
    return context.keys[layer]


def max_cosine(vectors: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """For each vector, the best cosine against any key (-1 when there are no keys)."""
    if len(keys) == 0:
        return np.full(len(vectors), -1.0)
    v = _unit(vectors).astype(np.float32)
    k = _unit(keys).astype(np.float32)
    return (v @ k.T).max(axis=1).astype(np.float64)


class WorldGenerator:
    """Consistency model for chunk generation under a limited context."""

    def __init__(self, scene: Scene, *, threshold: float = 0.8, hallucinate: bool = True, layer: int = 0):
        self.scene = scene
        self.threshold = threshold
        self.hallucinate = hallucinate
        self.layer = layer
        self.seen: set[int] = set()
        self.versions: dict[int, list[np.ndarray]] = {}
        self.hallucinated = 0

    def mark_seen(self, chunk: KVChunk) -> None:
        for f, p in enumerate(chunk.frame_poses):
            self.seen.update(self.scene.render(p, chunk.tokens_per_frame, f).tolist())

    def generate(
        self,
        chunk_id: int,
        poses: Sequence[PoseState],
        T: int,
        context=None,
        *,
        noise: float = 0.0,
        layers: int = 1,
        dtype_bytes: int = 4,
    ) -> KVChunk:
        scene = self.scene
        items = np.unique(np.concatenate([scene.render(p, T, f) for f, p in enumerate(poses)]))
        chosen = {}
        revisited = [int(i) for i in items if int(i) in self.seen]
        if self.hallucinate and revisited:
            keys = _unit(context_keys(context, self.layer)) if context is not None else np.empty((0, scene.d))
            perm, sign = layer_transform(scene.seed, self.layer, scene.d)
            gt = scene.item_embedding(np.array(revisited))
            gt_in_layer = gt[:, perm] * sign
            ok = max_cosine(gt_in_layer, keys) >= self.threshold
            for item, good in zip(revisited, ok):
                if good:
                    continue
                chosen[item] = self._recall_or_invent(item, chunk_id, keys, perm, sign)
        self.seen.update(int(i) for i in items)

        def vectors(ids):
            out = scene.item_embedding(ids).copy()
            for n, item in enumerate(ids.tolist()):
                v = chosen.get(item)
                if v is not None:
                    out[n] = v
            return out

        return _build_chunk(scene, chunk_id, poses, T, vectors, noise, layers, dtype_bytes)

    def _recall_or_invent(self, item, chunk_id, keys, perm, sign) -> np.ndarray:
        versions = self.versions.setdefault(item, [])
        if versions:
            sims = max_cosine(np.stack([v[perm] * sign for v in versions]), keys)
            for v, s in zip(reversed(versions), reversed(sims.tolist())):
                if s >= self.threshold:
                    return v
        v = _unit(_rng(self.scene.seed, 0x4A11, item, chunk_id).standard_normal(self.scene.d))
        versions.append(v)
        self.hallucinated += 1
        return v


def revisit_fidelity(
    context,
    scene: Scene,
    pose: PoseState | Sequence[PoseState],
    T: int = 64,
    *,
    threshold: float = 0.8,
    layer: int = 0,
) -> float:
    """Fraction of ground-truth items visible from ``pose`` recoverable from the context.

    ``pose`` may be a single pose or the frame poses of a chunk; an item counts
    as recovered when some context key has cosine >= ``threshold`` with it.
    """
    poses = [pose] if isinstance(pose, PoseState) else list(pose)
    items = scene.visible_items(poses, T)
    if items.size == 0:
        return 1.0
    perm, sign = layer_transform(scene.seed, layer, scene.d)
    gt = scene.item_embedding(items)[:, perm] * sign
    keys = context_keys(context, layer)
    return float(np.mean(max_cosine(gt, keys) >= threshold))


@dataclass
class AttentionMap:
    chunk_ids: list[int]
    regions: list[str]
    per_query: np.ndarray  # (Q, chunks)
    per_region: np.ndarray  # (Q, regions)

    @property
    def chunk_mass(self) -> dict[int, float]:
        return dict(zip(self.chunk_ids, self.per_query.mean(axis=0).tolist()))

    @property
    def region_mass(self) -> dict[str, float]:
        return dict(zip(self.regions, self.per_region.mean(axis=0).tolist()))


def attention_map(context, queries: np.ndarray, temperature: float = 0.1, layer: int = 0) -> AttentionMap:
    """Softmax attention of each query over all context keys, pooled per source chunk.

    Logits are ``q . k / temperature``.
    """
    keys = np.asarray(context.keys[layer], dtype=np.float64)
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if q.shape[1] != keys.shape[1]:
        raise ValueError(f"query dim {q.shape[1]} does not match key dim {keys.shape[1]}")
    logits = q @ keys.T / temperature
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    ids = np.asarray(context.chunk_ids)
    uniq = list(dict.fromkeys(ids.tolist()))
    per_chunk = np.stack([w[:, ids == c].sum(axis=1) for c in uniq], axis=1)
    tags = np.asarray(context.regions)
    regions = list(dict.fromkeys(tags.tolist()))
    per_region = np.stack([w[:, tags == r].sum(axis=1) for r in regions], axis=1)
    return AttentionMap(uniq, regions, per_chunk, per_region)


@dataclass(frozen=True)
class CostModel:
    per_token_attention_s: float
    fixed_step_s: float
    frames_per_step: float = 12.0

    def __post_init__(self):
        if min(self.per_token_attention_s, self.fixed_step_s, self.frames_per_step) < 0:
            raise ConfigError("cost model parameters must be >= 0")

    @classmethod
    def fit(cls, points: Sequence[tuple[float, float]], frames_per_step: float = 12.0) -> "CostModel":
        """Fit the affine step-time model to two (context_tokens, fps) points."""
        (n1, f1), (n2, f2) = points
        a = np.array([[1.0, n1], [1.0, n2]])
        b = np.array([frames_per_step / f1, frames_per_step / f2])
        fixed, per_token = np.linalg.solve(a, b)
        return cls(float(per_token), float(fixed), frames_per_step)

    @classmethod
    def lingbot(cls) -> "CostModel":
        return cls.fit([(LINGBOT_EARLY_TOKENS, LINGBOT_EARLY_FPS), (LINGBOT_LATE_TOKENS, LINGBOT_LATE_FPS)])


def modeled_fps(context_tokens: float, cost: CostModel) -> float:
    if context_tokens < 0:
        raise ValueError("context_tokens must be >= 0")
    return cost.frames_per_step / (cost.fixed_step_s + cost.per_token_attention_s * context_tokens)
