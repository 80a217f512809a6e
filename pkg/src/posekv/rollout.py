"""Full generation loop for the sliding, full-KV and retrieval+compression modes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from posekv.chunkstore import ChunkStore, TransferModel
from posekv.compression import CompressionConfig, retained_mask
from posekv.geometry import DiscreteAction, PoseState, StepConfig, accumulate, rotation_distance
from posekv.retrieval import PoseBased, QueryBased, RetrievalStrategy
from posekv.window import Mode, RetrievalTrace, WindowConfig, init_window, step
from posekv.worldsim import (
    LINGBOT_TOKENS_PER_FRAME,
    CostModel,
    Scene,
    WorldGenerator,
    attention_map,
    frame_poses,
    modeled_fps,
    observe,
    revisit_fidelity,
    token_grid,
)


@dataclass(frozen=True)
class RolloutConfig:
    window: WindowConfig = WindowConfig()
    compression: CompressionConfig = CompressionConfig()
    strategy: RetrievalStrategy = PoseBased()
    steps: StepConfig = StepConfig()
    cost: CostModel = field(default_factory=CostModel.lingbot)
    hot_budget_bytes: int | None = None
    transfer: TransferModel = TransferModel()
    noise: float = 0.0
    query_noise: float = 0.5
    layers: int = 2
    dtype_bytes: int = 2
    hallucinate: bool = True
    fidelity_threshold: float = 0.8
    revisit_gap: int | None = None
    revisit_translation_tol: float = 0.25
    revisit_rotation_tol: float = 0.2
    stride: int = 1
    sink_source: str = "first_chunk"
    record_attention: bool = True
    attention_temperature: float = 0.1
    # cost model is fitted in reference tokens per frame; context size is rescaled to it
    cost_tokens_per_frame: int = LINGBOT_TOKENS_PER_FRAME

    def with_(self, **changes) -> "RolloutConfig":
        return replace(self, **changes)

    @property
    def gap(self) -> int:
        if self.revisit_gap is not None:
            return self.revisit_gap
        return self.window.sliding_chunks + 1


@dataclass
class StepRecord:
    step: int
    mode: str
    chunk_id: int
    context_tokens: int
    hot_bytes: int
    cold_bytes: int
    transfer_s: float
    fidelity: float
    modeled_fps: float
    retrieved_ids: list[int]
    revisit: bool


@dataclass
class RolloutReport:
    mode: str
    steps: list[StepRecord] = field(default_factory=list)
    traces: list[RetrievalTrace] = field(default_factory=list)
    attention: list[tuple[int, dict[int, float]]] = field(default_factory=list)
    mask: np.ndarray | None = None
    store_bytes: int = 0
    stored_chunks: int = 0
    hallucinated: int = 0
    # payload bytes per history chunk kept off the sink: the store (retrieval mode) or the window (full mode)
    history_payload: dict[int, int] = field(default_factory=dict)

    @property
    def revisit_fidelity(self) -> float:
        vals = [s.fidelity for s in self.steps if s.revisit]
        return float(np.mean(vals)) if vals else float("nan")

    def summary(self) -> dict:
        tokens = [s.context_tokens for s in self.steps]
        fps = [s.modeled_fps for s in self.steps]
        revisits = [s for s in self.steps if s.revisit]
        last = self.steps[-1]
        return {
            "mode": self.mode,
            "steps": len(self.steps),
            "revisit_steps": len(revisits),
            "mean_revisit_fidelity": None if not revisits else self.revisit_fidelity,
            "mean_fidelity": float(np.mean([s.fidelity for s in self.steps])),
            "final_context_tokens": last.context_tokens,
            "max_context_tokens": max(tokens),
            "final_modeled_fps": last.modeled_fps,
            "mean_modeled_fps": float(np.mean(fps)),
            "final_hot_bytes": last.hot_bytes,
            "final_cold_bytes": last.cold_bytes,
            "store_bytes": self.store_bytes,
            "stored_chunks": self.stored_chunks,
            "total_transfer_s": math.fsum(s.transfer_s for s in self.steps),
            "hallucinated_items": self.hallucinated,
        }


def revisit_flags(
    chunk_poses: Sequence[Sequence[PoseState]],
    gap: int,
    translation_tol: float = 0.25,
    rotation_tol: float = 0.2,
) -> list[bool]:
    """Mark chunks that start from a viewpoint already visited at least ``gap`` chunks earlier.

    Depends only on the trajectory, so every mode is scored on the same steps.
    """
    starts = [poses[0] for poses in chunk_poses]
    flags = []
    for i, p in enumerate(starts):
        flags.append(
            any(
                math.dist(p.translation, q.translation) <= translation_tol and rotation_distance(p, q) <= rotation_tol
                for q in starts[: max(0, i - gap + 1)]
            )
        )
    return flags


def _queries(scene: Scene, pose: PoseState, cfg: RolloutConfig, chunk_id: int) -> np.ndarray:
    layer = cfg.strategy.layer if isinstance(cfg.strategy, QueryBased) else 0
    probe = observe(
        scene,
        pose,
        1,
        cfg.window.tokens_per_frame,
        cfg.query_noise,
        end_pose=pose,
        chunk_id=1_000_000 + chunk_id,
        layers=layer + 1,
        dtype_bytes=8,
    )
    return probe.keys[layer]


def run_rollout(mode: Mode | str, trajectory: Sequence[DiscreteAction], world: Scene, cfg: RolloutConfig) -> RolloutReport:
    """Generate one chunk per action and record context size, cost and fidelity per step."""
    mode = Mode(mode)
    actions = list(getattr(trajectory, "actions", trajectory))
    if not actions:
        raise ValueError("trajectory is empty")
    wcfg = cfg.window
    T, F = wcfg.tokens_per_frame, wcfg.chunk_frames
    poses = accumulate(actions, cfg.steps)
    chunk_poses = [frame_poses(poses[i], F, poses[i + 1]) for i in range(len(actions))]
    gen = WorldGenerator(world, threshold=cfg.fidelity_threshold, hallucinate=cfg.hallucinate)
    build = dict(noise=cfg.noise, layers=cfg.layers, dtype_bytes=cfg.dtype_bytes)

    first = 0
    if cfg.sink_source == "conditioning":
        sink = observe(world, poses[0], wcfg.sink_frames, T, end_pose=poses[0], chunk_id=-1, **build)
    elif cfg.sink_source == "first_chunk":
        sink = gen.generate(0, chunk_poses[0], T, None, **build)
        first = 1
    else:
        raise ValueError(f"unknown sink_source {cfg.sink_source!r}")
    gen.mark_seen(sink)
    window = init_window(wcfg, sink)
    store = ChunkStore(cfg.hot_budget_bytes, cfg.transfer) if mode is Mode.WORLDKV else None
    flags = revisit_flags(chunk_poses, cfg.gap, cfg.revisit_translation_tol, cfg.revisit_rotation_tol)

    report = RolloutReport(mode.value)
    pending = 0.0
    for i in range(first, len(actions)):
        ctx = window.assemble_context()
        tokens = window.context_token_count()
        chunk = gen.generate(i, chunk_poses[i], T, ctx, **build)
        fidelity = revisit_fidelity(ctx, world, chunk_poses[i], T, threshold=cfg.fidelity_threshold)
        if cfg.record_attention:
            am = attention_map(ctx, chunk.keys[0][:T], cfg.attention_temperature)
            report.attention.append((i, am.chunk_mass))
        hot, cold = window.resident_bytes(), 0
        if store is not None:
            sh, sc, _ = store.footprint()
            hot, cold = hot + sh, sc
        report.steps.append(
            StepRecord(
                step=i,
                mode=mode.value,
                chunk_id=chunk.chunk_id,
                context_tokens=tokens,
                hot_bytes=hot,
                cold_bytes=cold,
                transfer_s=pending,
                fidelity=fidelity,
                modeled_fps=modeled_fps(tokens * cfg.cost_tokens_per_frame / T, cfg.cost),
                retrieved_ids=[c.chunk_id for c in window.retrieved],
                revisit=flags[i],
            )
        )
        keep = cfg.compression.retention_fraction
        if mode is Mode.WORLDKV and report.mask is None and window.recent and keep < 1.0:
            # first chunk headed for the store: record which of its tokens survive
            if len(window.recent) >= wcfg.recent_chunks:
                report.mask = retained_mask(window.recent[0], 0, keep, token_grid(T))
        queries = None
        if isinstance(cfg.strategy, QueryBased) and mode is Mode.WORLDKV:
            queries = _queries(world, poses[i + 1], cfg, i + 1)
        _, _, trace = step(
            window,
            store,
            cfg.strategy,
            chunk,
            poses[i + 1],
            mode=mode,
            compression=cfg.compression,
            queries=queries,
            step_index=i,
            stride=cfg.stride,
        )
        pending = trace.transfer_seconds if trace is not None else 0.0
        if trace is not None:
            report.traces.append(trace)

    if store is not None:
        hot, cold, n = store.footprint()
        report.store_bytes, report.stored_chunks = hot + cold, n
        report.history_payload = {cid: store.peek(cid).payload_bytes() for cid in store}
    elif mode is Mode.FULL:
        report.history_payload = {c.chunk_id: c.payload_bytes() for c in window.recent}
    report.hallucinated = gen.hallucinated
    return report
