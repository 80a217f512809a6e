"""Parameter sweeps over retention, retrieval budget and strategy."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from posekv.compression import CompressionConfig
from posekv.errors import ConfigError
from posekv.retrieval import PoseBased, QueryBased
from posekv.rollout import RolloutConfig, run_rollout
from posekv.trajectories import SuiteCase
from posekv.worldsim import generate_scene

AXES = ("intra", "inter", "k", "strategy")
INTRA_FRAME_EQUIVALENTS = (3.0, 2.5, 2.0, 1.5, 1.25, 1.0)


@dataclass(frozen=True)
class Variant:
    label: str
    config: RolloutConfig


@dataclass
class SweepRow:
    label: str
    fidelity: float
    per_case: list[float]
    context_tokens: int
    store_bytes: int
    modeled_fps: float


def _with(cfg: RolloutConfig, k: int | None = None, compression: CompressionConfig | None = None, **kw) -> RolloutConfig:
    window = replace(cfg.window, retrieved_chunks=k) if k is not None else cfg.window
    return replace(cfg, window=window, compression=compression or cfg.compression, **kw)


def variants(axis: str, base: RolloutConfig) -> list[Variant]:
    """Named configurations along one sweep axis.

    ``intra`` holds the retrieved chunk count at 6 and varies per-chunk
    retention in frame-equivalents; ``inter`` trades chunk count against
    retention at a roughly fixed token budget.
    """
    F, T = base.window.chunk_frames, base.window.tokens_per_frame
    fe = lambda kept: CompressionConfig.for_frame_equivalents(kept, F, T)  # noqa: E731
    if axis == "intra":
        return [Variant(f"{F}->{kept:g}", _with(base, 6, fe(kept))) for kept in INTRA_FRAME_EQUIVALENTS]
    if axis == "inter":
        return [
            Variant("3->3", _with(base, 3, CompressionConfig(1.0))),
            Variant("6->3", _with(base, 6, fe(1.5))),
            Variant("9->3", _with(base, 9, fe(1.0))),
        ]
    if axis == "k":
        return [Variant(f"k={k}", _with(base, k)) for k in range(1, 7)]
    if axis == "strategy":
        return [
            Variant("pose", _with(base, strategy=PoseBased())),
            Variant("pose_yaw_only", _with(base, strategy=PoseBased(yaw_only=True))),
            Variant("query", _with(base, strategy=QueryBased())),
        ]
    raise ConfigError(f"unknown ablation axis {axis!r}; valid axes: {', '.join(AXES)}")


@dataclass
class SuiteResult:
    scores: list[float]
    context_tokens: int
    store_bytes: int
    modeled_fps: float

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores)) if self.scores else float("nan")


def run_suite(cases: Sequence[SuiteCase], cfg: RolloutConfig, mode: str = "worldkv", scene_kw: dict | None = None) -> SuiteResult:
    """Revisit fidelity per case (cases without revisits are skipped).

    Context size and modeled fps come from the final step, store bytes are
    summed over cases.
    """
    scores, tokens, nbytes, fps = [], 0, 0, float("inf")
    for case in cases:
        scene = generate_scene(case.scene_seed, **(scene_kw or {}))
        report = run_rollout(mode, case.trajectory, scene, cfg)
        if any(s.revisit for s in report.steps):
            scores.append(report.revisit_fidelity)
        last = report.steps[-1]
        tokens = max(tokens, last.context_tokens)
        fps = min(fps, last.modeled_fps)
        nbytes += report.store_bytes
    return SuiteResult(scores, tokens, nbytes, fps)


def sweep(axis: str, cases: Sequence[SuiteCase], base: RolloutConfig, scene_kw: dict | None = None) -> list[SweepRow]:
    base = replace(base, record_attention=False)
    rows = []
    for v in variants(axis, base):
        res = run_suite(cases, v.config, scene_kw=scene_kw)
        rows.append(SweepRow(v.label, res.mean, res.scores, res.context_tokens, res.store_bytes, res.modeled_fps))
    return rows
