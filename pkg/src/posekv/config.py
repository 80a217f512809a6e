"""Validated run configuration loaded from JSON."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from posekv.chunkstore import TransferModel
from posekv.compression import CompressionConfig
from posekv.errors import ConfigError
from posekv.geometry import StepConfig
from posekv.retrieval import PoseBased, QueryBased
from posekv.rollout import RolloutConfig
from posekv.window import WindowConfig
from posekv.worldsim import CostModel


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class WindowSection(_Strict):
    sink_frames: int = Field(3, gt=0)
    retrieved_frames: int = Field(9, gt=0)
    recent_frames: int = Field(3, gt=0)
    denoising_frames: int = Field(3, gt=0)
    tokens_per_frame: int = Field(64, ge=4)
    chunk_frames: int = Field(3, ge=2)

    @model_validator(mode="after")
    def _recent_whole_chunks(self):
        if self.recent_frames % self.chunk_frames:
            raise ValueError("recent_frames must be a multiple of chunk_frames")
        return self


class CompressionSection(_Strict):
    enabled: bool = True
    retention_fraction: float = Field(0.25, gt=0.0, le=1.0)
    per_head: int | None = Field(None, ge=1)


class RetrievalSection(_Strict):
    strategy: Literal["pose", "query"] = "pose"
    k: int | None = Field(None, ge=1)
    yaw_only: bool = False
    layer: int = Field(0, ge=0)
    stride: int = Field(1, ge=1)
    query_noise: float = Field(0.5, ge=0.0)


class StoreSection(_Strict):
    hot_budget_bytes: int | None = Field(None, ge=0)
    latency_per_byte: float = Field(0.0, ge=0.0)
    fixed_latency: float = Field(0.0, ge=0.0)
    dtype_bytes: Literal[2, 4, 8] = 2
    layers: int = Field(2, ge=1)


class CostSection(_Strict):
    per_token_attention_s: float | None = Field(None, ge=0.0)
    fixed_step_s: float | None = Field(None, ge=0.0)
    frames_per_step: float = Field(12.0, gt=0.0)
    tokens_per_frame: int = Field(1560, ge=1)

    @model_validator(mode="after")
    def _both_or_neither(self):
        if (self.per_token_attention_s is None) != (self.fixed_step_s is None):
            raise ValueError("give both per_token_attention_s and fixed_step_s, or neither")
        return self


class ActionSection(_Strict):
    translation_step: float = Field(1.0, gt=0.0)
    yaw_step_rad: float = Field(0.39269908169872414, gt=0.0)
    pitch_step_rad: float = Field(0.19634954084936207, gt=0.0)
    pitch_clamp_rad: float = Field(1.0471975511965976, gt=0.0)


class SceneSection(_Strict):
    grid: tuple[int, int] = (32, 32)
    d: int = Field(128, ge=8)
    dynamic_fraction: float = Field(0.05, ge=0.0, le=1.0)
    noise: float = Field(0.0, ge=0.0)
    fidelity_threshold: float = Field(0.8, gt=-1.0, le=1.0)
    hallucinate: bool = True


class AblationSection(_Strict):
    axis: str = "inter"
    suite: Literal["standard", "long_revisit"] = "standard"
    cases: int = Field(12, ge=1)


class RunConfig(_Strict):
    seed: int = 0
    trajectory: str = "loop_closure"
    modes: list[Literal["sliding", "full", "worldkv"]] = ["sliding", "full", "worldkv"]
    out: str | None = None
    sink_source: Literal["conditioning", "first_chunk"] = "first_chunk"
    window: WindowSection = WindowSection()
    compression: CompressionSection = CompressionSection()
    retrieval: RetrievalSection = RetrievalSection()
    store: StoreSection = StoreSection()
    cost: CostSection = CostSection()
    actions: ActionSection = ActionSection()
    scene: SceneSection = SceneSection()
    ablation: AblationSection = AblationSection()

    def rollout_config(self) -> RolloutConfig:
        w, c, r, s = self.window, self.compression, self.retrieval, self.store
        strategy = QueryBased(r.layer) if r.strategy == "query" else PoseBased(r.yaw_only)
        cost = CostModel.lingbot()
        if self.cost.per_token_attention_s is not None:
            cost = CostModel(self.cost.per_token_attention_s, self.cost.fixed_step_s, self.cost.frames_per_step)
        return RolloutConfig(
            window=WindowConfig(**w.model_dump(), retrieved_chunks=r.k),
            compression=CompressionConfig(c.retention_fraction, c.enabled, per_head=c.per_head),
            strategy=strategy,
            steps=StepConfig(**self.actions.model_dump()),
            cost=cost,
            hot_budget_bytes=s.hot_budget_bytes,
            transfer=TransferModel(s.latency_per_byte, s.fixed_latency),
            noise=self.scene.noise,
            query_noise=r.query_noise,
            layers=s.layers,
            dtype_bytes=s.dtype_bytes,
            hallucinate=self.scene.hallucinate,
            fidelity_threshold=self.scene.fidelity_threshold,
            stride=r.stride,
            sink_source=self.sink_source,
            cost_tokens_per_frame=self.cost.tokens_per_frame,
        )

    def scene_kwargs(self) -> dict:
        return {"grid": self.scene.grid, "d": self.scene.d, "dynamic_fraction": self.scene.dynamic_fraction}


def _format(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        where = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{where}: {e['msg']}")
    return "; ".join(lines)


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {_format(exc)}") from None


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(data)
