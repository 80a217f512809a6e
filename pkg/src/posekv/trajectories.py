"""Action scripts, trajectory fixtures and the synthetic evaluation suites."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

from posekv.errors import ConfigError
from posekv.geometry import DiscreteAction, Move

_TOKENS = {
    "stop": DiscreteAction(),
    "none": DiscreteAction(),
    "left": DiscreteAction(yaw_delta=1),
    "right": DiscreteAction(yaw_delta=-1),
    "up": DiscreteAction(pitch_delta=1),
    "down": DiscreteAction(pitch_delta=-1),
    "forward": DiscreteAction(Move.FORWARD),
    "back": DiscreteAction(Move.BACK),
    "strafe_left": DiscreteAction(Move.STRAFE_LEFT),
    "strafe_right": DiscreteAction(Move.STRAFE_RIGHT),
}
_REPEAT = re.compile(r"^([a-z_+]+)(?:\*(\d+))?$")


def _combine(parts: list[DiscreteAction], token: str) -> DiscreteAction:
    moves = [p.move for p in parts if p.move is not Move.NONE]
    if len(moves) > 1:
        raise ConfigError(f"action {token!r} combines more than one move")
    return DiscreteAction(
        moves[0] if moves else Move.NONE,
        sum(p.yaw_delta for p in parts),
        sum(p.pitch_delta for p in parts),
    )


def parse_action(spec) -> list[DiscreteAction]:
    """One script entry -> actions.

    Strings look like ``"right"``, ``"forward+left"`` or ``"left*4"``; dicts
    give ``move``, ``yaw``, ``pitch`` and optional ``repeat``.
    """
    if isinstance(spec, dict):
        unknown = set(spec) - {"move", "yaw", "pitch", "repeat"}
        if unknown:
            raise ConfigError(f"unknown action keys {sorted(unknown)}")
        try:
            action = DiscreteAction(Move(spec.get("move", "none")), int(spec.get("yaw", 0)), int(spec.get("pitch", 0)))
        except ValueError as exc:
            raise ConfigError(f"bad action {spec}: {exc}") from None
        return [action] * int(spec.get("repeat", 1))
    m = _REPEAT.match(str(spec).strip().lower())
    if not m:
        raise ConfigError(f"cannot parse action {spec!r}")
    parts = []
    for name in m.group(1).split("+"):
        if name not in _TOKENS:
            raise ConfigError(f"unknown action {name!r}; valid: {', '.join(sorted(_TOKENS))}")
        parts.append(_TOKENS[name])
    return [_combine(parts, spec)] * int(m.group(2) or 1)


def parse_script(script: Iterable | str) -> list[DiscreteAction]:
    if isinstance(script, str):
        script = script.split()
    actions = []
    for entry in script:
        actions.extend(parse_action(entry))
    return actions


@dataclass
class Trajectory:
    name: str
    actions: list[DiscreteAction]
    kind: str = "custom"
    script: list = field(default_factory=list)

    def __len__(self):
        return len(self.actions)

    def to_json(self) -> dict:
        return {"name": self.name, "kind": self.kind, "actions": self.script or [_action_json(a) for a in self.actions]}


def _action_json(a: DiscreteAction) -> dict:
    return {"move": a.move.value, "yaw": a.yaw_delta, "pitch": a.pitch_delta}


def trajectory_from_json(data: dict) -> Trajectory:
    unknown = set(data) - {"name", "kind", "actions"}
    if unknown:
        raise ConfigError(f"unknown trajectory keys {sorted(unknown)}")
    if "actions" not in data:
        raise ConfigError("trajectory needs an 'actions' list")
    actions = parse_script(data["actions"])
    if not actions:
        raise ConfigError("trajectory is empty")
    return Trajectory(data.get("name", "trajectory"), actions, data.get("kind", "custom"), list(data["actions"]))


def load_trajectory(path: str | Path) -> Trajectory:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"trajectory file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return trajectory_from_json(data)


def fixture(name: str) -> Trajectory:
    ref = resources.files("posekv.fixtures").joinpath(f"{name}.json")
    return trajectory_from_json(json.loads(ref.read_text()))


def fixture_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("posekv.fixtures").iterdir() if p.name.endswith(".json"))


PROBE_SCRIPT = ["right*4", "stop", "left*4", "stop", "right"]


def attention_probe() -> Trajectory:
    """Right x4, Stop, Left x4, Stop, Right: chunks C0..C10."""
    return Trajectory("attention_probe", parse_script(PROBE_SCRIPT), "probe", list(PROBE_SCRIPT))


# -- procedural suites ---------------------------------------------------------


def _pan_loop(rng: np.random.Generator) -> list[str]:
    """Turn away, wander, and sweep back over the first views."""
    first = int(rng.integers(5, 8))
    away = int(rng.integers(2, 4))
    turn = "left" if rng.random() < 0.5 else "right"
    back = "right" if turn == "left" else "left"
    return [
        f"{turn}*{first}",
        f"forward*{away}",
        f"{turn}*8",
        f"forward*{away}",
        f"{back}*8",
        f"{back}*{first}",
        f"{turn}*{first}",
    ]


def _forward_backward(rng: np.random.Generator) -> list[str]:
    n = int(rng.integers(4, 7))
    side = "left" if rng.random() < 0.5 else "right"
    other = "right" if side == "left" else "left"
    return [f"forward*{n}", f"{side}*8", f"forward*{n}", f"{other}*8", f"forward*{n}", f"{side}*8", f"forward*{n}"]


def _multi_revisit(rng: np.random.Generator) -> list[str]:
    a = int(rng.integers(4, 7))
    b = int(rng.integers(2, 4))
    turn = "left" if rng.random() < 0.5 else "right"
    back = "right" if turn == "left" else "left"
    return [f"{turn}*{a}", f"forward*{b}", f"back*{b}", f"{back}*{a}", f"{turn}*{a}", f"forward*{b}", f"back*{b}", f"{back}*{a}"]


_GENERATORS = {"loop_closure": _pan_loop, "forward_backward": _forward_backward, "multi_revisit": _multi_revisit}


def procedural(kind: str, seed: int) -> Trajectory:
    if kind not in _GENERATORS:
        raise ConfigError(f"unknown trajectory kind {kind!r}; valid: {', '.join(_GENERATORS)}")
    script = _GENERATORS[kind](np.random.default_rng([seed, 0x7A1]))
    return Trajectory(f"{kind}_{seed}", parse_script(script), kind, script)


@dataclass(frozen=True)
class SuiteCase:
    trajectory: Trajectory
    scene_seed: int


def standard_suite(n: int = 12, base_seed: int = 0) -> list[SuiteCase]:
    kinds = list(_GENERATORS)
    return [SuiteCase(procedural(kinds[i % len(kinds)], base_seed + i), base_seed + 100 + i) for i in range(n)]


def long_revisit_suite(n: int = 10, base_seed: int = 0) -> list[SuiteCase]:
    """Out-and-back traversals: revisited views draw on many stored chunks."""
    return [SuiteCase(procedural("forward_backward", base_seed + i), base_seed + 300 + i) for i in range(n)]


SUITES = {"standard": standard_suite, "long_revisit": long_revisit_suite}
