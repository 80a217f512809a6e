import json
import math

import numpy as np
import pytest

from posekv.ablation import AXES, run_suite, variants
from posekv.errors import ConfigError
from posekv.geometry import DiscreteAction, Move, PoseState, StepConfig, accumulate
from posekv.rollout import RolloutConfig, revisit_flags, run_rollout
from posekv.trajectories import (
    attention_probe,
    fixture,
    fixture_names,
    load_trajectory,
    long_revisit_suite,
    parse_script,
    procedural,
    standard_suite,
)
from posekv.window import WindowConfig
from posekv.worldsim import frame_poses, generate_scene

SMALL = RolloutConfig(window=WindowConfig(tokens_per_frame=16))


@pytest.fixture(scope="module")
def scene():
    return generate_scene(0)


def test_script_parsing():
    acts = parse_script(["left*2", "forward+right", {"move": "back", "repeat": 2}, "stop"])
    assert acts == [
        DiscreteAction(yaw_delta=1),
        DiscreteAction(yaw_delta=1),
        DiscreteAction(Move.FORWARD, -1),
        DiscreteAction(Move.BACK),
        DiscreteAction(Move.BACK),
        DiscreteAction(),
    ]


@pytest.mark.parametrize("bad", ["jump", "forward+back", "left*x", {"move": "fly"}, {"spin": 1}])
def test_bad_scripts(bad):
    with pytest.raises(ConfigError):
        parse_script([bad])


def test_fixtures_load():
    assert set(fixture_names()) >= {"attention_probe", "loop_closure", "forward_backward", "multi_revisit"}
    assert len(fixture("attention_probe")) == len(attention_probe()) == 11


def test_trajectory_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_trajectory(tmp_path / "nope.json")
    (tmp_path / "t.json").write_text(json.dumps({"actions": []}))
    with pytest.raises(ConfigError, match="empty"):
        load_trajectory(tmp_path / "t.json")


def test_suites_are_deterministic():
    a, b = standard_suite(6, 3), standard_suite(6, 3)
    assert [c.trajectory.actions for c in a] == [c.trajectory.actions for c in b]
    assert [c.scene_seed for c in a] == list(range(103, 109))
    assert {c.trajectory.kind for c in long_revisit_suite(4)} == {"forward_backward"}
    with pytest.raises(ConfigError):
        procedural("spiral", 0)


def test_revisit_flags_by_viewpoint():
    poses = accumulate(parse_script(["left*8", "left*8", "stop"]), StepConfig())
    chunks = [frame_poses(poses[i], 3, poses[i + 1]) for i in range(17)]
    flags = revisit_flags(chunks, gap=5)
    # a full turn of 16 yaw steps returns to every starting heading
    assert flags[:16] == [False] * 16 and flags[16]
    assert not any(revisit_flags(chunks, gap=17))


def test_revisit_brute_force(rng):
    starts = [PoseState.from_yaw_pitch((float(rng.integers(0, 3)), 0.0, 0.0), yaw=float(rng.integers(0, 3))) for _ in range(20)]
    chunks = [(p,) for p in starts]
    flags = revisit_flags(chunks, gap=3)
    for i, p in enumerate(starts):
        expect = any(q.translation == p.translation and math.isclose(q.yaw, p.yaw) for q in starts[: i - 2] if i >= 3)
        assert flags[i] == expect


def test_single_step_context_is_identical_across_modes(scene):
    traj = parse_script(["left*2"])
    reports = {m: run_rollout(m, traj, scene, SMALL) for m in ("sliding", "full", "worldkv")}
    rows = [(r.steps[0].context_tokens, r.steps[0].fidelity, r.attention[0][1]) for r in reports.values()]
    assert rows[0] == rows[1] == rows[2]


def test_rollout_is_deterministic(scene):
    traj = fixture("loop_closure")
    a = run_rollout("worldkv", traj, scene, SMALL).summary()
    b = run_rollout("worldkv", traj, scene, SMALL).summary()
    assert a == b


def test_modes_on_loop_closure(scene):
    traj = fixture("loop_closure")
    rep = {m: run_rollout(m, traj, scene, SMALL) for m in ("sliding", "full", "worldkv")}
    assert rep["full"].revisit_fidelity == 1.0
    assert rep["worldkv"].revisit_fidelity > rep["sliding"].revisit_fidelity
    assert max(s.context_tokens for s in rep["worldkv"].steps) <= 18 * 16
    assert rep["worldkv"].mask is not None and rep["full"].mask is None
    assert rep["worldkv"].stored_chunks == len(traj) - 1 - 1


def test_conditioning_sink_starts_at_step_zero(scene):
    rep = run_rollout("worldkv", fixture("attention_probe"), scene, SMALL.with_(sink_source="conditioning"))
    assert rep.steps[0].step == 0
    with pytest.raises(ValueError):
        run_rollout("worldkv", fixture("attention_probe"), scene, SMALL.with_(sink_source="nope"))


def test_empty_trajectory_rejected(scene):
    with pytest.raises(ValueError):
        run_rollout("full", [], scene, SMALL)


def test_variant_tables():
    assert [v.label for v in variants("intra", SMALL)] == ["3->3", "3->2.5", "3->2", "3->1.5", "3->1.25", "3->1"]
    assert [v.label for v in variants("inter", SMALL)] == ["3->3", "6->3", "9->3"]
    assert [v.config.window.retrieved_chunks for v in variants("k", SMALL)] == [1, 2, 3, 4, 5, 6]
    assert [v.config.strategy.kind for v in variants("strategy", SMALL)] == ["pose", "pose", "query"]
    with pytest.raises(ConfigError, match=", ".join(AXES)):
        variants("depth", SMALL)


def test_suite_runner_skips_cases_without_revisits():
    from posekv.trajectories import SuiteCase, Trajectory

    straight = SuiteCase(Trajectory("straight", parse_script(["forward*6"])), 0)
    res = run_suite([straight], SMALL)
    assert res.scores == [] and math.isnan(res.mean)
    res = run_suite(standard_suite(2), SMALL)
    assert len(res.scores) == 2 and all(0 <= s <= 1 for s in res.scores)
    assert np.isfinite(res.modeled_fps)
