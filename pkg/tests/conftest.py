import math

import numpy as np
import pytest

from posekv.chunkstore import KVChunk
from posekv.geometry import PoseState, rotation_distance


def random_pose(rng: np.random.Generator, spread: float = 5.0) -> PoseState:
    q = rng.standard_normal(4)
    return PoseState(tuple(rng.uniform(-spread, spread, 3)), tuple(q / np.linalg.norm(q)))


def make_chunk(
    chunk_id: int = 0,
    *,
    F: int = 3,
    T: int = 8,
    d: int = 16,
    layers: int = 2,
    pose: PoseState | None = None,
    seed: int | None = None,
    dtype_bytes: int = 4,
    keys=None,
) -> KVChunk:
    rng = np.random.default_rng(chunk_id if seed is None else seed)
    if keys is None:
        keys = [rng.standard_normal((F * T, d)) for _ in range(layers)]
    values = [rng.standard_normal(np.shape(k)) for k in keys]
    return KVChunk(
        chunk_id=chunk_id,
        pose=pose or PoseState.from_yaw_pitch((float(chunk_id), 0.0, 0.0)),
        frames=F,
        tokens_per_frame=T,
        keys=tuple(keys),
        values=tuple(values),
        dtype_bytes=dtype_bytes,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def yaw_quat(angle: float):
    return (math.cos(angle / 2), 0.0, 0.0, math.sin(angle / 2))


def oracle_ranking(current, poses, yaw_only=False):
    """Combined distance computed one pair at a time, then a plain sort."""
    def rot(p):
        if not yaw_only:
            return rotation_distance(current, p)
        diff = math.remainder(current.yaw - p.yaw, 2 * math.pi)
        return abs(diff)

    dt = [sum((a - b) ** 2 for a, b in zip(current.translation, p.translation)) for p in poses]
    dr = [rot(p) for p in poses]

    def norm(xs):
        lo, hi = min(xs), max(xs)
        return [0.0 if hi == lo else (x - lo) / (hi - lo) for x in xs]

    total = [a + b for a, b in zip(norm(dt), norm(dr))]
    return sorted(range(len(poses)), key=lambda i: (total[i], i))


def oracle_query_ranking(queries, key_sets):
    """Mean-of-max scaled dot products, one pair at a time, then a plain sort."""
    d = queries.shape[1]
    score = []
    for keys in key_sets:
        per_query = [max(float(q @ k) / math.sqrt(d) for k in keys) for q in queries]
        score.append(sum(per_query) / len(per_query))
    return sorted(range(len(key_sets)), key=lambda i: (-score[i], i))


_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance criterion's outcome for the end-of-run summary."""
    import time
    from contextlib import contextmanager

    @contextmanager
    def run(number: int, name: str, limit_s: float):
        start = time.perf_counter()
        try:
            yield
        except BaseException as exc:
            _RESULTS[number] = (False, f"{name}: {type(exc).__name__}")
            raise
        elapsed = time.perf_counter() - start
        ok = elapsed < limit_s
        _RESULTS[number] = (ok, f"{name} ({elapsed:.2f}s, limit {limit_s:g}s)")
        assert ok, f"took {elapsed:.2f}s, limit {limit_s}s"

    return run


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        ok, text = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}")
