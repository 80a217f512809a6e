import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posekv.chunkstore import ChunkStore
from posekv.compression import CompressionConfig, compress_chunk
from posekv.errors import ChunkError, ConfigError
from posekv.geometry import PoseState
from posekv.retrieval import PoseBased
from posekv.window import WindowConfig, init_window, step

from conftest import make_chunk

T = 8
CFG = WindowConfig(tokens_per_frame=T)


def pose(i: int) -> PoseState:
    return PoseState.from_yaw_pitch((float(i), 0.0, 0.0))


def chunk(i: int):
    return make_chunk(i, T=T, pose=pose(i))


def roll(mode, n, cfg=CFG, compression=CompressionConfig(), store=None):
    w = init_window(cfg, make_chunk(-1, T=T, pose=pose(0), seed=999))
    store = store if store is not None else (ChunkStore() if mode == "worldkv" else None)
    counts, reports = [], []
    for i in range(n):
        counts.append(w.context_token_count())
        _, rep, _ = step(w, store, PoseBased(), chunk(i), pose(i + 1), mode=mode, compression=compression, step_index=i)
        reports.append(rep)
    return w, store, counts, reports


def test_init_window_is_sink_only():
    sink = make_chunk(-1, T=T, seed=999)
    w = init_window(CFG, sink)
    assert w.context_token_count() == 3 * T
    ctx = w.assemble_context()
    for l in range(2):
        assert np.array_equal(ctx.keys[l], sink.keys[l]) and np.array_equal(ctx.values[l], sink.values[l])
    assert set(ctx.regions) == {"sink"}


def test_sink_frame_mismatch_rejected():
    with pytest.raises(ChunkError, match="3 frames"):
        init_window(CFG, make_chunk(F=6, T=T))


def test_bad_configs():
    with pytest.raises(ConfigError):
        WindowConfig(recent_frames=4)
    with pytest.raises(ConfigError):
        WindowConfig(retrieved_frames=0)


def test_capacity_follows_retention():
    assert CFG.retrieval_capacity(CompressionConfig(0.25)) == 6
    assert CFG.retrieval_capacity(CompressionConfig(1.0)) == 3
    assert WindowConfig().retrieval_capacity(CompressionConfig(0.25)) == 6
    with pytest.raises(ConfigError):
        WindowConfig(tokens_per_frame=T, retrieved_frames=1).retrieval_capacity(CompressionConfig(1.0))


def test_region_order_and_tags():
    w, _, _, _ = roll("worldkv", 6)
    ctx = w.assemble_context()
    tags = list(ctx.regions)
    assert tags == ["sink"] * (3 * T) + ["retrieved"] * (len(tags) - 6 * T) + ["recent"] * (3 * T)
    assert ctx.chunk_ids[-1] == 5


def test_retrieved_rows_are_the_stored_rows():
    w, store, _, _ = roll("worldkv", 8)
    ctx = w.assemble_context()
    assert w.retrieved
    for c in w.retrieved:
        stored = store.peek(c.chunk_id)
        assert c.compressed
        rows = ctx.chunk_ids == c.chunk_id
        for l in range(2):
            assert np.array_equal(ctx.keys[l][rows], stored.keys[l])
            assert np.array_equal(ctx.values[l][rows], stored.values[l])
        assert np.array_equal(stored.keys[0], compress_chunk(chunk(c.chunk_id), CompressionConfig()).keys[0])


def test_uncompressed_retrieval_holds_three_chunks():
    w, _, _, _ = roll("worldkv", 8, compression=CompressionConfig(1.0))
    assert len(w.retrieved) == 3 and all(c.token_count == 3 * T for c in w.retrieved)


def test_worldkv_context_bounded_and_steady():
    _, _, counts, _ = roll("worldkv", 30)
    assert max(counts) <= 18 * T
    # sink + 6 compressed chunks (12 tokens each) + one recent chunk
    assert counts[10:] == [3 * T + 6 * 12 + 3 * T] * 20


def test_full_grows_one_chunk_per_step():
    w, _, counts, reports = roll("full", 10)
    assert np.diff(counts).tolist() == [3 * T] * 9
    assert all(not r.evicted for r in reports)
    assert len(w.recent) == 10


def test_sliding_keeps_four_chunks_and_discards():
    w, _, counts, reports = roll("sliding", 10)
    assert [c.chunk_id for c in w.recent] == [6, 7, 8, 9]
    assert reports[4].discarded == [0]
    assert max(counts) == 3 * T + 4 * 3 * T


def test_rejects_compressed_or_misshapen_chunks():
    w = init_window(CFG, make_chunk(-1, T=T, seed=999))
    with pytest.raises(ChunkError):
        step(w, ChunkStore(), None, compress_chunk(chunk(0), CompressionConfig()), pose(1))
    with pytest.raises(ChunkError):
        step(w, ChunkStore(), None, make_chunk(0, T=4), pose(1))


def test_backfill_when_pose_candidates_run_short():
    w, store, _, _ = roll("worldkv", 3)
    # two chunks in the store, capacity six: everything available is retrieved
    assert sorted(c.chunk_id for c in w.retrieved) == sorted(store.index)


def test_stride_reuses_previous_retrieval():
    w = init_window(CFG, make_chunk(-1, T=T, seed=999))
    store = ChunkStore()
    traces = []
    for i in range(10):
        _, _, tr = step(w, store, PoseBased(), chunk(i), pose(i + 1), step_index=i, stride=3)
        traces.append(tr)
    assert [t.refreshed for t in traces[3:9]] == [True, False, False, True, False, False]
    assert set(traces[4].chunk_ids) == set(traces[3].chunk_ids) | set(traces[3].filled)
    assert traces[4].transfer_seconds == 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 25), st.sampled_from([0.1, 0.25, 0.5, 1.0]), st.sampled_from([None, 0, 2000]))
def test_window_invariants(n, p, budget):
    sink = make_chunk(-1, T=T, seed=999)
    sink_keys = [k.copy() for k in sink.keys]
    w = init_window(CFG, sink)
    store = ChunkStore(budget)
    comp = CompressionConfig(p)
    evicted = []
    for i in range(n):
        _, rep, _ = step(w, store, PoseBased(), chunk(i), pose(i + 1), compression=comp, step_index=i)
        evicted += rep.evicted
        # sink never changes
        ctx = w.assemble_context()
        assert w.sink is sink
        assert all(np.array_equal(ctx.keys[l][: 3 * T], sink_keys[l]) for l in range(2))
        # each evicted chunk lands in the store exactly once
        assert sorted(store.index) == sorted(evicted)
        # every chunk id lives in exactly one place
        recent = [c.chunk_id for c in w.recent]
        assert set(recent).isdisjoint(store.index)
        assert sorted(recent + evicted) == list(range(i + 1))
        # retrieved chunks are always stored ones, never the recent ones
        assert {c.chunk_id for c in w.retrieved} <= set(store.index)
        assert w.context_token_count() <= CFG.max_context_tokens
