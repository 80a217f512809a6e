"""Deterministic on-disk outputs for rollouts and sweeps."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from posekv.ablation import SweepRow
from posekv.compression import mask_rows, mask_to_pgm
from posekv.rollout import RolloutReport

FORMAT_VERSION = 1
STEP_COLUMNS = (
    "step",
    "mode",
    "context_tokens",
    "hot_bytes",
    "cold_bytes",
    "transfer_s",
    "fidelity",
    "modeled_fps",
    "retrieved_ids",
    "revisit",
)
TRACE_COLUMNS = ("step", "strategy", "k", "chunk_ids", "scores", "transfer_seconds")


def _ids(ids: Iterable) -> str:
    return " ".join(str(i) for i in ids)


def _num(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, kind: str, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    buf.write(f"# posekv {kind} v{FORMAT_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def write_steps(path: Path, reports: Sequence[RolloutReport]) -> None:
    rows = (
        (
            s.step,
            s.mode,
            s.context_tokens,
            s.hot_bytes,
            s.cold_bytes,
            _num(s.transfer_s),
            _num(s.fidelity),
            _num(s.modeled_fps),
            _ids(s.retrieved_ids),
            int(s.revisit),
        )
        for r in reports
        for s in r.steps
    )
    _write_csv(path, "steps", STEP_COLUMNS, rows)


def write_traces(path: Path, reports: Sequence[RolloutReport]) -> None:
    rows = (
        (t.step, t.strategy, t.k, _ids(t.chunk_ids), " ".join(_num(x) for x in t.scores), _num(t.transfer_seconds))
        for r in reports
        for t in r.traces
    )
    _write_csv(path, "retrieval_trace", TRACE_COLUMNS, rows)


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def write_run(out: Path, reports: Sequence[RolloutReport], meta: dict) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    summary = {"format_version": FORMAT_VERSION, **meta, "modes": {r.mode: r.summary() for r in reports}}
    write_json(out / "summary.json", summary)
    write_steps(out / "steps.csv", reports)
    write_traces(out / "retrieval_trace.csv", reports)
    for r in reports:
        if r.attention:
            write_attention(out / f"attention_{r.mode}.csv", r)
        if r.mask is not None:
            write_mask(out, r.mask)
    return summary


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    """Header and rows of a versioned CSV, skipping the comment line."""
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def derive_curve(steps_csv: Path, out: Path, kind: str, columns: Sequence[str], modes: Sequence[str] | None = None) -> None:
    header, rows = read_csv(steps_csv)
    idx = [header.index(c) for c in ("step", "mode", *columns)]
    picked = [[row[i] for i in idx] for row in rows if not modes or row[1] in modes]
    _write_csv(out, kind, ("step", "mode", *columns), picked)


def derive_rows(src: Path, out: Path, kind: str, steps: set[int] | None = None) -> None:
    header, rows = read_csv(src)
    if steps is not None:
        rows = [r for r in rows if int(r[0]) in steps]
    _write_csv(out, kind, header, rows)


def write_sweep(path: Path, axis: str, rows: Sequence[SweepRow]) -> None:
    _write_csv(
        path,
        f"ablation_{axis}",
        ("label", "fidelity", "cases", "context_tokens", "store_bytes", "modeled_fps"),
        ((r.label, _num(r.fidelity), len(r.per_case), r.context_tokens, r.store_bytes, _num(r.modeled_fps)) for r in rows),
    )


def write_attention(path: Path, report: RolloutReport) -> None:
    """Step x source-chunk attention mass, zero where a chunk was absent."""
    sources = sorted({cid for _, mass in report.attention for cid in mass})
    rows = ((step, *(_num(mass.get(cid, 0.0)) for cid in sources)) for step, mass in report.attention)
    _write_csv(path, "attention_map", ("step", *(f"C{c}" if c >= 0 else "sink" for c in sources)), rows)


def write_mask(directory: Path, mask: np.ndarray) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "mask.pgm").write_text(mask_to_pgm(mask))
    _write_csv(directory / "mask.csv", "mask", ("frame", "row", "col", "kept"), mask_rows(mask))
