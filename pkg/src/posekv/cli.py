"""Command-line entry point: run, ablate, plot-data, validate-config."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from posekv import __version__
from posekv.ablation import AXES, sweep
from posekv.config import RunConfig, load_config
from posekv.errors import PoseKVError
from posekv.reporting import derive_curve, derive_rows, write_json, write_run, write_sweep
from posekv.rollout import RolloutReport, run_rollout
from posekv.trajectories import SUITES, Trajectory, fixture, fixture_names, load_trajectory
from posekv.worldsim import generate_scene

log = logging.getLogger("posekv")

PLOT_KINDS = ("memory_curve", "fps_curve", "attention_map", "mask")


def resolve_trajectory(ref: str) -> Trajectory:
    """A shipped fixture name or a path to a trajectory JSON file."""
    if ref in fixture_names():
        return fixture(ref)
    return load_trajectory(ref)


def _configure(args) -> RunConfig:
    cfg = load_config(args.config)
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "mode", None):
        updates["modes"] = [args.mode]
    if getattr(args, "trajectory", None):
        updates["trajectory"] = args.trajectory
    return cfg.model_copy(update=updates) if updates else cfg


def run_modes(cfg: RunConfig, modes=None, **overrides) -> list[RolloutReport]:
    trajectory = resolve_trajectory(cfg.trajectory)
    scene = generate_scene(cfg.seed, **cfg.scene_kwargs())
    rcfg = cfg.rollout_config()
    if overrides:
        rcfg = rcfg.with_(**overrides)
    return [run_rollout(mode, trajectory, scene, rcfg) for mode in (modes or cfg.modes)]


def _out_dir(args, cfg: RunConfig, default: str) -> Path:
    return Path(args.out or cfg.out or default)


def cmd_run(args) -> int:
    cfg = _configure(args)
    out = _out_dir(args, cfg, "runs/latest")
    log.info("run seed=%d trajectory=%s modes=%s", cfg.seed, cfg.trajectory, ",".join(cfg.modes))
    reports = run_modes(cfg)
    summary = write_run(out, reports, {"seed": cfg.seed, "trajectory": cfg.trajectory, "config": cfg.model_dump(mode="json")})
    for mode, s in summary["modes"].items():
        fid = s["mean_revisit_fidelity"]
        print(
            f"{mode:8s} revisit_fidelity={'n/a' if fid is None else f'{fid:.3f}'} "
            f"final_tokens={s['final_context_tokens']} final_fps={s['final_modeled_fps']:.2f}"
        )
    print(f"wrote {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _configure(args)
    ablation = cfg.ablation
    axis = args.axis or ablation.axis
    if axis not in AXES:
        print(f"error: unknown ablation axis {axis!r}; valid axes: {', '.join(AXES)}", file=sys.stderr)
        return 2
    cases = SUITES[args.suite or ablation.suite](args.cases or ablation.cases, cfg.seed)
    rows = sweep(axis, cases, cfg.rollout_config(), scene_kw=cfg.scene_kwargs())
    out = _out_dir(args, cfg, "runs/ablate")
    out.mkdir(parents=True, exist_ok=True)
    write_sweep(out / f"ablation_{axis}.csv", axis, rows)
    for r in rows:
        print(f"{r.label:14s} fidelity={r.fidelity:.4f} tokens={r.context_tokens} store_bytes={r.store_bytes} fps={r.modeled_fps:.2f}")
    return 0


def cmd_plot_data(args) -> int:
    report = Path(args.report)
    if not (report / "steps.csv").is_file():
        print(f"error: no run report at {report} (expected steps.csv)", file=sys.stderr)
        return 1
    out = Path(args.out or report)
    out.mkdir(parents=True, exist_ok=True)
    modes = [args.mode] if args.mode else None
    if args.kind == "memory_curve":
        derive_curve(report / "steps.csv", out / "memory_curve.csv", "memory_curve", ("hot_bytes", "cold_bytes"), modes)
    elif args.kind == "fps_curve":
        derive_curve(report / "steps.csv", out / "fps_curve.csv", "fps_curve", ("context_tokens", "modeled_fps"), modes)
    elif args.kind == "attention_map":
        found = sorted(report.glob("attention_*.csv"))
        if args.mode:
            found = [f for f in found if f.stem == f"attention_{args.mode}"]
        if not found:
            print(f"error: no attention map for {args.mode or 'any mode'} in {report}", file=sys.stderr)
            return 1
        src = next((f for f in found if f.stem == "attention_full"), found[0])
        derive_rows(src, out / "attention_map.csv", "attention_map", None if args.step is None else {args.step})
    else:
        if not (report / "mask.csv").is_file():
            print(f"error: {report} has no retention mask (run a worldkv mode with retention < 1)", file=sys.stderr)
            return 1
        if out != report:
            derive_rows(report / "mask.csv", out / "mask.csv", "mask")
            (out / "mask.pgm").write_bytes((report / "mask.pgm").read_bytes())
    print(f"wrote {args.kind} to {out}")
    return 0


def cmd_validate_config(args) -> int:
    cfg = load_config(args.config)
    resolve_trajectory(cfg.trajectory)
    if args.out:
        write_json(Path(args.out), cfg.model_dump(mode="json"))
    print("config OK")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="posekv", description="Pose-indexed KV memory simulator.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--log-file", help="write timestamped log records here instead of stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, mode=True):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="scene seed (overrides the config)")
        sp.add_argument("--trajectory", help="fixture name or trajectory JSON path")
        if mode:
            sp.add_argument("--mode", choices=("sliding", "full", "worldkv"))

    run = sub.add_parser("run", help="roll out the configured trajectory")
    common(run)
    run.set_defaults(func=cmd_run)

    ab = sub.add_parser("ablate", help="sweep one axis over an evaluation suite")
    ab.add_argument("axis", nargs="?", help=f"one of: {', '.join(AXES)} (defaults to the config's ablation.axis)")
    ab.add_argument("--suite", choices=sorted(SUITES))
    ab.add_argument("--cases", type=int)
    common(ab, mode=False)
    ab.set_defaults(func=cmd_ablate)

    pd = sub.add_parser("plot-data", help="derive plot-ready CSV from a run report")
    pd.add_argument("kind", choices=PLOT_KINDS)
    pd.add_argument("--report", default="runs/latest", help="directory written by `run`")
    pd.add_argument("--out", help="output directory (defaults to the report directory)")
    pd.add_argument("--mode", choices=("sliding", "full", "worldkv"))
    pd.add_argument("--step", type=int, help="attention_map: keep only this step")
    pd.set_defaults(func=cmd_plot_data)

    vc = sub.add_parser("validate-config", help="check a config file")
    vc.add_argument("--config", required=True)
    vc.add_argument("--out", help="write the normalized config here")
    vc.set_defaults(func=cmd_validate_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = logging.FileHandler(args.log_file) if args.log_file else logging.StreamHandler()
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.DEBUG if args.verbose else logging.INFO if args.log_file else logging.WARNING)
    log.propagate = False
    try:
        return args.func(args)
    except PoseKVError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        log.removeHandler(handler)
        handler.close()


if __name__ == "__main__":
    sys.exit(main())
