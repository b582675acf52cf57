"""Command line entry point: ``ndfsim {train,bench,export,edit,check}``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import CheckpointMismatch, ConfigurationError, DomainError, NumericAbort

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_ABORT = 0, 1, 2, 3


def _parse_grid(text: str) -> tuple[int, int]:
    parts = text.lower().replace("×", "x").split("x")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"grid must look like 100x100, got {text!r}")
    return int(parts[0]), int(parts[1])


def _parse_vector(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("force must be fx,fy,fz")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ndfsim", description="Neural thin-shell cloth simulator")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a scenario (builtin name or YAML file)")
    t.add_argument("config")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--iters", type=int, default=None)
    t.add_argument("--profile", choices=("ci", "paper"), default=None)
    t.add_argument("--out", default="run")

    b = sub.add_parser("bench", help="run an obstacle-course benchmark")
    b.add_argument("case")
    b.add_argument("--profile", choices=("ci", "paper"), default="ci")
    b.add_argument("--iters", type=int, default=None)
    b.add_argument("--seed", type=int, default=None)

    e = sub.add_parser("export", help="export OBJ frames from a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--grid", type=_parse_grid, default=(50, 50))
    e.add_argument("--frames", type=int, default=1)
    e.add_argument("--fps", type=float, default=None)
    e.add_argument("--seam", choices=("duplicate", "wrap"), default="duplicate")
    e.add_argument("--out", default="frames")

    d = sub.add_parser("edit", help="fine-tune a checkpoint toward a new force or pose")
    d.add_argument("checkpoint")
    g = d.add_mutually_exclusive_group(required=True)
    g.add_argument("--force", type=_parse_vector)
    g.add_argument("--pose", type=Path)
    d.add_argument("--iters", type=int, required=True)
    d.add_argument("--out", default="edit")
    d.add_argument("--snapshot-every", type=int, default=0)

    sub.add_parser("check", help="run the derivative/oracle property suite")
    return p


def _scenario(config_arg: str):
    from .config import load_config
    from .scenarios import get_scenario

    path = Path(config_arg)
    if path.suffix in (".yaml", ".yml", ".json") or path.exists():
        return load_config(path)
    return get_scenario(config_arg)


def _problem_from_checkpoint(path):
    from .config import ScenarioConfig
    from .ndf import load_checkpoint

    weights, header = load_checkpoint(path)
    if not header.scenario:
        raise CheckpointMismatch(f"{path}: checkpoint carries no scenario description")
    cfg = ScenarioConfig.from_dict(header.scenario)
    if cfg.constraints.digest() != header.digest:
        raise CheckpointMismatch(f"{path}: constraint digest does not match the embedded scenario")
    problem = cfg.compile()
    if problem.model.config != header.config:
        raise CheckpointMismatch(f"{path}: network header differs from the embedded scenario")
    return weights, problem


def _read_pose(path: Path):
    import yaml
    from scipy.spatial.transform import Rotation

    data = yaml.safe_load(path.read_text()) or {}
    if "rotation" in data:
        rot = np.asarray(data["rotation"], dtype=float)
    elif "rotvec" in data:
        rot = Rotation.from_rotvec(data["rotvec"]).as_matrix()
    elif "euler_deg" in data:
        rot = Rotation.from_euler("xyz", data["euler_deg"], degrees=True).as_matrix()
    else:
        rot = np.eye(3)
    return rot, np.asarray(data.get("translation", [0.0, 0.0, 0.0]), dtype=float)


def cmd_train(args) -> int:
    from .scenarios import apply_profile
    from .trainer import train

    cfg = _scenario(args.config)
    if args.profile:
        cfg = apply_profile(cfg, args.profile)
    if args.seed is not None:
        cfg = replace(cfg, training=replace(cfg.training, seed=args.seed), sampling=replace(cfg.sampling, seed=args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, report = train(cfg.compile(), iterations=args.iters, metrics_path=out / "metrics.csv", checkpoint_dir=out)
    print(f"trained {cfg.name}: {len(report.iterations)} iterations, final loss "
          f"{report.loss[-1] if report.loss else float('nan'):.6g}; checkpoint {report.checkpoint}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .scenarios import benchmark_cases, run_benchmark

    cases = benchmark_cases()
    names = list(cases) if args.case == "all" else [args.case]
    for n in names:
        if n not in cases:
            raise ConfigurationError(f"unknown benchmark {n!r}; known: {', '.join(cases)}")
    ok = True
    for n in names:
        rep = run_benchmark(cases[n], args.profile, iterations=args.iters, seed=args.seed)
        print(rep.line(), flush=True)
        ok &= rep.passed
    return EXIT_OK if ok else EXIT_FAIL


def cmd_export(args) -> int:
    from .export import export_meshes

    weights, problem = _problem_from_checkpoint(args.checkpoint)
    paths = export_meshes(weights, problem, args.grid, args.frames, args.out, fps=args.fps, seam=args.seam)
    print(f"wrote {len(paths)} frame(s) to {args.out}")
    return EXIT_OK


def cmd_edit(args) -> int:
    from .energy import LoadSpec
    from .trainer import Edit, fine_tune_edit

    weights, problem = _problem_from_checkpoint(args.checkpoint)
    if args.force is not None:
        edit = Edit(load=LoadSpec("constant", args.force))
    else:
        rot, tr = _read_pose(args.pose)
        edit = Edit(rotation=rot, translation=tr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = fine_tune_edit(weights, problem, edit, args.iters, snapshot_every=args.snapshot_every,
                            metrics_path=out / "metrics.csv", checkpoint_dir=out,
                            checkpoint_every=args.snapshot_every)
    print(f"edited for {args.iters} iterations; checkpoint {result.report.checkpoint}")
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_all

    results = run_all()
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


COMMANDS = {"train": cmd_train, "bench": cmd_bench, "export": cmd_export, "edit": cmd_edit, "check": cmd_check}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        if exc.snapshot:
            print(json.dumps({"iteration": exc.snapshot.get("iteration"),
                              "parameter_norms": exc.snapshot.get("parameter_norms")}), file=sys.stderr)
        return EXIT_ABORT
    except (ConfigurationError, DomainError, CheckpointMismatch, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
