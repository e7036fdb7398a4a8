"""Command-line entry point: ``ttsr run | eval | replay | inspect``."""
from __future__ import annotations

import argparse
import json
import logging
import re
import sys
import tempfile
from pathlib import Path

from .backends import STREAM_EVAL, RemoteError, make_backend, stream
from .config import MODES, ConfigError, config_hash, load_config, validate_config
from .loop import IterationError, evaluate, run
from .persistence import (PersistenceError, load_config as load_run_config, load_params,
                          load_report, load_snapshots)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_REMOTE = 3

log = logging.getLogger("ttsr")

VARIANT_ID = re.compile(r"^v\d{3}-\d{2}$")


def _print(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False))


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = validate_config(cfg.replace(**overrides))
    out = Path(args.out) if args.out else Path("runs") / f"{cfg.mode}-seed{cfg.seed}-{config_hash(cfg)}"
    result = run(cfg, out_dir=out)
    report = result.report
    last = report.iterations[-1] if report.iterations else {}
    _print({"run_dir": str(out), "mode": report.mode, "seed": report.seed,
            "config_hash": report.config_hash, "iterations": len(report.iterations),
            "initial_eval": report.initial_eval, "final_eval": report.final_eval,
            "last_mean_reward": last.get("mean_reward"),
            "wall_clock_s": round(report.wall_clock, 3)})
    return EXIT_OK


def _parse_eval_mode(mode: str, k):
    if mode == "greedy":
        return "greedy", 1
    if mode == "mean@k":
        if k is None:
            raise ConfigError(["--k: required with --mode mean@k"])
        return "mean@k", k
    if mode.startswith("mean@") and mode[5:].isdigit():
        return "mean@k", int(mode[5:])
    raise ConfigError([f"--mode: expected greedy or mean@k, got {mode!r}"])


def cmd_eval(args) -> int:
    cfg = load_run_config(args.run_dir)
    mode, k = _parse_eval_mode(args.mode, args.k)
    if k < 1:
        raise ConfigError(["--k: must be at least 1"])
    params = load_params(args.run_dir) if cfg.backend == "toy" else None
    if cfg.backend == "toy" and params is None:
        raise PersistenceError(f"{args.run_dir} has no final parameters; the run did not finish")
    backend = make_backend(cfg, params=params)
    eval_set = backend.eval_set()
    if not eval_set:
        raise ConfigError(["evaluation set is empty (remote questions need ground_truth)"])
    acc = evaluate(backend.student, eval_set, mode, k, stream(cfg.seed, STREAM_EVAL))
    _print({"run_dir": str(args.run_dir), "mode": args.mode, "k": k, "n": len(eval_set),
            "accuracy": acc})
    return EXIT_OK


def cmd_replay(args) -> int:
    report = load_report(args.run_dir)
    out = {"run_dir": str(args.run_dir), "report": report.to_dict()}
    if args.verify:
        cfg = load_run_config(args.run_dir)
        with tempfile.TemporaryDirectory() as tmp:
            fresh = run(cfg, out_dir=Path(tmp) / "rerun").report
        same = (fresh.iterations == report.iterations and fresh.final_eval == report.final_eval
                and fresh.initial_eval == report.initial_eval)
        out["verified"] = same
        _print(out)
        return EXIT_OK if same else EXIT_RUNTIME
    _print(out)
    return EXIT_OK


def cmd_inspect(args) -> int:
    snaps = {s.t: s for s in load_snapshots(args.run_dir)}
    if args.iteration not in snaps:
        raise PersistenceError(f"no iteration {args.iteration} in {args.run_dir} "
                               f"(have {min(snaps) if snaps else '-'}..{max(snaps) if snaps else '-'})")
    s = snaps[args.iteration]
    _print({
        "t": s.t, "complete": s.complete,
        "training_set_size": len(s.training_set),
        "n_variants_in_training_set": sum(1 for q in s.training_set if VARIANT_ID.match(q)),
        "groups": [{"question_id": g.question_id, "pseudo_target": g.pseudo_target,
                    "score_s": g.score_s, "tie": g.tie_flag} for g in s.groups],
        "reflection": s.reflections[0].reasoning_weakness if s.reflections else None,
        "variants": [{"id": v.question.id, "origin_id": v.question.origin_id,
                      "body": v.question.body, "s": v.s_score, "r_diff": v.r_diff,
                      "r_sim": v.r_sim, "r_teacher": v.r_teacher} for v in s.variants],
        "metrics": dict(s.metrics),
    })
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttsr", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a test-time run")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="evaluate the final policy of a run")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--mode", default="greedy")
    p.add_argument("--k", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay", help="rebuild the report of a run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--verify", action="store_true", help="re-execute and compare bit for bit")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("inspect", help="summarise one iteration snapshot")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--iteration", type=int, required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RemoteError as exc:
        print(f"remote endpoint error: {exc}", file=sys.stderr)
        return EXIT_REMOTE
    except IterationError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_REMOTE if isinstance(exc.cause, RemoteError) else EXIT_RUNTIME
    except (PersistenceError, ValueError, RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
