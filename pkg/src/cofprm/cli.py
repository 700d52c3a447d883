"""Command line entry points.

One command per pipeline stage plus a few one-off helpers (judge a
single program, label a single prefix, dump the instruction prompt).
Every command accepts the same run-context flags after its full
subcommand path; results print as text, or as one JSON object with
--json. Exit codes: 0 success, 1 a stage or contract failure, 2 a
missing input file (the message names the path).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, cof, judge, labeler, pipeline
from .config import ConfigError, RunConfig, apply_overrides, config_text, load_config
from .corpus import CorpusError, load_problems, load_trajectories
from .judge import JudgeEnvironmentError, Limits
from .labeler import LabelError
from .pipeline import REAL_CHAIN, SYNTH_CHAIN, MissingInputError, StageError, run_stage
from .policy import PolicyError
from .util import derive_seed, parse_duration

log = logging.getLogger(__name__)

_DEFAULTS = {
    "config": None,
    "runs_dir": "runs",
    "run_id": "run",
    "set": [],
    "seed": None,
    "json": False,
    "verbose": False,
}


def _common() -> argparse.ArgumentParser:
    # SUPPRESS keeps nested subparsers from clobbering values parsed at an
    # outer level; unset options fall back to _DEFAULTS after parsing.
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS,
                        help="INI config file (defaults apply when omitted)")
    parser.add_argument("--runs-dir", metavar="DIR", default=argparse.SUPPRESS,
                        help="directory that holds run directories (default: runs)")
    parser.add_argument("--run-id", metavar="ID", default=argparse.SUPPRESS,
                        help="run directory name under --runs-dir (default: run)")
    parser.add_argument("--set", metavar="FIELD=VALUE", action="append",
                        default=argparse.SUPPRESS, help="override one config field; repeatable")
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="shorthand for --set seed=N")
    parser.add_argument("--json", action="store_true", default=argparse.SUPPRESS,
                        help="print a machine-readable JSON result")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log stage progress to stderr")
    return parser


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="cofprm", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cofprm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, blurb in (
        ("ingest", "load the problem corpus and write the temporal split"),
        ("generate", "sample trajectories and reranking candidates"),
        ("decompose", "split trajectories into function steps"),
        ("synth", "write a synthetic labeled bundle with planted truth"),
        ("correct", "run label correction over the labeled bundle"),
        ("rerank", "score and select candidates, judging each selection"),
        ("eval", "summarize reranking accuracy and label recovery"),
        ("report", "render figures and CSV tables from run artifacts"),
    ):
        sub.add_parser(name, parents=[common], help=blurb)

    label = sub.add_parser("label", parents=[common], help="Monte Carlo label the trajectory prefixes")
    label_sub = label.add_subparsers(dest="label_command")
    label_mc = label_sub.add_parser("mc", parents=[common], help="label one prefix and print the value")
    label_mc.add_argument("--trajectories", metavar="PATH", required=True)
    label_mc.add_argument("--problems", metavar="PATH", default=None,
                          help="problem corpus (default: the bundled one)")
    label_mc.add_argument("--trajectory", metavar="ID", required=True)
    label_mc.add_argument("--step", type=int, required=True, help="1-based step index")

    train = sub.add_parser("train", parents=[common], help="train the scorer on stored labels")
    train_sub = train.add_subparsers(dest="train_command")
    train_sub.add_parser("correct", parents=[common],
                         help="alias for the correct stage")

    pipe = sub.add_parser("pipeline", parents=[common], help="run the full stage chain")
    pipe.add_argument("--synth", action="store_true", default=False,
                      help="run the synthetic chain instead of the corpus chain")

    jdg = sub.add_parser("judge", help="judging helpers")
    jdg_sub = jdg.add_subparsers(dest="judge_command", required=True)
    jrun = jdg_sub.add_parser("run", parents=[common], help="judge one program; exit 0 iff it passes")
    jrun.add_argument("--problem", metavar="ID", required=True)
    jrun.add_argument("--source", metavar="FILE", required=True)
    jrun.add_argument("--problems", metavar="PATH", default=None)
    jrun.add_argument("--time", metavar="DUR", default=None,
                      help="per-test wall clock limit, e.g. 5s or 500ms")
    jrun.add_argument("--memory", type=int, metavar="MIB", default=None)
    jrun.add_argument("--workers", type=int, default=None)
    jrun.add_argument("--vehicle", choices=judge.VEHICLES, default=None)

    cof_cmd = sub.add_parser("cof", help="decomposition helpers")
    cof_sub = cof_cmd.add_subparsers(dest="cof_command", required=True)
    cof_sub.add_parser("prompt", parents=[common], help="print the instruction block, byte exact")

    sub.add_parser("config", parents=[common], help="print the effective configuration")
    return parser


def _context(args: argparse.Namespace) -> dict:
    ns = dict(_DEFAULTS)
    ns.update({k: v for k, v in vars(args).items() if v is not argparse.SUPPRESS})
    return ns


def _load(ns: dict) -> tuple[RunConfig, Path]:
    cfg = load_config(ns["config"])
    if ns["set"]:
        cfg = apply_overrides(cfg, ns["set"])
    if ns["seed"] is not None:
        cfg = apply_overrides(cfg, [f"seed={ns['seed']}"])
    return cfg, Path(ns["runs_dir"]) / ns["run_id"]


def _emit(ns: dict, human: str, payload: dict) -> None:
    if ns["json"]:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(human)


def _stage(name: str, ns: dict) -> int:
    cfg, run_dir = _load(ns)
    outputs = run_stage(name, cfg, run_dir)
    listing = ", ".join(str(p) for p in outputs.values())
    _emit(ns, f"{name}: wrote {listing}",
          {"stage": name, "run_dir": str(run_dir),
           "outputs": {k: str(v) for k, v in sorted(outputs.items())}})
    return 0


def _cmd_pipeline(args: argparse.Namespace, ns: dict) -> int:
    cfg, run_dir = _load(ns)
    chain = SYNTH_CHAIN if args.synth else REAL_CHAIN
    all_outputs: dict = {}
    for name in chain:
        outputs = run_stage(name, cfg, run_dir)
        all_outputs.update({f"{name}.{k}": str(v) for k, v in outputs.items()})
        if not ns["json"]:
            print(f"{name}: ok")
    _emit(ns, f"pipeline: {len(chain)} stages into {run_dir}",
          {"run_dir": str(run_dir), "stages": list(chain), "outputs": all_outputs})
    return 0


def _cmd_label_mc(args: argparse.Namespace, ns: dict) -> int:
    cfg, _ = _load(ns)
    trajectories = load_trajectories(_existing(Path(args.trajectories)))
    problems_path = Path(args.problems) if args.problems else pipeline.bundled_problems_path()
    store = load_problems(_existing(problems_path))
    by_id = {t.id: t for t in trajectories}
    if args.trajectory not in by_id:
        raise StageError(f"trajectory {args.trajectory!r} not in {args.trajectories}")
    traj = by_id[args.trajectory]
    problem = store.get(traj.problem_id)
    decomp = cof.decompose(traj.source)
    prefix_by_step = {
        p.step_index: p for p in cof.prefixes(problem, decomp, trajectory_id=traj.id)
    }
    if args.step not in prefix_by_step:
        raise StageError(
            f"trajectory {traj.id!r} has steps 1..{len(decomp.steps)}, not {args.step}"
        )
    value = labeler.mc_label(
        prefix_by_step[args.step],
        problem,
        cfg.k,
        pipeline.make_backend(cfg),
        limits=cfg.judge_limits(),
        seed_base=derive_seed(cfg.seed, "mc", traj.id, args.step),
        binarize=cfg.binarize,
        judge_vehicle=cfg.judge_vehicle,
        judge_workers=cfg.judge_workers,
    )
    _emit(ns, f"{value}", {"trajectory_id": traj.id, "step_index": args.step,
                           "k": cfg.k, "value": value})
    return 0


def _existing(path: Path) -> Path:
    if not path.exists():
        raise MissingInputError(path, "the command that produces it")
    return path


def _cmd_judge_run(args: argparse.Namespace, ns: dict) -> int:
    cfg, _ = _load(ns)
    problems_path = Path(args.problems) if args.problems else pipeline.bundled_problems_path()
    store = load_problems(_existing(problems_path))
    source_path = _existing(Path(args.source))
    if args.problem not in store:
        raise StageError(f"problem {args.problem!r} not in {problems_path}")
    problem = store.get(args.problem)
    limits = Limits(
        wall_time_per_test=parse_duration(args.time) if args.time else cfg.time_limit,
        memory_bytes=(args.memory or cfg.memory_mib) * 1024 * 1024,
        max_output_bytes=cfg.output_limit_bytes,
    )
    verdict = judge.run(
        source_path.read_text(encoding="utf-8"),
        problem.tests,
        limits=limits,
        workers=args.workers or cfg.judge_workers,
        vehicle=args.vehicle or cfg.judge_vehicle,
    )
    outcome = "passed" if verdict.passed else "failed"
    _emit(ns, f"{args.problem}: {outcome} [{', '.join(verdict.per_test)}]",
          {"problem_id": args.problem, "passed": verdict.passed,
           "per_test": list(verdict.per_test)})
    return 0 if verdict.passed else 1


def _dispatch(args: argparse.Namespace, ns: dict) -> int:
    command = args.command
    if command in ("ingest", "generate", "decompose", "synth", "correct", "rerank", "eval", "report"):
        return _stage(command, ns)
    if command == "label":
        if getattr(args, "label_command", None) == "mc":
            return _cmd_label_mc(args, ns)
        return _stage("label", ns)
    if command == "train":
        if getattr(args, "train_command", None) == "correct":
            return _stage("correct", ns)
        return _stage("train", ns)
    if command == "pipeline":
        return _cmd_pipeline(args, ns)
    if command == "judge":
        return _cmd_judge_run(args, ns)
    if command == "cof":
        sys.stdout.write(cof.prompt_text())
        return 0
    if command == "config":
        cfg, _ = _load(ns)
        sys.stdout.write(config_text(cfg))
        return 0
    raise StageError(f"unhandled command {command!r}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    ns = _context(args)
    logging.basicConfig(
        level=logging.INFO if ns["verbose"] else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return _dispatch(args, ns)
    except MissingInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc.filename or exc}", file=sys.stderr)
        return 2
    except (
        StageError,
        ConfigError,
        CorpusError,
        PolicyError,
        LabelError,
        JudgeEnvironmentError,
        cof.DecompositionError,
        ValueError,
    ) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
