"""Run-directory stage orchestration.

Every stage reads files from a run directory, writes files back into its
own subdirectory, and appends one provenance entry to manifest.jsonl.
Outputs that feed later runs (labels, results, summaries) are plain
JSON/JSONL with stable key order and carry no timestamps, so rerunning a
stage with the same config and inputs reproduces them byte for byte.
Timing lives only in the manifest.
"""

from __future__ import annotations

import dataclasses
import importlib.resources
import json
import logging
import os
import platform
import time
from pathlib import Path

import numpy as np

from . import __version__, cof, judge, labeler, meta, prm, rank
from .config import RunConfig, config_digest, config_text
from .corpus import (
    DEFAULT_SPLIT,
    ProblemStore,
    Trajectory,
    _iter_jsonl,
    _write_jsonl,
    load_labels,
    load_problems,
    load_trajectories,
    save_labels,
    save_problems,
    save_trajectories,
    temporal_split,
)
from .labeler import DatasetBundle, SyntheticSpec, make_synthetic
from .policy import (
    FULL_SOLUTION,
    HTTPBackend,
    PolicyError,
    PolicyRequest,
    StubBackend,
    StubSpec,
    SubprocessBackend,
    generate_candidates,
    load_template_bank,
    sample,
)
from .util import derive_seed, file_digest

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A stage ran and failed; exit code 1 territory."""


class MissingInputError(StageError):
    """A required input file is absent; exit code 2 territory."""

    def __init__(self, path: Path, hint: str) -> None:
        super().__init__(f"missing input: {path} (run `cofprm {hint}` first)")
        self.path = path
        self.hint = hint


def bundled_problems_path() -> Path:
    return Path(str(importlib.resources.files("cofprm") / "data" / "mini" / "problems.jsonl"))


def bundled_template_dir() -> Path:
    return Path(str(importlib.resources.files("cofprm") / "data" / "mini" / "templates"))


def problems_path(cfg: RunConfig) -> Path:
    return Path(cfg.problems) if cfg.problems else bundled_problems_path()


def make_backend(cfg: RunConfig):
    if cfg.backend == "stub":
        bank_dir = Path(cfg.template_dir) if cfg.template_dir else bundled_template_dir()
        bank = load_template_bank(bank_dir)
        return StubBackend(StubSpec(pass_probability=cfg.stub_pass_probability, template_bank=bank))
    if cfg.backend == "subprocess":
        if not cfg.command:
            raise StageError("backend=subprocess needs policy.command in the config")
        return SubprocessBackend(cfg.command, parallelism=cfg.parallelism)
    if not cfg.url:
        raise StageError("backend=http needs policy.url in the config")
    api_key = os.environ.get(cfg.api_key_env) if cfg.api_key_env else None
    return HTTPBackend(cfg.url, model=cfg.model, api_key=api_key, parallelism=cfg.parallelism)


def _store_from(path: Path) -> ProblemStore:
    store = ProblemStore()
    for problem in load_problems(path):
        store.add(problem)
    return store


def _need(path: Path, hint: str) -> Path:
    if not path.exists():
        raise MissingInputError(path, hint)
    return path


def _dump_json(payload: dict, path: Path) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# --- stages ----------------------------------------------------------------
#
# Each stage returns (inputs, outputs): name -> Path maps that the manifest
# digests. Paths inside the run directory follow <stage>/<file>.


def stage_ingest(cfg: RunConfig, run_dir: Path) -> tuple[dict, dict]:
    src = _need(problems_path(cfg), "ingest with [paths] problems pointing at a corpus")
    store = _store_from(src)
    train, test = temporal_split(store, DEFAULT_SPLIT)
    if not train or not test:
        raise StageError(
            f"temporal split left an empty side (train={len(train)}, test={len(test)})"
        )
    out = run_dir / "ingest"
    out.mkdir(parents=True, exist_ok=True)
    save_problems(train, out / "train_problems.jsonl")
    save_problems(test, out / "test_problems.jsonl")
    log.info("ingest: %d train, %d test problems", len(train), len(test))
    return {"problems": src}, {
        "train_problems": out / "train_problems.jsonl",
        "test_problems": out / "test_problems.jsonl",
    }


def stage_generate(cfg: RunConfig, run_dir: Path) -> tuple[dict, dict]:
    train_path = _need(run_dir / "ingest" / "train_problems.jsonl", "ingest")
    test_path = _need(run_dir / "ingest" / "test_problems.jsonl", "ingest")
    backend = make_backend(cfg)
    out = run_dir / "generate"
    out.mkdir(parents=True, exist_ok=True)

    trajectories: list[Trajectory] = []
    failed = 0
    for problem in load_problems(train_path):
        prompt = cof.cof_prompt(problem)
        for j in range(cfg.trajectories_per_problem):
            request = PolicyRequest(
                kind=FULL_SOLUTION,
                prompt=prompt,
                prefix="",
                temperature=cfg.trajectory_temperature,
                seed=derive_seed(cfg.seed, "traj", problem.id, j),
                problem_id=problem.id,
            )
            try:
                source = sample(request, backend)
            except PolicyError as exc:
                failed += 1
                log.warning("trajectory %s-t%d failed: %s", problem.id, j, exc)
                continue
            trajectories.append(
                Trajectory(id=f"{problem.id}-t{j}", problem_id=problem.id, source=source)
            )
    if not trajectories:
        raise StageError("policy backend produced no trajectories at all")
    save_trajectories(trajectories, out / "trajectories.jsonl")

    candidate_rows = []
    for problem in load_problems(test_path):
        sources = generate_candidates(
            problem,
            cfg.n_candidates,
            backend,
            seed_base=derive_seed(cfg.seed, "cand", problem.id),
            temperature=cfg.candidate_temperature,
        )
        for i, source in enumerate(sources):
            candidate_rows.append(
                {"problem_id": problem.id, "candidate_index": i, "source": source}
            )
    _write_jsonl(out / "candidates.jsonl", candidate_rows)
    log.info("generate: %d trajectories (%d failed), %d candidates", len(trajectories), failed, len(candidate_rows))
    return {"train_problems": train_path, "test_problems": test_path}, {
        "trajectories": out / "trajectories.jsonl",
        "candidates": out / "candidates.jsonl",
    }


def stage_decompose(cfg: RunConfig, run_dir: Path) -> tuple[dict, dict]:
    traj_path = _need(run_dir / "generate" / "trajectories.jsonl", "generate")
    out = run_dir / "decompose"
    out.mkdir(parents=True, exist_ok=True)
    step_rows = []
    failure_rows = []
    for traj in load_trajectories(traj_path):
        try:
            decomp = cof.decompose(traj.source)
        except cof.DecompositionError as exc:
            failure_rows.append({"trajectory_id": traj.id, "kind": exc.kind, "error": str(exc)})
            continue
        total = len(decomp.steps)
        for step in decomp.steps:
            step_rows.append(
                {
                    "trajectory_id": traj.id,
                    "problem_id": traj.problem_id,
                    "step_index": step.index,
                    "total_steps": total,
                    "name": step.name,
                    "docstring": step.docstring,
                    "line_span": list(step.line_span),
                    "text": step.text,
                }
            )
    _write_jsonl(out / "steps.jsonl", step_rows)
    _write_jsonl(out / "failures.jsonl", failure_rows)
    return {"trajectories": traj_path}, {
        "steps": out / "steps.jsonl",
        "failures": out / "failures.jsonl",
    }


def stage_label(cfg: RunConfig, run_dir: Path) -> tuple[dict, dict]:
    traj_path = _need(run_dir / "generate" / "trajectories.jsonl", "generate")
    train_problems = _need(run_dir / "ingest" / "train_problems.jsonl", "ingest")
    store = _store_from(train_problems)
    trajectories = load_trajectories(traj_path)
    backend = make_backend(cfg)
    bundle, counts = labeler.build_bundle(
        trajectories,
        store,
        k=cfg.k,
        backend=backend,
        limits=cfg.judge_limits(),
        seed=cfg.seed,
        binarize=cfg.binarize,
        judge_vehicle=cfg.judge_vehicle,
        judge_workers=cfg.judge_workers,
    )
    if not bundle.train or not bundle.meta:
        raise StageError(f"labeling produced an unusable bundle: {counts}")
    out = run_dir / "label"
    out.mkdir(parents=True, exist_ok=True)
    known = {t.id for t in trajectories}
    # Labels persist in the minimal schema; features are derived data and
    # get recomputed from the trajectories by whoever trains on them.
    save_labels(
        [dataclasses.replace(r, features=None) for r in bundle.train],
        out / "train.jsonl",
        known_trajectory_ids=known,
    )
    save_labels(
        [dataclasses.replace(r, features=None) for r in bundle.meta],
        out / "meta.jsonl",
        known_trajectory_ids=known,
    )
    _dump_json(counts, out / "counts.json")
    log.info("label: %s", counts)
    return {"trajectories": traj_path, "train_problems": train_problems}, {
        "train_labels": out / "train.jsonl",
        "meta_labels": out / "meta.jsonl",
        "counts": out / "counts.json",
    }


def stage_synth(cfg: RunConfig, run_dir: Path) -> tuple[dict, dict]:
    spec = SyntheticSpec(
        d=cfg.synth_d,
        n_train=cfg.synth_n_train,
        n_meta=cfg.synth_n_meta,
        noise=cfg.synth_noise,
        noise_param=cfg.synth_noise_param,
        seed=cfg.seed,
    )
    synth = make_synthetic(spec)
    out = run_dir / "synth"
    out.mkdir(parents=True, exist_ok=True)
    save_labels(synth.bundle.train, out / "train.jsonl")
    save_labels(synth.bundle.meta, out / "meta.jsonl")
    initial = np.array([r.label for r in synth.bundle.train])
    _dump_json(
        {
            "theta_star": [float(v) for v in synth.theta_star],
            "y_true_train": [float(v) for v in synth.y_true_train],
            "initial_mae": float(np.abs(initial - synth.y_true_train).mean()),
        },
        out / "truth.json",
    )
    return {}, {
        "train_labels": out / "train.jsonl",
        "meta_labels": out / "meta.jsonl",
        "truth": out / "truth.json",
    }


def _labels_dir(run_dir: Path) -> Path:
    # Real and synthetic chains fill the same slot; a run directory hosts
    # one chain, with real labels taking precedence if both exist.
    if (run_dir / "label" / "train.jsonl").exists():
        return run_dir / "label"
    return run_dir / "synth"


def _load_bundle(cfg: RunConfig, run_dir: Path, hint: str) -> tuple[DatasetBundle, dict]:
    labels = _labels_dir(run_dir)
    train_path = _need(labels / "train.jsonl", hint)
    meta_path = _need(labels / "meta.jsonl", hint)
    train_rows = load_labels(train_path)
    meta_rows = load_labels(meta_path)
    inputs = {"train_labels": train_path, "meta_labels": meta_path}
    if any(r.features is None for r in train_rows + meta_rows):
        traj_path = _need(run_dir / "generate" / "trajectories.jsonl", "generate")
        problems = _need(run_dir / "ingest" / "train_problems.jsonl", "ingest")
        trajectories = load_trajectories(traj_path)
        store = _store_from(problems)
        train_rows = labeler.attach_features(train_rows, trajectories, store)
        meta_rows = labeler.attach_features(meta_rows, trajectories, store)
        inputs["trajectories"] = traj_path
    return DatasetBundle(train=tuple(train_rows), meta=tuple(meta_rows)), inputs


def stage_correct(cfg: RunConfig, run_dir: Path) -> tuple[dict, dict]:
    bundle, inputs = _load_bundle(cfg, run_dir, "label (or synth)")
    trace = meta.correct(bundle, cfg.meta_config())
    out = run_dir / "correct"
    out.mkdir(parents=True, exist_ok=True)
    corrected = [
        dataclasses.replace(row, label=float(trace.final_labels[i]))
        for i, row in enumerate(bundle.train)
    ]
    # Synthetic rows keep their inline features; real rows stay minimal.
    stripped = [
        r if r.features is not None and r.features.schema_version == 0
        else dataclasses.replace(r, features=None)
        for r in corrected
    ]
    save_labels(stripped, out / "corrected_labels.jsonl")
    prm.save_params(trace.final_params, out / "params.json")
    _write_jsonl(
        out / "trace.jsonl",
        (
            {
                "iteration": i + 1,
                "train_loss": trace.train_loss[i],
                "meta_loss": trace.meta_loss[i],
                "mean_abs_dy": trace.mean_abs_dy[i],
            }
            for i in range(trace.iterations)
        ),
    )
    return inputs, {
        "corrected_labels": out / "corrected_labels.jsonl",
        "params": out / "params.json",
        "trace": out / "trace.jsonl",
    }


def stage_train(cfg: RunConfig, run_dir: Path) -> tuple[dict, dict]:
    if cfg.train_labels == "corrected":
        train_path = _need(run_dir / "correct" / "corrected_labels.jsonl", "correct")
    else:
        train_path = _need(_labels_dir(run_dir) / "train.jsonl", "label (or synth)")
    rows = load_labels(train_path)
    inputs = {"train_labels": train_path}
    if any(r.features is None for r in rows):
        traj_path = _need(run_dir / "generate" / "trajectories.jsonl", "generate")
        problems = _need(run_dir / "ingest" / "train_problems.jsonl", "ingest")
        rows = labeler.attach_features(rows, load_trajectories(traj_path), _store_from(problems))
        inputs["trajectories"] = traj_path
    X, y = prm.rows_to_arrays(rows)
    params, losses = meta.train_plain(
        X, y, cfg.meta_config(), optimizer=cfg.optimizer,
        schema_version=rows[0].features.schema_version,
    )
    out = run_dir / "train"
    out.mkdir(parents=True, exist_ok=True)
    prm.save_params(params, out / "params.json")
    _write_jsonl(
        out / "losses.jsonl",
        ({"iteration": i + 1, "loss": loss} for i, loss in enumerate(losses)),
    )
    return inputs, {"params": out / "params.json", "losses": out / "losses.jsonl"}


def stage_rerank(cfg: RunConfig, run_dir: Path) -> tuple[dict, dict]:
    params_path = _need(run_dir / "train" / "params.json", "train")
    candidates_path = _need(run_dir / "generate" / "candidates.jsonl", "generate")
    test_path = _need(run_dir / "ingest" / "test_problems.jsonl", "ingest")
    params = prm.load_params(params_path)
    store = _store_from(test_path)

    by_problem: dict[str, list[tuple[int, str]]] = {}
    for index, record in _iter_jsonl(candidates_path):
        pid = str(record["problem_id"])
        by_problem.setdefault(pid, []).append(
            (int(record["candidate_index"]), str(record["source"]))
        )

    result_rows = []
    for pid in store.ids():
        entries = sorted(by_problem.get(pid, []))
        if not entries:
            raise StageError(f"no candidates for test problem {pid!r}")
        sources = [src for _, src in entries]
        problem = store.get(pid)
        scores, selected = rank.rerank_problem(params, problem, sources, mode=cfg.mode)
        verdict = judge.run(
            sources[selected],
            problem.tests,
            limits=cfg.judge_limits(),
            workers=cfg.judge_workers,
            vehicle=cfg.judge_vehicle,
        )
        result_rows.append(
            {
                "problem_id": pid,
                "mode": cfg.mode,
                "selected_index": selected,
                "selected_passed": verdict.passed,
                "selected_per_test": list(verdict.per_test),
                "candidates": [
                    {
                        "candidate_index": s.candidate_index,
                        "aggregate": s.aggregate,
                        "step_scores": list(s.step_scores),
                        "decompose_failed": s.decompose_failed,
                    }
                    for s in scores
                ],
            }
        )
    out = run_dir / "rerank"
    out.mkdir(parents=True, exist_ok=True)
    _write_jsonl(out / "results.jsonl", result_rows)
    return {
        "params": params_path,
        "candidates": candidates_path,
        "test_problems": test_path,
    }, {"results": out / "results.jsonl"}


def stage_eval(cfg: RunConfig, run_dir: Path) -> tuple[dict, dict]:
    summary: dict = {}
    inputs: dict = {}

    results_path = run_dir / "rerank" / "results.jsonl"
    if results_path.exists():
        test_path = _need(run_dir / "ingest" / "test_problems.jsonl", "ingest")
        store = _store_from(test_path)
        results = []
        for index, record in _iter_jsonl(results_path):
            scores = tuple(
                rank.CandidateScore(
                    candidate_index=int(c["candidate_index"]),
                    step_scores=tuple(c["step_scores"]),
                    aggregate=float(c["aggregate"]),
                    mode=str(record["mode"]),
                    decompose_failed=bool(c["decompose_failed"]),
                )
                for c in record["candidates"]
            )
            # Wall time is timing, not outcome, so results.jsonl never
            # stores it; the reconstructed verdict reports zero.
            verdict = judge.Verdict(
                passed=bool(record["selected_passed"]),
                per_test=tuple(record["selected_per_test"]),
                wall_time_total=0.0,
            )
            results.append(
                rank.RerankResult(
                    problem_id=str(record["problem_id"]),
                    scores=scores,
                    selected_index=int(record["selected_index"]),
                    selected_verdict=verdict,
                )
            )
        summary["pass_at_1"] = rank.pass_at_1(results, store)
        inputs["results"] = results_path
        inputs["test_problems"] = test_path

    truth_path = run_dir / "synth" / "truth.json"
    corrected_path = run_dir / "correct" / "corrected_labels.jsonl"
    if truth_path.exists() and corrected_path.exists():
        truth = json.loads(truth_path.read_text(encoding="utf-8"))
        y_true = np.asarray(truth["y_true_train"], dtype=np.float64)
        corrected = np.array([r.label for r in load_labels(corrected_path)])
        if len(corrected) != len(y_true):
            raise StageError(
                f"corrected labels ({len(corrected)}) do not match truth ({len(y_true)})"
            )
        final_mae = float(np.abs(corrected - y_true).mean())
        initial_mae = float(truth["initial_mae"])
        summary["label_recovery"] = {
            "initial_mae": initial_mae,
            "final_mae": final_mae,
            "ratio": final_mae / initial_mae if initial_mae > 0 else None,
        }
        inputs["truth"] = truth_path
        inputs["corrected_labels"] = corrected_path

    if not summary:
        raise MissingInputError(results_path, "rerank (or the synth chain)")
    out = run_dir / "eval"
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(summary, out / "summary.json")
    return inputs, {"summary": out / "summary.json"}


def stage_report(cfg: RunConfig, run_dir: Path) -> tuple[dict, dict]:
    from . import report

    written, consumed = report.render(run_dir)
    if not written:
        raise MissingInputError(run_dir / "eval" / "summary.json", "eval")
    return consumed, written


STAGES = {
    "ingest": stage_ingest,
    "generate": stage_generate,
    "decompose": stage_decompose,
    "label": stage_label,
    "synth": stage_synth,
    "correct": stage_correct,
    "train": stage_train,
    "rerank": stage_rerank,
    "eval": stage_eval,
    "report": stage_report,
}

REAL_CHAIN = ("ingest", "generate", "decompose", "label", "correct", "train", "rerank", "eval", "report")
SYNTH_CHAIN = ("synth", "correct", "train", "eval", "report")


def run_stage(name: str, cfg: RunConfig, run_dir: Path) -> dict:
    """Run one stage and append its manifest entry; returns output paths."""
    if name not in STAGES:
        raise StageError(f"unknown stage {name!r}")
    run_dir.mkdir(parents=True, exist_ok=True)
    snapshot = run_dir / "config.ini"
    if not snapshot.exists():
        snapshot.write_text(config_text(cfg), encoding="utf-8")
    started = time.time()
    inputs, outputs = STAGES[name](cfg, run_dir)
    elapsed = time.time() - started
    entry = {
        "stage": name,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)) + "Z",
        "elapsed_s": round(elapsed, 3),
        "config_digest": config_digest(cfg),
        "inputs": {key: file_digest(path) for key, path in sorted(inputs.items())},
        "outputs": {key: str(path.relative_to(run_dir)) for key, path in sorted(outputs.items())},
        "output_digests": {key: file_digest(path) for key, path in sorted(outputs.items())},
        "versions": {
            "cofprm": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    with (run_dir / "manifest.jsonl").open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return outputs


def run_pipeline(cfg: RunConfig, run_dir: Path, synth: bool = False) -> dict:
    """Run a full chain; returns the union of stage outputs."""
    outputs: dict = {}
    for name in (SYNTH_CHAIN if synth else REAL_CHAIN):
        outputs.update(run_stage(name, cfg, run_dir))
    return outputs
