"""Report rendering: which artifacts appear, and their tabular shapes."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import pytest

from cofprm import pipeline, report
from cofprm.config import RunConfig


def fast_cfg(**overrides) -> RunConfig:
    base = dict(
        judge_vehicle="inprocess",
        k=2,
        iterations=40,
        inner_lr=0.3,
        meta_lr=5.0,
        batch_size=8,
        trajectories_per_problem=1,
        n_candidates=2,
        synth_d=4,
        synth_n_train=24,
        synth_n_meta=16,
        seed=0,
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def real_run(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("real")
    pipeline.run_pipeline(fast_cfg(), run_dir)
    return run_dir


@pytest.fixture(scope="module")
def synth_run(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("synth")
    pipeline.run_pipeline(fast_cfg(meta_batch_size=16, iterations=150), run_dir, synth=True)
    return run_dir


def read_csv(path: Path) -> list[list[str]]:
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


class TestRealRun:
    def test_all_six_artifacts_render(self, real_run):
        written, consumed = report.render(real_run)
        assert set(written) == {
            "losses_png", "label_shift_png", "pass_rates_png",
            "trace_csv", "summary_csv", "candidates_csv",
        }
        assert set(consumed) == {
            "trace", "losses", "corrected_labels", "initial_labels",
            "summary", "results",
        }
        for path in written.values():
            assert path.exists() and path.stat().st_size > 0

    def test_pngs_are_pngs(self, real_run):
        for name in ("losses.png", "label_shift.png", "pass_rates.png"):
            header = (real_run / "report" / name).read_bytes()[:8]
            assert header == b"\x89PNG\r\n\x1a\n", name

    def test_trace_csv_has_one_row_per_iteration(self, real_run):
        rows = read_csv(real_run / "report" / "trace.csv")
        assert rows[0] == ["iteration", "train_loss", "meta_loss", "mean_abs_dy"]
        iterations = len((real_run / "correct" / "trace.jsonl").read_text().splitlines())
        assert len(rows) == iterations + 1
        assert [r[0] for r in rows[1:]] == [str(i) for i in range(1, iterations + 1)]

    def test_candidates_csv_covers_every_candidate(self, real_run):
        rows = read_csv(real_run / "report" / "candidates.csv")
        assert rows[0] == [
            "problem_id", "candidate_index", "aggregate",
            "decompose_failed", "selected", "passed",
        ]
        results = [json.loads(line) for line in
                   (real_run / "rerank" / "results.jsonl").read_text().splitlines()]
        assert len(rows) - 1 == sum(len(r["candidates"]) for r in results)
        by_problem: dict[str, list[list[str]]] = {}
        for row in rows[1:]:
            by_problem.setdefault(row[0], []).append(row)
        for problem_rows in by_problem.values():
            assert sum(int(r[4]) for r in problem_rows) == 1
            for r in problem_rows:
                assert (r[5] != "") == (r[4] == "1")

    def test_summary_csv_flattens_nested_keys(self, real_run):
        rows = read_csv(real_run / "report" / "summary.csv")
        assert rows[0] == ["metric", "value"]
        metrics = [r[0] for r in rows[1:]]
        assert "pass_at_1.overall" in metrics
        assert metrics == sorted(metrics)

    def test_render_is_idempotent(self, real_run):
        before = (real_run / "report" / "trace.csv").read_bytes()
        report.render(real_run)
        assert (real_run / "report" / "trace.csv").read_bytes() == before


class TestSynthRun:
    def test_rerank_artifacts_are_absent(self, synth_run):
        written, _ = report.render(synth_run)
        assert set(written) == {
            "losses_png", "label_shift_png", "trace_csv", "summary_csv",
        }
        assert not (synth_run / "report" / "pass_rates.png").exists()
        assert not (synth_run / "report" / "candidates.csv").exists()

    def test_summary_csv_carries_recovery_metrics(self, synth_run):
        rows = read_csv(synth_run / "report" / "summary.csv")
        metrics = {r[0]: r[1] for r in rows[1:]}
        assert set(metrics) == {
            "label_recovery.final_mae",
            "label_recovery.initial_mae",
            "label_recovery.ratio",
        }
        summary = json.loads((synth_run / "eval" / "summary.json").read_text())
        assert float(metrics["label_recovery.ratio"]) == pytest.approx(
            summary["label_recovery"]["ratio"]
        )


class TestPartialRuns:
    def test_empty_run_dir_renders_nothing(self, tmp_path):
        assert report.render(tmp_path) == ({}, {})
        assert not (tmp_path / "report").exists()

    def test_trace_alone_yields_single_panel_losses_and_csv(self, tmp_path):
        trace_dir = tmp_path / "correct"
        trace_dir.mkdir()
        lines = [
            {"iteration": i, "train_loss": 1.0 / i, "meta_loss": 2.0 / i, "mean_abs_dy": 0.01}
            for i in (1, 2, 3)
        ]
        (trace_dir / "trace.jsonl").write_text(
            "".join(json.dumps(r) + "\n" for r in lines)
        )
        written, consumed = report.render(tmp_path)
        assert set(written) == {"losses_png", "trace_csv"}
        assert set(consumed) == {"trace"}
        assert len(read_csv(written["trace_csv"])) == 4

    def test_mismatched_label_files_skip_the_shift_histogram(self, synth_run, tmp_path):
        run_dir = tmp_path / "r"
        (run_dir / "synth").mkdir(parents=True)
        (run_dir / "correct").mkdir()
        initial = (synth_run / "synth" / "train.jsonl").read_text().splitlines()
        (run_dir / "synth" / "train.jsonl").write_text("\n".join(initial[:2]) + "\n")
        (run_dir / "correct" / "corrected_labels.jsonl").write_text(
            "\n".join(initial[:3]) + "\n"
        )
        written, consumed = report.render(run_dir)
        assert "label_shift_png" not in written
        assert "corrected_labels" not in consumed
