"""Figures and flat tables rendered from a run directory.

Everything here is read-only over stage outputs: whatever artifacts
exist get a figure or a CSV, whatever is absent is skipped, and the
caller learns both sides from the return value. Rendering uses the Agg
backend so it works headless.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .corpus import _iter_jsonl, load_labels  # noqa: E402

DPI = 120


def _read_trace(path: Path) -> dict[str, list[float]]:
    series: dict[str, list[float]] = {"iteration": [], "train_loss": [], "meta_loss": [], "mean_abs_dy": []}
    for index, record in _iter_jsonl(path):
        for key in series:
            series[key].append(float(record[key]))
    return series


def _fig_losses(out_dir: Path, trace: dict | None, plain: list[dict] | None) -> Path | None:
    panels = int(trace is not None) + int(plain is not None)
    if panels == 0:
        return None
    fig, axes = plt.subplots(1, panels, figsize=(5.2 * panels, 3.6), squeeze=False)
    col = 0
    if trace is not None:
        ax = axes[0][col]
        ax.plot(trace["iteration"], trace["train_loss"], label="train loss", lw=1.2)
        ax.plot(trace["iteration"], trace["meta_loss"], label="meta loss", lw=1.2)
        ax.set_xlabel("iteration")
        ax.set_ylabel("loss")
        ax.set_title("label correction")
        ax.legend(frameon=False)
        col += 1
    if plain is not None:
        ax = axes[0][col]
        ax.plot([r["iteration"] for r in plain], [r["loss"] for r in plain], lw=1.2, color="tab:green")
        ax.set_xlabel("iteration")
        ax.set_ylabel("loss")
        ax.set_title("scorer training")
    fig.tight_layout()
    path = out_dir / "losses.png"
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def _fig_label_shift(out_dir: Path, deltas: list[float], trace: dict | None) -> Path:
    panels = 1 + int(trace is not None)
    fig, axes = plt.subplots(1, panels, figsize=(5.2 * panels, 3.6), squeeze=False)
    ax = axes[0][0]
    ax.hist(deltas, bins=40, color="tab:blue")
    ax.set_xlabel("corrected - initial label")
    ax.set_ylabel("rows")
    ax.set_title("label shift")
    if trace is not None:
        ax = axes[0][1]
        ax.plot(trace["iteration"], trace["mean_abs_dy"], lw=1.2, color="tab:orange")
        ax.set_xlabel("iteration")
        ax.set_ylabel("mean |dY| per iteration")
        ax.set_title("correction activity")
    fig.tight_layout()
    path = out_dir / "label_shift.png"
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def _fig_pass_rates(out_dir: Path, pass_at_1: dict) -> Path:
    buckets = [k for k in ("overall", "easy", "medium", "hard", "unknown") if pass_at_1.get(k) is not None]
    values = [pass_at_1[k] for k in buckets]
    counts = pass_at_1.get("counts", {})
    fig, ax = plt.subplots(figsize=(1.4 + 1.2 * len(buckets), 3.6))
    bars = ax.bar(buckets, values, color="tab:blue")
    for bar, name in zip(bars, buckets):
        n = counts.get(name)
        tag = f"{bar.get_height():.1f}" + (f"\n(n={n})" if n else "")
        ax.annotate(tag, (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize=8)
    ax.set_ylim(0, 105)
    ax.set_ylabel("pass@1 (%)")
    ax.set_title("reranking accuracy")
    fig.tight_layout()
    path = out_dir / "pass_rates.png"
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def _flatten(prefix: str, value, rows: list[tuple[str, object]]) -> None:
    if isinstance(value, dict):
        for key in sorted(value):
            _flatten(f"{prefix}.{key}" if prefix else str(key), value[key], rows)
    else:
        rows.append((prefix, value))


def render(run_dir: Path) -> tuple[dict, dict]:
    """Render every figure and table the run's artifacts support.

    Returns (written, consumed): output name -> Path and input name -> Path.
    """
    run_dir = Path(run_dir)
    out_dir = run_dir / "report"
    written: dict = {}
    consumed: dict = {}

    trace_path = run_dir / "correct" / "trace.jsonl"
    trace = _read_trace(trace_path) if trace_path.exists() else None
    if trace is not None:
        consumed["trace"] = trace_path

    plain_path = run_dir / "train" / "losses.jsonl"
    plain = None
    if plain_path.exists():
        plain = [record for _, record in _iter_jsonl(plain_path)]
        consumed["losses"] = plain_path

    corrected_path = run_dir / "correct" / "corrected_labels.jsonl"
    initial_dir = run_dir / "label" if (run_dir / "label" / "train.jsonl").exists() else run_dir / "synth"
    initial_path = initial_dir / "train.jsonl"
    deltas = None
    if corrected_path.exists() and initial_path.exists():
        initial = load_labels(initial_path)
        corrected = load_labels(corrected_path)
        if len(initial) == len(corrected):
            deltas = [c.label - i.label for c, i in zip(corrected, initial)]
            consumed["corrected_labels"] = corrected_path
            consumed["initial_labels"] = initial_path

    summary_path = run_dir / "eval" / "summary.json"
    summary = None
    if summary_path.exists():
        summary = json.loads(summary_path.read_text(encoding="utf-8"))
        consumed["summary"] = summary_path

    results_path = run_dir / "rerank" / "results.jsonl"
    results = None
    if results_path.exists():
        results = [record for _, record in _iter_jsonl(results_path)]
        consumed["results"] = results_path

    if not consumed:
        return {}, {}
    out_dir.mkdir(parents=True, exist_ok=True)

    losses_png = _fig_losses(out_dir, trace, plain)
    if losses_png is not None:
        written["losses_png"] = losses_png
    if deltas is not None:
        written["label_shift_png"] = _fig_label_shift(out_dir, deltas, trace)
    if summary is not None and summary.get("pass_at_1"):
        written["pass_rates_png"] = _fig_pass_rates(out_dir, summary["pass_at_1"])

    if trace is not None:
        path = out_dir / "trace.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "train_loss", "meta_loss", "mean_abs_dy"])
            writer.writerows(
                zip(
                    (int(i) for i in trace["iteration"]),
                    trace["train_loss"],
                    trace["meta_loss"],
                    trace["mean_abs_dy"],
                )
            )
        written["trace_csv"] = path

    if summary is not None:
        rows: list[tuple[str, object]] = []
        _flatten("", summary, rows)
        path = out_dir / "summary.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            writer.writerows(rows)
        written["summary_csv"] = path

    if results is not None:
        path = out_dir / "candidates.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["problem_id", "candidate_index", "aggregate", "decompose_failed", "selected", "passed"]
            )
            for record in results:
                for cand in record["candidates"]:
                    chosen = cand["candidate_index"] == record["selected_index"]
                    writer.writerow(
                        [
                            record["problem_id"],
                            cand["candidate_index"],
                            f"{cand['aggregate']:.6f}",
                            int(cand["decompose_failed"]),
                            int(chosen),
                            int(record["selected_passed"]) if chosen else "",
                        ]
                    )
        written["candidates_csv"] = path

    return written, consumed
