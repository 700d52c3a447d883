"""Data model and persistence for problems, trajectories, and step labels.

Everything on disk is JSONL, one record per line, so corpora stream and
append without rewrites. Dates are ISO-8601 calendar dates. The split
helper keeps a temporal gap: problems published between the two cutoffs
belong to neither side.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Iterator

if TYPE_CHECKING:
    from .prm import FeatureVector

DIFFICULTIES = ("easy", "medium", "hard", "unknown")
PROVENANCES = ("mc", "unit_test")


class CorpusError(ValueError):
    """Malformed record, duplicate id, or dangling reference."""


@dataclass(frozen=True)
class TestCase:
    input: str
    expected_output: str


@dataclass(frozen=True)
class Problem:
    id: str
    statement: str
    tests: tuple[TestCase, ...]
    published_at: date
    difficulty: str = "unknown"

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("problem id must be nonempty")
        if not self.tests:
            raise CorpusError(f"problem {self.id}: tests must be nonempty")
        if self.difficulty not in DIFFICULTIES:
            raise CorpusError(
                f"problem {self.id}: difficulty must be one of {DIFFICULTIES}, got {self.difficulty!r}"
            )


@dataclass(frozen=True)
class Trajectory:
    id: str
    problem_id: str
    source: str

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("trajectory id must be nonempty")
        if not self.source:
            raise CorpusError(f"trajectory {self.id}: source must be nonempty")


@dataclass(frozen=True)
class SplitSpec:
    train_before: date
    test_after: date

    def __post_init__(self) -> None:
        if self.train_before > self.test_after:
            raise CorpusError("train_before must not be later than test_after")


# Default contamination window: train strictly before the first cutoff,
# test strictly after the second, the gap in between dropped.
DEFAULT_SPLIT = SplitSpec(train_before=date(2024, 8, 1), test_after=date(2025, 2, 1))


@dataclass
class LabeledPrefix:
    """One scored step prefix: the training unit for the step scorer.

    ``provenance`` records where the value came from: ``mc`` rows hold
    Monte Carlo pass fractions and stay learnable; ``unit_test`` rows hold
    exact 0/1 outcomes of a full program against its tests and are frozen.
    ``features`` is filled lazily (or inline for synthetic rows) and is
    not part of the interchange schema.
    """

    trajectory_id: str
    step_index: int
    label: float
    provenance: str
    learnable: bool
    features: "FeatureVector | None" = None
    y_true: float | None = None  # synthetic rows only, evaluation use

    def __post_init__(self) -> None:
        if self.provenance not in PROVENANCES:
            raise CorpusError(
                f"label for {self.trajectory_id}: provenance must be one of {PROVENANCES}"
            )
        if not (0.0 <= self.label <= 1.0):
            raise CorpusError(
                f"label for {self.trajectory_id} step {self.step_index}: "
                f"value {self.label} outside [0, 1]"
            )
        if self.step_index < 1:
            raise CorpusError(
                f"label for {self.trajectory_id}: step_index must be >= 1"
            )
        if self.provenance == "unit_test":
            if self.label not in (0.0, 1.0):
                raise CorpusError(
                    f"label for {self.trajectory_id}: unit_test values must be exactly 0 or 1"
                )
            if self.learnable:
                raise CorpusError(
                    f"label for {self.trajectory_id}: unit_test rows must not be learnable"
                )


class ProblemStore:
    """Ordered, id-unique collection of problems."""

    def __init__(self, problems: Iterable[Problem] = ()) -> None:
        self._by_id: dict[str, Problem] = {}
        for p in problems:
            self.add(p)

    def add(self, problem: Problem) -> None:
        if problem.id in self._by_id:
            raise CorpusError(f"duplicate problem id {problem.id!r}")
        self._by_id[problem.id] = problem

    def get(self, problem_id: str) -> Problem:
        try:
            return self._by_id[problem_id]
        except KeyError:
            raise CorpusError(f"unknown problem id {problem_id!r}") from None

    def __contains__(self, problem_id: str) -> bool:
        return problem_id in self._by_id

    def __len__(self) -> int:
        return len(self._by_id)

    def __iter__(self) -> Iterator[Problem]:
        return iter(self._by_id.values())

    def ids(self) -> list[str]:
        return list(self._by_id)


def _require(record: dict, name: str, index: int):
    if name not in record:
        raise CorpusError(f"record {index}: missing field {name}")
    return record[name]


def _iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (1-based record number, parsed object) per non-blank line."""
    index = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            index += 1
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"record {index}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"record {index}: expected an object")
            yield index, obj


def _write_jsonl(path: str | Path, records: Iterable[dict]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
            n += 1
    return n


def _parse_date(raw: str, index: int) -> date:
    try:
        return date.fromisoformat(raw)
    except (TypeError, ValueError):
        raise CorpusError(f"record {index}: published_at must be an ISO date, got {raw!r}") from None


def problem_from_record(record: dict, index: int = 1) -> Problem:
    tests_raw = _require(record, "tests", index)
    if not isinstance(tests_raw, list) or not tests_raw:
        raise CorpusError(f"record {index}: tests must be a nonempty list")
    tests = []
    for t in tests_raw:
        if not isinstance(t, dict) or "input" not in t or "output" not in t:
            raise CorpusError(f"record {index}: each test needs input and output fields")
        tests.append(TestCase(input=str(t["input"]), expected_output=str(t["output"])))
    try:
        return Problem(
            id=str(_require(record, "id", index)),
            statement=str(_require(record, "statement", index)),
            tests=tuple(tests),
            published_at=_parse_date(_require(record, "published_at", index), index),
            difficulty=str(record.get("difficulty", "unknown")),
        )
    except CorpusError as exc:
        raise CorpusError(f"record {index}: {exc}") from None


def problem_to_record(problem: Problem) -> dict:
    return {
        "id": problem.id,
        "statement": problem.statement,
        "tests": [{"input": t.input, "output": t.expected_output} for t in problem.tests],
        "published_at": problem.published_at.isoformat(),
        "difficulty": problem.difficulty,
    }


def load_problems(path: str | Path, format: str = "jsonl") -> ProblemStore:
    if format != "jsonl":
        raise CorpusError(f"unsupported problem format {format!r}")
    store = ProblemStore()
    for index, record in _iter_jsonl(path):
        problem = problem_from_record(record, index)
        try:
            store.add(problem)
        except CorpusError:
            raise CorpusError(f"record {index}: duplicate problem id {problem.id!r}") from None
    return store


def save_problems(problems: Iterable[Problem], path: str | Path) -> int:
    return _write_jsonl(path, (problem_to_record(p) for p in problems))


def load_trajectories(path: str | Path) -> list[Trajectory]:
    out: list[Trajectory] = []
    seen: set[str] = set()
    for index, record in _iter_jsonl(path):
        t = Trajectory(
            id=str(_require(record, "id", index)),
            problem_id=str(_require(record, "problem_id", index)),
            source=str(_require(record, "source", index)),
        )
        if t.id in seen:
            raise CorpusError(f"record {index}: duplicate trajectory id {t.id!r}")
        seen.add(t.id)
        out.append(t)
    return out


def save_trajectories(trajectories: Iterable[Trajectory], path: str | Path) -> int:
    return _write_jsonl(
        path,
        ({"id": t.id, "problem_id": t.problem_id, "source": t.source} for t in trajectories),
    )


def label_to_record(row: LabeledPrefix) -> dict:
    rec = {
        "trajectory_id": row.trajectory_id,
        "step_index": row.step_index,
        "value": row.label,
        "provenance": row.provenance,
        "learnable": row.learnable,
    }
    # Optional extras carried only by synthetic bundles, whose features
    # cannot be recomputed from any trajectory text.
    if row.features is not None:
        rec["features"] = [float(v) for v in row.features.values]
        rec["feature_schema"] = row.features.schema_version
    if row.y_true is not None:
        rec["y_true"] = row.y_true
    return rec


def label_from_record(record: dict, index: int = 1) -> LabeledPrefix:
    features = None
    if "features" in record:
        from .prm import FeatureVector  # deferred, avoids an import cycle

        features = FeatureVector(
            values=tuple(float(v) for v in record["features"]),
            schema_version=int(record.get("feature_schema", 0)),
        )
    try:
        return LabeledPrefix(
            trajectory_id=str(_require(record, "trajectory_id", index)),
            step_index=int(_require(record, "step_index", index)),
            label=float(_require(record, "value", index)),
            provenance=str(_require(record, "provenance", index)),
            learnable=bool(_require(record, "learnable", index)),
            features=features,
            y_true=float(record["y_true"]) if "y_true" in record else None,
        )
    except CorpusError as exc:
        msg = str(exc)
        raise CorpusError(msg if msg.startswith("record ") else f"record {index}: {msg}") from None


def save_labels(
    rows: Iterable[LabeledPrefix],
    path: str | Path,
    known_trajectory_ids: set[str] | None = None,
) -> int:
    rows = list(rows)
    if known_trajectory_ids is not None:
        dangling = sorted({r.trajectory_id for r in rows} - known_trajectory_ids)
        if dangling:
            raise CorpusError(f"labels reference unknown trajectory ids: {', '.join(dangling)}")
    return _write_jsonl(path, (label_to_record(r) for r in rows))


def load_labels(path: str | Path) -> list[LabeledPrefix]:
    return [label_from_record(record, index) for index, record in _iter_jsonl(path)]


def temporal_split(store: ProblemStore, spec: SplitSpec = DEFAULT_SPLIT) -> tuple[list[Problem], list[Problem]]:
    """Split problems into (train, test) by publication date.

    Train takes dates strictly before ``train_before``, test takes dates
    strictly after ``test_after``. Anything in the closed gap is dropped.
    """
    train = [p for p in store if p.published_at < spec.train_before]
    test = [p for p in store if p.published_at > spec.test_after]
    return train, test


def normalize_output(text: str) -> str:
    """Canonical form for program output comparison.

    Trailing whitespace is stripped from every line and trailing blank
    lines are dropped; nothing else changes. Internal whitespace stays
    significant.
    """
    lines = [line.rstrip() for line in text.splitlines()]
    while lines and lines[-1] == "":
        lines.pop()
    return "\n".join(lines)
