"""Best-of-N candidate selection with a step scorer, and pass@1 accounting.

Two scoring modes: ``prm_mean`` averages the scorer over every step
prefix of a candidate; ``orm`` scores only the full program. A candidate
that cannot be decomposed is not an error in prm_mean mode, it simply
scores 0.0 and carries a flag. Selection is argmax with lowest-index
tie-breaking, so results are reproducible under reordering of equal
scores.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import cof, prm
from .cof import DecompositionError, PrefixState
from .corpus import Problem, ProblemStore
from .judge import Verdict
from .prm import ScorerParams

PRM_MEAN = "prm_mean"
ORM = "orm"
MODES = (PRM_MEAN, ORM)


@dataclass(frozen=True)
class CandidateScore:
    candidate_index: int
    step_scores: tuple[float, ...]
    aggregate: float
    mode: str
    decompose_failed: bool = False


@dataclass(frozen=True)
class RerankResult:
    problem_id: str
    scores: tuple[CandidateScore, ...]
    selected_index: int
    selected_verdict: Verdict | None = None


def score_candidate(
    params: ScorerParams,
    problem: Problem,
    source: str,
    mode: str = PRM_MEAN,
    candidate_index: int = 0,
) -> CandidateScore:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == ORM and not source.strip():
        raise ValueError("orm mode needs a nonempty source")
    try:
        decomp = cof.decompose(source)
    except DecompositionError:
        if mode == PRM_MEAN:
            return CandidateScore(candidate_index, (), 0.0, mode, decompose_failed=True)
        # Outcome-only scoring still works on flat text: wrap the whole
        # program as a single final pseudo-step.
        pseudo = PrefixState(
            problem_id=problem.id,
            trajectory_id="",
            step_index=1,
            total_steps=1,
            text=problem.statement + "\n\n" + source,
            is_final=True,
        )
        value = prm.score(params, prm.featurize(pseudo, problem))
        return CandidateScore(candidate_index, (value,), value, mode, decompose_failed=True)

    all_prefixes = cof.prefixes(problem, decomp)
    if mode == ORM:
        all_prefixes = all_prefixes[-1:]
    step_scores = tuple(prm.score(params, prm.featurize(p, problem)) for p in all_prefixes)
    aggregate = sum(step_scores) / len(step_scores)
    return CandidateScore(candidate_index, step_scores, aggregate, mode)


def select(scores: list[CandidateScore] | tuple[CandidateScore, ...]) -> int:
    """Index of the highest aggregate; first one wins a tie."""
    if not scores:
        raise ValueError("no candidates to select from")
    best = 0
    for i, cand in enumerate(scores):
        if cand.aggregate > scores[best].aggregate:
            best = i
    return best


def rerank_problem(
    params: ScorerParams,
    problem: Problem,
    sources: list[str],
    mode: str = PRM_MEAN,
) -> tuple[tuple[CandidateScore, ...], int]:
    if not sources:
        raise ValueError(f"problem {problem.id}: no candidates to rerank")
    scored = tuple(
        score_candidate(params, problem, src, mode=mode, candidate_index=i)
        for i, src in enumerate(sources)
    )
    return scored, select(scored)


def pass_at_1(results: list[RerankResult], problems: ProblemStore) -> dict:
    """Percentage of problems whose selected candidate passed, with a
    per-difficulty breakdown. Buckets with no problems report None."""
    if not results:
        raise ValueError("no rerank results to evaluate")
    seen: set[str] = set()
    passed: dict[str, int] = {"easy": 0, "medium": 0, "hard": 0, "unknown": 0}
    totals: dict[str, int] = {"easy": 0, "medium": 0, "hard": 0, "unknown": 0}
    for result in results:
        if result.problem_id in seen:
            raise ValueError(f"duplicate rerank result for problem {result.problem_id!r}")
        seen.add(result.problem_id)
        if result.selected_verdict is None:
            raise ValueError(
                f"problem {result.problem_id!r}: selected candidate was never judged"
            )
        difficulty = problems.get(result.problem_id).difficulty
        totals[difficulty] += 1
        if result.selected_verdict.passed:
            passed[difficulty] += 1

    def pct(part: int, whole: int) -> float | None:
        return 100.0 * part / whole if whole else None

    total = sum(totals.values())
    summary = {
        "overall": pct(sum(passed.values()), total),
        "easy": pct(passed["easy"], totals["easy"]),
        "medium": pct(passed["medium"], totals["medium"]),
        "hard": pct(passed["hard"], totals["hard"]),
        "counts": {k: totals[k] for k in ("easy", "medium", "hard", "unknown") if totals[k]},
    }
    if totals["unknown"]:
        summary["unknown"] = pct(passed["unknown"], totals["unknown"])
    return summary
