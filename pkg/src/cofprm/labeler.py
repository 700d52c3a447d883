"""Monte Carlo step labels, dataset bundle assembly, and a synthetic twin.

A middle prefix gets labeled by drawing k completions, judging each
completed program against the problem's unit tests, and recording the
pass fraction. The final prefix of a trajectory is different in kind: its
program ran against real unit tests, so its 0/1 outcome is trusted and
goes into the meta pool, frozen. The synthetic generator reproduces this
train/meta structure with planted ground truth so correction quality can
be measured exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import cof, judge, policy, prm
from .cof import DecompositionError, PrefixState
from .corpus import LabeledPrefix, Problem, ProblemStore, Trajectory
from .judge import Limits
from .policy import PolicyError, PolicyRequest
from .util import derive_seed

log = logging.getLogger(__name__)

DEFAULT_K = 8


class LabelError(RuntimeError):
    """Label production or integrity failure.

    ``kind`` is 'degenerate' (no rollout produced a judgeable program) or
    'dangling' (a label row references a trajectory or step that does not
    exist in the provided data).
    """

    def __init__(self, kind: str, message: str) -> None:
        super().__init__(message)
        self.kind = kind


@dataclass(frozen=True)
class DatasetBundle:
    """Learnable mc rows and frozen unit_test rows, disjoint by construction."""

    train: tuple[LabeledPrefix, ...]
    meta: tuple[LabeledPrefix, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "meta", tuple(self.meta))
        train_keys = {(r.trajectory_id, r.step_index) for r in self.train}
        meta_keys = {(r.trajectory_id, r.step_index) for r in self.meta}
        overlap = train_keys & meta_keys
        if overlap:
            raise ValueError(f"train and meta rows overlap: {sorted(overlap)[:5]}")


def mc_label(
    prefix: PrefixState,
    problem: Problem,
    k: int,
    backend,
    limits: Limits = judge.DEFAULT_LIMITS,
    seed_base: int = 0,
    temperature: float = policy.MC_TEMPERATURE,
    binarize: bool = False,
    judge_vehicle: str = "subprocess",
    judge_workers: int = 1,
    retry_attempts: int = policy.RETRY_ATTEMPTS,
    retry_base_delay: float = policy.RETRY_BASE_DELAY,
) -> float:
    """Pass fraction over k completions of a non-final prefix.

    Rollout j uses seed seed_base + j. A rollout whose completion cannot
    be obtained counts as a failure; if every rollout fails that way the
    prefix is degenerate and raises instead of returning a fake 0.
    """
    if prefix.is_final:
        raise ValueError(
            f"prefix {prefix.trajectory_id}:{prefix.step_index} is final; "
            "final prefixes take unit test outcomes, not rollout estimates"
        )
    if k < 1:
        raise ValueError(f"rollout count must be >= 1, got {k}")
    prompt = cof.cof_prompt(problem)
    code = cof.prefix_code(prefix, problem)
    passes = 0
    obtained = 0
    for j in range(k):
        request = PolicyRequest(
            kind=policy.PREFIX_COMPLETION,
            prompt=prompt,
            prefix=code,
            temperature=temperature,
            seed=seed_base + j,
            problem_id=problem.id,
        )
        try:
            completion = policy.sample(
                request, backend, attempts=retry_attempts, base_delay=retry_base_delay
            )
        except PolicyError as exc:
            log.warning("rollout %d for %s:%d failed: %s",
                        j, prefix.trajectory_id, prefix.step_index, exc)
            continue
        if not completion.strip():
            continue
        obtained += 1
        verdict = judge.run(
            code + completion,
            problem.tests,
            limits=limits,
            workers=judge_workers,
            vehicle=judge_vehicle,
        )
        if verdict.passed:
            passes += 1
    if obtained == 0:
        raise LabelError(
            "degenerate",
            f"no usable completion in {k} rollouts for "
            f"{prefix.trajectory_id} step {prefix.step_index}",
        )
    value = passes / k
    if binarize:
        value = 1.0 if value >= 0.5 else 0.0
    return value


def build_bundle(
    trajectories: list[Trajectory],
    problems: ProblemStore,
    k: int = DEFAULT_K,
    backend=None,
    limits: Limits = judge.DEFAULT_LIMITS,
    seed: int = 0,
    binarize: bool = False,
    judge_vehicle: str = "subprocess",
    judge_workers: int = 1,
    retry_attempts: int = policy.RETRY_ATTEMPTS,
    retry_base_delay: float = policy.RETRY_BASE_DELAY,
) -> tuple[DatasetBundle, dict]:
    """Label every trajectory: n-1 mc train rows plus one unit_test meta row.

    Trajectories that fail to decompose or whose every prefix is
    degenerate are skipped and counted, never fatal. Features are filled
    at build time so the bundle is ready for training as returned.
    """
    train: list[LabeledPrefix] = []
    meta: list[LabeledPrefix] = []
    counts = {
        "trajectories": len(trajectories),
        "decomposed": 0,
        "skipped_decomposition": 0,
        "skipped_degenerate": 0,
        "train_rows": 0,
        "meta_rows": 0,
    }
    for traj in trajectories:
        problem = problems.get(traj.problem_id)
        try:
            decomp = cof.decompose(traj.source)
        except DecompositionError as exc:
            counts["skipped_decomposition"] += 1
            log.warning("trajectory %s skipped: %s", traj.id, exc)
            continue
        counts["decomposed"] += 1
        all_prefixes = cof.prefixes(problem, decomp, trajectory_id=traj.id)
        rows_here: list[LabeledPrefix] = []
        degenerate = False
        for prefix in all_prefixes[:-1]:
            seed_base = derive_seed(seed, "mc", traj.id, prefix.step_index)
            try:
                value = mc_label(
                    prefix,
                    problem,
                    k,
                    backend,
                    limits=limits,
                    seed_base=seed_base,
                    binarize=binarize,
                    judge_vehicle=judge_vehicle,
                    judge_workers=judge_workers,
                    retry_attempts=retry_attempts,
                    retry_base_delay=retry_base_delay,
                )
            except LabelError:
                degenerate = True
                break
            rows_here.append(
                LabeledPrefix(
                    trajectory_id=traj.id,
                    step_index=prefix.step_index,
                    label=value,
                    provenance="mc",
                    learnable=True,
                    features=prm.featurize(prefix, problem),
                )
            )
        if degenerate:
            counts["skipped_degenerate"] += 1
            log.warning("trajectory %s skipped: degenerate prefix", traj.id)
            continue
        final_prefix = all_prefixes[-1]
        verdict = judge.run(
            traj.source,
            problem.tests,
            limits=limits,
            workers=judge_workers,
            vehicle=judge_vehicle,
        )
        meta.append(
            LabeledPrefix(
                trajectory_id=traj.id,
                step_index=final_prefix.step_index,
                label=judge.final_label(verdict),
                provenance="unit_test",
                learnable=False,
                features=prm.featurize(final_prefix, problem),
            )
        )
        train.extend(rows_here)
    counts["train_rows"] = len(train)
    counts["meta_rows"] = len(meta)
    return DatasetBundle(train=tuple(train), meta=tuple(meta)), counts


def attach_features(
    rows: list[LabeledPrefix],
    trajectories: list[Trajectory],
    problems: ProblemStore,
) -> list[LabeledPrefix]:
    """Recompute features for label rows saved without them.

    Label files carry only identity and value; features are derived data
    and get rebuilt under the current schema whenever rows are loaded for
    training. Rows that already carry features pass through untouched.
    """
    by_id = {t.id: t for t in trajectories}
    prefix_cache: dict[str, dict[int, PrefixState]] = {}
    out: list[LabeledPrefix] = []
    for row in rows:
        if row.features is not None:
            out.append(row)
            continue
        traj = by_id.get(row.trajectory_id)
        if traj is None:
            raise LabelError(
                "dangling", f"label row references unknown trajectory {row.trajectory_id!r}"
            )
        problem = problems.get(traj.problem_id)
        if traj.id not in prefix_cache:
            decomp = cof.decompose(traj.source)
            prefix_cache[traj.id] = {
                p.step_index: p for p in cof.prefixes(problem, decomp, trajectory_id=traj.id)
            }
        prefix = prefix_cache[traj.id].get(row.step_index)
        if prefix is None:
            raise LabelError(
                "dangling",
                f"trajectory {traj.id!r} has no step {row.step_index}; was it relabeled?",
            )
        out.append(
            LabeledPrefix(
                trajectory_id=row.trajectory_id,
                step_index=row.step_index,
                label=row.label,
                provenance=row.provenance,
                learnable=row.learnable,
                features=prm.featurize(prefix, problem),
                y_true=row.y_true,
            )
        )
    return out


NOISE_KINDS = ("flip", "gauss")


@dataclass(frozen=True)
class SyntheticSpec:
    d: int = 8
    n_train: int = 200
    n_meta: int = 100
    noise: str = "flip"
    noise_param: float = 0.3
    binarize: bool = True
    seed: int = 0
    theta_star: tuple[float, ...] | None = None  # d weights plus bias; drawn if absent

    def __post_init__(self) -> None:
        if self.d < 1 or self.n_train < 1 or self.n_meta < 1:
            raise ValueError("dimensions and set sizes must be >= 1")
        if self.noise not in NOISE_KINDS:
            raise ValueError(f"noise must be one of {NOISE_KINDS}")
        if self.noise == "flip" and not (0.0 <= self.noise_param <= 1.0):
            raise ValueError("flip rate must lie in [0, 1]")
        if self.noise == "gauss" and self.noise_param < 0:
            raise ValueError("noise sigma must be >= 0")
        if self.theta_star is not None and len(self.theta_star) != self.d + 1:
            raise ValueError(f"theta_star needs d+1 = {self.d + 1} entries")


@dataclass(frozen=True)
class SyntheticBundle:
    bundle: DatasetBundle
    y_true_train: np.ndarray
    theta_star: np.ndarray


def make_synthetic(spec: SyntheticSpec) -> SyntheticBundle:
    """Planted-scorer dataset with noisy train labels and a clean meta set.

    Draw order under one seeded generator: theta_star (unless given),
    train features, train noise, meta features. True labels are
    sigmoid(theta_star . x), binarized at 0.5 when requested; meta labels
    are always the binarized truth because trusted rows are 0/1 outcomes.
    Ground truth rides along for evaluation only and never trains anything.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.theta_star is None:
        theta = np.concatenate([rng.normal(0.0, 1.5, size=spec.d), [0.0]])
    else:
        theta = np.asarray(spec.theta_star, dtype=np.float64)

    def true_probs(X: np.ndarray) -> np.ndarray:
        return prm._sigmoid(X @ theta[:-1] + theta[-1])

    X_train = rng.standard_normal((spec.n_train, spec.d))
    p_train = true_probs(X_train)
    y_true = (p_train > 0.5).astype(np.float64) if spec.binarize else p_train

    if spec.noise == "flip":
        flips = rng.random(spec.n_train) < spec.noise_param
        y_noisy = np.where(flips, 1.0 - y_true, y_true)
    else:
        y_noisy = np.clip(y_true + rng.normal(0.0, spec.noise_param, size=spec.n_train), 0.0, 1.0)

    X_meta = rng.standard_normal((spec.n_meta, spec.d))
    y_meta = (true_probs(X_meta) > 0.5).astype(np.float64)

    def feat(x: np.ndarray) -> prm.FeatureVector:
        # schema 0 marks injected raw features, not the code-derived schema
        return prm.FeatureVector(values=tuple(float(v) for v in x), schema_version=0)

    train_rows = tuple(
        LabeledPrefix(
            trajectory_id=f"synth-train-{i}",
            step_index=1,
            label=float(y_noisy[i]),
            provenance="mc",
            learnable=True,
            features=feat(X_train[i]),
            y_true=float(y_true[i]),
        )
        for i in range(spec.n_train)
    )
    meta_rows = tuple(
        LabeledPrefix(
            trajectory_id=f"synth-meta-{i}",
            step_index=1,
            label=float(y_meta[i]),
            provenance="unit_test",
            learnable=False,
            features=feat(X_meta[i]),
        )
        for i in range(spec.n_meta)
    )
    return SyntheticBundle(
        bundle=DatasetBundle(train=train_rows, meta=meta_rows),
        y_true_train=y_true,
        theta_star=theta,
    )
