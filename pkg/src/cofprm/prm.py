"""Step scorer: prefix featurization, sigmoid scoring heads, exact gradients.

Two tiny heads share one parameter layout convention (a flat float64
vector) so optimizer steps and the label correction loop stay
architecture-agnostic:

  linear  z = w.x + b                     weights = [w (d), b]
  mlp1    z = w2.tanh(W1 x + b1) + b2     weights = [W1 (h*d, row-major), b1, w2, b2]

The training loss is mean binary cross-entropy against soft labels plus
an L2 penalty on the whole parameter vector. Gradients are closed form
through the per-sample logit Jacobian; nothing here differentiates
numerically or via autograd.
"""

from __future__ import annotations

import json
import keyword
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import cof
from .corpus import LabeledPrefix, Problem
from .cof import DecompositionError, PrefixState

ARCHITECTURES = ("linear", "mlp1")

FEATURE_SCHEMA_VERSION = 1

# Schema v1, in order. Documented with rationale in FEATURES.md.
FEATURE_NAMES = (
    "fraction_completed",
    "step_count_log",
    "mean_step_tokens_log",
    "docstring_coverage",
    "identifier_overlap",
    "keyword_hits",
    "brackets_balanced",
    "triple_quotes_balanced",
    "is_final",
)
FEATURE_DIM = len(FEATURE_NAMES)

ALGO_KEYWORDS = (
    "sort", "heap", "graph", "queue", "stack", "search", "binary",
    "greedy", "prefix", "suffix", "count", "gcd", "mod", "hash",
    "recursion", "iterate", "dp", "memo", "index", "parse",
)

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_WORD_RE = re.compile(r"[A-Za-z]+")


@dataclass(frozen=True)
class FeatureVector:
    values: tuple[float, ...]
    schema_version: int = FEATURE_SCHEMA_VERSION

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("feature vector must be nonempty")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("feature values must be finite")

    def __len__(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


@dataclass(frozen=True)
class ScorerParams:
    architecture: str
    d: int
    h: int
    weights: np.ndarray  # flat, float64, layout per architecture
    init_seed: int = 0
    schema_version: int = FEATURE_SCHEMA_VERSION

    def __post_init__(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}")
        if self.d < 1:
            raise ValueError("feature dimension must be >= 1")
        if self.architecture == "mlp1" and self.h < 1:
            raise ValueError("hidden width must be >= 1")
        expected = param_count(self.architecture, self.d, self.h)
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.shape[0] != expected:
            raise ValueError(
                f"{self.architecture} scorer with d={self.d}, h={self.h} needs "
                f"{expected} weights, got shape {w.shape}"
            )
        object.__setattr__(self, "weights", w)

    def with_weights(self, weights: np.ndarray) -> "ScorerParams":
        return replace(self, weights=np.asarray(weights, dtype=np.float64))


@dataclass(frozen=True)
class LossReport:
    loss: float
    grad_theta: np.ndarray
    per_sample_residuals: np.ndarray  # sigmoid(z_i) - y_i


def param_count(architecture: str, d: int, h: int) -> int:
    if architecture == "linear":
        return d + 1
    if architecture == "mlp1":
        return d * h + h + h + 1
    raise ValueError(f"architecture must be one of {ARCHITECTURES}")


def init_params(
    architecture: str, d: int, h: int = 16, init_seed: int = 0,
    schema_version: int = FEATURE_SCHEMA_VERSION,
) -> ScorerParams:
    """Fresh parameters: weights uniform in [-0.1, 0.1), biases exactly zero."""
    rng = np.random.default_rng(init_seed)
    if architecture == "linear":
        weights = np.concatenate([rng.uniform(-0.1, 0.1, size=d), [0.0]])
    elif architecture == "mlp1":
        w1 = rng.uniform(-0.1, 0.1, size=h * d)
        w2 = rng.uniform(-0.1, 0.1, size=h)
        weights = np.concatenate([w1, np.zeros(h), w2, [0.0]])
    else:
        raise ValueError(f"architecture must be one of {ARCHITECTURES}")
    return ScorerParams(architecture, d, h, weights, init_seed, schema_version)


def _unpack_mlp1(params: ScorerParams) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    d, h = params.d, params.h
    w = params.weights
    w1 = w[: d * h].reshape(h, d)
    b1 = w[d * h : d * h + h]
    w2 = w[d * h + h : d * h + 2 * h]
    b2 = float(w[-1])
    return w1, b1, w2, b2


def logits(params: ScorerParams, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != params.d:
        raise ValueError(f"expected feature dimension {params.d}, got {X.shape[1]}")
    if params.architecture == "linear":
        return X @ params.weights[:-1] + params.weights[-1]
    w1, b1, w2, b2 = _unpack_mlp1(params)
    return np.tanh(X @ w1.T + b1) @ w2 + b2


def logit_jacobian(params: ScorerParams, X: np.ndarray) -> np.ndarray:
    """Rows are per-sample dz/dtheta in the flat weight layout."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    if params.architecture == "linear":
        return np.hstack([X, np.ones((n, 1))])
    w1, b1, w2, _ = _unpack_mlp1(params)
    a = np.tanh(X @ w1.T + b1)          # (n, h)
    s = (1.0 - a * a) * w2              # dz/du, (n, h)
    j_w1 = np.einsum("nh,nd->nhd", s, X).reshape(n, params.h * params.d)
    return np.hstack([j_w1, s, a, np.ones((n, 1))])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def score(params: ScorerParams, features: FeatureVector | np.ndarray) -> float:
    """Sigmoid of the logit, kept strictly inside (0, 1) for finite input."""
    x = features.as_array() if isinstance(features, FeatureVector) else np.asarray(features)
    if isinstance(features, FeatureVector) and features.schema_version != params.schema_version:
        raise ValueError(
            f"feature schema {features.schema_version} does not match "
            f"scorer schema {params.schema_version}"
        )
    z = float(logits(params, x.reshape(1, -1))[0])
    z = min(max(z, -36.0), 36.0)  # sigmoid saturates to exactly 0/1 past ~36 in float64
    return float(_sigmoid(np.array([z]))[0])


def scores(params: ScorerParams, X: np.ndarray) -> np.ndarray:
    z = np.clip(logits(params, X), -36.0, 36.0)
    return _sigmoid(z)


def loss_and_grad(
    params: ScorerParams, X: np.ndarray, y: np.ndarray, weight_decay: float = 0.0
) -> LossReport:
    """Mean BCE over the batch plus weight_decay * ||theta||^2, with its exact gradient.

    BCE is evaluated in logit form, softplus(z) - y z, which is finite for
    any finite logit. Residuals come back per sample because the label
    correction loop needs them.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"batch size mismatch: {X.shape[0]} feature rows, {y.shape[0]} labels")
    if X.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    if np.any((y < 0.0) | (y > 1.0)):
        raise ValueError("labels must lie in [0, 1]")
    z = logits(params, X)
    n = X.shape[0]
    bce = _softplus(z) - y * z
    theta = params.weights
    loss = float(bce.mean() + weight_decay * float(theta @ theta))
    residuals = _sigmoid(z) - y
    grad = logit_jacobian(params, X).T @ residuals / n + 2.0 * weight_decay * theta
    return LossReport(loss=loss, grad_theta=grad, per_sample_residuals=residuals)


def sgd_step(params: ScorerParams, grad: np.ndarray, lr: float) -> ScorerParams:
    return params.with_weights(params.weights - lr * np.asarray(grad, dtype=np.float64))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def fresh(cls, params: ScorerParams) -> "AdamState":
        z = np.zeros_like(params.weights)
        return cls(m=z.copy(), v=z.copy(), t=0)


def adam_step(
    params: ScorerParams,
    grad: np.ndarray,
    lr: float,
    state: AdamState,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ScorerParams, AdamState]:
    """Alternative update rule behind the same step interface as sgd_step."""
    g = np.asarray(grad, dtype=np.float64)
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    stepped = params.with_weights(params.weights - lr * m_hat / (np.sqrt(v_hat) + eps))
    return stepped, AdamState(m=m, v=v, t=t)


def save_params(params: ScorerParams, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "architecture": params.architecture,
        "d": params.d,
        "h": params.h,
        "weights": [float(w) for w in params.weights],
        "schema_version": params.schema_version,
        "init_seed": params.init_seed,
    }
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_params(path: str | Path) -> ScorerParams:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        return ScorerParams(
            architecture=payload["architecture"],
            d=int(payload["d"]),
            h=int(payload["h"]),
            weights=np.asarray(payload["weights"], dtype=np.float64),
            init_seed=int(payload["init_seed"]),
            schema_version=int(payload["schema_version"]),
        )
    except KeyError as exc:
        raise ValueError(f"checkpoint {path} is missing field {exc}") from None


def rows_to_arrays(rows: list[LabeledPrefix]) -> tuple[np.ndarray, np.ndarray]:
    """Stack features/labels from rows; every row must carry features."""
    if not rows:
        raise ValueError("no rows to assemble")
    missing = [r for r in rows if r.features is None]
    if missing:
        r = missing[0]
        raise ValueError(
            f"row {r.trajectory_id}:{r.step_index} has no features; featurize rows first"
        )
    dims = {len(r.features) for r in rows}
    if len(dims) != 1:
        raise ValueError(f"inconsistent feature dimensions in bundle: {sorted(dims)}")
    versions = {r.features.schema_version for r in rows}
    if len(versions) != 1:
        raise ValueError(f"inconsistent feature schema versions in bundle: {sorted(versions)}")
    X = np.stack([r.features.as_array() for r in rows])
    y = np.array([r.label for r in rows], dtype=np.float64)
    return X, y


def featurize(prefix: PrefixState, problem: Problem) -> FeatureVector:
    """Deterministic schema-v1 features for one prefix.

    Step statistics come from re-decomposing the prefix code; a prefix
    that does not decompose (possible only for the raw full-program
    wrapper used by outcome-only scoring) falls back to treating the
    whole code as one undocumented step.
    """
    code = cof.prefix_code(prefix, problem)
    try:
        decomp = cof.decompose(code)
        texts = [s.text for s in decomp.steps]
        docs = [s.docstring for s in decomp.steps]
    except DecompositionError:
        texts = [code]
        docs = [None]

    mean_tokens = sum(len(t.split()) for t in texts) / len(texts)
    coverage = sum(1 for doc in docs if doc) / len(docs)

    idents = {m.group(0) for m in _IDENT_RE.finditer(code)}
    idents -= set(keyword.kwlist)
    words = {m.group(0).lower() for m in _WORD_RE.finditer(problem.statement)}
    overlap = (sum(1 for i in idents if i.lower() in words) / len(idents)) if idents else 0.0

    lowered = code.lower()
    hits = sum(1 for k in ALGO_KEYWORDS if k in lowered) / len(ALGO_KEYWORDS)

    brackets = 1.0 if (
        code.count("(") == code.count(")")
        and code.count("[") == code.count("]")
        and code.count("{") == code.count("}")
    ) else 0.0
    quotes = 1.0 if (code.count('"""') % 2 == 0 and code.count("'''") % 2 == 0) else 0.0

    values = (
        prefix.step_index / prefix.total_steps,
        math.log1p(prefix.step_index),
        math.log1p(mean_tokens),
        coverage,
        overlap,
        hits,
        brackets,
        quotes,
        1.0 if prefix.is_final else 0.0,
    )
    return FeatureVector(values=values, schema_version=FEATURE_SCHEMA_VERSION)
