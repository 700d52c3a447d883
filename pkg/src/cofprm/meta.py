"""Label correction by bi-level gradient descent, one inner step unrolled.

Each iteration takes a train batch B with learnable labels Y_B and a
trusted meta batch. The scorer takes one plain gradient step on B, the
stepped scorer is evaluated on the meta batch (mean BCE, no weight
decay), and the meta loss is differentiated through the inner step with
respect to the batch labels. Because the inner update is a single plain
gradient step, that derivative is closed form:

    dM/dy_i = (inner_lr / |B|) * (grad_theta' M  .  dz_i/dtheta)

with the logit Jacobian taken at the pre-step parameters. Labels move
against that gradient and are clipped back into [0, 1]; trusted labels
are never touched. With meta_lr = 0 the loop is exactly plain SGD
training, drawing the same batches, which is the supported baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import prm
from .corpus import LabeledPrefix
from .labeler import DatasetBundle
from .prm import AdamState, LossReport, ScorerParams
from .util import derive_seed


@dataclass(frozen=True)
class MetaConfig:
    inner_lr: float = 1e-4
    meta_lr: float = 1e-2
    weight_decay: float = 1e-2
    batch_size: int = 8
    meta_batch_size: int | None = None  # defaults to batch_size
    unroll_steps: int = 1
    iterations: int = 500
    seed: int = 0
    commit_inner: bool = True
    architecture: str = "linear"
    hidden: int = 16

    def __post_init__(self) -> None:
        if self.unroll_steps != 1:
            raise ValueError("only single-step unrolling is supported")
        if self.inner_lr <= 0:
            raise ValueError("inner_lr must be positive")
        if self.meta_lr < 0:
            raise ValueError("meta_lr must be >= 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.batch_size < 1 or self.iterations < 1:
            raise ValueError("batch_size and iterations must be >= 1")


@dataclass
class CorrectionTrace:
    train_loss: list[float]
    meta_loss: list[float]
    mean_abs_dy: list[float]
    final_labels: np.ndarray
    final_params: ScorerParams

    def __post_init__(self) -> None:
        if not (len(self.train_loss) == len(self.meta_loss) == len(self.mean_abs_dy)):
            raise ValueError("trace series must have equal lengths")

    @property
    def iterations(self) -> int:
        return len(self.train_loss)


def inner_step(
    params: ScorerParams, X: np.ndarray, y: np.ndarray, lr: float, weight_decay: float
) -> tuple[ScorerParams, LossReport]:
    """One plain gradient step on the batch; weight decay rides in the gradient."""
    report = prm.loss_and_grad(params, X, y, weight_decay)
    return prm.sgd_step(params, report.grad_theta, lr), report


def meta_loss(params: ScorerParams, X_meta: np.ndarray, y_meta: np.ndarray) -> float:
    """Mean BCE on trusted rows. No weight decay: the penalty would leak
    a label-independent term into every meta comparison."""
    return meta_loss_and_grad(params, X_meta, y_meta)[0]


def meta_loss_and_grad(
    params: ScorerParams, X_meta: np.ndarray, y_meta: np.ndarray
) -> tuple[float, np.ndarray]:
    if np.asarray(y_meta).size == 0:
        raise ValueError("meta pool is empty")
    report = prm.loss_and_grad(params, X_meta, y_meta, weight_decay=0.0)
    return report.loss, report.grad_theta


def hypergrad_labels(
    params: ScorerParams,
    X_b: np.ndarray,
    y_b: np.ndarray,
    X_meta: np.ndarray,
    y_meta: np.ndarray,
    inner_lr: float,
    weight_decay: float,
) -> np.ndarray:
    """Exact dM/dY_B through one unrolled inner step.

    The train loss is (1/|B|) sum BCE(z_i, y_i) + wd ||theta||^2, so
    d2L/dtheta dy_i = -(1/|B|) dz_i/dtheta and the chain rule collapses to
    a dot product per batch row. The penalty term carries no label
    dependence and drops out.
    """
    stepped, _ = inner_step(params, X_b, y_b, inner_lr, weight_decay)
    _, g_meta = meta_loss_and_grad(stepped, X_meta, y_meta)
    jac = prm.logit_jacobian(params, X_b)  # pre-step theta on purpose
    return (inner_lr / len(np.asarray(y_b).reshape(-1))) * (jac @ g_meta)


def batch_stream(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Endless batches, uniform without replacement within each epoch."""
    if n < 1:
        raise ValueError("cannot batch an empty set")
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start : start + batch_size]


def _validate_bundle(bundle: DatasetBundle) -> None:
    for row in bundle.train:
        if not row.learnable or row.provenance != "mc":
            raise ValueError(
                f"train row {row.trajectory_id}:{row.step_index} must be a learnable mc row"
            )
    for row in bundle.meta:
        if row.learnable or row.provenance != "unit_test":
            raise ValueError(
                f"meta row {row.trajectory_id}:{row.step_index} must be a frozen unit_test row"
            )


def correct(bundle: DatasetBundle, cfg: MetaConfig) -> CorrectionTrace:
    """Run the correction loop over a bundle whose rows carry features."""
    if not bundle.train:
        raise ValueError("bundle has no train rows")
    if not bundle.meta:
        raise ValueError("bundle has no meta rows")
    _validate_bundle(bundle)
    X_train, Y = prm.rows_to_arrays(bundle.train)
    X_meta, y_meta = prm.rows_to_arrays(bundle.meta)
    schema = bundle.train[0].features.schema_version

    params = prm.init_params(
        cfg.architecture,
        d=X_train.shape[1],
        h=cfg.hidden,
        init_seed=derive_seed(cfg.seed, "init"),
        schema_version=schema,
    )
    rng_train = np.random.default_rng(derive_seed(cfg.seed, "train-batches"))
    rng_meta = np.random.default_rng(derive_seed(cfg.seed, "meta-batches"))
    batches = batch_stream(len(Y), cfg.batch_size, rng_train)
    meta_bs = cfg.meta_batch_size or cfg.batch_size

    train_losses: list[float] = []
    meta_losses: list[float] = []
    label_shifts: list[float] = []
    for _ in range(cfg.iterations):
        b = next(batches)
        mb = rng_meta.integers(0, len(y_meta), size=meta_bs)
        stepped, report = inner_step(params, X_train[b], Y[b], cfg.inner_lr, cfg.weight_decay)
        m_loss, g_meta = meta_loss_and_grad(stepped, X_meta[mb], y_meta[mb])
        jac = prm.logit_jacobian(params, X_train[b])
        hyper = (cfg.inner_lr / len(b)) * (jac @ g_meta)
        updated = np.clip(Y[b] - cfg.meta_lr * hyper, 0.0, 1.0)
        label_shifts.append(float(np.abs(updated - Y[b]).mean()))
        Y[b] = updated
        train_losses.append(report.loss)
        meta_losses.append(m_loss)
        if cfg.commit_inner:
            params = stepped

    return CorrectionTrace(
        train_loss=train_losses,
        meta_loss=meta_losses,
        mean_abs_dy=label_shifts,
        final_labels=Y,
        final_params=params,
    )


def train_plain(
    X: np.ndarray,
    y: np.ndarray,
    cfg: MetaConfig,
    optimizer: str = "sgd",
    schema_version: int | None = None,
) -> tuple[ScorerParams, list[float]]:
    """Ordinary scorer training on fixed labels.

    Seed handling matches correct() exactly (same init stream, same batch
    stream), so correct() with meta_lr = 0 reproduces this bit for bit.
    """
    if optimizer not in ("sgd", "adam"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    params = prm.init_params(
        cfg.architecture,
        d=X.shape[1],
        h=cfg.hidden,
        init_seed=derive_seed(cfg.seed, "init"),
        schema_version=prm.FEATURE_SCHEMA_VERSION if schema_version is None else schema_version,
    )
    rng_train = np.random.default_rng(derive_seed(cfg.seed, "train-batches"))
    batches = batch_stream(len(y), cfg.batch_size, rng_train)
    adam = AdamState.fresh(params) if optimizer == "adam" else None
    losses: list[float] = []
    for _ in range(cfg.iterations):
        b = next(batches)
        report = prm.loss_and_grad(params, X[b], y[b], cfg.weight_decay)
        losses.append(report.loss)
        if optimizer == "sgd":
            params = prm.sgd_step(params, report.grad_theta, cfg.inner_lr)
        else:
            params, adam = prm.adam_step(params, report.grad_theta, cfg.inner_lr, adam)
    return params, losses
