"""Fitting the volume-preserving network so class invariants vanish on ID data.

Training minimizes the mean squared norm of the invariant outputs over the
labeled embeddings.  The volume-preserving structure of the network rules out
the degenerate solution of contracting everything to a constant, so no
penalty term is needed; the layers keep their unimodular Jacobians at every
step by construction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import cvpn
from .data import LabeledEmbeddingSet, require_min_class_size
from .errors import ContractError, NumericError
from .optim import adam_init, adam_update


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    iterations: int = 5000
    batch_size: int = 128
    seed: int = 0
    variance_percent: float = 2.0
    num_blocks: int = 4
    hidden_width: int = 32

    def __post_init__(self):
        if not 0.0 < self.variance_percent < 100.0:
            raise ContractError("variance_percent must lie in (0, 100)")
        if self.iterations < 1:
            raise ContractError("iterations must be positive")
        if self.batch_size < 1:
            raise ContractError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")


def select_num_invariants(data: LabeledEmbeddingSet, variance_percent: float) -> int:
    """Pick the invariant count from per-class PCA spectra.

    For each class, count how many of the smallest covariance eigenvalues
    jointly hold less than ``variance_percent`` percent of the total variance;
    the result is the rounded (half-up) mean over classes, clamped to
    [1, D-1].  A degenerate class (zero total variance) contributes D-1 with
    a warning.
    """
    if not 0.0 < variance_percent < 100.0:
        raise ContractError("variance_percent must lie in (0, 100)")
    require_min_class_size(data, 2)
    dim = data.dim
    fraction = variance_percent / 100.0

    per_class = []
    for label in range(data.class_count):
        pts = data.class_points(label)
        mu = pts.mean(axis=0)
        diff = pts - mu
        cov = diff.T @ diff / len(pts)
        evals = np.linalg.eigvalsh(cov)  # ascending
        total = float(evals.sum())
        if total <= 0.0:
            warnings.warn(f"class {label} is degenerate (zero variance); using K={dim - 1}")
            per_class.append(dim - 1)
            continue
        cum = np.cumsum(evals) / total
        per_class.append(int(np.sum(cum < fraction)))

    mean_k = float(np.mean(per_class))
    k = int(np.floor(mean_k + 0.5))  # round half up
    return max(1, min(dim - 1, k))


def invariant_loss(model, embeddings, labels) -> float:
    """Mean squared invariant norm over a batch."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[0] == 0:
        raise ContractError("invariant_loss needs a non-empty (N, D) batch")
    g = cvpn.invariants_batch(model, embeddings, labels)
    return float(np.mean(np.sum(g * g, axis=1)))


def _batch_loss_fn(model, batch_x, batch_y):
    scale = 1.0 / batch_x.shape[0]

    def loss(P):
        out = cvpn.apply_blocks(model, P, batch_x, batch_y)
        g = ad.narrow(out, 0, model.num_invariants)
        return ad.mul(ad.sumsq(g), scale)

    return loss


def train_cvpn(model, data: LabeledEmbeddingSet, cfg: TrainConfig):
    """Minimize the invariant loss in place; returns (model, loss history).

    The history is an ``(iterations, 2)`` array of (iteration, batch loss
    before the update).  Identical seeds give identical histories.
    """
    if data.dim != model.dim:
        raise ContractError(f"data dimension {data.dim} does not match model dim {model.dim}")
    if data.class_count > model.class_count:
        raise ContractError("data has more classes than the model")
    if len(data) == 0:
        raise ContractError("cannot train on an empty embedding set")

    rng = np.random.default_rng(cfg.seed)
    state = adam_init(model.params)
    n = len(data)
    bs = min(cfg.batch_size, n)
    history = np.empty((cfg.iterations, 2))

    for it in range(cfg.iterations):
        idx = rng.choice(n, size=bs, replace=False)
        loss_fn = _batch_loss_fn(model, data.embeddings[idx], data.labels[idx])
        try:
            loss, grads = ad.eval_and_grad(loss_fn, model.params)
        except NumericError as err:
            raise NumericError(f"training aborted at iteration {it}: {err}") from err
        history[it, 0] = it
        history[it, 1] = loss
        adam_update(model.params, grads, state, cfg.learning_rate)
    return model, history
