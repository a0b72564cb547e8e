"""Boundary outlier synthesis by rejection sampling in invariant space.

Proposals are drawn from each class's fitted (lam-inflated) Gaussian and kept
only when their log-density falls below the class's acceptance threshold: the
``q``-quantile of the log-densities the training points achieved under the
same Gaussian.  Accepted invariant-space points are mapped back to embedding
space through the exact inverse of the network.

Because the proposal covariance is the regularized one, raising ``lam``
inflates precisely the collapsed invariant dimensions, pushing accepted
samples further off the class manifold; the threshold recalibrates itself
from the training quantiles at every ``lam``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import cvpn
from .density import log_density_v
from .errors import ContractError, SamplingError


@dataclass
class OutlierSet:
    """Synthesized outliers with their sampling metadata."""

    embeddings: np.ndarray     # (N, D)
    labels: np.ndarray         # (N,)
    log_densities: np.ndarray  # (N,) invariant-space log-density at acceptance
    lam: float
    q: float
    seed: int
    attempts: np.ndarray       # (C,) proposals drawn per class

    def __len__(self):
        return self.embeddings.shape[0]

    @property
    def dim(self):
        return self.embeddings.shape[1]


def acceptance_threshold(bank, label, q) -> float:
    """The q-quantile of the class's training log-densities."""
    if not 0.0 < q < 1.0:
        raise ContractError("q must lie in (0, 1)")
    lab = int(label)
    if not 0 <= lab < bank.class_count:
        raise ContractError(f"unknown class label {label!r}")
    return float(np.quantile(bank.train_logdens[lab], q))


def rejection_sample_invariant(bank, label, q, max_attempts, rng, threshold=None):
    """Draw one accepted invariant-space outlier.

    Returns ``(v, log_density, attempts_used)``.  ``threshold`` overrides the
    quantile rule (pass ``np.inf`` to accept the first draw).
    """
    if threshold is None:
        threshold = acceptance_threshold(bank, label, q)
    lab = int(label)
    if max_attempts < 1:
        raise ContractError("max_attempts must be at least 1")
    mu = bank.means[lab]
    chol = bank.cholesky[lab]
    for attempt in range(1, int(max_attempts) + 1):
        v = mu + chol @ rng.standard_normal(bank.dim)
        ld = log_density_v(bank, v, lab)
        if ld < threshold:
            return v, ld, attempt
    raise SamplingError(
        f"class {lab}: no proposal accepted in {max_attempts} attempts "
        f"(acceptance rate 0.0, q={q}); threshold too strict for the fitted geometry")


def default_max_attempts(n_per_class, q) -> int:
    # expected tail draws with a 10x safety factor
    return int(math.ceil(10.0 * n_per_class / q))


def synthesize_outliers(model, bank, n_per_class, q=0.05, max_attempts=None, seed=0) -> OutlierSet:
    """Exactly ``n_per_class`` accepted outliers for every class.

    Each class consumes its own generator seeded with ``seed ^ label``, so
    classes are reproducible independently of each other.
    """
    if n_per_class < 1:
        raise ContractError("n_per_class must be at least 1")
    if not 0.0 < q < 1.0:
        raise ContractError("q must lie in (0, 1)")
    if bank.dim != model.dim:
        raise ContractError("bank dimension does not match the model")
    if max_attempts is None:
        max_attempts = default_max_attempts(n_per_class, q)

    all_vs = []
    all_lds = []
    all_labels = []
    attempts = np.zeros(bank.class_count, dtype=np.int64)

    for label in range(bank.class_count):
        rng = np.random.default_rng(seed ^ label)
        threshold = acceptance_threshold(bank, label, q)
        used = 0
        accepted = []
        lds = []
        for _ in range(n_per_class):
            remaining = max_attempts - used
            if remaining <= 0:
                break
            try:
                v, ld, att = rejection_sample_invariant(
                    bank, label, q, remaining, rng, threshold=threshold)
            except SamplingError:
                used = max_attempts
                break
            used += att
            accepted.append(v)
            lds.append(ld)
        attempts[label] = used
        if len(accepted) < n_per_class:
            rate = len(accepted) / max(used, 1)
            raise SamplingError(
                f"class {label}: accepted {len(accepted)}/{n_per_class} outliers in "
                f"{used} attempts (acceptance rate {rate:.5f}, q={q})")
        all_vs.append(np.asarray(accepted))
        all_lds.append(np.asarray(lds))
        all_labels.append(np.full(n_per_class, label, dtype=np.int64))

    embeddings = []
    for label, vs in enumerate(all_vs):
        labels = np.full(vs.shape[0], label, dtype=np.int64)
        embeddings.append(cvpn.cvpn_inverse_batch(model, vs, labels))

    return OutlierSet(
        embeddings=np.concatenate(embeddings, axis=0),
        labels=np.concatenate(all_labels),
        log_densities=np.concatenate(all_lds),
        lam=bank.lam,
        q=float(q),
        seed=int(seed),
        attempts=attempts,
    )


def outlier_embedding(model, v, label):
    """Map one accepted invariant-space point back to embedding space."""
    return cvpn.cvpn_inverse(model, v, label)


def mean_invariant_magnitude(model, outliers: OutlierSet) -> float:
    """Mean Euclidean norm of the invariant coordinates of the outliers."""
    if len(outliers) == 0:
        raise ContractError("empty outlier set")
    g = cvpn.invariants_batch(model, outliers.embeddings, outliers.labels)
    return float(np.mean(np.sqrt(np.sum(g * g, axis=1))))
