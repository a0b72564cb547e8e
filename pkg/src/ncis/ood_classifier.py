"""Energy-regularized classifier with a learned ID/OOD scoring head.

The classifier is an MLP producing class logits.  Its energy is the negative
log-sum-exp of the logits, and a small scalar-to-scalar MLP head maps the
energy to an ID-vs-OOD logit; that composed value is the OOD score (larger
means more in-distribution).  Training combines softmax cross-entropy on
labeled ID embeddings with a regularization term that pushes the score up on
ID batches and down on synthesized outlier batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import LabeledEmbeddingSet
from .errors import ContractError, NumericError
from .optim import adam_init, adam_update


@dataclass
class ClassifierConfig:
    epochs: int = 800
    learning_rate: float = 3e-3
    batch_size: int = 128
    beta: float = 1.0
    seed: int = 0
    hidden_width: int = 64
    phi_hidden: int = 8

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError("epochs must be positive")
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ContractError("batch_size must be positive")
        if self.beta < 0:
            raise ContractError("beta must be non-negative")
        if self.hidden_width < 1 or self.phi_hidden < 1:
            raise ContractError("widths must be positive")


@dataclass
class EnergyClassifier:
    dim: int
    class_count: int
    hidden_width: int
    phi_hidden: int
    beta: float
    seed: int
    params: dict


@dataclass
class RegularizedLossReport:
    total: float
    cross_entropy: float
    ood_term: float
    mean_id_energy: float
    mean_ood_energy: float


def build_energy_classifier(dim, class_count, hidden_width=64, phi_hidden=8,
                            beta=1.0, seed=0) -> EnergyClassifier:
    """Fresh classifier; the scoring head's output layer starts at zero, so the
    score is identically zero before training."""
    if dim < 1 or class_count < 1:
        raise ContractError("dim and class_count must be positive")
    if beta < 0:
        raise ContractError("beta must be non-negative")
    rng = np.random.default_rng(seed)
    params = {
        "clf.w1": rng.standard_normal((hidden_width, dim)) / np.sqrt(dim),
        "clf.b1": np.zeros(hidden_width),
        "clf.w2": rng.standard_normal((hidden_width, hidden_width)) / np.sqrt(hidden_width),
        "clf.b2": np.zeros(hidden_width),
        "clf.w3": rng.standard_normal((class_count, hidden_width)) / np.sqrt(hidden_width),
        "clf.b3": np.zeros(class_count),
        # gentle slopes keep the tanh units unsaturated over the energy range,
        # so the separation term can keep shaping the energies themselves
        "phi.w1": 0.1 * rng.standard_normal((phi_hidden, 1)),
        "phi.b1": np.zeros(phi_hidden),
        "phi.w2": np.zeros((1, phi_hidden)),
        "phi.b2": np.zeros(()),
    }
    return EnergyClassifier(dim, class_count, hidden_width, phi_hidden,
                            float(beta), seed, params)


# ---------------------------------------------------------------------------
# forward pieces (array or tape)
# ---------------------------------------------------------------------------

def _logits(P, x):
    h1 = ad.tanh(ad.add(ad.matvec(P["clf.w1"], x), P["clf.b1"]))
    h2 = ad.tanh(ad.add(ad.matvec(P["clf.w2"], h1), P["clf.b2"]))
    return ad.add(ad.matvec(P["clf.w3"], h2), P["clf.b3"])


def _energy_of_logits(logits):
    return ad.neg(ad.logsumexp(logits))


def _phi(P, energy):
    e1 = ad.expand_last(energy)
    h = ad.tanh(ad.add(ad.matvec(P["phi.w1"], e1), P["phi.b1"]))
    return ad.add(ad.squeeze_last(ad.matvec(P["phi.w2"], h)), P["phi.b2"])


def _score(P, x):
    return _phi(P, _energy_of_logits(_logits(P, x)))


def _ce_term(P, x, labels):
    logits = _logits(P, x)
    per_sample = ad.sub(ad.logsumexp(logits), ad.pick(logits, labels))
    return ad.mean(per_sample)


def _ood_term(P, id_x, ood_x):
    u_id = _score(P, id_x)
    u_ood = _score(P, ood_x)
    id_part = ad.mean(ad.neg(ad.log_sigmoid(u_id)))
    ood_part = ad.mean(ad.neg(ad.log_sigmoid(ad.neg(u_ood))))
    return ad.add(ood_part, id_part)


# ---------------------------------------------------------------------------
# public interface
# ---------------------------------------------------------------------------

def energy(logits) -> float:
    """Negative log-sum-exp of a logit vector, computed with max subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size == 0:
        raise ContractError("energy expects a non-empty logit vector")
    m = float(np.max(logits))
    return -(m + math.log(float(np.sum(np.exp(logits - m)))))


def _check_input(clf, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (clf.dim,):
        raise ContractError(f"expected an embedding of dimension {clf.dim}, got shape {x.shape}")
    return x


def classifier_logits(clf, x):
    return _logits(clf.params, _check_input(clf, x))


def sample_energy(clf, x) -> float:
    return energy(classifier_logits(clf, x))


def ood_score(clf, x) -> float:
    """The composed score head(energy(logits(x))); larger means more ID."""
    return float(_score(clf.params, _check_input(clf, x)))


def ood_scores(clf, xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    return np.array([ood_score(clf, x) for x in xs])


def sample_energies(clf, xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    return np.array([sample_energy(clf, x) for x in xs])


def predict_labels(clf, xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != clf.dim:
        raise ContractError(f"expected shape (N, {clf.dim}), got {xs.shape}")
    return np.argmax(_logits(clf.params, xs), axis=1)


def ood_regularization_loss(clf, id_batch, ood_batch) -> float:
    """Mean score-separation loss over an ID batch and an OOD batch."""
    id_batch = np.asarray(id_batch, dtype=np.float64)
    ood_batch = np.asarray(ood_batch, dtype=np.float64)
    if id_batch.ndim != 2 or id_batch.shape[0] == 0:
        raise ContractError("id_batch must be a non-empty (N, D) array")
    if ood_batch.ndim != 2 or ood_batch.shape[0] == 0:
        raise ContractError("ood_batch must be a non-empty (N, D) array")
    return float(_ood_term(clf.params, id_batch, ood_batch))


def total_loss(clf, id_batch, id_labels, ood_batch) -> RegularizedLossReport:
    """Cross-entropy plus beta times the regularization term, with energy stats."""
    id_batch = np.asarray(id_batch, dtype=np.float64)
    id_labels = np.asarray(id_labels, dtype=np.int64)
    if id_labels.size and (id_labels.min() < 0 or id_labels.max() >= clf.class_count):
        raise ContractError("label out of range")
    ce = float(_ce_term(clf.params, id_batch, id_labels))
    ood = ood_regularization_loss(clf, id_batch, ood_batch)
    id_e = np.array([energy(_logits(clf.params, x)) for x in id_batch])
    ood_e = np.array([energy(_logits(clf.params, x)) for x in np.asarray(ood_batch, dtype=np.float64)])
    return RegularizedLossReport(
        total=ce + clf.beta * ood,
        cross_entropy=ce,
        ood_term=ood,
        mean_id_energy=float(np.mean(id_e)),
        mean_ood_energy=float(np.mean(ood_e)),
    )


def train_energy_classifier(id_data: LabeledEmbeddingSet, outliers,
                            cfg: ClassifierConfig) -> EnergyClassifier:
    """Jointly fit the classifier and scoring head by mini-batch updates.

    Every step pairs an ID mini-batch with an equally sized outlier
    mini-batch.  With ``beta == 0`` the regularization term is dropped from
    the graph entirely, so the scoring head keeps its initialization.
    """
    ood_x = outliers.embeddings if hasattr(outliers, "embeddings") else np.asarray(outliers, dtype=np.float64)
    ood_x = np.asarray(ood_x, dtype=np.float64)
    if ood_x.ndim != 2 or ood_x.shape[0] == 0:
        raise ContractError("outliers must be a non-empty (N, D) collection")
    if ood_x.shape[1] != id_data.dim:
        raise ContractError("outlier dimension does not match the ID data")

    clf = build_energy_classifier(id_data.dim, id_data.class_count,
                                  hidden_width=cfg.hidden_width,
                                  phi_hidden=cfg.phi_hidden,
                                  beta=cfg.beta, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    state = adam_init(clf.params)
    n_id = len(id_data)
    n_ood = ood_x.shape[0]
    bs = min(cfg.batch_size, n_id)
    steps = math.ceil(n_id / bs)

    for epoch in range(cfg.epochs):
        order_id = rng.permutation(n_id)
        need = steps * bs
        tiles = [rng.permutation(n_ood) for _ in range(math.ceil(need / n_ood))]
        order_ood = np.concatenate(tiles)[:need]
        for step in range(steps):
            bi = order_id[step * bs:(step + 1) * bs]
            bo = order_ood[step * bs:step * bs + bi.size]
            xb, yb = id_data.embeddings[bi], id_data.labels[bi]
            ob = ood_x[bo]

            def loss_fn(P):
                ce = _ce_term(P, xb, yb)
                if cfg.beta == 0.0:
                    return ce
                return ad.add(ce, ad.mul(_ood_term(P, xb, ob), cfg.beta))

            try:
                _, grads = ad.eval_and_grad(loss_fn, clf.params)
            except NumericError as err:
                raise NumericError(f"training aborted at epoch {epoch}: {err}") from err
            adam_update(clf.params, grads, state, cfg.learning_rate)
    return clf
