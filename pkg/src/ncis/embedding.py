"""Per-sample embedding by gradient descent against a pluggable denoiser.

Each sample gets the conditioning vector that minimizes the Monte-Carlo
noise-prediction loss: draw timesteps and noise for a batch, noise the sample
accordingly, and take one gradient step on the squared prediction error with
respect to the embedding.  The embedding starts at the label's anchor vector
and runs for a small fixed number of iterations, which keeps it close to the
anchor; with zero iterations it is the anchor, bit for bit.

The denoiser is abstract so externally produced embeddings (or a real
denoising model) can replace the analytic toy denoiser used for verification.
"""

from __future__ import annotations

import abc
import dataclasses
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import LabeledEmbeddingSet
from .errors import ContractError, NumericError


@dataclass
class NoiseSchedule:
    """Cumulative signal coefficients alpha_bar[t-1] for timesteps t = 1..T."""

    alpha_bar: np.ndarray

    def __post_init__(self):
        self.alpha_bar = np.asarray(self.alpha_bar, dtype=np.float64)
        if self.alpha_bar.ndim != 1 or self.alpha_bar.size < 1:
            raise ContractError("alpha_bar must be a non-empty 1-d array")
        if np.any(self.alpha_bar < 0.0) or np.any(self.alpha_bar > 1.0):
            raise ContractError("alpha_bar values must lie in [0, 1]")
        if self.alpha_bar[0] <= 0.0:
            raise ContractError("alpha_bar must start positive")
        if self.alpha_bar.size > 1 and not np.all(np.diff(self.alpha_bar) < 0.0):
            raise ContractError("alpha_bar must be strictly decreasing")

    @property
    def timesteps(self):
        return self.alpha_bar.size

    @classmethod
    def linear(cls, timesteps=50, beta_start=1e-4, beta_end=0.2):
        """Linear variance schedule; alpha_bar starts near 1 and ends small."""
        if timesteps < 1:
            raise ContractError("timesteps must be at least 1")
        betas = np.linspace(beta_start, beta_end, timesteps)
        return cls(np.cumprod(1.0 - betas))


def forward_noise(x0, t, noise, schedule: NoiseSchedule):
    """Noised sample sqrt(ab_t) * x0 + sqrt(1 - ab_t) * noise for t in [1, T]."""
    if not 1 <= int(t) <= schedule.timesteps:
        raise ContractError(f"timestep {t} outside [1, {schedule.timesteps}]")
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x0.shape != noise.shape:
        raise ContractError("x0 and noise must have the same shape")
    ab = schedule.alpha_bar[int(t) - 1]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


class Denoiser(abc.ABC):
    """Noise predictor conditioned on an embedding.

    ``predict`` receives a batch of noised samples ``(B, dx)``, their integer
    timesteps ``(B,)`` and a single embedding vector; it must be built from
    the autodiff ops so the loss can differentiate through the embedding.
    """

    @abc.abstractmethod
    def predict(self, noisy, t, embedding):
        """Predicted noise, same shape as ``noisy``."""


class LinearToyDenoiser(Denoiser):
    """Analytic denoiser ``noisy - A @ embedding`` with full-rank A.

    The expected loss is quadratic in the embedding with the closed-form
    minimizer ``A^-1 * mean_t(sqrt(alpha_bar_t)) * x0``, which makes the
    embedding loop verifiable end to end.
    """

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ContractError("matrix must be square")
        if abs(np.linalg.det(self.matrix)) < 1e-12:
            raise ContractError("matrix must be full-rank")

    def predict(self, noisy, t, embedding):
        return ad.sub(noisy, ad.matvec(self.matrix, embedding))

    def closed_form_embedding(self, x0, schedule: NoiseSchedule):
        """Minimizer of the expected loss over uniform timesteps."""
        c = float(np.mean(np.sqrt(schedule.alpha_bar)))
        return np.linalg.solve(self.matrix, c * np.asarray(x0, dtype=np.float64))


@dataclass
class EmbedConfig:
    iterations: int = 3
    batch_size: int = 32
    learning_rate: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ContractError("iterations must be non-negative")
        if self.batch_size < 1:
            raise ContractError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")


def embed_sample(sample, anchor, denoiser: Denoiser, schedule: NoiseSchedule,
                 cfg: EmbedConfig):
    """Gradient-descend the embedding of one sample, starting at ``anchor``.

    With ``cfg.iterations == 0`` the anchor is returned unchanged.  One
    gradient step is taken per iteration, on a freshly drawn batch of
    (timestep, noise) pairs.
    """
    sample = np.asarray(sample, dtype=np.float64)
    e = np.array(anchor, dtype=np.float64)
    if cfg.iterations == 0:
        return e
    rng = np.random.default_rng(cfg.seed)
    t_count = schedule.timesteps
    for it in range(cfg.iterations):
        ts = rng.integers(1, t_count + 1, size=cfg.batch_size)
        eps = rng.standard_normal((cfg.batch_size, sample.shape[0]))
        ab = schedule.alpha_bar[ts - 1][:, None]
        noisy = np.sqrt(ab) * sample + np.sqrt(1.0 - ab) * eps

        def loss_fn(P):
            pred = denoiser.predict(noisy, ts, P["e"])
            return ad.mul(ad.sumsq(ad.sub(eps, pred)), 1.0 / cfg.batch_size)

        try:
            _, grads = ad.eval_and_grad(loss_fn, {"e": e})
        except NumericError as err:
            raise NumericError(f"embedding aborted at iteration {it}: {err}") from err
        e = e - cfg.learning_rate * grads["e"]
    return e


def derive_item_seed(seed, index) -> int:
    """Stable per-item seed from a base seed and an item index."""
    return int(np.random.SeedSequence(entropy=(int(seed), int(index))).generate_state(1)[0])


def embed_dataset(samples, labels, anchors, denoiser: Denoiser,
                  schedule: NoiseSchedule, cfg: EmbedConfig,
                  item_seeds=None) -> LabeledEmbeddingSet:
    """Embed every (sample, label) pair independently, in input order.

    Each item runs with its own seed so items are independent of each other:
    by default the seed is derived from ``(cfg.seed, position)``, or the
    caller can pass explicit ``item_seeds`` that travel with the items (for
    example when re-embedding a permuted dataset).
    """
    samples = np.asarray(samples, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    anchors = np.asarray(anchors, dtype=np.float64)
    if anchors.ndim != 2:
        raise ContractError("anchors must be (class_count, embed_dim)")
    class_count = anchors.shape[0]
    if samples.ndim != 2:
        raise ContractError("samples must be (N, dx)")
    if labels.shape != (samples.shape[0],):
        raise ContractError("labels must have one entry per sample")
    if labels.size and (labels.min() < 0 or labels.max() >= class_count):
        raise ContractError("labels must index into the anchor table")
    if item_seeds is not None and len(item_seeds) != samples.shape[0]:
        raise ContractError("item_seeds must have one entry per sample")

    out = np.empty((samples.shape[0], anchors.shape[1]))
    for i in range(samples.shape[0]):
        seed = item_seeds[i] if item_seeds is not None else derive_item_seed(cfg.seed, i)
        item_cfg = dataclasses.replace(cfg, seed=int(seed))
        try:
            out[i] = embed_sample(samples[i], anchors[labels[i]], denoiser, schedule, item_cfg)
        except NumericError as err:
            raise NumericError(f"item {i}: {err}") from err
    return LabeledEmbeddingSet(out, labels, class_count)
