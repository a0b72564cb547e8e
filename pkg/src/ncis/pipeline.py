"""Pipeline orchestration: stages, artifact reuse, and the lambda sweep.

Stages communicate exclusively through versioned artifact files in the output
directory, so every stage can also run standalone.  A manifest records the
configuration hash; a stage whose outputs already exist is skipped when the
hash matches and refused when it does not (stale artifacts are never silently
reused).
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import artifacts, cvpn, density, embedding, evalharness, invariant_training
from . import ood_classifier, outlier_sampling
from .config import RunConfig, config_hash
from .errors import ArtifactError, NcisError, PipelineError

STAGES = ("embed", "train-cvpn", "fit-density", "sample-outliers",
          "train-classifier", "evaluate")

STAGE_OUTPUTS = {
    "embed": ("embeddings_train.csv", "embeddings_heldout.csv", "ood_test.csv"),
    "train-cvpn": ("cvpn.txt", "loss_history.csv"),
    "fit-density": ("bank.txt",),
    "sample-outliers": ("outliers.csv",),
    "train-classifier": ("classifier.txt",),
    "evaluate": ("metrics.csv", "scores.csv"),
}

MANIFEST_NAME = "manifest.json"


def _manifest_path(out_dir):
    return Path(out_dir) / MANIFEST_NAME


def _load_manifest(out_dir):
    path = _manifest_path(out_dir)
    if not path.exists():
        return {"config_hash": None, "stages": {}}
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ArtifactError(f"{path}: corrupt manifest") from err


def _store_manifest(out_dir, manifest):
    payload = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    _manifest_path(out_dir).write_text(payload, newline="\n")


# ---------------------------------------------------------------------------
# stage bodies
# ---------------------------------------------------------------------------

def _toy_denoiser_matrix(dim, seed):
    rng = np.random.default_rng(seed)
    return np.eye(dim) + 0.25 * rng.standard_normal((dim, dim))


def _embed_with_toy_denoiser(cfg: RunConfig, bench):
    # Recover structured embeddings from toy samples with the analytic
    # denoiser; the default 3-iteration budget barely moves off the anchor,
    # so this source uses a larger budget internally.
    schedule = embedding.NoiseSchedule.linear(cfg.embed_timesteps)
    denoiser = embedding.LinearToyDenoiser(_toy_denoiser_matrix(bench.train.dim, cfg.seed))
    scale = float(np.mean(np.sqrt(schedule.alpha_bar)))
    anchors = np.stack([
        np.linalg.solve(denoiser.matrix, scale * bench.train.class_points(c).mean(axis=0))
        for c in range(bench.train.class_count)])
    embed_cfg = embedding.EmbedConfig(
        iterations=max(cfg.embed_iterations, 150),
        batch_size=max(cfg.embed_batch_size, 64),
        learning_rate=cfg.embed_learning_rate,
        seed=cfg.seed,
    )
    train = embedding.embed_dataset(bench.train.embeddings, bench.train.labels,
                                    anchors, denoiser, schedule, embed_cfg)
    heldout = embedding.embed_dataset(bench.heldout.embeddings, bench.heldout.labels,
                                      anchors, denoiser, schedule, embed_cfg)
    # test-time points carry no label; start them at the mean anchor
    neutral = anchors.mean(axis=0)
    ood = np.empty_like(bench.ood)
    for i, x in enumerate(bench.ood):
        item_cfg = replace(embed_cfg, seed=embedding.derive_item_seed(cfg.seed, 1_000_000 + i))
        ood[i] = embedding.embed_sample(x, neutral, denoiser, schedule, item_cfg)
    return train, heldout, ood


def stage_embed(cfg: RunConfig, out_dir: Path):
    if cfg.embed_source == "csv":
        train = artifacts.load_embeddings_csv(cfg.data_train_csv)
        heldout = artifacts.load_embeddings_csv(cfg.data_heldout_csv)
        ood = artifacts.load_points_csv(cfg.data_ood_csv)
    else:
        bench = evalharness.make_toy_benchmark(
            cfg.seed, cfg.benchmark_n_per_class,
            noise=cfg.benchmark_noise, margin=cfg.benchmark_margin,
            ood_count=cfg.benchmark_ood_count)
        if cfg.embed_source == "toy-denoiser":
            train, heldout, ood = _embed_with_toy_denoiser(cfg, bench)
        else:
            train, heldout, ood = bench.train, bench.heldout, bench.ood
    artifacts.save_embeddings_csv(train, out_dir / "embeddings_train.csv")
    artifacts.save_embeddings_csv(heldout, out_dir / "embeddings_heldout.csv")
    artifacts.save_points_csv(ood, out_dir / "ood_test.csv")


def stage_train_cvpn(cfg: RunConfig, out_dir: Path):
    train = artifacts.load_embeddings_csv(out_dir / "embeddings_train.csv")
    train_cfg = invariant_training.TrainConfig(
        learning_rate=cfg.cvpn_train_lr,
        iterations=cfg.cvpn_train_iterations,
        batch_size=cfg.cvpn_train_batch,
        seed=cfg.seed,
        variance_percent=cfg.invariants_p,
        num_blocks=cfg.cvpn_num_blocks,
        hidden_width=cfg.cvpn_hidden_width,
    )
    if cfg.invariants_k_override > 0:
        k = cfg.invariants_k_override
    else:
        k = invariant_training.select_num_invariants(train, cfg.invariants_p)
    model = cvpn.build_cvpn(train.dim, k, cfg.cvpn_num_blocks, train.class_count,
                            cfg.cvpn_hidden_width, cfg.seed)
    model, history = invariant_training.train_cvpn(model, train, train_cfg)
    artifacts.save_cvpn(model, out_dir / "cvpn.txt")
    artifacts.save_loss_history_csv(history, out_dir / "loss_history.csv")


def stage_fit_density(cfg: RunConfig, out_dir: Path):
    model = artifacts.load_cvpn(out_dir / "cvpn.txt")
    train = artifacts.load_embeddings_csv(out_dir / "embeddings_train.csv")
    vectors = cvpn.cvpn_forward_batch(model, train.embeddings, train.labels)
    bank = density.fit_class_gaussians(vectors, train.labels, cfg.density_lambda,
                                       class_count=model.class_count)
    artifacts.save_bank(bank, out_dir / "bank.txt")


def stage_sample_outliers(cfg: RunConfig, out_dir: Path):
    model = artifacts.load_cvpn(out_dir / "cvpn.txt")
    bank = artifacts.load_bank(out_dir / "bank.txt")
    max_attempts = cfg.sample_max_attempts if cfg.sample_max_attempts > 0 else None
    outliers = outlier_sampling.synthesize_outliers(
        model, bank, cfg.sample_n_per_class, q=cfg.sample_q,
        max_attempts=max_attempts, seed=cfg.seed)
    artifacts.save_outliers_csv(outliers, out_dir / "outliers.csv")


def stage_train_classifier(cfg: RunConfig, out_dir: Path):
    train = artifacts.load_embeddings_csv(out_dir / "embeddings_train.csv")
    outliers = artifacts.load_outliers_csv(out_dir / "outliers.csv")
    clf_cfg = ood_classifier.ClassifierConfig(
        epochs=cfg.classifier_epochs,
        learning_rate=cfg.classifier_lr,
        batch_size=cfg.classifier_batch,
        beta=cfg.classifier_beta,
        seed=cfg.seed,
        hidden_width=cfg.classifier_hidden_width,
        phi_hidden=cfg.classifier_phi_hidden,
    )
    clf = ood_classifier.train_energy_classifier(train, outliers, clf_cfg)
    artifacts.save_classifier(clf, out_dir / "classifier.txt")


def _score_samples(clf, heldout, ood):
    # beta = 0 trains a plain cross-entropy classifier whose scoring head is
    # never updated; fall back to the raw (negated) energy score there.
    if clf.beta > 0:
        id_scores = ood_classifier.ood_scores(clf, heldout.embeddings)
        ood_scores = ood_classifier.ood_scores(clf, ood)
        method = "ncis"
    else:
        id_scores = -ood_classifier.sample_energies(clf, heldout.embeddings)
        ood_scores = -ood_classifier.sample_energies(clf, ood)
        method = "energy"
    return id_scores, ood_scores, method


def stage_evaluate(cfg: RunConfig, out_dir: Path):
    clf = artifacts.load_classifier(out_dir / "classifier.txt")
    heldout = artifacts.load_embeddings_csv(out_dir / "embeddings_heldout.csv")
    ood = artifacts.load_points_csv(out_dir / "ood_test.csv")

    id_scores, ood_scores, method = _score_samples(clf, heldout, ood)
    samples = evalharness.scores_to_samples(id_scores, ood_scores)
    fpr = evalharness.fpr_at_tpr(samples, 0.95)
    auc = evalharness.auroc(samples)
    acc = evalharness.classification_accuracy(
        ood_classifier.predict_labels(clf, heldout.embeddings), heldout.labels)
    dataset = "toy" if cfg.embed_source != "csv" else "csv"
    artifacts.save_metrics_csv([(dataset, method, fpr, auc, acc)], out_dir / "metrics.csv")

    rows = []
    energies_id = ood_classifier.sample_energies(clf, heldout.embeddings)
    for i, (s, e) in enumerate(zip(id_scores, energies_id)):
        rows.append((i, str(int(heldout.labels[i])), s, e))
    energies_ood = ood_classifier.sample_energies(clf, ood)
    for i, (s, e) in enumerate(zip(ood_scores, energies_ood)):
        rows.append((len(id_scores) + i, "OOD", s, e))
    artifacts.save_scores_csv(rows, out_dir / "scores.csv")


_STAGE_BODIES = {
    "embed": stage_embed,
    "train-cvpn": stage_train_cvpn,
    "fit-density": stage_fit_density,
    "sample-outliers": stage_sample_outliers,
    "train-classifier": stage_train_classifier,
    "evaluate": stage_evaluate,
}


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def run_pipeline(cfg: RunConfig, out_dir, stages=None, log=None):
    """Run the requested stages in order; returns {stage: [output paths]}.

    Completed stages recorded in the manifest under the same configuration
    hash are skipped.  Existing outputs under a different hash raise
    ``ArtifactError`` instead of being overwritten.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stages = list(STAGES) if stages is None else list(stages)
    for stage in stages:
        if stage not in _STAGE_BODIES:
            raise PipelineError(f"unknown stage '{stage}'")

    current_hash = config_hash(cfg)
    manifest = _load_manifest(out_dir)
    if manifest["config_hash"] is None:
        manifest["config_hash"] = current_hash

    produced = {}
    for stage in stages:
        outputs = [out_dir / name for name in STAGE_OUTPUTS[stage]]
        existing = [p for p in outputs if p.exists()]
        recorded = manifest["stages"].get(stage)
        if existing:
            if manifest["config_hash"] == current_hash and recorded is not None:
                if log:
                    log(f"[{stage}] outputs up to date, skipping")
                produced[stage] = outputs
                continue
            raise ArtifactError(
                f"stage '{stage}': artifacts {', '.join(p.name for p in existing)} exist "
                f"but were produced under a different configuration; refusing to reuse them "
                f"(use a fresh output directory)")
        if manifest["config_hash"] != current_hash:
            raise ArtifactError(
                "output directory was used with a different configuration; "
                "refusing to mix artifacts (use a fresh output directory)")
        try:
            _STAGE_BODIES[stage](cfg, out_dir)
        except NcisError as err:
            raise PipelineError(f"stage '{stage}': {err}") from err
        manifest["stages"][stage] = {"seed": cfg.seed, "outputs": [p.name for p in outputs]}
        _store_manifest(out_dir, manifest)
        if log:
            log(f"[{stage}] wrote {', '.join(p.name for p in outputs)}")
        produced[stage] = outputs
    return produced


DEFAULT_SWEEP = (1e-6, 1e-5, 1e-4, 1e-3)


def sweep_lambda(cfg: RunConfig, out_dir, lambdas=DEFAULT_SWEEP, log=None):
    """Full pipeline per regularization value; returns the sweep table rows.

    Each value runs in its own subdirectory with the same seed, so the
    upstream stages reproduce identical artifacts and only the density,
    sampling and classifier stages differ.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for lam in lambdas:
        sub_cfg = replace(cfg, density_lambda=float(lam))
        sub_dir = out_dir / f"lambda_{lam:.0e}"
        run_pipeline(sub_cfg, sub_dir, log=log)
        model = artifacts.load_cvpn(sub_dir / "cvpn.txt")
        outliers = artifacts.load_outliers_csv(sub_dir / "outliers.csv")
        magnitude = outlier_sampling.mean_invariant_magnitude(model, outliers)
        metrics = artifacts.load_metrics_csv(sub_dir / "metrics.csv")
        _, _, fpr, auc, acc = metrics[0]
        rows.append((float(lam), fpr, auc, acc, magnitude))
    artifacts.save_sweep_csv(rows, out_dir / "sweep_metrics.csv")
    return rows
