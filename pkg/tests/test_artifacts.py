import numpy as np
import pytest

from ncis import artifacts, cvpn, density, ood_classifier
from ncis.data import LabeledEmbeddingSet
from ncis.errors import ArtifactError, ContractError
from ncis.outlier_sampling import OutlierSet


def test_cvpn_round_trip_identical_outputs(trained_model, tmp_path):
    path = tmp_path / "model.txt"
    artifacts.save_cvpn(trained_model, path)
    loaded = artifacts.load_cvpn(path)
    rng = np.random.default_rng(0)
    for _ in range(100):
        e = rng.uniform(-3, 3, trained_model.dim)
        label = int(rng.integers(0, trained_model.class_count))
        assert np.array_equal(cvpn.cvpn_forward(trained_model, e, label),
                              cvpn.cvpn_forward(loaded, e, label))


def test_cvpn_write_read_write_byte_identical(trained_model, tmp_path):
    first = tmp_path / "a.txt"
    second = tmp_path / "b.txt"
    artifacts.save_cvpn(trained_model, first)
    artifacts.save_cvpn(artifacts.load_cvpn(first), second)
    assert first.read_bytes() == second.read_bytes()


def test_truncated_record_rejected(trained_model, tmp_path):
    path = tmp_path / "model.txt"
    artifacts.save_cvpn(trained_model, path)
    content = path.read_text().splitlines()
    path.write_text("\n".join(content[: len(content) // 2]) + "\n")
    with pytest.raises(ArtifactError):
        artifacts.load_cvpn(path)


def test_version_bump_rejected(trained_model, tmp_path):
    path = tmp_path / "model.txt"
    artifacts.save_cvpn(trained_model, path)
    lines = path.read_text().splitlines()
    lines[0] = "ncis-artifact cvpn 99"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ArtifactError, match="schema_version"):
        artifacts.load_cvpn(path)


def test_wrong_kind_rejected(trained_model, tmp_path):
    path = tmp_path / "model.txt"
    artifacts.save_cvpn(trained_model, path)
    with pytest.raises(ArtifactError, match="kind"):
        artifacts.load_bank(path)


def test_missing_file_named():
    with pytest.raises(ArtifactError, match="missing"):
        artifacts.load_cvpn("/nonexistent/model.txt")


def test_bank_round_trip(toy_run, tmp_path):
    path = tmp_path / "bank.txt"
    artifacts.save_bank(toy_run.bank, path)
    loaded = artifacts.load_bank(path)
    assert loaded.lam == toy_run.bank.lam
    v = np.array([0.1, -0.4])
    for label in range(3):
        assert density.log_density_v(loaded, v, label) == \
            density.log_density_v(toy_run.bank, v, label)
    second = tmp_path / "bank2.txt"
    artifacts.save_bank(loaded, second)
    assert path.read_bytes() == second.read_bytes()


def test_classifier_round_trip(toy_run, tmp_path):
    path = tmp_path / "clf.txt"
    artifacts.save_classifier(toy_run.clf_beta1, path)
    loaded = artifacts.load_classifier(path)
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = rng.uniform(-2, 2, 2)
        assert ood_classifier.ood_score(loaded, x) == \
            ood_classifier.ood_score(toy_run.clf_beta1, x)


def test_embeddings_csv_round_trip(toy_bench, tmp_path):
    path = tmp_path / "emb.csv"
    artifacts.save_embeddings_csv(toy_bench.train, path)
    loaded = artifacts.load_embeddings_csv(path)
    assert np.array_equal(loaded.embeddings, toy_bench.train.embeddings)
    assert np.array_equal(loaded.labels, toy_bench.train.labels)
    assert loaded.class_count == 3


def test_points_csv_round_trip(toy_bench, tmp_path):
    path = tmp_path / "ood.csv"
    artifacts.save_points_csv(toy_bench.ood, path)
    assert np.array_equal(artifacts.load_points_csv(path), toy_bench.ood)


def test_outliers_csv_round_trip(toy_run, tmp_path):
    path = tmp_path / "outliers.csv"
    artifacts.save_outliers_csv(toy_run.outliers, path)
    loaded = artifacts.load_outliers_csv(path)
    assert np.array_equal(loaded.embeddings, toy_run.outliers.embeddings)
    assert np.array_equal(loaded.labels, toy_run.outliers.labels)
    assert np.array_equal(loaded.log_densities, toy_run.outliers.log_densities)
    assert loaded.lam == toy_run.outliers.lam
    assert loaded.q == toy_run.outliers.q
    assert loaded.seed == toy_run.outliers.seed
    assert np.array_equal(loaded.attempts, toy_run.outliers.attempts)


def test_metrics_csv_round_trip(tmp_path):
    rows = [("toy", "ncis", 0.125, 0.9875, 1.0)]
    path = tmp_path / "metrics.csv"
    artifacts.save_metrics_csv(rows, path)
    assert artifacts.load_metrics_csv(path) == rows


def test_loss_history_round_trip(tmp_path):
    hist = np.array([[0, 3.5], [1, 2.25], [2, 0.125]])
    path = tmp_path / "hist.csv"
    artifacts.save_loss_history_csv(hist, path)
    assert np.array_equal(artifacts.load_loss_history_csv(path), hist)


def test_kind_dispatch(tmp_path, toy_bench):
    path = tmp_path / "emb.csv"
    artifacts.save_artifact(path, "embeddings", toy_bench.heldout)
    loaded = artifacts.load_artifact(path, "embeddings")
    assert isinstance(loaded, LabeledEmbeddingSet)
    with pytest.raises(ContractError):
        artifacts.save_artifact(path, "nonsense", toy_bench.heldout)
    with pytest.raises(ContractError):
        artifacts.load_artifact(path, "nonsense")


def test_corrupt_csv_rejected(tmp_path):
    path = tmp_path / "emb.csv"
    path.write_text("not,a,real,artifact\n1,2,3,4\n")
    with pytest.raises(ArtifactError):
        artifacts.load_embeddings_csv(path)


def test_malformed_parameter_shape_rejected(trained_model, tmp_path):
    path = tmp_path / "model.txt"
    artifacts.save_cvpn(trained_model, path)
    text = path.read_text().replace("array class_embed 2 3 1", "array class_embed 2 3 2")
    path.write_text(text)
    with pytest.raises(ArtifactError, match="class_embed"):
        artifacts.load_cvpn(path)
