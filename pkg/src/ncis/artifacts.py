"""Versioned text artifacts: model/bank/classifier records and CSV tables.

Every float is written with ``repr``, whose shortest round-trip form makes
write -> read -> write byte-identical.  Record files carry a kind tag and a
schema version in their first line; CSV files carry them in a leading comment
line.  Loaders validate structure eagerly and name the offending field.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .cvpn import CvpnModel, build_cvpn
from .data import LabeledEmbeddingSet
from .density import ClassGaussianBank
from .errors import ArtifactError, ContractError
from .ood_classifier import EnergyClassifier, build_energy_classifier
from .outlier_sampling import OutlierSet

SCHEMA_VERSION = 1


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# generic record files
# ---------------------------------------------------------------------------

def write_record(path, kind, meta, arrays):
    lines = [f"ncis-artifact {kind} {SCHEMA_VERSION}"]
    for key, value in meta.items():
        lines.append(f"meta {key} {value}")
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim > 2:
            raise ContractError(f"array '{name}' has unsupported rank {arr.ndim}")
        shape = " ".join(str(s) for s in arr.shape)
        lines.append(f"array {name} {arr.ndim}{' ' + shape if shape else ''}")
        if arr.ndim == 0:
            lines.append(_fmt(arr[()]))
        elif arr.ndim == 1:
            lines.append(" ".join(_fmt(v) for v in arr))
        else:
            for row in arr:
                lines.append(" ".join(_fmt(v) for v in row))
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def read_record(path, kind):
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact file: {path}")
    lines = path.read_text().splitlines()
    if not lines:
        raise ArtifactError(f"{path}: empty artifact file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "ncis-artifact":
        raise ArtifactError(f"{path}: malformed header line")
    if head[1] != kind:
        raise ArtifactError(f"{path}: expected kind '{kind}', found '{head[1]}'")
    if head[2] != str(SCHEMA_VERSION):
        raise ArtifactError(f"{path}: unsupported schema_version {head[2]} (expected {SCHEMA_VERSION})")

    meta = {}
    arrays = {}
    i = 1
    ended = False
    while i < len(lines):
        line = lines[i]
        if line == "end":
            ended = True
            i += 1
            break
        if line.startswith("meta "):
            parts = line.split(maxsplit=2)
            if len(parts) != 3:
                raise ArtifactError(f"{path}: malformed meta line {i + 1}")
            meta[parts[1]] = parts[2]
            i += 1
            continue
        if line.startswith("array "):
            parts = line.split()
            if len(parts) < 3:
                raise ArtifactError(f"{path}: malformed array header at line {i + 1}")
            name = parts[1]
            try:
                ndim = int(parts[2])
                shape = tuple(int(s) for s in parts[3:])
            except ValueError as err:
                raise ArtifactError(f"{path}: bad shape for array '{name}'") from err
            if len(shape) != ndim:
                raise ArtifactError(f"{path}: rank/shape mismatch for array '{name}'")
            rows = 1 if ndim < 2 else shape[0]
            want = 1 if ndim == 0 else shape[-1] if ndim == 1 else shape[1]
            values = []
            for r in range(rows):
                i += 1
                if i >= len(lines) or lines[i].startswith(("array ", "meta ")) or lines[i] == "end":
                    raise ArtifactError(f"{path}: array '{name}' is truncated")
                row = lines[i].split()
                if len(row) != want:
                    raise ArtifactError(
                        f"{path}: array '{name}' row {r} has {len(row)} values, expected {want}")
                try:
                    values.append([float(v) for v in row])
                except ValueError as err:
                    raise ArtifactError(f"{path}: array '{name}' has a non-numeric value") from err
            arr = np.asarray(values, dtype=np.float64)
            if ndim == 0:
                arr = arr.reshape(())
            elif ndim == 1:
                arr = arr.reshape(shape)
            else:
                arr = arr.reshape(shape)
            arrays[name] = arr
            i += 1
            continue
        raise ArtifactError(f"{path}: unrecognized line {i + 1}: {line!r}")
    if not ended:
        raise ArtifactError(f"{path}: truncated artifact (missing end marker)")
    return meta, arrays


def _meta_int(path, meta, key):
    try:
        return int(meta[key])
    except KeyError as err:
        raise ArtifactError(f"{path}: missing meta field '{key}'") from err
    except ValueError as err:
        raise ArtifactError(f"{path}: meta field '{key}' is not an integer") from err


def _meta_float(path, meta, key):
    try:
        return float(meta[key])
    except KeyError as err:
        raise ArtifactError(f"{path}: missing meta field '{key}'") from err
    except ValueError as err:
        raise ArtifactError(f"{path}: meta field '{key}' is not a number") from err


# ---------------------------------------------------------------------------
# model / bank / classifier records
# ---------------------------------------------------------------------------

def save_cvpn(model: CvpnModel, path):
    meta = {
        "dim": model.dim,
        "num_invariants": model.num_invariants,
        "class_count": model.class_count,
        "num_blocks": model.num_blocks,
        "hidden_width": model.hidden_width,
        "seed": model.seed,
    }
    write_record(path, "cvpn", meta, model.params)


def load_cvpn(path) -> CvpnModel:
    meta, arrays = read_record(path, "cvpn")
    model = build_cvpn(
        dim=_meta_int(path, meta, "dim"),
        num_invariants=_meta_int(path, meta, "num_invariants"),
        num_blocks=_meta_int(path, meta, "num_blocks"),
        class_count=_meta_int(path, meta, "class_count"),
        hidden_width=_meta_int(path, meta, "hidden_width"),
        seed=_meta_int(path, meta, "seed"),
    )
    for name, expected in model.params.items():
        if name not in arrays:
            raise ArtifactError(f"{path}: missing parameter array '{name}'")
        if arrays[name].shape != expected.shape:
            raise ArtifactError(
                f"{path}: parameter '{name}' has shape {arrays[name].shape}, expected {expected.shape}")
    extra = set(arrays) - set(model.params)
    if extra:
        raise ArtifactError(f"{path}: unexpected parameter array '{sorted(extra)[0]}'")
    model.params = {name: arrays[name] for name in model.params}
    return model


def save_bank(bank: ClassGaussianBank, path):
    meta = {"lam": _fmt(bank.lam), "class_count": bank.class_count, "dim": bank.dim}
    arrays = {}
    for c in range(bank.class_count):
        arrays[f"mean{c}"] = bank.means[c]
        arrays[f"cov{c}"] = bank.covariances[c]
        arrays[f"train_logdens{c}"] = bank.train_logdens[c]
    write_record(path, "bank", meta, arrays)


def load_bank(path) -> ClassGaussianBank:
    meta, arrays = read_record(path, "bank")
    lam = _meta_float(path, meta, "lam")
    class_count = _meta_int(path, meta, "class_count")
    dim = _meta_int(path, meta, "dim")
    if lam <= 0:
        raise ArtifactError(f"{path}: meta field 'lam' must be positive")
    means = np.empty((class_count, dim))
    covs = np.empty((class_count, dim, dim))
    chols = np.empty((class_count, dim, dim))
    logdens = []
    eye = np.eye(dim)
    for c in range(class_count):
        for field, want in ((f"mean{c}", (dim,)), (f"cov{c}", (dim, dim))):
            if field not in arrays:
                raise ArtifactError(f"{path}: missing array '{field}'")
            if arrays[field].shape != want:
                raise ArtifactError(f"{path}: array '{field}' has shape {arrays[field].shape}, expected {want}")
        if f"train_logdens{c}" not in arrays:
            raise ArtifactError(f"{path}: missing array 'train_logdens{c}'")
        means[c] = arrays[f"mean{c}"]
        covs[c] = arrays[f"cov{c}"]
        try:
            chols[c] = np.linalg.cholesky(covs[c] + lam * eye)
        except np.linalg.LinAlgError as err:
            raise ArtifactError(f"{path}: array 'cov{c}' is not positive semi-definite") from err
        logdens.append(np.asarray(arrays[f"train_logdens{c}"]))
    return ClassGaussianBank(lam, means, covs, chols, logdens)


def save_classifier(clf: EnergyClassifier, path):
    meta = {
        "dim": clf.dim,
        "class_count": clf.class_count,
        "hidden_width": clf.hidden_width,
        "phi_hidden": clf.phi_hidden,
        "beta": _fmt(clf.beta),
        "seed": clf.seed,
    }
    write_record(path, "classifier", meta, clf.params)


def load_classifier(path) -> EnergyClassifier:
    meta, arrays = read_record(path, "classifier")
    clf = build_energy_classifier(
        dim=_meta_int(path, meta, "dim"),
        class_count=_meta_int(path, meta, "class_count"),
        hidden_width=_meta_int(path, meta, "hidden_width"),
        phi_hidden=_meta_int(path, meta, "phi_hidden"),
        beta=_meta_float(path, meta, "beta"),
        seed=_meta_int(path, meta, "seed"),
    )
    for name, expected in clf.params.items():
        if name not in arrays:
            raise ArtifactError(f"{path}: missing parameter array '{name}'")
        if arrays[name].shape != expected.shape:
            raise ArtifactError(
                f"{path}: parameter '{name}' has shape {arrays[name].shape}, expected {expected.shape}")
    clf.params = {name: arrays[name] for name in clf.params}
    return clf


# ---------------------------------------------------------------------------
# CSV tables
# ---------------------------------------------------------------------------

def _write_csv(path, tag, comments, header, rows):
    lines = [f"# ncis-{tag} v{SCHEMA_VERSION}"]
    lines.extend(f"# {c}" for c in comments)
    lines.append(",".join(header))
    lines.extend(",".join(row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def _read_csv(path, tag):
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact file: {path}")
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith(f"# ncis-{tag} v"):
        raise ArtifactError(f"{path}: not a ncis-{tag} CSV")
    if lines[0] != f"# ncis-{tag} v{SCHEMA_VERSION}":
        raise ArtifactError(f"{path}: unsupported schema_version in '{lines[0]}'")
    comments = []
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        comments.append(lines[i][1:].strip())
        i += 1
    if i >= len(lines):
        raise ArtifactError(f"{path}: missing CSV header row")
    header = lines[i].split(",")
    rows = [line.split(",") for line in lines[i + 1:] if line]
    return comments, header, rows


def save_embeddings_csv(data: LabeledEmbeddingSet, path):
    header = ["index", "label"] + [f"e{j}" for j in range(data.dim)]
    rows = [[str(i), str(int(data.labels[i]))] + [_fmt(v) for v in data.embeddings[i]]
            for i in range(len(data))]
    _write_csv(path, "embeddings", [f"class_count {data.class_count}"], header, rows)


def load_embeddings_csv(path) -> LabeledEmbeddingSet:
    comments, header, rows = _read_csv(path, "embeddings")
    class_count = None
    for c in comments:
        parts = c.split()
        if len(parts) == 2 and parts[0] == "class_count":
            class_count = int(parts[1])
    if class_count is None:
        raise ArtifactError(f"{path}: missing class_count comment")
    dim = len(header) - 2
    if dim < 1 or header[:2] != ["index", "label"]:
        raise ArtifactError(f"{path}: malformed embeddings header")
    try:
        labels = np.array([int(r[1]) for r in rows], dtype=np.int64)
        emb = np.array([[float(v) for v in r[2:]] for r in rows], dtype=np.float64)
    except (ValueError, IndexError) as err:
        raise ArtifactError(f"{path}: malformed embeddings row") from err
    if emb.size == 0:
        emb = emb.reshape(0, dim)
    if emb.shape[1] != dim:
        raise ArtifactError(f"{path}: row width does not match header")
    return LabeledEmbeddingSet(emb, labels, class_count)


def save_points_csv(points, path):
    points = np.asarray(points, dtype=np.float64)
    header = ["index"] + [f"e{j}" for j in range(points.shape[1])]
    rows = [[str(i)] + [_fmt(v) for v in p] for i, p in enumerate(points)]
    _write_csv(path, "points", [], header, rows)


def load_points_csv(path) -> np.ndarray:
    _, header, rows = _read_csv(path, "points")
    dim = len(header) - 1
    try:
        pts = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64)
    except (ValueError, IndexError) as err:
        raise ArtifactError(f"{path}: malformed points row") from err
    if pts.size == 0:
        pts = pts.reshape(0, dim)
    return pts


def save_outliers_csv(outliers: OutlierSet, path):
    dim = outliers.dim
    header = ["class"] + [f"e{j}" for j in range(dim)] + ["log_density", "lambda", "q"]
    rows = []
    for i in range(len(outliers)):
        rows.append([str(int(outliers.labels[i]))]
                    + [_fmt(v) for v in outliers.embeddings[i]]
                    + [_fmt(outliers.log_densities[i]), _fmt(outliers.lam), _fmt(outliers.q)])
    comments = [f"seed {outliers.seed}",
                "attempts " + " ".join(str(int(a)) for a in outliers.attempts)]
    _write_csv(path, "outliers", comments, header, rows)


def load_outliers_csv(path) -> OutlierSet:
    comments, header, rows = _read_csv(path, "outliers")
    if len(header) < 4 or header[0] != "class" or header[-3:] != ["log_density", "lambda", "q"]:
        raise ArtifactError(f"{path}: malformed outliers header")
    dim = len(header) - 4
    seed = 0
    attempts = None
    for c in comments:
        parts = c.split()
        if parts and parts[0] == "seed":
            seed = int(parts[1])
        if parts and parts[0] == "attempts":
            attempts = np.array([int(v) for v in parts[1:]], dtype=np.int64)
    try:
        labels = np.array([int(r[0]) for r in rows], dtype=np.int64)
        emb = np.array([[float(v) for v in r[1:1 + dim]] for r in rows], dtype=np.float64)
        lds = np.array([float(r[1 + dim]) for r in rows], dtype=np.float64)
        lam = float(rows[0][2 + dim]) if rows else 0.0
        q = float(rows[0][3 + dim]) if rows else 0.0
    except (ValueError, IndexError) as err:
        raise ArtifactError(f"{path}: malformed outliers row") from err
    if emb.size == 0:
        emb = emb.reshape(0, dim)
    if attempts is None:
        attempts = np.zeros(int(labels.max()) + 1 if labels.size else 0, dtype=np.int64)
    return OutlierSet(emb, labels, lds, lam, q, seed, attempts)


def save_metrics_csv(rows, path):
    """rows: list of (dataset, method, fpr95, auroc, accuracy)."""
    header = ["dataset", "method", "fpr95", "auroc", "accuracy"]
    body = [[str(d), str(m), _fmt(f), _fmt(a), _fmt(acc)] for d, m, f, a, acc in rows]
    _write_csv(path, "metrics", [], header, body)


def load_metrics_csv(path):
    _, header, rows = _read_csv(path, "metrics")
    if header != ["dataset", "method", "fpr95", "auroc", "accuracy"]:
        raise ArtifactError(f"{path}: malformed metrics header")
    try:
        return [(r[0], r[1], float(r[2]), float(r[3]), float(r[4])) for r in rows]
    except (ValueError, IndexError) as err:
        raise ArtifactError(f"{path}: malformed metrics row") from err


def save_scores_csv(rows, path):
    """rows: list of (index, tag, score, energy)."""
    header = ["index", "tag", "score", "energy"]
    body = [[str(i), str(t), _fmt(s), _fmt(e)] for i, t, s, e in rows]
    _write_csv(path, "scores", [], header, body)


def save_loss_history_csv(history, path):
    header = ["iteration", "loss"]
    body = [[str(int(it)), _fmt(loss)] for it, loss in history]
    _write_csv(path, "loss-history", [], header, body)


def load_loss_history_csv(path) -> np.ndarray:
    _, header, rows = _read_csv(path, "loss-history")
    if header != ["iteration", "loss"]:
        raise ArtifactError(f"{path}: malformed loss-history header")
    try:
        return np.array([[float(r[0]), float(r[1])] for r in rows], dtype=np.float64)
    except (ValueError, IndexError) as err:
        raise ArtifactError(f"{path}: malformed loss-history row") from err


def save_sweep_csv(rows, path):
    """rows: list of (lam, fpr95, auroc, accuracy, mean_invariant_magnitude)."""
    header = ["lambda", "fpr95", "auroc", "accuracy", "mean_invariant_magnitude"]
    body = [[_fmt(l), _fmt(f), _fmt(a), _fmt(acc), _fmt(m)] for l, f, a, acc, m in rows]
    _write_csv(path, "sweep", [], header, body)


# ---------------------------------------------------------------------------
# kind dispatch
# ---------------------------------------------------------------------------

_SAVERS = {
    "cvpn": save_cvpn,
    "bank": save_bank,
    "classifier": save_classifier,
    "outliers": save_outliers_csv,
    "embeddings": save_embeddings_csv,
    "points": save_points_csv,
    "metrics": save_metrics_csv,
    "loss-history": save_loss_history_csv,
}

_LOADERS = {
    "cvpn": load_cvpn,
    "bank": load_bank,
    "classifier": load_classifier,
    "outliers": load_outliers_csv,
    "embeddings": load_embeddings_csv,
    "points": load_points_csv,
    "metrics": load_metrics_csv,
    "loss-history": load_loss_history_csv,
}


def save_artifact(path, kind, obj):
    if kind not in _SAVERS:
        raise ContractError(f"unknown artifact kind '{kind}'")
    _SAVERS[kind](obj, path)


def load_artifact(path, kind):
    if kind not in _LOADERS:
        raise ContractError(f"unknown artifact kind '{kind}'")
    return _LOADERS[kind](path)
