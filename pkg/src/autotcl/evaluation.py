"""Frozen-encoder downstream probes.

Forecasting: the representation of the window ending at timestamp t predicts
the next ``horizon`` standardized values through a closed-form ridge
regression with an unpenalized bias, the penalty picked on the validation
split. Classification: pooled per-instance embeddings feed an RBF-kernel SVM
with the bandwidth set by the median heuristic.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import torch
from scipy.spatial.distance import pdist
from scipy.stats import rankdata
from sklearn.svm import SVC

from .data import TimeSeriesDataset
from .encoder import Encoder
from .errors import ValidationError

RIDGE_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)
SVM_C_GRID = (0.1, 1.0, 10.0, 100.0)

FORECAST_CSV_COLUMNS = ("method", "dataset", "setting", "horizon", "mse", "mae", "seed", "config_hash")
CLASSIFY_CSV_COLUMNS = ("method", "dataset", "accuracy", "seed", "config_hash")


@dataclass
class ForecastResult:
    horizon: int
    mse: float
    mae: float
    n_test: int
    setting: str


@dataclass
class ClassifyResult:
    dataset: str
    accuracy: float
    n_test: int


# ----- feature extraction -----


def extract_features(
    encoder: Encoder,
    ds: TimeSeriesDataset,
    split: str,
    window_len: int,
    batch_size: int = 128,
) -> tuple[np.ndarray, np.ndarray]:
    """Pooled representation of the window ending at each admissible t.

    Returns (features, t_index): features[i] embeds rows
    [t_index[i] - window_len + 1, t_index[i]] of the series. Deterministic;
    timestamp masking is never applied here.
    """
    lo, hi = ds.split_range(split)
    if hi - lo < window_len:
        raise ValidationError(
            f"split {split} of length {hi - lo} shorter than window {window_len}"
        )
    t_index = np.arange(lo + window_len - 1, hi)
    values = torch.as_tensor(ds.values, dtype=torch.float32)
    feats = []
    encoder.eval()
    with torch.no_grad():
        for i in range(0, len(t_index), batch_size):
            chunk = t_index[i : i + batch_size]
            windows = torch.stack(
                [values[t - window_len + 1 : t + 1] for t in chunk]
            )
            feats.append(encoder(windows).pooled.double().numpy())
    return np.concatenate(feats, axis=0), t_index


def forecast_targets(
    ds: TimeSeriesDataset, t_index: np.ndarray, horizon: int, split: str
) -> tuple[np.ndarray, np.ndarray]:
    """Next-``horizon`` values after each feature timestamp, flattened over
    channels; rows whose target would cross the split boundary are dropped.

    Returns (targets, keep) where keep masks the usable rows of t_index.
    """
    lo, hi = ds.split_range(split)
    keep = t_index + horizon <= hi - 1
    if not keep.any():
        raise ValidationError(
            f"horizon {horizon} exceeds usable length of split {split}"
        )
    rows = [
        ds.values[t + 1 : t + 1 + horizon].reshape(-1) for t in t_index[keep]
    ]
    return np.stack(rows), keep


# ----- ridge probe -----


@dataclass
class RidgeProbe:
    weights: np.ndarray  # (D, out)
    bias: np.ndarray  # (out,)
    l2: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights + self.bias


def fit_ridge(X: np.ndarray, Y: np.ndarray, l2: float) -> RidgeProbe:
    """Closed-form ridge with an unpenalized bias column.

    Solves (X_a^T X_a + P) W = X_a^T Y where X_a appends a ones column and P
    is l2 * I with a zero in the bias row. A singular system at l2 = 0 falls
    back to the smallest grid penalty.
    """
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValidationError("ridge fit needs at least one training row")
    Y = Y.reshape(X.shape[0], -1)
    n, d = X.shape
    Xa = np.concatenate([X, np.ones((n, 1))], axis=1)
    penalty = l2 * np.eye(d + 1)
    penalty[-1, -1] = 0.0
    gram = Xa.T @ Xa + penalty
    rhs = Xa.T @ Y
    try:
        W = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        l2 = min(RIDGE_GRID)
        penalty = l2 * np.eye(d + 1)
        penalty[-1, -1] = 0.0
        W = np.linalg.solve(Xa.T @ Xa + penalty, rhs)
    return RidgeProbe(weights=W[:-1], bias=W[-1], l2=l2)


def fit_forecast_probe(
    train_X: np.ndarray,
    train_Y: np.ndarray,
    valid_X: np.ndarray,
    valid_Y: np.ndarray,
    grid: tuple = RIDGE_GRID,
) -> RidgeProbe:
    """Fit at every grid penalty and keep the best validation MSE."""
    best = None
    best_mse = np.inf
    for l2 in grid:
        probe = fit_ridge(train_X, train_Y, l2)
        mse = float(np.mean((probe.predict(valid_X) - valid_Y.reshape(valid_X.shape[0], -1)) ** 2))
        if mse < best_mse:
            best, best_mse = probe, mse
    return best


def evaluate_forecast(
    probe: RidgeProbe, test_X: np.ndarray, test_Y: np.ndarray, horizon: int, setting: str
) -> ForecastResult:
    pred = probe.predict(test_X)
    err = pred - test_Y.reshape(test_X.shape[0], -1)
    return ForecastResult(
        horizon=horizon,
        mse=float(np.mean(err**2)),
        mae=float(np.mean(np.abs(err))),
        n_test=test_X.shape[0],
        setting=setting,
    )


def run_forecast_evaluation(
    encoder: Encoder,
    ds: TimeSeriesDataset,
    window_len: int,
    horizons: list[int],
    setting: str,
) -> list[ForecastResult]:
    """Full probe pipeline over several horizons with shared features."""
    split_feats = {
        split: extract_features(encoder, ds, split, window_len)
        for split in ("train", "valid", "test")
    }
    results = []
    for horizon in horizons:
        per_split = {}
        for split, (X, t_index) in split_feats.items():
            Y, keep = forecast_targets(ds, t_index, horizon, split)
            per_split[split] = (X[keep], Y)
        probe = fit_forecast_probe(
            *per_split["train"], *per_split["valid"]
        )
        results.append(
            evaluate_forecast(probe, *per_split["test"], horizon=horizon, setting=setting)
        )
    return results


# ----- classification probe -----


def instance_embeddings(
    encoder: Encoder, ds: TimeSeriesDataset, batch_size: int = 64
) -> np.ndarray:
    inst = torch.as_tensor(ds.instances(), dtype=torch.float32)
    out = []
    encoder.eval()
    with torch.no_grad():
        for i in range(0, inst.shape[0], batch_size):
            out.append(encoder(inst[i : i + batch_size]).pooled.double().numpy())
    return np.concatenate(out, axis=0)


def _median_heuristic_gamma(X: np.ndarray) -> float:
    if X.shape[0] < 2:
        return 1.0 / X.shape[1]
    med = float(np.median(pdist(X)))
    if med <= 0:
        return 1.0 / X.shape[1]
    return 1.0 / (2.0 * med**2)


def _stratified_fold(y: np.ndarray, frac: float, seed: int = 0) -> np.ndarray:
    """Boolean mask marking a held-out fold with every class represented."""
    rng = np.random.default_rng(seed)
    held = np.zeros(len(y), dtype=bool)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        n_held = max(1, int(round(frac * len(idx))))
        held[idx[:n_held]] = True
    return held


def svm_accuracy(
    X_train: np.ndarray, y_train: np.ndarray, X_test: np.ndarray, y_test: np.ndarray
) -> float:
    """RBF-kernel SVM accuracy with median-heuristic bandwidth.

    The penalty is picked from a fixed grid on one stratified held-out fold,
    then the classifier is refit on the full training set.
    """
    if len(np.unique(y_train)) < 2:
        raise ValidationError("training set has a single class")
    gamma = _median_heuristic_gamma(X_train)
    counts = np.bincount(y_train)
    if counts[counts > 0].min() >= 2:
        held = _stratified_fold(y_train, frac=0.25)
        best_c, best_acc = SVM_C_GRID[0], -1.0
        for c in SVM_C_GRID:
            clf = SVC(C=c, kernel="rbf", gamma=gamma)
            clf.fit(X_train[~held], y_train[~held])
            acc = float(np.mean(clf.predict(X_train[held]) == y_train[held]))
            if acc > best_acc:
                best_c, best_acc = c, acc
    else:
        best_c = 1.0
    clf = SVC(C=best_c, kernel="rbf", gamma=gamma)
    clf.fit(X_train, y_train)
    return float(np.mean(clf.predict(X_test) == y_test))


def evaluate_classification(
    encoder: Encoder, train_ds: TimeSeriesDataset, test_ds: TimeSeriesDataset
) -> ClassifyResult:
    """RBF-kernel SVM on pooled embeddings; returns test accuracy."""
    y_train = train_ds.labels
    y_test = test_ds.labels
    if y_train is None or y_test is None:
        raise ValidationError("classification datasets must carry labels")
    X_train = instance_embeddings(encoder, train_ds)
    X_test = instance_embeddings(encoder, test_ds)
    accuracy = svm_accuracy(X_train, y_train, X_test, y_test)
    return ClassifyResult(dataset=test_ds.name, accuracy=accuracy, n_test=len(y_test))


# ----- aggregation and serialization -----


def aggregate_ranks(acc_table: dict[str, dict[str, float]]) -> dict[str, dict[str, float]]:
    """Mean accuracy and mean rank per method; rank 1 is best, ties averaged.

    ``acc_table`` maps method -> {dataset: accuracy}; every method must cover
    the same datasets.
    """
    methods = sorted(acc_table)
    if not methods:
        raise ValidationError("empty accuracy table")
    datasets = sorted(acc_table[methods[0]])
    for m in methods:
        if sorted(acc_table[m]) != datasets:
            raise ValidationError(f"method {m} does not cover all datasets")
    ranks = {m: [] for m in methods}
    for d in datasets:
        accs = np.array([acc_table[m][d] for m in methods])
        r = rankdata(-accs, method="average")
        for m, rank in zip(methods, r):
            ranks[m].append(rank)
    return {
        m: {
            "mean_accuracy": float(np.mean([acc_table[m][d] for d in datasets])),
            "mean_rank": float(np.mean(ranks[m])),
        }
        for m in methods
    }


def write_forecast_csv(path: str, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=FORECAST_CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in FORECAST_CSV_COLUMNS})


def write_classify_csv(path: str, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CLASSIFY_CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in CLASSIFY_CSV_COLUMNS})
