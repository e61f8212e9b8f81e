"""Dataset ingestion, normalization, windowing, and splitting.

Forecasting datasets are a single long multivariate series split
chronologically. Classification datasets are stacks of equal-length labeled
instances loaded from a converted archive directory (one whitespace-separated
text file per instance plus a label index).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import FormatError, ValidationError

STD_FLOOR = 1e-8
DEFAULT_RATIOS = (0.6, 0.2, 0.2)

SPLIT_NAMES = ("train", "valid", "test")


@dataclass
class TimeSeriesDataset:
    """A time-major value matrix plus split bookkeeping.

    ``values`` has shape (N_total, F). For classification tasks the rows are
    the concatenation of ``n_instances`` equal-length instances and ``labels``
    holds one integer per instance.
    """

    values: np.ndarray
    name: str
    task: str = "forecasting"
    timestamps: np.ndarray | None = None
    split: dict[str, tuple[int, int]] = field(default_factory=dict)
    channel_mean: np.ndarray | None = None
    channel_std: np.ndarray | None = None
    labels: np.ndarray | None = None
    instance_length: int | None = None
    label_names: tuple[str, ...] | None = None

    @property
    def n_total(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def n_instances(self) -> int:
        if self.instance_length is None:
            raise ValidationError("dataset has no instance structure")
        return self.n_total // self.instance_length

    def split_range(self, split: str) -> tuple[int, int]:
        if split not in self.split:
            raise ValidationError(f"split {split!r} not assigned")
        return self.split[split]

    def split_values(self, split: str) -> np.ndarray:
        lo, hi = self.split_range(split)
        return self.values[lo:hi]

    def instances(self) -> np.ndarray:
        """View the value matrix as (n_instances, T, F)."""
        if self.instance_length is None:
            raise ValidationError("dataset has no instance structure")
        n = self.n_instances
        return self.values.reshape(n, self.instance_length, self.n_channels)

    def validate(self) -> None:
        if self.values.ndim != 2:
            raise ValidationError(f"values must be 2-d, got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValidationError("values contain non-finite entries")
        if self.timestamps is not None:
            ts = np.asarray(self.timestamps)
            if len(ts) != self.n_total:
                raise ValidationError("timestamps length mismatch")
            if np.any(ts[1:] <= ts[:-1]):
                raise ValidationError("timestamps must be strictly increasing")
        prev_end = 0
        for name in SPLIT_NAMES:
            if name not in self.split:
                continue
            lo, hi = self.split[name]
            if lo < prev_end or hi < lo or hi > self.n_total:
                raise ValidationError(f"split {name} range ({lo},{hi}) out of order")
            prev_end = hi
        if self.labels is not None:
            if self.instance_length is None:
                raise ValidationError("labels without instance structure")
            if len(self.labels) != self.n_instances:
                raise ValidationError(
                    f"{len(self.labels)} labels for {self.n_instances} instances"
                )


@dataclass
class WindowBatch:
    """A batch of equal-length windows drawn from one split."""

    windows: np.ndarray  # (B, T, F)
    origin_indices: np.ndarray  # (B,) start row in the source array

    @property
    def batch_size(self) -> int:
        return self.windows.shape[0]

    @property
    def window_len(self) -> int:
        return self.windows.shape[1]


def _coerce_numeric(frame: pd.DataFrame, first_data_line: int) -> np.ndarray:
    """Convert a string frame to float64, reporting the first bad cell."""
    out = np.empty(frame.shape, dtype=np.float64)
    for j, col in enumerate(frame.columns):
        converted = pd.to_numeric(frame[col], errors="coerce")
        raw_na = frame[col].isna()
        bad = converted.isna() & ~raw_na
        if bad.any():
            i = int(np.argmax(bad.to_numpy()))
            raise FormatError(
                f"non-numeric value {frame[col].iloc[i]!r} in column {col!r}",
                line=first_data_line + i,
                column=j + 1,
            )
        if raw_na.any():
            i = int(np.argmax(raw_na.to_numpy()))
            raise FormatError(
                f"missing value in column {col!r}",
                line=first_data_line + i,
                column=j + 1,
            )
        out[:, j] = converted.to_numpy(dtype=np.float64)
    return out


def _load_ett_csv(path: str) -> TimeSeriesDataset:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=True)
    except Exception as exc:  # pandas raises a mixed bag of parse errors
        raise FormatError(f"cannot parse CSV {path}: {exc}") from exc
    if frame.shape[1] < 2:
        raise FormatError("ett_csv requires a date column plus numeric channels")
    date_col = frame.columns[0]
    try:
        stamps = pd.to_datetime(frame[date_col], format="mixed").to_numpy()
    except (ValueError, TypeError) as exc:
        raise FormatError(f"unparseable timestamp in column {date_col!r}: {exc}", line=2) from exc
    values = _coerce_numeric(frame.iloc[:, 1:], first_data_line=2)
    ds = TimeSeriesDataset(
        values=values,
        name=os.path.splitext(os.path.basename(path))[0],
        task="forecasting",
        timestamps=stamps,
    )
    ds = _try_default_split(ds)
    ds.validate()
    return ds


def _load_generic_csv(path: str) -> TimeSeriesDataset:
    try:
        probe = pd.read_csv(path, dtype=str, nrows=1, header=None)
    except Exception as exc:
        raise FormatError(f"cannot parse CSV {path}: {exc}") from exc
    has_header = False
    for cell in probe.iloc[0]:
        try:
            float(cell)
        except (TypeError, ValueError):
            has_header = True
            break
    try:
        frame = pd.read_csv(path, dtype=str, header=0 if has_header else None)
    except Exception as exc:
        raise FormatError(f"cannot parse CSV {path}: {exc}") from exc
    values = _coerce_numeric(frame, first_data_line=2 if has_header else 1)
    ds = TimeSeriesDataset(
        values=values,
        name=os.path.splitext(os.path.basename(path))[0],
        task="forecasting",
    )
    ds = _try_default_split(ds)
    ds.validate()
    return ds


def _try_default_split(ds: TimeSeriesDataset) -> TimeSeriesDataset:
    """Assign the default chronological split when the series is long enough;
    a file too short for non-empty splits loads fine with the split deferred."""
    try:
        return split_forecasting(ds, DEFAULT_RATIOS)
    except ValidationError:
        return ds


def _load_uea_archive(path: str) -> TimeSeriesDataset:
    """Converted archive layout: data/<id>.txt per instance + labels.txt."""
    labels_path = os.path.join(path, "labels.txt")
    data_dir = os.path.join(path, "data")
    if not os.path.isfile(labels_path):
        raise FormatError(f"missing labels.txt under {path}")
    if not os.path.isdir(data_dir):
        raise FormatError(f"missing data/ directory under {path}")

    ids: list[str] = []
    raw_labels: list[str] = []
    with open(labels_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise FormatError("expected 'instance_id,label'", line=lineno)
            ids.append(parts[0].strip())
            raw_labels.append(parts[1].strip())
    if not ids:
        raise FormatError(f"empty labels.txt under {path}")

    instances = []
    for iid in ids:
        fpath = os.path.join(data_dir, f"{iid}.txt")
        if not os.path.isfile(fpath):
            raise FormatError(f"missing instance file data/{iid}.txt")
        try:
            arr = np.loadtxt(fpath, dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise FormatError(f"cannot parse data/{iid}.txt: {exc}") from exc
        if not np.isfinite(arr).all():
            raise FormatError(f"non-finite value in data/{iid}.txt")
        instances.append(arr)

    t0, f0 = instances[0].shape
    for iid, arr in zip(ids, instances):
        if arr.shape != (t0, f0):
            raise FormatError(
                f"instance data/{iid}.txt has shape {arr.shape}, expected {(t0, f0)}"
            )

    label_names = tuple(sorted(set(raw_labels)))
    label_index = {name: k for k, name in enumerate(label_names)}
    labels = np.array([label_index[l] for l in raw_labels], dtype=np.int64)

    values = np.concatenate(instances, axis=0)
    ds = TimeSeriesDataset(
        values=values,
        name=os.path.basename(os.path.normpath(path)),
        task="classification",
        split={"train": (0, values.shape[0])},
        labels=labels,
        instance_length=t0,
        label_names=label_names,
    )
    ds.validate()
    return ds


_LOADERS = {
    "ett_csv": _load_ett_csv,
    "generic_csv": _load_generic_csv,
    "uea_archive": _load_uea_archive,
}


def load_series(path: str, format: str) -> TimeSeriesDataset:
    """Load a dataset from disk. No normalization is applied here."""
    if format not in _LOADERS:
        raise ValidationError(f"unknown format {format!r}; choose from {sorted(_LOADERS)}")
    if not os.path.exists(path):
        raise FormatError(f"no such path: {path}")
    return _LOADERS[format](path)


def split_forecasting(
    ds: TimeSeriesDataset, ratios: tuple[float, float, float] = DEFAULT_RATIOS
) -> TimeSeriesDataset:
    """Assign contiguous chronological train/valid/test ranges.

    Boundaries follow the floor-then-remainder rule: train and valid lengths
    are floored, test takes whatever is left.
    """
    r_train, r_valid, r_test = ratios
    if min(ratios) <= 0:
        raise ValidationError(f"ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"ratios must sum to 1, got {sum(ratios)!r}")
    n = ds.n_total
    n_train = int(np.floor(r_train * n))
    n_valid = int(np.floor(r_valid * n))
    split = {
        "train": (0, n_train),
        "valid": (n_train, n_train + n_valid),
        "test": (n_train + n_valid, n),
    }
    for name, (lo, hi) in split.items():
        if hi <= lo:
            raise ValidationError(f"split {name} is empty for N={n}, ratios={ratios}")
    return replace(ds, split=split)


def select_channels(ds: TimeSeriesDataset, setting: str) -> TimeSeriesDataset:
    """Reduce a forecasting dataset to its target channel for the univariate
    setting; the target is the last column by convention."""
    if setting == "multivariate":
        return ds
    if setting != "univariate":
        raise ValidationError(f"setting must be univariate or multivariate, got {setting!r}")
    if ds.task != "forecasting":
        return ds
    return replace(ds, values=ds.values[:, -1:], channel_mean=None, channel_std=None)


def standardize(ds: TimeSeriesDataset) -> TimeSeriesDataset:
    """Z-score every channel using train-split statistics only."""
    if "train" not in ds.split:
        raise ValidationError("standardize requires an assigned split")
    lo, hi = ds.split["train"]
    if hi <= lo:
        raise ValidationError("empty training split")
    train = ds.values[lo:hi]
    mean = train.mean(axis=0)
    std = np.maximum(train.std(axis=0), STD_FLOOR)
    values = (ds.values - mean) / std
    return replace(ds, values=values, channel_mean=mean, channel_std=std)


def inverse_standardize(ds: TimeSeriesDataset, values: np.ndarray) -> np.ndarray:
    """Map standardized values back to the raw scale."""
    if ds.channel_mean is None or ds.channel_std is None:
        raise ValidationError("dataset carries no normalization statistics")
    return values * ds.channel_std + ds.channel_mean


def apply_standardization(
    ds: TimeSeriesDataset, mean: np.ndarray, std: np.ndarray
) -> TimeSeriesDataset:
    """Standardize with statistics taken from another dataset (train stats
    applied to a held-out archive)."""
    std = np.maximum(std, STD_FLOOR)
    return replace(
        ds, values=(ds.values - mean) / std, channel_mean=mean, channel_std=std
    )


def window_starts(split_len: int, window_len: int, stride: int) -> np.ndarray:
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    if window_len > split_len:
        raise ValidationError(
            f"window length {window_len} exceeds split length {split_len}"
        )
    return np.arange(0, split_len - window_len + 1, stride)


def make_windows(
    ds: TimeSeriesDataset,
    window_len: int,
    stride: int,
    split: str,
    batch_size: int = 8,
) -> list[WindowBatch]:
    """Slide fixed-length windows over one split and group them into batches.

    Windows never cross a split boundary. Batches preserve chronological
    order; the last batch may be short.
    """
    lo, hi = ds.split_range(split)
    starts = window_starts(hi - lo, window_len, stride) + lo
    batches = []
    for i in range(0, len(starts), batch_size):
        chunk = starts[i : i + batch_size]
        windows = np.stack([ds.values[s : s + window_len] for s in chunk])
        batches.append(WindowBatch(windows=windows, origin_indices=chunk.copy()))
    return batches


def instance_windows(
    ds: TimeSeriesDataset, window_len: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Return (instances, labels) for classification, optionally cropped.

    When ``window_len`` is shorter than the stored instance length, each
    instance keeps its leading ``window_len`` rows; longer requests fail.
    """
    if ds.task != "classification":
        raise ValidationError("instance_windows requires a classification dataset")
    inst = ds.instances()
    if window_len is not None:
        if window_len > inst.shape[1]:
            raise ValidationError(
                f"window length {window_len} exceeds instance length {inst.shape[1]}"
            )
        inst = inst[:, :window_len, :]
    return inst, ds.labels
