import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from autotcl.config import ExperimentConfig
from autotcl.data import TimeSeriesDataset, split_forecasting, standardize


def tiny_config(**overrides) -> ExperimentConfig:
    """A config small enough for fast unit runs; overridable per test."""
    base = dict(
        depth=2,
        hidden_dim=16,
        repr_dim=8,
        aug_depth=1,
        aug_hidden_dim=8,
        window_len=24,
        segment_len=4,
        stride=4,
        epochs=2,
        batch_size=4,
        aug_period=2,
        checkpoint_every=100,
        seed=0,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def sinusoid_series(n=400, channels=2, seed=0, noise=0.1) -> np.ndarray:
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    cols = []
    for c in range(channels):
        period = 24 * (c + 1)
        cols.append(np.sin(2 * np.pi * t / period + c) + noise * rng.normal(size=n))
    return np.stack(cols, axis=1)


def sinusoid_dataset(n=400, channels=2, seed=0, noise=0.1) -> TimeSeriesDataset:
    values = sinusoid_series(n, channels, seed, noise)
    ds = TimeSeriesDataset(values=values, name="sinusoid", task="forecasting")
    return standardize(split_forecasting(ds))


def make_archive(root, name, n_instances=8, length=30, channels=2, n_classes=2, seed=0):
    """Write a tiny converted classification archive; returns its path.

    Class k instances are sinusoids at frequency k+1 plus noise, so classes
    are separable by any reasonable encoder.
    """
    rng = np.random.default_rng(seed)
    base = os.path.join(root, name)
    os.makedirs(os.path.join(base, "data"))
    t = np.arange(length)
    lines = []
    for i in range(n_instances):
        label = i % n_classes
        inst = np.stack(
            [
                np.sin(2 * np.pi * (label + 1) * t / length + c)
                + 0.05 * rng.normal(size=length)
                for c in range(channels)
            ],
            axis=1,
        )
        np.savetxt(os.path.join(base, "data", f"inst{i}.txt"), inst)
        lines.append(f"inst{i},class{label}")
    with open(os.path.join(base, "labels.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return base


@pytest.fixture
def toy_csv(tmp_path):
    """A 400-row, 2-channel numeric CSV with header."""
    path = tmp_path / "toy.csv"
    values = sinusoid_series(400, 2, seed=7)
    np.savetxt(path, values, delimiter=",", header="a,b", comments="")
    return str(path)
