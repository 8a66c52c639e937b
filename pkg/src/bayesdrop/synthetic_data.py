"""Synthetic binary classification with a few informative features.

Labels are fair coin flips.  The first ``n_informative`` columns are drawn
from ``N(+shift, std^2)`` when ``y = 1`` and ``N(-shift, std^2)`` when
``y = 0``; the remaining ``n_noise`` columns are ``N(0, std^2)`` whatever
the label.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtr, ndtri

SPLITS = ("train", "valid", "test")


@dataclass(frozen=True)
class DataConfig:
    n_informative: int = 100
    n_noise: int = 900
    mean_shift: float = 0.1
    feature_std: float = 1.0
    n_train: int = 2000
    n_valid: int = 1000
    n_test: int = 20000
    seed: int = 0

    def __post_init__(self):
        for name in ("n_informative", "n_noise", "n_train", "n_valid", "n_test"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.feature_std > 0:
            raise ValueError("feature_std must be positive")

    @property
    def n_features(self):
        return self.n_informative + self.n_noise

    def split_sizes(self):
        return {"train": self.n_train, "valid": self.n_valid, "test": self.n_test}

    def to_dict(self):
        return asdict(self)


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"
    n_informative: int | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int8).reshape(-1)
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be a 2-D array")
        if self.inputs.shape[0] != self.labels.size:
            raise ValueError(
                f"{self.inputs.shape[0]} input rows but {self.labels.size} labels"
            )
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("inputs contain non-finite values")
        if np.any((self.labels != 0) & (self.labels != 1)):
            raise ValueError("labels must be 0 or 1")

    def __len__(self):
        return self.labels.size

    @property
    def n_features(self):
        return self.inputs.shape[1]


def _gaussian(rng, shape):
    # inverse-CDF sampling; keep u away from 0 so ndtri stays finite
    u = rng.random(shape)
    return ndtri(np.maximum(u, np.finfo(float).tiny))


def generate(config):
    """Return ``{"train": Dataset, "valid": Dataset, "test": Dataset}``.

    All three splits come from one PCG64 stream seeded with ``config.seed``,
    drawn in train, valid, test order (labels first, then features).
    """
    rng = np.random.default_rng(config.seed)
    k, d = config.n_informative, config.n_features
    out = {}
    for split, n in config.split_sizes().items():
        y = (rng.random(n) < 0.5).astype(np.int8)
        X = _gaussian(rng, (n, d)) * config.feature_std
        X[:, :k] += np.where(y == 1, config.mean_shift, -config.mean_shift)[:, None]
        out[split] = Dataset(X, y, split, k)
    return out


def bayes_optimal_accuracy(config):
    """Accuracy of ``sign(sum of informative features)``, ``Phi(sqrt(k) shift / std)``."""
    k = config.n_informative
    if k == 0:
        return 0.5
    return float(ndtr(math.sqrt(k) * config.mean_shift / config.feature_std))


def _header(n_features, n_informative):
    if n_informative is None:
        return ["label"] + [f"x{j + 1}" for j in range(n_features)]
    return (
        ["label"]
        + [f"informative{j + 1}" for j in range(n_informative)]
        + [f"noise{j + 1}" for j in range(n_features - n_informative)]
    )


def save_csv(dataset, path):
    """Write ``label,features...`` with round-trippable float formatting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_header(dataset.n_features, dataset.n_informative))
        for y, row in zip(dataset.labels, dataset.inputs):
            writer.writerow([int(y)] + [repr(float(v)) for v in row])


def load_csv(path, split=None):
    """Read a file written by :func:`save_csv`.

    Raises ValueError naming the offending line on malformed content.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: line 1: missing header") from None
        if not header or header[0] != "label":
            raise ValueError(f"{path}: line 1: first column must be 'label'")
        n_features = len(header) - 1
        roles = [h.rstrip("0123456789") for h in header[1:]]
        n_inf = roles.count("informative")
        if n_inf == 0 and "noise" not in roles:
            n_inf = None
        labels, rows = [], []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != n_features + 1:
                raise ValueError(
                    f"{path}: line {lineno}: expected {n_features + 1} fields, got {len(rec)}"
                )
            try:
                labels.append(int(rec[0]))
                rows.append([float(v) for v in rec[1:]])
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
    inputs = np.array(rows, dtype=float).reshape(len(rows), n_features)
    if split is None:
        split = "train"
    try:
        return Dataset(inputs, np.array(labels, dtype=np.int8), split, n_inf)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
