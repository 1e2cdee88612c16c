"""
Datasets for partial-label learning with augmented classes
==========================================================
Ingestion of labeled CSV files, uniform candidate-set synthesis, the
augmented-class train/test construction and class-prior-shift resampling.

Conventions:
  - candidate sets are boolean masks over the known classes (one row per instance)
  - after splitting, the augmented class is always the last index, k_known
  - every random choice draws from a caller-supplied numpy Generator
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from pllac.errors import DataError, ShapeError

logger = logging.getLogger(__name__)


# ──────────────────────────────────────────────
# Data Models
# ──────────────────────────────────────────────
@dataclass
class LabeledDataset:
    features: np.ndarray           # n x d
    labels: np.ndarray             # n, dense indices 0..k-1
    k: int
    label_names: list = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ShapeError(f"features must be a matrix, got shape {self.features.shape}")
        if len(self.features) != len(self.labels):
            raise ShapeError(f"{len(self.features)} feature rows but {len(self.labels)} labels")
        if self.k < 2:
            raise DataError(f"need at least 2 classes, got k={self.k}")
        if self.features.shape[1] < 1:
            raise DataError("need at least one feature column")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.k):
            raise DataError(f"label index outside 0..{self.k - 1}")

    @property
    def n(self):
        return len(self.labels)

    @property
    def d(self):
        return self.features.shape[1]


@dataclass
class PartialDataset:
    """
    Features with candidate-label masks over k known classes. `drawn_over`
    is the size of the label universe the sets were drawn in: sets are
    proper subsets of that universe, which after removing augmented
    classes may be larger than k.
    """
    features: np.ndarray           # n x d
    candidates: np.ndarray         # n x k, bool
    k: int
    true_labels: Optional[np.ndarray] = None
    drawn_over: Optional[int] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.candidates = np.asarray(self.candidates, dtype=bool)
        if self.drawn_over is None:
            self.drawn_over = self.k
        if self.candidates.ndim != 2 or self.candidates.shape[1] != self.k:
            raise ShapeError(f"candidate mask must be n x {self.k}, got {self.candidates.shape}")
        if len(self.features) != len(self.candidates):
            raise ShapeError(f"{len(self.features)} feature rows but {len(self.candidates)} candidate sets")
        sizes = self.candidates.sum(axis=1)
        if np.any(sizes == 0):
            raise DataError(f"empty candidate set at row {int(np.argmax(sizes == 0))}")
        if self.drawn_over == self.k and self.k >= 2 and np.any(sizes == self.k):
            raise DataError(f"candidate set equal to the full label set at row {int(np.argmax(sizes == self.k))}")
        if self.true_labels is not None:
            self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
            rows = np.arange(len(self.true_labels))
            if not np.all(self.candidates[rows, self.true_labels]):
                raise DataError("true label missing from its candidate set")

    @property
    def n(self):
        return len(self.candidates)

    @property
    def d(self):
        return self.features.shape[1]


@dataclass
class AugmentedSplit:
    pll_train: PartialDataset
    unlabeled: np.ndarray          # n_U x d
    test_features: np.ndarray      # m x d
    test_labels: np.ndarray        # m, 0..k_known where k_known is ac
    removed_fraction: float
    train_index: np.ndarray        # source rows of pll_train
    test_index: np.ndarray         # source rows of the test pool

    @property
    def k_known(self):
        return self.pll_train.k

    @property
    def ac_index(self):
        return self.pll_train.k

    @property
    def test_theta(self):
        """Share of known-class rows in the test pool."""
        return float(np.mean(self.test_labels != self.ac_index))


@dataclass
class ShiftConfig:
    alpha: float
    known_class_count: int

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise DataError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.known_class_count < 1:
            raise DataError("known_class_count must be >= 1")

    def weights(self):
        """
        Prior weights of the known classes. An even count gets offsets
        ±alpha·i/(count/2) skipping zero (8 classes: 1-α, 1-3α/4, ..., 1+α);
        an odd count is a plain linear ramp from 1-α to 1+α.
        """
        count = self.known_class_count
        if count % 2 == 0:
            half = count // 2
            steps = np.arange(1, half + 1) / half
            offsets = np.concatenate([-steps[::-1], steps])
        else:
            offsets = np.linspace(-1.0, 1.0, count)
        return 1.0 + self.alpha * offsets


# ──────────────────────────────────────────────
# Ingestion
# ──────────────────────────────────────────────
def load_csv(path, label_column="label"):
    """
    Reads a CSV with a header row. Labels (integers or strings) are mapped
    to dense indices in first-seen order; features are left as they are.
    """
    if not os.path.exists(path):
        raise DataError(f"missing file: {path}")

    try:
        df = pd.read_csv(path, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise DataError(f"empty dataset: {path}") from None
    if df.empty:
        raise DataError(f"empty dataset: {path}")
    if label_column not in df.columns:
        raise DataError(f"label column {label_column!r} not found in {path}")

    raw = df.drop(columns=[label_column])
    values = raw.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    bad = ~np.isfinite(values)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise DataError(f"non-numeric feature at row {row}, column {raw.columns[col]!r}: {raw.iat[row, col]!r}")

    codes, uniques = pd.factorize(df[label_column], sort=False)
    if np.any(codes < 0):
        raise DataError(f"missing label in column {label_column!r}")

    data = LabeledDataset(
        features=values,
        labels=codes,
        k=len(uniques),
        label_names=[str(u) for u in uniques],
    )
    logger.info(f"Loaded {path}: n={data.n}, d={data.d}, k={data.k}")
    return data


def load_indexed_csv(path, label_column="label"):
    """Features plus integer labels taken verbatim (files written by this package)."""
    if not os.path.exists(path):
        raise DataError(f"missing file: {path}")
    df = pd.read_csv(path, encoding="utf-8")
    if label_column not in df.columns:
        raise DataError(f"label column {label_column!r} not found in {path}")
    labels = df[label_column].to_numpy(dtype=np.int64)
    features = df.drop(columns=[label_column]).to_numpy(dtype=np.float64)
    return features, labels


def save_features(features, path, labels=None, label_column="label"):
    df = pd.DataFrame(features, columns=[f"f{i}" for i in range(features.shape[1])])
    if labels is not None:
        df[label_column] = labels
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    df.to_csv(path, index=False)
    return path


def save_partial(dataset, features_path, candidates_path):
    """Features CSV plus a companion file, one line per row of comma-separated candidate labels."""
    save_features(dataset.features, features_path)
    with open(candidates_path, "w", encoding="utf-8") as f:
        for row in dataset.candidates:
            f.write(",".join(str(j) for j in np.flatnonzero(row)) + "\n")
    return features_path, candidates_path


def load_partial(features_path, candidates_path, k=None):
    if not os.path.exists(features_path):
        raise DataError(f"missing file: {features_path}")
    if not os.path.exists(candidates_path):
        raise DataError(f"missing file: {candidates_path}")

    features = pd.read_csv(features_path, encoding="utf-8").to_numpy(dtype=np.float64)
    sets = []
    with open(candidates_path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                raise DataError(f"{candidates_path}:{number}: empty candidate set")
            try:
                sets.append([int(v) for v in line.split(",")])
            except ValueError:
                raise DataError(f"{candidates_path}:{number}: non-integer candidate label") from None

    if k is None:
        k = max(max(s) for s in sets) + 1
    candidates = np.zeros((len(sets), k), dtype=bool)
    for i, labels in enumerate(sets):
        if min(labels) < 0 or max(labels) >= k:
            raise DataError(f"{candidates_path}:{i + 1}: candidate label outside 0..{k - 1}")
        candidates[i, labels] = True
    # sets from external sources may span every known class
    return PartialDataset(features=features, candidates=candidates, k=k, drawn_over=k + 1)


# ──────────────────────────────────────────────
# Candidate synthesis
# ──────────────────────────────────────────────
def generate_candidate_set(true_label, k, rng):
    """
    Uniform draw over the 2^(k-1)-1 proper subsets of {0..k-1} containing
    true_label: every other label joins with probability 1/2, and a draw
    equal to the full set is rejected.
    """
    if k < 2:
        raise DataError(f"candidate generation needs k >= 2, got {k}")
    if not 0 <= true_label < k:
        raise DataError(f"true label {true_label} outside 0..{k - 1}")
    while True:
        mask = rng.random(k) < 0.5
        mask[true_label] = True
        if not mask.all():
            return mask


def generate_candidates(labels, k, rng):
    """Vectorized generate_candidate_set for a whole label vector."""
    if k < 2:
        raise DataError(f"candidate generation needs k >= 2, got {k}")
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.arange(len(labels))
    masks = np.zeros((len(labels), k), dtype=bool)
    pending = rows
    while len(pending):
        draw = rng.random((len(pending), k)) < 0.5
        draw[np.arange(len(pending)), labels[pending]] = True
        masks[pending] = draw
        pending = pending[draw.all(axis=1)]
    return masks


def inject_candidates(data, rng):
    candidates = generate_candidates(data.labels, data.k, rng)
    return PartialDataset(features=data.features, candidates=candidates, k=data.k, true_labels=data.labels)


# ──────────────────────────────────────────────
# Augmented-class split
# ──────────────────────────────────────────────
def sample_unlabeled(test_features, count, rng):
    """Uniform draw with replacement from the test pool."""
    if len(test_features) == 0:
        raise DataError("cannot sample unlabeled data from an empty test pool")
    index = rng.integers(0, len(test_features), size=count)
    return test_features[index]


def make_augmented_split(data, ac_class, test_fraction, rng, unlabeled_count=None):
    """
    Splits a labeled dataset into a partial-label training set without the
    augmented class(es), an unlabeled pool and a labeled test pool.

    Candidate sets are drawn over all original classes; any training row
    whose set contains an augmented class moves to the test pool.
    """
    ac_classes = np.atleast_1d(np.asarray(ac_class, dtype=np.int64))
    ac_classes = np.unique(np.where(ac_classes < 0, ac_classes + data.k, ac_classes))
    if np.any(ac_classes < 0) or np.any(ac_classes >= data.k):
        raise DataError(f"ac class outside 0..{data.k - 1}")
    for c in ac_classes:
        if not np.any(data.labels == c):
            raise DataError(f"ac class {c} absent from data")
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test_fraction must lie in (0, 1), got {test_fraction}")

    known = np.setdiff1d(np.arange(data.k), ac_classes)
    if len(known) == 0:
        raise DataError("no known class left after removing the ac classes")
    k_known = len(known)
    remap = np.full(data.k, k_known, dtype=np.int64)
    remap[known] = np.arange(k_known)

    order = rng.permutation(data.n)
    n_test = int(round(data.n * test_fraction))
    test_rows, train_rows = order[:n_test], order[n_test:]

    candidates = generate_candidates(data.labels[train_rows], data.k, rng)
    is_ac = np.isin(data.labels[train_rows], ac_classes)
    touches_ac = candidates[:, ac_classes].any(axis=1)
    moved = is_ac | touches_ac

    kept_rows = train_rows[~moved]
    if len(kept_rows) == 0:
        raise DataError("partial-label training set is empty after removing ac rows")
    test_index = np.concatenate([test_rows, train_rows[moved]])

    pll_train = PartialDataset(
        features=data.features[kept_rows],
        candidates=candidates[~moved][:, known],
        k=k_known,
        true_labels=remap[data.labels[kept_rows]],
        drawn_over=data.k,
    )
    test_features = data.features[test_index]
    if unlabeled_count is None:
        unlabeled_count = len(test_index)
    unlabeled = sample_unlabeled(test_features, unlabeled_count, rng)

    removed_fraction = float(moved.sum() / len(train_rows)) if len(train_rows) else 0.0
    logger.info(
        f"Split: {pll_train.n} partial-label rows, {len(test_index)} test rows, "
        f"{unlabeled_count} unlabeled, removed {removed_fraction:.1%} of training rows"
    )
    return AugmentedSplit(
        pll_train=pll_train,
        unlabeled=unlabeled,
        test_features=test_features,
        test_labels=remap[data.labels[test_index]],
        removed_fraction=removed_fraction,
        train_index=kept_rows,
        test_index=test_index,
    )


# ──────────────────────────────────────────────
# Class-prior shift
# ──────────────────────────────────────────────
def resample_with_prior_shift(features, labels, cfg, rng):
    """
    Resamples a test set (with replacement, same size) so that each known
    class's prior is its original prior scaled by its shift weight; the
    augmented class (index cfg.known_class_count) keeps weight 1.
    """
    labels = np.asarray(labels, dtype=np.int64)
    count = cfg.known_class_count
    weights = np.append(cfg.weights(), 1.0)
    counts = np.bincount(labels, minlength=count + 1)[: count + 1]
    for c in range(count):
        if counts[c] == 0:
            raise DataError(f"known class {c} has no rows but positive shift weight")

    target = weights * counts
    target = target / target.sum()
    draws = rng.multinomial(len(labels), target)

    index = np.concatenate([
        rng.choice(np.flatnonzero(labels == c), size=draws[c], replace=True)
        for c in range(count + 1)
        if draws[c] > 0
    ])
    index = index[rng.permutation(len(index))]
    logger.info(f"Prior shift alpha={cfg.alpha}: target priors {np.round(target, 3).tolist()}")
    return features[index], labels[index]


# ──────────────────────────────────────────────
# Synthetic data
# ──────────────────────────────────────────────
def make_blobs(n_per_class, k_known, rng, separation=6.0, spread=1.0, overlap=0.0, d=2, ac_size=None):
    """
    Gaussian blobs on a circle of radius `separation` in the first two
    dimensions: k_known known classes plus one augmented cluster with the
    last index. `overlap` in [0, 1] slides the ac center towards class 0.
    """
    if d < 2:
        raise DataError("make_blobs needs d >= 2")
    n_classes = k_known + 1
    angles = 2 * np.pi * np.arange(n_classes) / n_classes
    centers = np.zeros((n_classes, d))
    centers[:, 0] = separation * np.cos(angles)
    centers[:, 1] = separation * np.sin(angles)
    centers[-1] = (1.0 - overlap) * centers[-1] + overlap * centers[0]

    sizes = [n_per_class] * k_known + [n_per_class if ac_size is None else ac_size]
    labels = np.repeat(np.arange(n_classes), sizes)
    features = centers[labels] + spread * rng.standard_normal((len(labels), d))
    return LabeledDataset(features=features, labels=labels, k=n_classes,
                          label_names=[str(c) for c in range(n_classes)])
