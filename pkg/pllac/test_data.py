import numpy as np
import numpy.testing as npt
import pytest
from scipy.stats import chisquare

from pllac.data import (
    LabeledDataset, PartialDataset, ShiftConfig, generate_candidate_set, generate_candidates, inject_candidates,
    load_csv, load_partial, make_augmented_split, make_blobs, resample_with_prior_shift, sample_unlabeled,
    save_partial,
)
from pllac.errors import DataError, ShapeError


# ──────────────────────────────────────────────
# Ingestion
# ──────────────────────────────────────────────
def test_load_csv_maps_labels_in_first_seen_order(tmp_path):
    path = tmp_path / "toy.csv"
    path.write_text("a,b,label\n1,2,cat\n3,4,dog\n5,6,cat\n7,8,bird\n", encoding="utf-8")
    data = load_csv(str(path))
    assert data.k == 3
    assert data.label_names == ["cat", "dog", "bird"]
    npt.assert_array_equal(data.labels, [0, 1, 0, 2])
    npt.assert_array_equal(data.features, [[1, 2], [3, 4], [5, 6], [7, 8]])


def test_load_csv_rejects_non_numeric_features(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,label\n1,2,0\n3,x,1\n", encoding="utf-8")
    with pytest.raises(DataError, match="non-numeric feature"):
        load_csv(str(path))


def test_load_csv_missing_and_empty(tmp_path):
    with pytest.raises(DataError, match="missing file"):
        load_csv(str(tmp_path / "nope.csv"))

    empty = tmp_path / "empty.csv"
    empty.write_text("", encoding="utf-8")
    with pytest.raises(DataError, match="empty dataset"):
        load_csv(str(empty))

    header_only = tmp_path / "header.csv"
    header_only.write_text("a,label\n", encoding="utf-8")
    with pytest.raises(DataError, match="empty dataset"):
        load_csv(str(header_only))


def test_labeled_dataset_validation():
    with pytest.raises(ShapeError):
        LabeledDataset(features=np.zeros((3, 2)), labels=[0, 1], k=2)
    with pytest.raises(DataError):
        LabeledDataset(features=np.zeros((2, 2)), labels=[0, 2], k=2)


def test_partial_dataset_invariants():
    features = np.zeros((2, 1))
    with pytest.raises(DataError, match="empty candidate set"):
        PartialDataset(features, np.array([[True, False, False], [False, False, False]]), k=3)
    with pytest.raises(DataError, match="full label set"):
        PartialDataset(features, np.array([[True, True, True], [True, False, False]]), k=3)
    with pytest.raises(DataError, match="true label"):
        PartialDataset(features, np.array([[True, False, False], [False, True, False]]), k=3, true_labels=[0, 2])
    # a set spanning every known class is fine when drawn over a larger universe
    PartialDataset(features, np.array([[True, True, True], [True, False, False]]), k=3, drawn_over=4)


def test_partial_files_round_trip(tmp_path, rng):
    data = make_blobs(10, 3, rng)
    partial = inject_candidates(data, rng)
    features_path, candidates_path = save_partial(partial, str(tmp_path / "f.csv"), str(tmp_path / "s.txt"))
    loaded = load_partial(features_path, candidates_path, k=partial.k)
    npt.assert_array_equal(loaded.candidates, partial.candidates)
    npt.assert_allclose(loaded.features, partial.features)


def test_load_partial_rejects_blank_line(tmp_path):
    (tmp_path / "f.csv").write_text("f0\n1.0\n2.0\n", encoding="utf-8")
    (tmp_path / "s.txt").write_text("0,1\n\n", encoding="utf-8")
    with pytest.raises(DataError, match="empty candidate set"):
        load_partial(str(tmp_path / "f.csv"), str(tmp_path / "s.txt"))


# ──────────────────────────────────────────────
# Candidate synthesis
# ──────────────────────────────────────────────
def test_single_draw_contains_label_and_is_proper(rng):
    for _ in range(200):
        mask = generate_candidate_set(2, 5, rng)
        assert mask[2]
        assert not mask.all()


def test_two_classes_always_give_the_singleton(rng):
    masks = generate_candidates(np.array([0, 1, 1, 0]), 2, rng)
    npt.assert_array_equal(masks, [[True, False], [False, True], [False, True], [True, False]])


def test_generation_rejects_bad_input(rng):
    with pytest.raises(DataError):
        generate_candidate_set(0, 1, rng)
    with pytest.raises(DataError):
        generate_candidate_set(3, 3, rng)


@pytest.mark.parametrize("k", [3, 4, 5])
def test_candidate_sets_uniform_over_admissible_sets(k):
    rng = np.random.default_rng(1234 + k)
    masks = generate_candidates(np.zeros(100_000, dtype=np.int64), k, rng)
    codes = masks.astype(np.int64) @ (1 << np.arange(k))

    admissible = [c for c in range(2 ** k) if c & 1 and c != 2 ** k - 1]
    assert len(admissible) == 2 ** (k - 1) - 1
    assert set(np.unique(codes)) <= set(admissible)

    observed = [int(np.sum(codes == c)) for c in admissible]
    assert chisquare(observed).pvalue > 0.01


def test_vectorized_generation_keeps_true_labels(rng):
    labels = rng.integers(0, 6, size=5000)
    masks = generate_candidates(labels, 6, rng)
    assert masks[np.arange(len(labels)), labels].all()
    assert not masks.all(axis=1).any()


# ──────────────────────────────────────────────
# Augmented split
# ──────────────────────────────────────────────
def test_split_invariants(blobs, rng):
    split = make_augmented_split(blobs, -1, 0.2, rng)
    pll = split.pll_train

    assert pll.k == 3 and split.ac_index == 3
    assert pll.candidates.shape == (pll.n, 3)
    assert np.all(pll.true_labels < 3)
    assert np.all(blobs.labels[split.train_index] != 3)
    assert split.test_labels.max() <= 3

    rows = np.sort(np.concatenate([split.train_index, split.test_index]))
    npt.assert_array_equal(rows, np.arange(blobs.n))
    assert len(split.unlabeled) == len(split.test_index)
    assert split.test_theta == pytest.approx(np.mean(split.test_labels != 3))


def test_split_removed_fraction_matches_uniform_generation():
    # a set drawn over k labels contains one given other label with probability 2^(k-2) / (2^(k-1) - 1)
    k = 10
    data = make_blobs(300, k - 1, np.random.default_rng(3))
    split = make_augmented_split(data, k - 1, 0.2, np.random.default_rng(4))
    expected = 1 / k + (k - 1) / k * 2 ** (k - 2) / (2 ** (k - 1) - 1)
    assert split.removed_fraction == pytest.approx(expected, abs=0.04)


def test_two_class_split_keeps_class_zero_singletons():
    data = make_blobs(30, 1, np.random.default_rng(2))
    split = make_augmented_split(data, 1, 0.2, np.random.default_rng(3))
    pll = split.pll_train

    assert pll.k == 1
    npt.assert_array_equal(pll.candidates, True)
    npt.assert_array_equal(pll.true_labels, 0)
    npt.assert_array_equal(data.labels[split.train_index], 0)
    # every class-1 row ends up in the test pool
    assert np.all(np.isin(np.flatnonzero(data.labels == 1), split.test_index))


def test_split_is_deterministic(blobs):
    a = make_augmented_split(blobs, 3, 0.2, np.random.default_rng(5))
    b = make_augmented_split(blobs, 3, 0.2, np.random.default_rng(5))
    npt.assert_array_equal(a.pll_train.candidates, b.pll_train.candidates)
    npt.assert_array_equal(a.unlabeled, b.unlabeled)
    npt.assert_array_equal(a.test_index, b.test_index)


def test_split_with_several_ac_classes(blobs, rng):
    split = make_augmented_split(blobs, [2, 3], 0.2, rng, unlabeled_count=50)
    assert split.k_known == 2
    assert set(np.unique(split.test_labels)) <= {0, 1, 2}
    assert len(split.unlabeled) == 50


def test_split_errors(blobs, rng):
    with pytest.raises(DataError, match="outside"):
        make_augmented_split(blobs, 7, 0.2, rng)
    with pytest.raises(DataError, match="test_fraction"):
        make_augmented_split(blobs, 3, 0.0, rng)
    missing = LabeledDataset(features=np.zeros((4, 1)), labels=[0, 1, 0, 1], k=3)
    with pytest.raises(DataError, match="absent"):
        make_augmented_split(missing, 2, 0.5, rng)


def test_sample_unlabeled_draws_from_pool(rng):
    pool = np.arange(10, dtype=float)[:, None]
    drawn = sample_unlabeled(pool, 100, rng)
    assert drawn.shape == (100, 1)
    assert set(drawn.ravel()) <= set(pool.ravel())
    with pytest.raises(DataError):
        sample_unlabeled(np.zeros((0, 1)), 5, rng)


# ──────────────────────────────────────────────
# Prior shift
# ──────────────────────────────────────────────
def test_shift_weights_for_eight_classes():
    npt.assert_allclose(
        ShiftConfig(0.5, 8).weights(),
        [0.5, 0.625, 0.75, 0.875, 1.125, 1.25, 1.375, 1.5],
    )
    npt.assert_allclose(ShiftConfig(0.0, 8).weights(), np.ones(8))
    npt.assert_allclose(ShiftConfig(0.4, 3).weights(), [0.6, 1.0, 1.4])


def test_shift_config_range():
    with pytest.raises(DataError):
        ShiftConfig(1.0, 8)


def test_prior_shift_hits_target_priors(rng):
    labels = np.repeat(np.arange(9), 500)
    features = np.arange(len(labels), dtype=float)[:, None]
    cfg = ShiftConfig(0.5, 8)
    shifted_x, shifted_y = resample_with_prior_shift(features, labels, cfg, rng)

    assert len(shifted_y) == len(labels)
    # features travel with their labels
    npt.assert_array_equal(labels[shifted_x.ravel().astype(int)], shifted_y)

    target = np.append(cfg.weights(), 1.0) / 9.0
    observed = np.bincount(shifted_y, minlength=9) / len(shifted_y)
    npt.assert_allclose(observed, target, atol=0.02)


def test_prior_shift_needs_every_known_class(rng):
    labels = np.array([0, 0, 2, 2])
    with pytest.raises(DataError):
        resample_with_prior_shift(np.zeros((4, 1)), labels, ShiftConfig(0.3, 2), rng)


def test_make_blobs_layout(rng):
    data = make_blobs(20, 4, rng, d=3, ac_size=10)
    assert data.k == 5
    assert data.features.shape == (90, 3)
    assert np.sum(data.labels == 4) == 10
