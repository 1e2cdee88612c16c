import numpy as np


def spawn_rngs(seed, count):
    """Independent child generators, so each stage of a trial owns its own stream."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def canonical_rows(features):
    """Rows sorted lexicographically, first column as the primary key."""
    if len(features) < 2:
        return features
    return features[np.lexsort(features.T[::-1])]


def subsample_rows(features, cap, rng):
    if len(features) <= cap:
        return features
    index = np.sort(rng.choice(len(features), size=cap, replace=False))
    return features[index]


def fit_standardizer(features):
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std[std == 0] = 1.0
    return mean, std


def standardize(features, mean, std):
    return (features - mean) / std
