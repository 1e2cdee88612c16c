"""
Mixture proportion estimation with kernel mean embeddings
=========================================================
Estimates theta, the share of the known-class distribution inside the
test distribution, from partial-label features and unlabeled features.

For each lambda on a grid the estimator computes

    d(lambda) = min_{w in simplex} || mu_U - lambda * mu_PL - (1 - lambda) * sum_i w_i phi(z_i) ||_H

over a support z pooled from both samples (unlabeled rows first, then
partial-label rows), entirely through Gaussian Gram matrices. Each
lambda is one quadratic program handed to cvxopt. d is flat near zero
up to the mixture proportion and rises afterwards; theta_hat is the last
grid point before the rise.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from cvxopt import matrix, solvers
from scipy.spatial.distance import cdist, pdist

from pllac.config import GRAM_CAP, SUPPORT_CAP
from pllac.errors import ConvergenceError, DataError, NumericalError
from pllac.utils import canonical_rows, subsample_rows

logger = logging.getLogger(__name__)

GRID_SIZE = 64
SLOPE_TAU = 0.2
# unlabeled and partial-label means closer than NOISE_SCALE/sqrt(n) are indistinguishable
NOISE_SCALE = 2.0

QP_OPTIONS = {
    "show_progress": False,
    "abstol": 1e-9,
    "reltol": 1e-8,
    "feastol": 1e-9,
}


@dataclass
class ThetaEstimate:
    theta_hat: float
    bandwidth: Optional[float] = None
    lambdas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    distances: np.ndarray = field(default_factory=lambda: np.zeros(0))
    raw_distances: np.ndarray = field(default_factory=lambda: np.zeros(0))
    method: str = "kme"

    def __post_init__(self):
        if not 0.0 <= self.theta_hat <= 1.0:
            raise DataError(f"theta_hat must lie in [0, 1], got {self.theta_hat}")
        if self.bandwidth is not None and not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise NumericalError(f"bandwidth must be finite and positive, got {self.bandwidth}")

    def curve(self):
        """(lambda, distance) pairs of the diagnostic curve."""
        return list(zip(self.lambdas.tolist(), self.distances.tolist()))


def fixed_theta(value):
    """Skips estimation; used for sensitivity sweeps and non-separable data."""
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise DataError(f"fixed theta must lie in [0, 1], got {value}")
    return ThetaEstimate(theta_hat=value, method="fixed")


def median_bandwidth(features, sample_cap=1000, rng=None):
    """Median pairwise Euclidean distance over at most sample_cap rows."""
    features = np.asarray(features, dtype=np.float64)
    if len(features) < 2:
        raise DataError("median bandwidth needs at least 2 rows")
    rng = rng if rng is not None else np.random.default_rng(0)
    distances = pdist(subsample_rows(canonical_rows(features), sample_cap, rng))
    if not np.any(distances > 0):
        raise DataError("degenerate bandwidth: all rows identical")
    return float(np.median(distances))


def gaussian_gram(a, b, bandwidth):
    gram = cdist(a, b, "sqeuclidean")
    gram *= -1.0 / (2.0 * bandwidth ** 2)
    np.exp(gram, out=gram)
    return gram


def mean_kernel(a, b, bandwidth, chunk=1024):
    """Average k(a_i, b_j) over all pairs, one block of rows of a at a time."""
    total = 0.0
    for start in range(0, len(a), chunk):
        total += gaussian_gram(a[start:start + chunk], b, bandwidth).sum()
    return total / (len(a) * len(b))


# ──────────────────────────────────────────────
# Inner solver
# ──────────────────────────────────────────────
class SimplexQP:
    """
    min_w  w^T K w - 2 c^T w  over the probability simplex, for a fixed
    support Gram matrix K and varying linear terms c.
    """

    def __init__(self, gram, tol=1e-6, max_iter=100):
        m = gram.shape[0]
        self.gram = gram
        self.tol = tol
        self.options = dict(QP_OPTIONS, maxiters=max_iter)
        self._P = matrix(2.0 * gram)
        self._G = matrix(-np.eye(m))
        self._h = matrix(np.zeros(m))
        self._A = matrix(np.ones((1, m)))
        self._b = matrix(1.0)

    def frank_wolfe_gap(self, w, linear):
        """Upper bound on w's suboptimality; zero exactly at the optimum."""
        grad = 2.0 * (self.gram @ w - linear)
        return float(grad @ w - grad.min())

    def solve(self, linear):
        try:
            solution = solvers.qp(self._P, matrix(-2.0 * linear), self._G, self._h, self._A, self._b,
                                  options=self.options)
        except (ArithmeticError, ValueError) as e:
            raise ConvergenceError(f"simplex QP failed: {e}", residual=float("nan")) from e

        w = np.maximum(np.array(solution["x"]).ravel(), 0.0)
        w /= w.sum()
        objective = float(w @ self.gram @ w - 2.0 * linear @ w)
        gap = self.frank_wolfe_gap(w, linear)
        if gap > self.tol * (1.0 + abs(objective)):
            raise ConvergenceError(
                f"simplex QP stopped with status {solution['status']!r} after {solution['iterations']} iterations",
                residual=gap,
            )
        return w


def distance_curve(unlabeled, pll, support, bandwidth, lambdas, tol=1e-6, max_iter=100):
    """d(lambda) for every grid value, with w living on the support rows."""
    uu = mean_kernel(unlabeled, unlabeled, bandwidth)
    up = mean_kernel(unlabeled, pll, bandwidth)
    pp = mean_kernel(pll, pll, bandwidth)
    to_u = gaussian_gram(support, unlabeled, bandwidth).mean(axis=1)
    to_p = gaussian_gram(support, pll, bandwidth).mean(axis=1)
    gram = gaussian_gram(support, support, bandwidth)
    if not (np.all(np.isfinite(gram)) and np.isfinite(uu + up + pp)):
        raise NumericalError("non-finite Gram matrix entries")

    qp = SimplexQP(gram, tol=tol, max_iter=max_iter)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    squared = np.zeros(len(lambdas))
    for i, lam in enumerate(lambdas):
        offset = uu - 2.0 * lam * up + lam ** 2 * pp
        if lam >= 1.0:
            squared[i] = offset
            continue
        scale = 1.0 - lam
        target = to_u - lam * to_p
        # dividing the objective by scale^2 leaves the minimizer unchanged
        w = qp.solve(target / scale)
        squared[i] = offset - 2.0 * scale * (target @ w) + scale ** 2 * (w @ gram @ w)
    return np.sqrt(np.maximum(squared, 0.0))


def select_theta(lambdas, distances, n_min, tau=SLOPE_TAU):
    """
    Largest grid lambda up to which the forward differences of the curve
    stay below tau times the curve's steepest slope (floored at 1/sqrt(n_min)).
    """
    if distances[-1] - distances[0] <= NOISE_SCALE / np.sqrt(n_min):
        return 1.0
    slopes = np.diff(distances) / np.diff(lambdas)
    threshold = tau * max(float(slopes.max()), 1.0 / np.sqrt(n_min))
    steep = np.flatnonzero(slopes > threshold)
    if len(steep) == 0:
        return 1.0
    return float(lambdas[steep[0]])


def pooled_support(unlabeled, pll, cap, rng):
    """At most cap rows, unlabeled first; each side gets half unless the other needs less."""
    n_u = min(len(unlabeled), max(cap - len(pll), cap // 2))
    n_p = min(len(pll), cap - n_u)
    return np.vstack([subsample_rows(unlabeled, n_u, rng), subsample_rows(pll, n_p, rng)])


# ──────────────────────────────────────────────
# Estimator
# ──────────────────────────────────────────────
def estimate_theta(pll_features, unlabeled_features, rng=None, bandwidth=None, grid_size=GRID_SIZE,
                   tau=SLOPE_TAU, cap=GRAM_CAP, support_cap=SUPPORT_CAP, tol=1e-6, max_iter=100):
    pll_features = np.asarray(pll_features, dtype=np.float64)
    unlabeled_features = np.asarray(unlabeled_features, dtype=np.float64)
    if len(pll_features) == 0 or len(unlabeled_features) == 0:
        raise DataError("theta estimation needs non-empty partial-label and unlabeled features")
    if pll_features.shape[1] != unlabeled_features.shape[1]:
        raise DataError(
            f"feature dimensions differ: {pll_features.shape[1]} vs {unlabeled_features.shape[1]}"
        )

    # subsampling below picks rows by position, so fix the order first
    rng = rng if rng is not None else np.random.default_rng(0)
    pll_features = subsample_rows(canonical_rows(pll_features), cap, rng)
    unlabeled_features = subsample_rows(canonical_rows(unlabeled_features), cap, rng)
    support = pooled_support(unlabeled_features, pll_features, support_cap, rng)

    if bandwidth is None:
        bandwidth = median_bandwidth(np.vstack([unlabeled_features, pll_features]), rng=rng)

    lambdas = np.linspace(0.0, 1.0, grid_size)
    raw = distance_curve(unlabeled_features, pll_features, support, bandwidth, lambdas,
                         tol=tol, max_iter=max_iter)
    # the true curve is non-decreasing and solver values are upper bounds,
    # so the running minimum from the right is a tighter valid curve
    envelope = np.minimum.accumulate(raw[::-1])[::-1]

    n_min = min(len(pll_features), len(unlabeled_features))
    theta_hat = select_theta(lambdas, envelope, n_min, tau)
    logger.info(
        f"theta estimate {theta_hat:.3f} (bandwidth {bandwidth:.3f}, "
        f"{len(pll_features)} partial-label / {len(unlabeled_features)} unlabeled rows, "
        f"{len(support)} support rows)"
    )
    return ThetaEstimate(
        theta_hat=theta_hat,
        bandwidth=bandwidth,
        lambdas=lambdas,
        distances=envelope,
        raw_distances=raw,
    )
