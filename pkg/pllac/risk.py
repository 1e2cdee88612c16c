"""
Losses and the unbiased risk estimator
======================================
Every loss works on a batch: it takes probabilities (n x C, where the
first k columns are the known classes and, for a (k+1)-way model, the
last column is the augmented class) and candidate masks (n x k), and
returns per-instance losses (n,) together with dLoss_i/dprobs_i (n x C).

The empirical objective combines
  pll term           theta * mean_i l_PLL(f(x_i), S_i)
  unlabeled ac term  mean_u -log f_ac(x_u)
  negative ac term   theta * mean_i log f_ac(x_i)
with the penalty (-r_pac)^t whenever r_pac = unlabeled + negative < 0.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from pllac.config import PLL_LOSSES
from pllac.errors import ConfigError, DataError, NumericalError
from pllac.model import add_grads, backward, forward

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


# ──────────────────────────────────────────────
# Data Models
# ──────────────────────────────────────────────
@dataclass
class RiskConfig:
    theta: float
    lam: float = 1.0
    t: int = 1
    pll_loss: str = "rc"
    prob_floor: float = PROB_FLOOR

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError(f"theta must lie in [0, 1], got {self.theta}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.t < 1:
            raise ConfigError(f"t must be >= 1, got {self.t}")
        if self.pll_loss not in PLL_LOSSES:
            raise ConfigError(f"unknown pll loss {self.pll_loss!r}")
        if self.prob_floor <= 0:
            raise ConfigError("prob_floor must be > 0")


@dataclass
class RiskBreakdown:
    pll_term: float
    unlabeled_ac_term: float
    negative_ac_term: float
    r_pac: float
    omega: float
    total: float


def _check_candidates(candidates):
    candidates = np.asarray(candidates, dtype=bool)
    if np.any(candidates.sum(axis=1) == 0):
        raise DataError("empty candidate set")
    return candidates


def _floored_log_grad(values, floor):
    """-log max(v, floor) and its derivative (zero where the floor is active)."""
    loss = -np.log(np.maximum(values, floor))
    with np.errstate(divide="ignore"):
        grad = np.where(values > floor, -1.0 / np.where(values > floor, values, 1.0), 0.0)
    return loss, grad


# ──────────────────────────────────────────────
# Partial-label losses
# ──────────────────────────────────────────────
def pll_loss_rc(probs, candidates, conf, floor=PROB_FLOOR):
    """Confidence-weighted cross-entropy: sum_j p_ij * -log f_j."""
    candidates = _check_candidates(candidates)
    k = candidates.shape[1]
    neg_log, d_neg_log = _floored_log_grad(probs[:, :k], floor)
    conf = np.where(candidates, conf, 0.0)
    grad = np.zeros_like(probs)
    grad[:, :k] = conf * d_neg_log
    return np.sum(conf * neg_log, axis=1), grad


def pll_loss_cc(probs, candidates, floor=PROB_FLOOR):
    """-log of the probability mass on the candidate set."""
    candidates = _check_candidates(candidates)
    k = candidates.shape[1]
    mass = np.sum(probs[:, :k] * candidates, axis=1)
    loss, d_mass = _floored_log_grad(mass, floor)
    grad = np.zeros_like(probs)
    grad[:, :k] = d_mass[:, None] * candidates
    return loss, grad


def pll_loss_proden(probs, candidates, floor=PROB_FLOOR):
    """
    RC form with weights recomputed from the current outputs and treated
    as constants. Returns (loss, grad, weights).
    """
    candidates = _check_candidates(candidates)
    k = candidates.shape[1]
    masked = probs[:, :k] * candidates
    mass = masked.sum(axis=1, keepdims=True)
    if np.any(mass < floor):
        raise NumericalError("candidate probability mass below prob_floor")
    weights = masked / mass
    loss, grad = pll_loss_rc(probs, candidates, weights, floor)
    return loss, grad, weights


def complementary_loss(tag, probs, candidates):
    """
    Bounded losses against the target q (1/|S| on S, 0 elsewhere including
    the ac column): mae = sum |f - q|, mse = sum (f - q)^2, exp = exp(-sum_S f).
    """
    candidates = _check_candidates(candidates)
    k = candidates.shape[1]
    target = np.zeros_like(probs)
    target[:, :k] = candidates / candidates.sum(axis=1, keepdims=True)
    diff = probs - target

    if tag == "mae":
        return np.abs(diff).sum(axis=1), np.sign(diff)
    if tag == "mse":
        return np.sum(diff * diff, axis=1), 2.0 * diff
    if tag == "exp":
        loss = np.exp(-np.sum(probs[:, :k] * candidates, axis=1))
        grad = np.zeros_like(probs)
        grad[:, :k] = -loss[:, None] * candidates
        return loss, grad
    raise ConfigError(f"unknown complementary loss {tag!r}")


def pll_loss(tag, probs, candidates, conf=None, floor=PROB_FLOOR):
    """Dispatch over every partial-label loss. Returns (loss, grad, fresh confidences or None)."""
    if tag == "rc":
        loss, grad = pll_loss_rc(probs, candidates, conf, floor)
        return loss, grad, None
    if tag == "cc":
        loss, grad = pll_loss_cc(probs, candidates, floor)
        return loss, grad, None
    if tag == "proden":
        return pll_loss_proden(probs, candidates, floor)
    if tag in ("mae", "mse", "exp"):
        loss, grad = complementary_loss(tag, probs, candidates)
        return loss, grad, None
    raise ConfigError(f"unknown pll loss {tag!r}")


def ac_loss(probs, floor=PROB_FLOOR):
    """Cross-entropy on the augmented class (last column)."""
    loss, d_ac = _floored_log_grad(probs[:, -1], floor)
    grad = np.zeros_like(probs)
    grad[:, -1] = d_ac
    return loss, grad


# ──────────────────────────────────────────────
# Risk estimator
# ──────────────────────────────────────────────
def risk_penalty(r_pac, t):
    """Omega and dOmega/dr_pac: (-r_pac)^t below zero, 0 otherwise."""
    if r_pac < 0:
        return (-r_pac) ** t, -t * (-r_pac) ** (t - 1)
    return 0.0, 0.0


def empirical_unbiased_risk(params, pll_features, candidates, conf, unlabeled_features, cfg,
                            reference_r_pac=None):
    """
    Regularized empirical risk on one partial-label batch and one unlabeled
    batch. Returns (RiskBreakdown, parameter gradient of the total, fresh
    confidences for PRODEN or None).

    With `reference_r_pac` (r_pac over the whole training set) the penalty's
    slope is taken at that value instead of the batch value; the breakdown
    still reports the batch numbers.
    """
    if len(pll_features) == 0 or len(unlabeled_features) == 0:
        raise DataError("risk batches must be non-empty")

    theta, floor = cfg.theta, cfg.prob_floor
    n, n_u = len(pll_features), len(unlabeled_features)

    probs = forward(params, pll_features)
    probs_u = forward(params, unlabeled_features)

    l_pll, g_pll, fresh = pll_loss(cfg.pll_loss, probs, candidates, conf, floor)
    l_ac, g_ac = ac_loss(probs, floor)
    l_ac_u, g_ac_u = ac_loss(probs_u, floor)

    pll_term = theta * float(np.mean(l_pll))
    unlabeled_ac_term = float(np.mean(l_ac_u))
    negative_ac_term = -theta * float(np.mean(l_ac))
    r_pac = unlabeled_ac_term + negative_ac_term
    omega, d_omega = risk_penalty(r_pac, cfg.t)
    if reference_r_pac is not None:
        _, d_omega = risk_penalty(reference_r_pac, cfg.t)
    total = pll_term + unlabeled_ac_term + negative_ac_term + cfg.lam * omega

    # r_pac enters once directly and once through lambda * omega
    scale = 1.0 + cfg.lam * d_omega
    upstream = (theta / n) * g_pll - scale * (theta / n) * g_ac
    upstream_u = scale * g_ac_u / n_u

    grads = add_grads(
        backward(params, pll_features, upstream),
        backward(params, unlabeled_features, upstream_u),
    )
    breakdown = RiskBreakdown(
        pll_term=pll_term,
        unlabeled_ac_term=unlabeled_ac_term,
        negative_ac_term=negative_ac_term,
        r_pac=r_pac,
        omega=omega,
        total=total,
    )
    return breakdown, grads, fresh


def augmented_risk(params, pll_features, unlabeled_features, theta, floor=PROB_FLOOR):
    """r_pac alone: mean ac loss on unlabeled rows minus theta times the mean on partial-label rows."""
    l_ac, _ = ac_loss(forward(params, pll_features), floor)
    l_ac_u, _ = ac_loss(forward(params, unlabeled_features), floor)
    return float(np.mean(l_ac_u)) - theta * float(np.mean(l_ac))


def known_class_risk(params, features, candidates, conf, tag, floor=PROB_FLOOR):
    """Mean partial-label loss of a k-way model (no ac column). Returns (loss, grads, fresh)."""
    if len(features) == 0:
        raise DataError("risk batches must be non-empty")
    probs = forward(params, features)
    loss, grad, fresh = pll_loss(tag, probs, candidates, conf, floor)
    grads = backward(params, features, grad / len(features))
    return float(np.mean(loss)), grads, fresh


# ──────────────────────────────────────────────
# Confidences
# ──────────────────────────────────────────────
def init_confidence(candidates):
    """Uniform over each candidate set."""
    candidates = _check_candidates(candidates)
    return candidates / candidates.sum(axis=1, keepdims=True)


def update_confidence(conf, outputs, candidates, floor=PROB_FLOOR):
    """
    p_ij = f_j(x_i) / sum_{o in S_i} f_o(x_i) on the candidate set, 0 elsewhere;
    rows whose candidate mass is below the floor fall back to uniform.
    """
    candidates = _check_candidates(candidates)
    if conf is not None and np.shape(conf) != candidates.shape:
        raise DataError(f"confidence matrix must be {candidates.shape}, got {np.shape(conf)}")
    if len(outputs) != len(candidates):
        raise DataError(f"{len(outputs)} output rows for {len(candidates)} candidate sets")

    k = candidates.shape[1]
    masked = outputs[:, :k] * candidates
    mass = masked.sum(axis=1, keepdims=True)
    uniform = candidates / candidates.sum(axis=1, keepdims=True)
    safe = np.where(mass < floor, 1.0, mass)
    updated = np.where(mass < floor, uniform, masked / safe)
    return updated / updated.sum(axis=1, keepdims=True)


def baseline_threshold_predict(probs, threshold=0.95):
    """argmax over k known classes if its probability exceeds the threshold, else ac (= k)."""
    probs = np.asarray(probs)
    top = probs.max(axis=1)
    return np.where(top > threshold, probs.argmax(axis=1), probs.shape[1])


def threshold_scores(probs):
    """
    (k+1)-column scores for a k-way model: ac gets 1 - max f, known columns
    f_j * max f so that each row still sums to one.
    """
    top = probs.max(axis=1, keepdims=True)
    return np.hstack([probs * top, 1.0 - top])
