"""
Experiment orchestration
========================
One trial runs

    split -> theta estimation -> uniform confidences -> epochs of mini-batch
    Adam on the regularized objective -> confidence refresh -> evaluation

and a grid runs the cross product of sweep axes, several trials per cell,
aggregating mean and std of the final metrics.

Random streams: every trial spawns independent generators for the split,
theta estimation, initialization, batching and prior shift from its seed,
so (config, seed) determines every reported number.
"""

import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from pllac.config import ExperimentConfig, build_config
from pllac.data import (
    AugmentedSplit, ShiftConfig, load_csv, load_indexed_csv, load_partial, make_augmented_split,
    resample_with_prior_shift, sample_unlabeled,
)
from pllac.errors import ConfigError, NumericalError, PLLACError
from pllac.evaluation import EvalReport, evaluate_scores
from pllac.mixprop import estimate_theta, fixed_theta
from pllac.model import ClassifierParams, adam_step, init_adam, init_params, predict_proba
from pllac.risk import (
    RiskConfig, augmented_risk, baseline_threshold_predict, empirical_unbiased_risk, init_confidence,
    known_class_risk, threshold_scores, update_confidence,
)
from pllac.utils import fit_standardizer, spawn_rngs, standardize

logger = logging.getLogger(__name__)

METRICS = ("accuracy", "macro_f1", "macro_auc")


# ──────────────────────────────────────────────
# Data Models
# ──────────────────────────────────────────────
@dataclass
class EpochRecord:
    epoch: int
    iteration: int
    objective: float
    r_pac: float
    pll_term: float
    unlabeled_ac_term: float
    negative_ac_term: float
    omega: float
    step_objective: float          # mean over the epoch's mini-batch steps
    step_r_pac: float
    train_accuracy: Optional[float]
    test_accuracy: float


@dataclass
class TrialResult:
    method: str
    seed: int
    status: str                    # ok | diverged
    theta_hat: Optional[float]
    removed_fraction: float
    wall_time: float
    report: Optional[EvalReport] = None
    epochs: list = field(default_factory=list)
    diverged_epoch: Optional[int] = None
    error: Optional[str] = None
    params: Optional[ClassifierParams] = field(default=None, repr=False)
    standardizer: Optional[dict] = field(default=None, repr=False)

    def to_dict(self):
        return {
            "method": self.method,
            "seed": self.seed,
            "status": self.status,
            "theta_hat": self.theta_hat,
            "removed_fraction": self.removed_fraction,
            "wall_time": self.wall_time,
            "report": self.report.to_dict() if self.report else None,
            "epochs": [asdict(r) for r in self.epochs],
            "diverged_epoch": self.diverged_epoch,
            "error": self.error,
        }


@dataclass
class PreparedTrial:
    """Standardized arrays a trial trains and evaluates on."""
    split: AugmentedSplit
    train_features: np.ndarray
    unlabeled: np.ndarray
    test_features: np.ndarray
    test_labels: np.ndarray
    standardizer: Optional[dict] = None


# ──────────────────────────────────────────────
# Data preparation
# ──────────────────────────────────────────────
def _split_from_files(cfg, rng):
    """Pre-partial training data plus a separate labeled pool used as test set and unlabeled source."""
    if not cfg.unlabeled_pool:
        raise ConfigError("candidates_path requires unlabeled_pool")
    pll = load_partial(cfg.dataset, cfg.candidates_path)
    features, labels = load_indexed_csv(cfg.unlabeled_pool, cfg.label_column)
    if features.shape[1] != pll.d:
        raise ConfigError(f"unlabeled pool has {features.shape[1]} features, training data {pll.d}")
    labels = np.where((labels < 0) | (labels >= pll.k), pll.k, labels)
    count = cfg.unlabeled_count or len(features)
    return AugmentedSplit(
        pll_train=pll,
        unlabeled=sample_unlabeled(features, count, rng),
        test_features=features,
        test_labels=labels,
        removed_fraction=0.0,
        train_index=np.arange(pll.n),
        test_index=np.arange(len(features)),
    )


def prepare_split(cfg, rng, dataset=None):
    if cfg.candidates_path:
        return _split_from_files(cfg, rng)
    if dataset is None:
        if cfg.dataset is None:
            raise ConfigError("no dataset given")
        dataset = load_csv(cfg.dataset, cfg.label_column)
    return make_augmented_split(dataset, cfg.ac_classes, cfg.test_fraction, rng, cfg.unlabeled_count)


def prepare_trial(cfg, split, shift_rng):
    test_features, test_labels = split.test_features, split.test_labels
    unlabeled = split.unlabeled
    if cfg.alpha is not None:
        test_features, test_labels = resample_with_prior_shift(
            test_features, test_labels, ShiftConfig(cfg.alpha, split.k_known), shift_rng
        )
        unlabeled = sample_unlabeled(test_features, len(split.unlabeled), shift_rng)

    train_features = split.pll_train.features
    standardizer = None
    if cfg.standardize:
        mean, std = fit_standardizer(train_features)
        train_features = standardize(train_features, mean, std)
        unlabeled = standardize(unlabeled, mean, std)
        test_features = standardize(test_features, mean, std)
        standardizer = {"mean": mean.tolist(), "std": std.tolist()}

    dtype = np.dtype(cfg.dtype)
    return PreparedTrial(
        split=split,
        train_features=train_features.astype(dtype),
        unlabeled=unlabeled.astype(dtype),
        test_features=test_features.astype(dtype),
        test_labels=test_labels,
        standardizer=standardizer,
    )


def resolve_theta(cfg, train_features, unlabeled, rng):
    mode, value = cfg.theta_mode
    if mode == "fixed":
        return fixed_theta(value)
    return estimate_theta(train_features, unlabeled, rng=rng)


# ──────────────────────────────────────────────
# Training
# ──────────────────────────────────────────────
def _predict_labels(cfg, params, features):
    probs = predict_proba(params, features)
    if cfg.method == "baseline":
        return baseline_threshold_predict(probs, cfg.threshold)
    return probs.argmax(axis=1)


def _train_accuracy(params, prepared):
    truth = prepared.split.pll_train.true_labels
    if truth is None:
        return None
    return float(np.mean(predict_proba(params, prepared.train_features).argmax(axis=1) == truth))


def _full_objective(cfg, params, prepared, conf, risk_cfg):
    pll = prepared.split.pll_train
    if cfg.method == "baseline":
        loss, _, _ = known_class_risk(params, prepared.train_features, pll.candidates, conf, cfg.pll_loss)
        return {"objective": loss, "r_pac": 0.0, "pll_term": loss,
                "unlabeled_ac_term": 0.0, "negative_ac_term": 0.0, "omega": 0.0}
    breakdown, _, _ = empirical_unbiased_risk(
        params, prepared.train_features, pll.candidates, conf, prepared.unlabeled, risk_cfg
    )
    parts = asdict(breakdown)
    parts["objective"] = parts.pop("total")
    return parts


def final_report(cfg, params, prepared):
    probs = predict_proba(params, prepared.test_features)
    if cfg.method == "baseline":
        pred = baseline_threshold_predict(probs, cfg.threshold)
        return evaluate_scores(threshold_scores(probs), prepared.test_labels, pred=pred)
    return evaluate_scores(probs, prepared.test_labels)


def run_trial(cfg: ExperimentConfig, seed=None, dataset=None, split=None, sink=None, on_epoch=None):
    """
    Runs one trial. `dataset` (a LabeledDataset) or `split` bypass loading
    cfg.dataset; `sink` receives one JSON-lines record per epoch;
    `on_epoch(record, params, conf)` is called after every epoch with the
    confidences the logged objective was computed with.
    """
    seed = cfg.seed if seed is None else seed
    split_rng, theta_rng, init_rng, batch_rng, shift_rng = spawn_rngs(seed, 5)
    started = time.perf_counter()
    baseline = cfg.method == "baseline"

    split = split if split is not None else prepare_split(cfg, split_rng, dataset)
    prepared = prepare_trial(cfg, split, shift_rng)
    pll = split.pll_train
    X, S = prepared.train_features, pll.candidates

    estimate = None if baseline else resolve_theta(cfg, X, prepared.unlabeled, theta_rng)
    risk_cfg = None if baseline else RiskConfig(theta=estimate.theta_hat, lam=cfg.lambda_, t=cfg.t,
                                                pll_loss=cfg.pll_loss)

    n_out = pll.k if baseline else pll.k + 1
    params = init_params(cfg.arch, pll.d, n_out, init_rng, hidden=cfg.hidden, dtype=cfg.dtype)
    state = init_adam(params, cfg.lr, cfg.weight_decay)
    conf = init_confidence(S)

    logger.info(
        f"🚀 Trial seed={seed} method={cfg.method} loss={cfg.pll_loss} arch={cfg.arch} "
        f"theta={'-' if estimate is None else f'{estimate.theta_hat:.3f}'} "
        f"lambda={cfg.lambda_} t={cfg.t} n={pll.n} n_U={len(prepared.unlabeled)}"
    )

    records = []
    status, diverged_epoch, error = "ok", None, None
    epoch = 0
    try:
        for iteration in range(1, cfg.iterations + 1):
            for _ in range(cfg.epochs):
                epoch += 1
                order = batch_rng.permutation(pll.n)
                step_totals, step_r_pac = [], []
                for start in range(0, pll.n, cfg.batch_size):
                    idx = order[start:start + cfg.batch_size]
                    if baseline:
                        loss, grads, fresh = known_class_risk(params, X[idx], S[idx], conf[idx], cfg.pll_loss)
                        step_totals.append(loss)
                        step_r_pac.append(0.0)
                    else:
                        u_idx = batch_rng.integers(0, len(prepared.unlabeled), size=cfg.batch_size)
                        reference = None
                        if cfg.penalty_scope == "full":
                            reference = augmented_risk(params, X, prepared.unlabeled, risk_cfg.theta,
                                                       risk_cfg.prob_floor)
                        breakdown, grads, fresh = empirical_unbiased_risk(
                            params, X[idx], S[idx], conf[idx], prepared.unlabeled[u_idx], risk_cfg,
                            reference_r_pac=reference,
                        )
                        step_totals.append(breakdown.total)
                        step_r_pac.append(breakdown.r_pac)
                    if fresh is not None:
                        conf[idx] = fresh
                    params, state = adam_step(params, grads, state)

                parts = _full_objective(cfg, params, prepared, conf, risk_cfg)
                if not np.isfinite(parts["objective"]):
                    raise NumericalError(f"non-finite objective at epoch {epoch}", epoch=epoch)

                record = EpochRecord(
                    epoch=epoch,
                    iteration=iteration,
                    step_objective=float(np.mean(step_totals)),
                    step_r_pac=float(np.mean(step_r_pac)),
                    train_accuracy=_train_accuracy(params, prepared),
                    test_accuracy=float(np.mean(
                        _predict_labels(cfg, params, prepared.test_features) == prepared.test_labels
                    )),
                    **parts,
                )
                records.append(record)
                if on_epoch is not None:
                    on_epoch(record, params, conf.copy())
                if sink is not None:
                    sink.write({"kind": "epoch", "method": cfg.method, "seed": seed, **asdict(record)})
                logger.info(
                    f"Epoch {epoch}: objective={record.objective:.4f} r_pac={record.r_pac:.4f} "
                    f"train_acc={record.train_accuracy if record.train_accuracy is None else round(record.train_accuracy, 4)} "
                    f"test_acc={record.test_accuracy:.4f}"
                )

                if cfg.pll_loss == "rc":
                    conf = update_confidence(conf, predict_proba(params, X), S)
    except NumericalError as e:
        status, error = "diverged", str(e)
        diverged_epoch = e.epoch if e.epoch is not None else epoch
        logger.warning(f"⚠️ Trial seed={seed} diverged at epoch {diverged_epoch}: {e}")

    report = final_report(cfg, params, prepared) if status == "ok" else None
    result = TrialResult(
        method=cfg.method,
        seed=seed,
        status=status,
        theta_hat=None if estimate is None else estimate.theta_hat,
        removed_fraction=split.removed_fraction,
        wall_time=time.perf_counter() - started,
        report=report,
        epochs=records,
        diverged_epoch=diverged_epoch,
        error=error,
        params=params,
        standardizer=prepared.standardizer,
    )
    if report is not None:
        logger.info(
            f"✅ Trial seed={seed}: accuracy={report.accuracy:.4f} macro_f1={report.macro_f1:.4f} "
            f"macro_auc={report.macro_auc:.4f} ({result.wall_time:.1f}s)"
        )
    return result


def run_unregularized(cfg, **kwargs):
    """The plain unbiased risk estimator: the negative-risk penalty is switched off."""
    return run_trial(cfg.model_copy(update={"lambda_": 0.0, "correction": None}), **kwargs)


def run_threshold_baseline(cfg, **kwargs):
    """k-way model on partial-label data only; low-confidence test predictions become the ac class."""
    return run_trial(cfg.model_copy(update={"method": "baseline"}), **kwargs)


# ──────────────────────────────────────────────
# Grid
# ──────────────────────────────────────────────
def summarize(trials, cell=None):
    """Mean and std (population) of the final metrics over the trials that finished."""
    row = dict(cell or {})
    finished = [t for t in trials if t.status == "ok" and t.report is not None]
    row["trials"] = len(trials)
    row["diverged"] = len(trials) - len(finished)
    row["status"] = "ok" if finished else "diverged"
    for metric in METRICS:
        values = np.array([getattr(t.report, metric) for t in finished], dtype=np.float64)
        row[f"{metric}_mean"] = float(values.mean()) if len(values) else float("nan")
        row[f"{metric}_std"] = float(values.std()) if len(values) else float("nan")
    thetas = [t.theta_hat for t in finished if t.theta_hat is not None]
    row["theta_hat_mean"] = float(np.mean(thetas)) if thetas else None
    return row


def grid_cells(axes):
    if not axes or any(len(values) == 0 for values in axes.values()):
        raise ConfigError("sweep axes must be non-empty")
    keys = ["lambda" if key == "lambda_" else key for key in axes]
    return [dict(zip(keys, values)) for values in itertools.product(*axes.values())]


def cell_config(base_cfg, cell):
    """
    base_cfg with the cell's values. Swept lambda or t replace a correction
    preset of the base; a swept correction replaces the base lambda and t.
    """
    values = base_cfg.model_dump(by_alias=True)
    if {"lambda", "t"} & cell.keys():
        values["correction"] = None
    if values["correction"] is not None or cell.get("correction") is not None:
        values.pop("lambda")
        values.pop("t")
    return build_config(values, cell)


def _run_cell(base_cfg, cell, dataset, sink):
    try:
        cfg = cell_config(base_cfg, cell)
        trials = [run_trial(cfg, seed=cfg.seed + i, dataset=dataset, sink=sink) for i in range(cfg.trials)]
        # report the parsed values that actually ran, not the raw sweep strings
        ran = cfg.model_dump(by_alias=True)
        row = summarize(trials, {key: ran[key] for key in cell})
    except PLLACError as e:
        logger.error(f"❌ Grid cell {cell} failed: {e}")
        row = {**cell, "status": "failed", "error": str(e)}
    if sink is not None:
        sink.write({"kind": "cell", **row})
    return row


def run_grid(base_cfg, axes, dataset=None, sink=None, workers=1):
    """
    Cross product of the sweep axes (config field -> list of values), each
    cell run for base_cfg.trials trials with seeds seed, seed+1, ...
    A failing cell is recorded with its error and the grid continues.
    """
    cells = grid_cells(axes)
    logger.info(f"Grid: {len(cells)} cells x {base_cfg.trials} trials")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda cell: _run_cell(base_cfg, cell, dataset, sink), cells))
    else:
        rows = [_run_cell(base_cfg, cell, dataset, sink) for cell in cells]
    return pd.DataFrame(rows)
