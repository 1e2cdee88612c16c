import numpy as np
import pytest

from pllac.config import build_config
from pllac.data import make_blobs, save_features, save_partial
from pllac.errors import ConfigError
from pllac.harness import (
    cell_config, prepare_split, prepare_trial, run_grid, run_threshold_baseline, run_trial, run_unregularized,
    summarize,
)
from pllac.evaluation import evaluate
from pllac.model import adam_step, init_adam, init_params, load_checkpoint
from pllac.report_service import JsonLinesWriter, save_trial
from pllac.risk import RiskConfig, empirical_unbiased_risk, known_class_risk
from pllac.utils import spawn_rngs


def quick_cfg(**overrides):
    values = {"epochs": 4, "batch_size": 64, "lr": 0.01, "trials": 1, "theta": "fixed:0.7", "seed": 3}
    values.update(overrides)
    return build_config(values)


def comparable(result):
    record = result.to_dict()
    record.pop("wall_time")
    return record


def test_dry_run_evaluates_the_initial_model(blobs):
    result = run_trial(quick_cfg(epochs=0), dataset=blobs)
    assert result.status == "ok"
    assert result.epochs == []
    assert 0.0 <= result.report.accuracy <= 1.0
    assert len(result.report.confusion) == 4


def test_same_config_and_seed_give_identical_results(blobs):
    first = run_trial(quick_cfg(), dataset=blobs)
    second = run_trial(quick_cfg(), dataset=blobs)
    assert comparable(first) == comparable(second)

    other = run_trial(quick_cfg(), seed=4, dataset=blobs)
    assert comparable(other) != comparable(first)


def test_epoch_records_are_indexed_in_order(blobs):
    result = run_trial(quick_cfg(epochs=3, iterations=2), dataset=blobs)
    assert [r.epoch for r in result.epochs] == [1, 2, 3, 4, 5, 6]
    assert [r.iteration for r in result.epochs] == [1, 1, 1, 2, 2, 2]


@pytest.mark.parametrize("loss", ["rc", "proden", "cc"])
def test_logged_objective_recomputes_from_parameters(blobs, loss):
    cfg = quick_cfg(pll_loss=loss, epochs=3)
    seen = []
    run_trial(cfg, dataset=blobs, on_epoch=lambda record, params, conf: seen.append((record, params, conf)))

    split_rng, _, _, _, shift_rng = spawn_rngs(cfg.seed, 5)
    prepared = prepare_trial(cfg, prepare_split(cfg, split_rng, blobs), shift_rng)
    risk_cfg = RiskConfig(theta=0.7, lam=cfg.lambda_, t=cfg.t, pll_loss=loss)

    assert len(seen) == 3
    for record, params, conf in seen:
        breakdown, _, _ = empirical_unbiased_risk(
            params, prepared.train_features, prepared.split.pll_train.candidates, conf, prepared.unlabeled, risk_cfg
        )
        assert record.objective == pytest.approx(breakdown.total, rel=1e-12)
        assert record.r_pac == pytest.approx(breakdown.r_pac, rel=1e-12, abs=1e-15)


def test_final_report_matches_saved_checkpoint(tmp_path, blobs):
    cfg = quick_cfg()
    result = run_trial(cfg, dataset=blobs)
    save_trial(result, str(tmp_path))

    split_rng, _, _, _, shift_rng = spawn_rngs(cfg.seed, 5)
    prepared = prepare_trial(cfg, prepare_split(cfg, split_rng, blobs), shift_rng)
    again = evaluate(load_checkpoint(str(tmp_path / "checkpoint.json")), prepared.test_features, prepared.test_labels)
    assert again.to_dict() == result.report.to_dict()


def test_divergence_is_recorded_not_raised(blobs):
    result = run_trial(quick_cfg(lr=1e300), dataset=blobs)
    assert result.status == "diverged"
    assert result.diverged_epoch == 1
    assert result.report is None
    assert result.error


def test_full_penalty_scope_trains(blobs):
    result = run_trial(quick_cfg(penalty_scope="full", epochs=2), dataset=blobs)
    assert result.status == "ok"
    assert len(result.epochs) == 2
    with pytest.raises(ConfigError):
        quick_cfg(penalty_scope="epoch")


def test_unregularized_run_drops_the_penalty(blobs):
    result = run_unregularized(quick_cfg(), dataset=blobs)
    for record in result.epochs:
        assert record.objective == pytest.approx(
            record.pll_term + record.unlabeled_ac_term + record.negative_ac_term
        )


def test_short_unregularized_run_stays_non_negative(blobs):
    result = run_unregularized(quick_cfg(epochs=3), dataset=blobs)
    assert all(record.objective >= 0 for record in result.epochs)


def test_threshold_baseline_boundary(blobs):
    cfg = quick_cfg(threshold=1.0)
    result = run_threshold_baseline(cfg, dataset=blobs)
    assert result.method == "baseline"
    assert result.theta_hat is None
    # nothing exceeds probability 1, so every prediction is the augmented class
    truth_is_ac = np.array(result.report.confusion).sum(axis=1)[-1]
    assert result.report.accuracy == pytest.approx(truth_is_ac / np.sum(result.report.confusion))
    assert result.report.ac_recall == 1.0


def test_prior_shift_and_kme_paths_run(blobs):
    result = run_trial(quick_cfg(alpha=0.5, theta="kme", epochs=1), dataset=blobs)
    assert result.status == "ok"
    assert 0.0 <= result.theta_hat <= 1.0


def test_run_from_partial_files(tmp_path, blobs):
    rng = np.random.default_rng(0)
    split = prepare_split(quick_cfg(), rng, blobs)
    save_partial(split.pll_train, str(tmp_path / "pl.csv"), str(tmp_path / "pl.txt"))
    save_features(split.test_features, str(tmp_path / "pool.csv"), labels=split.test_labels)

    cfg = quick_cfg(dataset=str(tmp_path / "pl.csv"), candidates_path=str(tmp_path / "pl.txt"),
                    unlabeled_pool=str(tmp_path / "pool.csv"), epochs=2)
    result = run_trial(cfg)
    assert result.status == "ok"
    assert result.epochs[0].train_accuracy is None
    assert len(result.report.confusion) == 4


def test_sink_gets_one_line_per_epoch(tmp_path, blobs):
    sink = JsonLinesWriter(str(tmp_path / "epochs.jsonl"))
    run_trial(quick_cfg(epochs=3), dataset=blobs, sink=sink)
    lines = sink.read()
    assert [line["epoch"] for line in lines] == [1, 2, 3]
    assert all(line["kind"] == "epoch" for line in lines)


def test_single_cell_grid_equals_trial_aggregation(blobs):
    cfg = quick_cfg(trials=2, epochs=2)
    df = run_grid(cfg, {"lambda": [1.0]}, dataset=blobs)
    trials = [run_trial(cfg, seed=cfg.seed + i, dataset=blobs) for i in range(2)]

    accuracies = [t.report.accuracy for t in trials]
    assert len(df) == 1
    assert df.loc[0, "accuracy_mean"] == pytest.approx(np.mean(accuracies))
    assert df.loc[0, "accuracy_std"] == pytest.approx(np.std(accuracies))
    row = summarize(trials, {"lambda": 1.0})
    assert row["status"] == "ok" and row["diverged"] == 0
    assert row["macro_f1_mean"] == pytest.approx(df.loc[0, "macro_f1_mean"])


def test_grid_records_failing_cells_and_continues(blobs):
    df = run_grid(quick_cfg(epochs=1), {"theta": ["fixed:0.5", "fixed:2"]}, dataset=blobs)
    assert list(df["status"]) == ["ok", "failed"]
    assert "theta" in df.loc[1, "error"]


def test_grid_cross_product_and_workers(blobs):
    df = run_grid(quick_cfg(epochs=1), {"lambda": [0.5, 1.0], "t": [1, 2]}, dataset=blobs, workers=2)
    assert len(df) == 4
    assert set(zip(df["lambda"], df["t"])) == {(0.5, 1), (0.5, 2), (1.0, 1), (1.0, 2)}


def test_swept_penalty_replaces_a_correction_preset(blobs):
    base = quick_cfg(epochs=1, correction="abs")
    df = run_grid(base, {"lambda": ["0.1", "1.5"], "t": ["2", "3"]}, dataset=blobs)
    assert list(df["status"]) == ["ok"] * 4
    assert set(zip(df["lambda"], df["t"])) == {(0.1, 2), (0.1, 3), (1.5, 2), (1.5, 3)}
    assert df["lambda"].dtype == np.float64
    assert df["t"].dtype == np.int64

    cfg = cell_config(base, {"lambda": "0.1", "t": "2"})
    assert (cfg.lambda_, cfg.t, cfg.correction) == (0.1, 2, None)
    cfg = cell_config(quick_cfg(), {"correction": "abs"})
    assert (cfg.lambda_, cfg.t) == (2.0, 1)
    with pytest.raises(ConfigError):
        cell_config(quick_cfg(), {"correction": "abs", "lambda": "0.5"})


def test_empty_sweep_axis_is_an_error(blobs):
    with pytest.raises(Exception, match="non-empty"):
        run_grid(quick_cfg(), {"lambda": []}, dataset=blobs)


def test_supervised_model_separates_the_blobs(blobs):
    """The synthetic admits a linear (k+1)-class separator."""
    rng = np.random.default_rng(0)
    x = (blobs.features - blobs.features.mean(axis=0)) / blobs.features.std(axis=0)
    onehot = np.eye(blobs.k, dtype=bool)[blobs.labels]
    params = init_params("linear", x.shape[1], blobs.k, rng)
    state = init_adam(params, lr=0.05)
    for _ in range(300):
        _, grads, _ = known_class_risk(params, x, onehot, onehot.astype(float), "rc")
        params, state = adam_step(params, grads, state)
    assert evaluate(params, x, blobs.labels).accuracy >= 0.95


def test_pllac_reaches_high_accuracy_on_blobs():
    data = make_blobs(300, 3, np.random.default_rng(11), separation=6.0, spread=0.8)
    cfg = quick_cfg(seed=0, epochs=100, lr=0.02)
    split_rng = spawn_rngs(cfg.seed, 5)[0]
    theta = prepare_split(cfg, split_rng, data).test_theta

    result = run_trial(cfg.model_copy(update={"theta": f"fixed:{theta:.4f}"}), dataset=data)
    assert result.report.accuracy >= 0.90
