import json
import threading

import numpy as np
import pandas as pd

from pllac.evaluation import evaluate_scores
from pllac.mixprop import ThetaEstimate
from pllac.report_service import JsonLinesWriter, save_grid, save_theta_curve, to_jsonable


def test_to_jsonable_handles_numpy_and_dataclasses():
    report = evaluate_scores(np.array([[0.9, 0.1], [0.2, 0.8]]), np.array([0, 1]))
    record = to_jsonable({"report": report, "scores": np.arange(3), "value": np.float64(0.5), 7: (1, 2)})
    assert json.loads(json.dumps(record)) == {
        "report": report.to_dict(), "scores": [0, 1, 2], "value": 0.5, "7": [1, 2],
    }


def test_concurrent_writers_produce_whole_lines(tmp_path):
    path = str(tmp_path / "out" / "epochs.jsonl")

    def write_many(worker):
        writer = JsonLinesWriter(path)
        for i in range(100):
            writer.write({"worker": worker, "i": i, "payload": "x" * 200})

    threads = [threading.Thread(target=write_many, args=(w,)) for w in range(4)]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()

    lines = JsonLinesWriter(path).read()
    assert len(lines) == 400
    assert sorted((line["worker"], line["i"]) for line in lines) == [(w, i) for w in range(4) for i in range(100)]


def test_read_of_missing_file_is_empty(tmp_path):
    assert JsonLinesWriter(str(tmp_path / "none.jsonl")).read() == []


def test_theta_curve_export(tmp_path):
    estimate = ThetaEstimate(theta_hat=0.5, bandwidth=1.0, lambdas=np.linspace(0, 1, 5),
                             distances=np.array([0.0, 0.0, 0.1, 0.2, 0.3]),
                             raw_distances=np.array([0.0, 0.01, 0.1, 0.2, 0.3]))
    df = pd.read_csv(save_theta_curve(estimate, str(tmp_path / "curve.csv")))
    assert list(df.columns) == ["lambda", "distance", "raw_distance"]
    assert df["raw_distance"].iloc[1] == 0.01


def test_grid_export_writes_csv_and_excel(tmp_path):
    df = pd.DataFrame([{"lambda": 0.5, "accuracy_mean": 0.9}, {"lambda": 1.0, "accuracy_mean": 0.92}])
    csv_path, excel_path = save_grid(df, str(tmp_path))
    pd.testing.assert_frame_equal(pd.read_csv(csv_path), df)
    pd.testing.assert_frame_equal(pd.read_excel(excel_path), df)
