import logging
import os
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel, Field

from pllac.config import CHECKPOINT_FILE, EPOCHS_FILE, GRID_CSV, GRID_XLSX, OUTPUT_FOLDER, SUMMARY_FILE
from pllac.config import ExperimentConfig
from pllac.errors import PLLACError
from pllac.harness import run_trial
from pllac.mixprop import estimate_theta
from pllac.report_service import open_sink, save_trial

logger = logging.getLogger(__name__)

app = FastAPI(title="PLLAC Experiment API")

DOWNLOADS = {
    "summary": SUMMARY_FILE,
    "epochs": EPOCHS_FILE,
    "grid_csv": GRID_CSV,
    "grid_xlsx": GRID_XLSX,
    "checkpoint": CHECKPOINT_FILE,
}


class ThetaRequest(BaseModel):
    pll_features: list[list[float]]
    unlabeled_features: list[list[float]]
    bandwidth: Optional[float] = Field(None, gt=0)
    seed: int = 0


class ThetaResponse(BaseModel):
    theta_hat: float
    bandwidth: float
    curve: list[tuple[float, float]]


class TrainResponse(BaseModel):
    status: str
    seed: int
    theta_hat: Optional[float]
    accuracy: Optional[float]
    macro_f1: Optional[float]
    macro_auc: Optional[float]
    wall_time: float
    summary_path: str


@app.exception_handler(PLLACError)
def pllac_error_handler(request: Request, exc: PLLACError):
    logger.error(f"❌ {request.url.path}: {exc}")
    return JSONResponse(status_code=400, content={"error": type(exc).__name__, "detail": str(exc)})


@app.post("/theta", response_model=ThetaResponse)
def theta(body: ThetaRequest):
    estimate = estimate_theta(
        np.asarray(body.pll_features, dtype=np.float64),
        np.asarray(body.unlabeled_features, dtype=np.float64),
        rng=np.random.default_rng(body.seed),
        bandwidth=body.bandwidth,
    )
    return ThetaResponse(theta_hat=estimate.theta_hat, bandwidth=estimate.bandwidth, curve=estimate.curve())


@app.post("/train", response_model=TrainResponse)
def train(cfg: ExperimentConfig):
    result = run_trial(cfg, sink=open_sink(cfg.output))
    summary_path = save_trial(result, cfg.output)
    report = result.report
    return TrainResponse(
        status=result.status,
        seed=result.seed,
        theta_hat=result.theta_hat,
        accuracy=report.accuracy if report else None,
        macro_f1=report.macro_f1 if report else None,
        macro_auc=report.macro_auc if report else None,
        wall_time=result.wall_time,
        summary_path=summary_path,
    )


@app.get("/download/{file_type}")
def download(file_type: str, folder: Optional[str] = None):
    """`folder` is the `output` a /train request wrote to; the configured output folder by default."""
    if file_type not in DOWNLOADS:
        raise HTTPException(status_code=404, detail=f"unknown file type {file_type!r}")

    file_path = os.path.join(folder or OUTPUT_FOLDER, DOWNLOADS[file_type])
    if not os.path.exists(file_path):
        raise HTTPException(status_code=404, detail=f"{DOWNLOADS[file_type]} has not been produced yet")
    return FileResponse(file_path, filename=DOWNLOADS[file_type])
