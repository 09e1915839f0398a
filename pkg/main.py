#!/usr/bin/env python3
import io
import logging
import math
import os
from typing import List

import uvicorn
from dotenv import load_dotenv
from fastapi import FastAPI, File, Form, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from evaluation import MatrixFormatError, knn_predict_partition, read_matrix_csv
from log_config import setup_colored_logging
from partition import METHODS
from strategies import posthoc_matrix

load_dotenv()

app = FastAPI(title="Configuration Mode API")

# Enable CORS for all origins
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Configure colored logging
setup_colored_logging(level=logging.INFO)
logger = logging.getLogger('main')


class PredictRequest(BaseModel):
    train_features: List[List[float]] = Field(min_length=1)
    train_labels: List[int] = Field(min_length=1)
    queries: List[List[float]] = Field(min_length=1)


def error_response(message: str, status_code: int = 400) -> JSONResponse:
    return JSONResponse(status_code=status_code, content={"status": "error", "message": message})


def _finite_or_none(value: float):
    return float(value) if math.isfinite(value) else None


@app.get("/health")
async def health():
    return {"status": "ok"}


@app.post("/partition")
async def partition(
    matrix: UploadFile = File(...),
    k: int = Form(2),
    method: str = Form("exact"),
    seed: int = Form(0),
):
    """
    Partition the instances of an uploaded response matrix CSV.
    - matrix: CSV with header config_id,<instance ids...>; empty cell = missing, "fail" = failed
    - k: maximum number of partitions
    - method: exact, greedy or kmeans
    """
    if method not in METHODS:
        return error_response(f"unknown method '{method}', expected one of {', '.join(METHODS)}")
    try:
        text = (await matrix.read()).decode("utf-8")
        m = read_matrix_csv(io.StringIO(text))
        result = posthoc_matrix(m, k, method=method, seed=seed)
    except (MatrixFormatError, ValueError, UnicodeDecodeError) as e:
        logger.error(f"Error partitioning uploaded matrix: {str(e)}")
        return error_response(str(e))

    groups = []
    for g in range(result.k):
        members = result.members(g)
        groups.append({
            "partition": g,
            "config_id": m.config_ids[int(result.representative_config_index[g])],
            "mean_cost": _finite_or_none(result.per_partition_cost[g]),
            "instances": [m.instance_ids[j] for j in members],
        })
    logger.info(f"Partitioned {len(m.instance_ids)} instances into {result.k_effective} groups with {method}")
    return {
        "status": "success",
        "method": method,
        "k_effective": result.k_effective,
        "mean_cost": _finite_or_none(result.mean_cost),
        "partitions": groups,
        "assignment": {inst: int(a) for inst, a in zip(m.instance_ids, result.assignment)},
    }


@app.post("/predict")
async def predict(request: PredictRequest):
    """
    Predict partitions of new instances from their features (nearest training instance).
    - train_features: one feature vector per training instance
    - train_labels: partition id per training instance
    - queries: feature vectors to classify
    """
    try:
        predictions = [knn_predict_partition(request.train_features, request.train_labels, q)
                       for q in request.queries]
    except ValueError as e:
        logger.error(f"Error predicting partitions: {str(e)}")
        return error_response(str(e))
    return {"status": "success", "partitions": [int(p) for p in predictions]}


if __name__ == "__main__":
    port = int(os.getenv("PORT", "8000"))
    uvicorn.run("main:app", host="0.0.0.0", port=port, reload=False)
