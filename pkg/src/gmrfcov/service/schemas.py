"""Request/response models for the covariance service.

Matrices travel as Matrix Market text and estimates as CSV text, so clients
can persist them unchanged and results stay byte-reproducible.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field


class GenRequest(BaseModel):
    kind: Literal["ar1", "rw1", "kvar"]
    n: int | None = None
    phi: float | None = None
    dims: list[int] | None = None
    k: int = 1
    lambda_seed: int = 0
    coupling_seed: int = 0


class GenResponse(BaseModel):
    q_mm: str
    g_mm: str | None = None
    h_mm: str | None = None
    manifest: dict


class OracleRequest(BaseModel):
    q_mm: str
    s: Literal["diag", "pattern", "pairs"] = "diag"
    pairs: list[tuple[int, int]] | None = None
    memory_budget_bytes: int | None = None


class OracleResponse(BaseModel):
    cov_csv: str
    stats: dict


class EstimateRequest(BaseModel):
    q_mm: str
    g_mm: str | None = None
    h_mm: str | None = None
    estimator: Literal["mc", "hutchinson", "simple-rbmc", "block-rbmc", "interface"]
    n_s: int = Field(ge=1)
    seed: int = 0
    dims: list[int] | None = None
    k: int = 1
    s: Literal["diag", "pattern", "pairs"] = "diag"
    pairs: list[tuple[int, int]] | None = None
    sampler: Literal["auto", "chol", "pcg"] = "auto"
    delta: float = 1e-9
    max_iter: int | None = None
    preconditioner: Literal["none", "jacobi", "ichol0"] = "jacobi"
    blocks_per_dim: int = 4
    margin: int = 4
    n_iter: int = 1
    probe: Literal["rademacher", "identity"] = "rademacher"
    confidence: float = 0.95


class EstimateResponse(BaseModel):
    cov_csv: str
    sidecar: dict


class CompareRun(BaseModel):
    cov_csv: str
    sidecar: dict


class CompareRequest(BaseModel):
    oracle_csv: str
    runs: list[CompareRun]


class CompareResponse(BaseModel):
    results_csv: str
    table: str


class Ar1VerifyRequest(BaseModel):
    phis: list[float] = [0.1, 0.3, 0.5, 0.7, 0.9]
    ms: list[int] = [1, 3, 11]
    n_s: int = 50
    reps: int = 200
    n: int = 2000
    seed: int = 0
    tolerance: float = 0.15
    mc_tolerance: float = 0.10


class Ar1VerifyResponse(BaseModel):
    rows: list[dict]
    csv: str
    passed: bool


class ErrorBody(BaseModel):
    code: Literal["precondition", "numeric"]
    message: str
