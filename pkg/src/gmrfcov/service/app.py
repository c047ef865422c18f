"""FastAPI service exposing the benchmark operations.

The CLI is a thin client of this app; everything it can do goes through
these endpoints.  Domain errors map to HTTP 400 with a machine-readable
code ('precondition' or 'numeric') that clients turn into exit codes.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import bench, mmio
from ..errors import NumericError, PreconditionError
from . import schemas


def create_app() -> FastAPI:
    app = FastAPI(title="gmrfcov", version="0.1.0")

    @app.exception_handler(PreconditionError)
    async def _precondition(request: Request, exc: PreconditionError):
        body = schemas.ErrorBody(code="precondition", message=str(exc))
        return JSONResponse(status_code=400, content={"error": body.model_dump()})

    @app.exception_handler(NumericError)
    async def _numeric(request: Request, exc: NumericError):
        body = schemas.ErrorBody(code="numeric", message=str(exc))
        return JSONResponse(status_code=400, content={"error": body.model_dump()})

    @app.get("/health")
    def health():
        return {"status": "ok", "service": "gmrfcov", "version": app.version}

    @app.post("/gen", response_model=schemas.GenResponse)
    def gen(req: schemas.GenRequest):
        out = bench.generate_model(
            req.kind,
            n=req.n,
            phi=req.phi,
            dims=req.dims,
            k=req.k,
            lambda_seed=req.lambda_seed,
            coupling_seed=req.coupling_seed,
        )
        return schemas.GenResponse(
            q_mm=out.q_mm, g_mm=out.g_mm, h_mm=out.h_mm, manifest=out.model.manifest()
        )

    @app.post("/oracle", response_model=schemas.OracleResponse)
    def oracle(req: schemas.OracleRequest):
        Q = mmio.read_sym(req.q_mm)
        budget = req.memory_budget_bytes or bench.DEFAULT_MEMORY_BUDGET
        cov, stats = bench.oracle_covariance(
            Q, s_spec=req.s, pairs=req.pairs, memory_budget_bytes=budget
        )
        return schemas.OracleResponse(cov_csv=cov.to_csv(), stats=stats)

    @app.post("/estimate", response_model=schemas.EstimateResponse)
    def estimate(req: schemas.EstimateRequest):
        Q = mmio.read_sym(req.q_mm)
        G = mmio.read_rect(req.g_mm) if req.g_mm else None
        H = mmio.read_rect(req.h_mm) if req.h_mm else None
        cov, sidecar = bench.estimate_covariance(
            Q,
            req.estimator,
            req.n_s,
            req.seed,
            G=G,
            H=H,
            dims=req.dims,
            K=req.k,
            s_spec=req.s,
            pairs=req.pairs,
            sampler=req.sampler,
            delta=req.delta,
            max_iter=req.max_iter,
            preconditioner=req.preconditioner,
            blocks_per_dim=req.blocks_per_dim,
            margin=req.margin,
            n_iter=req.n_iter,
            probe=req.probe,
            confidence=req.confidence,
        )
        return schemas.EstimateResponse(cov_csv=cov.to_csv(), sidecar=sidecar)

    @app.post("/compare", response_model=schemas.CompareResponse)
    def compare(req: schemas.CompareRequest):
        from ..takahashi import SelectedCov

        oracle_cov = SelectedCov.from_csv(req.oracle_csv)
        runs = [
            (SelectedCov.from_csv(r.cov_csv, n=oracle_cov.index_set.n), r.sidecar)
            for r in req.runs
        ]
        _, results_csv, table = bench.compare_runs(oracle_cov, runs)
        return schemas.CompareResponse(results_csv=results_csv, table=table)

    @app.post("/ar1-verify", response_model=schemas.Ar1VerifyResponse)
    def ar1_verify(req: schemas.Ar1VerifyRequest):
        rows, csv_text, passed = bench.ar1_verify(
            phis=req.phis,
            Ms=req.ms,
            n_s=req.n_s,
            reps=req.reps,
            N=req.n,
            seed=req.seed,
            tolerance=req.tolerance,
            mc_tolerance=req.mc_tolerance,
        )
        return schemas.Ar1VerifyResponse(rows=rows, csv=csv_text, passed=passed)

    return app


app = create_app()
