"""HTTP service exposing the simulator.

The command line talks to this app in-process by default, so every verb's
behavior lives here; running `seqshard serve` exposes the same API over a
socket.
"""

from __future__ import annotations

import math
from dataclasses import replace

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import drivers
from ..errors import ConfigError, SeqshardError
from ..experiment import PRESETS, ExperimentConfig, load_config, with_overrides
from ..version import __version__
from .schemas import (CompareResponse, CompareRow, HealthResponse,
                      LatencyResponse, LatencyRow, PresetInfo, PropertyRecord,
                      RunRequest, SimulateRequest, SimulateResponse,
                      VerifyRequest, VerifyResponse)


def _experiment(req: RunRequest) -> ExperimentConfig:
    if req.config_text:
        exp = load_config(text=req.config_text)
    else:
        exp = load_config()
    return with_overrides(exp, seed=req.seed, precision=req.precision,
                          mode=req.mode)


def create_app() -> FastAPI:
    app = FastAPI(title="seqshard", version=__version__)

    @app.exception_handler(ConfigError)
    async def _config_error(request: Request, exc: ConfigError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(SeqshardError)
    async def _internal_error(request: Request, exc: SeqshardError):
        return JSONResponse(status_code=500, content={"error": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.get("/presets", response_model=list[PresetInfo])
    def presets() -> list[PresetInfo]:
        return [PresetInfo(name=name, **dims)
                for name, dims in sorted(PRESETS.items())]

    @app.post("/verify", response_model=VerifyResponse)
    def verify(req: VerifyRequest) -> VerifyResponse:
        exp = _experiment(req)
        results = drivers.verify_rows(exp, req.inject)
        records = [
            PropertyRecord(
                property=r.name, passed=r.passed, trials=r.trials,
                max_error=r.max_error if math.isfinite(r.max_error) else None,
                detail=r.detail)
            for r in results]
        return VerifyResponse(ok=all(r.passed for r in results),
                              results=records)

    @app.post("/compare", response_model=CompareResponse)
    def compare(req: RunRequest) -> CompareResponse:
        exp = _experiment(req)
        rows = [CompareRow(**report.as_record())
                for report in drivers.compare_rows(exp)]
        return CompareResponse(rows=rows)

    @app.post("/latency", response_model=LatencyResponse)
    def latency(req: RunRequest) -> LatencyResponse:
        exp = _experiment(req)
        return LatencyResponse(
            rows=[LatencyRow(**row) for row in drivers.latency_rows(exp)])

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate(req: SimulateRequest) -> SimulateResponse:
        exp = _experiment(req)
        if req.execution is not None:
            exp = replace(exp, execution=req.execution)
        drivers.simulate_args_valid(req.strategy, req.n_partitions,
                                    req.landmarks)
        payload = drivers.simulate(exp, req.strategy, req.n_partitions,
                                   req.landmarks)
        return SimulateResponse(**payload)

    return app
