"""Request and response bodies for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class PresetInfo(BaseModel):
    name: str
    n_tokens: int
    embed_dim: int
    n_heads: int
    head_dim: int
    ffn_dim: int
    n_blocks: int
    model_kind: str


class RunRequest(BaseModel):
    """Common experiment inputs: an optional INI config body plus the
    overrides the command line exposes."""

    config_text: str | None = None
    seed: int | None = None
    precision: str | None = Field(default=None, pattern="^(f32|f64)$")
    mode: str | None = Field(default=None, pattern="^(unicast|broadcast)$")


class VerifyRequest(RunRequest):
    inject: str | None = None


class PropertyRecord(BaseModel):
    property: str
    passed: bool
    trials: int
    max_error: float | None  # None when the check has no finite error metric
    detail: str


class VerifyResponse(BaseModel):
    ok: bool
    results: list[PropertyRecord]


class CompareRow(BaseModel):
    strategy: str
    partitions: int
    landmarks: int | None
    gflops_total: float
    gflops_per_device: float
    comp_speedup_pct: float | None
    pdplc_tokens: int | None
    cr: float | None
    comm_speedup_pct: float | None


class CompareResponse(BaseModel):
    rows: list[CompareRow]


class LatencyRow(BaseModel):
    bandwidth_mbps: float
    single_s: float
    voltage_s: float
    prism_s: float
    prism_over_voltage: float


class LatencyResponse(BaseModel):
    rows: list[LatencyRow]


class SimulateRequest(RunRequest):
    strategy: str = Field(pattern="^(single|voltage|prism)$")
    n_partitions: int = 2
    landmarks: int = 10
    execution: str | None = Field(default=None,
                                  pattern="^(sequential|threaded)$")


class LedgerRecord(BaseModel):
    device: int
    block: int
    kind: str
    elements: int
    bytes: int
    messages: int


class SimulateResponse(BaseModel):
    strategy: str
    n_partitions: int
    landmarks: int | None
    output_rows: int
    output_cols: int
    output_sha256: str
    total_elements: int
    total_bytes: int
    total_messages: int
    ledger: list[LedgerRecord]
    distribution_s: float
    total_latency_s: float
    device_flops: list[int]
