"""Experiment drivers shared by the HTTP service and the command line.

Each driver takes a parsed `ExperimentConfig` and returns plain records,
leaving presentation (tables, CSV, JSON) to the caller.
"""

from __future__ import annotations

import hashlib

import numpy as np

from . import analysis
from .errors import ConfigError
from .experiment import ExperimentConfig, sweep_landmarks
from .model import generate_weights, make_input
from .runtime import NetworkModel, run_distributed
from .verify import PropertyResult, run_verification


def network_model(exp: ExperimentConfig) -> NetworkModel:
    return NetworkModel(bandwidth_bps=exp.bandwidth_mbps * 1e6,
                        per_message_latency_s=exp.per_message_latency_ms / 1e3,
                        bytes_per_scalar=exp.bytes_per_scalar)


def verify_rows(exp: ExperimentConfig,
                inject: str | None = None) -> list[PropertyResult]:
    return run_verification(exp, inject)


def compare_rows(exp: ExperimentConfig) -> list[analysis.CostReport]:
    """Cost table: single-device baseline, then the full-replication rows,
    then the landmark rows (per partition count, per landmark setting)."""
    model = exp.model
    rows = [analysis.cost_report("single", model.config())]
    for p_total in exp.compare_partitions:
        rows.append(analysis.cost_report("voltage", model.config(p_total, 1)))
    for p_total in exp.compare_partitions:
        for landmarks, requested in sweep_landmarks(exp, p_total):
            rows.append(analysis.cost_report(
                "prism", model.config(p_total, landmarks), requested))
    return rows


def latency_rows(exp: ExperimentConfig) -> list[dict]:
    """Latency sweep over link bandwidth for all three strategies at the
    configured partition and landmark counts."""
    model = exp.model
    net = network_model(exp)
    throughput = exp.device_gflops * 1e9
    bandwidths = list(exp.bandwidths_mbps)
    p_total, landmarks = exp.latency_partitions, exp.latency_landmarks
    curves = {
        "single": analysis.latency_curve("single", model.config(), net,
                                         throughput, bandwidths),
        "voltage": analysis.latency_curve(
            "voltage", model.config(p_total, 1), net, throughput,
            bandwidths, exp.mode),
        "prism": analysis.latency_curve(
            "prism", model.config(p_total, landmarks), net, throughput,
            bandwidths, exp.mode),
    }
    rows = []
    for i, mbps in enumerate(bandwidths):
        single_s = curves["single"][i][1]
        voltage_s = curves["voltage"][i][1]
        prism_s = curves["prism"][i][1]
        rows.append({
            "bandwidth_mbps": float(mbps),
            "single_s": single_s,
            "voltage_s": voltage_s,
            "prism_s": prism_s,
            "prism_over_voltage": prism_s / voltage_s,
        })
    return rows


def simulate(exp: ExperimentConfig, strategy: str, n_partitions: int,
             landmarks: int) -> dict:
    """One instrumented distributed run; returns summary records only (the
    output matrix is reported as a digest, not shipped)."""
    if strategy == "single":
        config = exp.model.config()
    else:
        config = exp.model.config(n_partitions, landmarks)
    x = make_input(config, exp.seed, exp.dtype)
    weights = generate_weights(config, exp.seed, exp.dtype)
    result = run_distributed(x, weights, config, strategy,
                             network_model(exp), comm_mode=exp.mode,
                             execution=exp.execution,
                             device_flops_per_s=exp.device_gflops * 1e9)
    output = np.ascontiguousarray(result.output)
    ledger = result.ledger
    return {
        "strategy": strategy,
        "n_partitions": config.n_partitions,
        "landmarks": config.landmarks_per_partition if strategy == "prism"
                     else None,
        "output_rows": int(output.shape[0]),
        "output_cols": int(output.shape[1]),
        "output_sha256": hashlib.sha256(output.tobytes()).hexdigest(),
        "total_elements": ledger.total_elements(),
        "total_bytes": sum(e.bytes for _, e in ledger.items()),
        "total_messages": sum(e.messages for _, e in ledger.items()),
        "ledger": ledger.as_records(),
        "distribution_s": result.timeline.distribution_s,
        "total_latency_s": result.timeline.total_latency_s,
        "device_flops": [sum(per_block) for per_block in result.device_flops],
    }


def simulate_args_valid(strategy: str, n_partitions: int,
                        landmarks: int) -> None:
    if strategy not in ("single", "voltage", "prism"):
        raise ConfigError(f"unknown strategy {strategy!r}")
    if strategy != "single" and n_partitions < 2:
        raise ConfigError(f"{strategy} needs at least 2 partitions")
    if landmarks < 1:
        raise ConfigError("landmarks must be at least 1")
