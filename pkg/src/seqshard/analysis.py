"""Analytical cost models: communication volume, FLOPs, and latency.

The FLOP model composes the exact cost functions that the kernels charge at
runtime (see `tensor`), walked over the shapes each strategy produces, so an
instrumented simulation and this closed form agree to the integer. The
communication model predicts ledger entries per (device, block, kind), again
as exact integers.

Conventions mirrored from the runtime:
  - the baseline exchanges full partitions and recomputes full-length
    key/value projections on every device;
  - the landmark strategy projects keys/values over the augmented rows only
    and pays for the duplicate-weighted softmax;
  - workers exchange after blocks 0..B-2 (the last block's output has no
    consumer); block-0 landmarks are computed and shipped by the master;
  - per-device-per-layer communicated tokens (pdplc) follow the table
    convention: round-half-up((P-1)*N/P) for the baseline, (P-1)*L for the
    landmark strategy, and the compression rate is their ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from . import tensor
from .errors import ConfigError
from .model import TransformerConfig
from .partition import PartitionPlan, make_partition_plan
from .runtime import LedgerEntry, MessageKind, NetworkModel

GIGA = 1e9


def round_half_up_ratio(num: int, den: int) -> int:
    """floor(num/den + 1/2) in exact integer arithmetic."""
    return (2 * num + den) // (2 * den)


# ---------------------------------------------------------------------------
# Communication


def pdplc_tokens(strategy: str, config: TransformerConfig) -> int:
    """Per-device per-layer communicated tokens under the table convention."""
    n, p = config.n_tokens, config.n_partitions
    if strategy == "single":
        return 0
    if strategy == "voltage":
        return round_half_up_ratio((p - 1) * n, p)
    if strategy == "prism":
        return (p - 1) * config.landmarks_per_partition
    raise ConfigError(f"unknown strategy {strategy!r}")


def compression_rate(config: TransformerConfig) -> float:
    """Baseline tokens over landmark tokens for the same partition count."""
    return pdplc_tokens("voltage", config) / pdplc_tokens("prism", config)


def comm_speedup_pct(cr: float) -> float:
    return (1.0 - 1.0 / cr) * 100.0


def landmarks_for_rate(n_tokens: int, n_partitions: int, cr: float) -> int:
    """Landmark count that hits a requested compression rate: floor(N/(cr*P))."""
    value = int(n_tokens / (cr * n_partitions))
    if value < 1:
        raise ConfigError(
            f"compression rate {cr} leaves no landmarks for N={n_tokens}, "
            f"P={n_partitions}")
    return value


def comm_elements(strategy: str, config: TransformerConfig,
                  comm_mode: str = "unicast") -> list[int]:
    """Steady-state elements sent per device per block, one entry per device
    (actual partition sizes, exact integers)."""
    plan = make_partition_plan(config.n_tokens, config.n_partitions)
    d = config.embed_dim
    if strategy == "single":
        return [0]
    if strategy == "voltage":
        sent = [(plan.n_partitions - 1) * plan.size(p) * d
                for p in range(1, plan.n_partitions + 1)]
    elif strategy == "prism":
        sent = [(plan.n_partitions - 1) * config.landmarks_per_partition * d
                for _ in range(plan.n_partitions)]
    else:
        raise ConfigError(f"unknown strategy {strategy!r}")
    if comm_mode == "broadcast":
        sent = [s // (plan.n_partitions - 1) for s in sent]
    return sent


def ledger_expectations(strategy: str, config: TransformerConfig,
                        comm_mode: str = "unicast",
                        bytes_per_scalar: int = 4
                        ) -> dict[tuple[int, int, MessageKind], LedgerEntry]:
    """Exact expected ledger: (device, block, kind) -> entry."""
    plan = make_partition_plan(config.n_tokens, config.n_partitions)
    n, d, b_total = config.n_tokens, config.embed_dim, config.n_blocks
    big_p = plan.n_partitions
    lpp = config.landmarks_per_partition

    expected: dict[tuple[int, int, MessageKind], LedgerEntry] = {}

    def put(device: int, block: int, kind: MessageKind, elements: int,
            messages: int) -> None:
        expected[(device, block, kind)] = LedgerEntry(
            elements=elements, bytes=elements * bytes_per_scalar,
            messages=messages)

    put(0, 0, MessageKind.CONTROL, 0, big_p)
    if strategy == "single":
        put(0, 0, MessageKind.INPUT_PARTITION, n * d, 1)
        put(1, b_total, MessageKind.OUTPUT_PARTITION, n * d, 1)
        return expected

    if strategy == "voltage":
        put(0, 0, MessageKind.INPUT_PARTITION, big_p * n * d, big_p)
        for p in range(1, big_p + 1):
            n_p = plan.size(p)
            for block in range(1, b_total):
                if comm_mode == "broadcast":
                    put(p, block, MessageKind.OUTPUT_PARTITION, n_p * d, 1)
                else:
                    put(p, block, MessageKind.OUTPUT_PARTITION,
                        (big_p - 1) * n_p * d, big_p - 1)
            put(p, b_total, MessageKind.OUTPUT_PARTITION, n_p * d, 1)
        return expected

    if strategy == "prism":
        put(0, 0, MessageKind.INPUT_PARTITION, n * d, big_p)
        put(0, 0, MessageKind.SEGMENT_MEANS, big_p * (big_p - 1) * lpp * d,
            big_p)
        for p in range(1, big_p + 1):
            for block in range(1, b_total):
                if comm_mode == "broadcast":
                    put(p, block, MessageKind.SEGMENT_MEANS, lpp * d, 1)
                else:
                    put(p, block, MessageKind.SEGMENT_MEANS,
                        (big_p - 1) * lpp * d, big_p - 1)
            put(p, b_total, MessageKind.OUTPUT_PARTITION, plan.size(p) * d, 1)
        return expected

    raise ConfigError(f"unknown strategy {strategy!r}")


# ---------------------------------------------------------------------------
# FLOPs


def _attn_head_flops(n_q: int, n_kv: int, dim: int, head_dim: int,
                     masked: bool) -> int:
    f = tensor.matmul_flops(n_q, dim, head_dim)          # queries
    f += 2 * tensor.matmul_flops(n_kv, dim, head_dim)    # keys, values
    f += tensor.matmul_flops(n_q, head_dim, n_kv)        # scores
    f += tensor.exp_scores_flops(n_q, n_kv)
    if masked:
        f += tensor.mask_flops(n_q, n_kv)
    f += tensor.weighted_norm_flops(n_q, n_kv)
    f += tensor.matmul_flops(n_q, n_kv, head_dim)        # value mixing
    return f


def _block_tail_flops(n_local: int, config: TransformerConfig) -> int:
    """Output projection, residuals, second layernorm, and FFN."""
    dim, ffn = config.embed_dim, config.ffn_dim
    f = tensor.matmul_flops(n_local, dim, dim)
    f += tensor.add_flops(n_local, dim)
    f += tensor.layernorm_flops(n_local, dim)
    f += tensor.matmul_flops(n_local, dim, ffn)
    f += tensor.gelu_flops(n_local, ffn)
    f += tensor.matmul_flops(n_local, ffn, dim)
    f += tensor.add_flops(n_local, dim)
    return f


def device_block_flops(strategy: str, config: TransformerConfig,
                       plan: PartitionPlan, device: int, block: int) -> int:
    """Exact FLOPs one device charges for one block (mirrors the kernels)."""
    masked = config.is_decoder
    dim, head_dim = config.embed_dim, config.head_dim
    n = plan.n_tokens
    n_p = plan.size(device)
    if strategy == "single":
        n_q = n_kv = n
        ln1_rows = n
    elif strategy == "voltage":
        n_q, n_kv = n_p, n
        ln1_rows = n
    elif strategy == "prism":
        n_q = n_p
        n_kv = n_p + config.landmarks_per_partition * (plan.n_partitions - 1)
        ln1_rows = n_kv
    else:
        raise ConfigError(f"unknown strategy {strategy!r}")
    f = tensor.layernorm_flops(ln1_rows, dim)
    f += config.n_heads * _attn_head_flops(n_q, n_kv, dim, head_dim, masked)
    f += _block_tail_flops(n_q, config)
    if (strategy == "prism" and plan.n_partitions > 1
            and block < config.n_blocks - 1):
        f += tensor.segment_mean_flops(n_p, dim)
    if block == config.n_blocks - 1:
        f += tensor.layernorm_flops(n_q, dim)  # closing layernorm
    return f


@dataclass(frozen=True)
class FlopsReport:
    strategy: str
    total: int
    per_device: tuple[int, ...]

    @property
    def per_device_mean(self) -> float:
        return self.total / len(self.per_device)


def flops_forward(strategy: str, config: TransformerConfig) -> FlopsReport:
    """Exact per-device and total FLOPs for one forward pass."""
    plan = make_partition_plan(config.n_tokens, config.n_partitions)
    per_device = tuple(
        sum(device_block_flops(strategy, config, plan, p, b)
            for b in range(config.n_blocks))
        for p in range(1, plan.n_partitions + 1))
    return FlopsReport(strategy=strategy, total=sum(per_device),
                       per_device=per_device)


def _single_baseline(config: TransformerConfig) -> int:
    base = replace(config, n_partitions=1, landmarks_per_partition=1)
    return flops_forward("single", base).total


def comp_speedup_pct(strategy: str, config: TransformerConfig) -> float:
    """Per-device compute reduction versus the single-device pass."""
    single = _single_baseline(config)
    report = flops_forward(strategy, config)
    return (1.0 - report.per_device_mean / single) * 100.0


# ---------------------------------------------------------------------------
# Latency


def latency_curve(strategy: str, config: TransformerConfig,
                  net: NetworkModel, device_flops_per_s: float,
                  bandwidths_mbps: list[float],
                  comm_mode: str = "unicast") -> list[tuple[float, float]]:
    """Lockstep latency versus link bandwidth.

    Per block: slowest device's compute plus its exchange (bytes at the
    accounting width, plus per-message latency). The single strategy has no
    exchange, so its curve is bandwidth-constant.
    """
    report = flops_forward(strategy, config)
    per_block_flops = max(report.per_device) / config.n_blocks
    elems = comm_elements(strategy, config, comm_mode)
    per_block_bytes = max(elems) * net.bytes_per_scalar
    if strategy == "single":
        messages = 0
    elif comm_mode == "broadcast":
        messages = 1
    else:
        messages = config.n_partitions - 1
    curve = []
    for mbps in bandwidths_mbps:
        if mbps <= 0:
            raise ConfigError(f"bandwidth must be positive, got {mbps}")
        comm_s = (per_block_bytes * 8.0 / (mbps * 1e6)
                  + messages * net.per_message_latency_s)
        latency = config.n_blocks * (per_block_flops / device_flops_per_s
                                     + comm_s)
        curve.append((float(mbps), float(latency)))
    return curve


# ---------------------------------------------------------------------------
# Cost report rows


@dataclass(frozen=True)
class CostReport:
    """One comparison row (the strategy/partition/landmark cost columns)."""

    strategy: str
    n_partitions: int
    landmarks: int | None
    gflops_total: float
    gflops_per_device: float
    comp_speedup_pct: float | None
    pdplc_tokens: int | None
    cr: float | None
    comm_speedup_pct: float | None
    requested_cr: float | None = None

    def as_record(self) -> dict:
        return {
            "strategy": self.strategy,
            "partitions": self.n_partitions,
            "landmarks": self.landmarks,
            "gflops_total": self.gflops_total,
            "gflops_per_device": self.gflops_per_device,
            "comp_speedup_pct": self.comp_speedup_pct,
            "pdplc_tokens": self.pdplc_tokens,
            "cr": self.cr,
            "comm_speedup_pct": self.comm_speedup_pct,
        }


def cost_report(strategy: str, config: TransformerConfig,
                requested_cr: float | None = None) -> CostReport:
    """Build one row. When `requested_cr` is given (landmark sweep by target
    rate), the reported rate and communication speed-up follow the requested
    value, matching the sweep-table convention; otherwise the rate is derived
    from the landmark count."""
    report = flops_forward(strategy, config)
    row = dict(
        strategy=strategy,
        n_partitions=config.n_partitions,
        landmarks=None,
        gflops_total=report.total / GIGA,
        gflops_per_device=report.per_device_mean / GIGA,
        comp_speedup_pct=None,
        pdplc_tokens=None,
        cr=None,
        comm_speedup_pct=None,
        requested_cr=requested_cr,
    )
    if strategy != "single":
        row["comp_speedup_pct"] = comp_speedup_pct(strategy, config)
        row["pdplc_tokens"] = pdplc_tokens(strategy, config)
    if strategy == "prism":
        row["landmarks"] = config.landmarks_per_partition
        cr = requested_cr if requested_cr is not None else compression_rate(config)
        row["cr"] = cr
        row["comm_speedup_pct"] = comm_speedup_pct(cr)
    return CostReport(**row)
