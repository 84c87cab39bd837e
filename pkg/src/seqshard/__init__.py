"""Desk-scale simulator for communication-efficient distributed transformer
inference: sequence partitioning with landmark compression, duplicate-free
scaled attention, a message-passing runtime with exact communication
accounting, and analytical cost models."""

from .analysis import (CostReport, FlopsReport, comm_elements,
                       comm_speedup_pct, comp_speedup_pct, compression_rate,
                       cost_report, device_block_flops, flops_forward,
                       landmarks_for_rate, latency_curve, ledger_expectations,
                       pdplc_tokens)
from .attention import (CausalMask, attention_duplicated_oracle,
                        attention_permuted_kv, attention_reference,
                        attention_rows, attention_scaled, build_causal_mask,
                        naive_local_mask)
from .errors import (ConfigError, DegenerateMaskError,
                     InvalidLandmarkCountError, InvalidPlanError,
                     NumericDegenerateError, ProtocolError, SeqshardError,
                     ShapeError, StallError)
from .experiment import (PRESETS, PRECISIONS, ExperimentConfig, ModelSpec,
                         load_config, with_overrides)
from .model import (TransformerConfig, WeightSet, generate_weights,
                    make_input, reference_forward)
from .partition import (AugmentedInput, PartitionPlan, SegmentMeans,
                        assemble_augmented, expand_duplicated,
                        make_partition_plan, segment_means)
from .runtime import (CommLedger, LedgerEntry, Message, MessageKind,
                      NetworkModel, RunResult, run_distributed)
from .verify import PropertyResult, run_verification
from .version import __version__

__all__ = [
    "AugmentedInput", "CausalMask", "CommLedger", "ConfigError",
    "CostReport", "DegenerateMaskError", "ExperimentConfig", "FlopsReport",
    "InvalidLandmarkCountError", "InvalidPlanError", "LedgerEntry",
    "Message", "MessageKind", "ModelSpec", "NetworkModel",
    "NumericDegenerateError", "PRECISIONS", "PRESETS", "PartitionPlan",
    "PropertyResult", "RunResult", "SegmentMeans", "SeqshardError",
    "ShapeError", "StallError", "TransformerConfig", "WeightSet",
    "attention_duplicated_oracle", "attention_permuted_kv",
    "attention_reference", "attention_rows", "attention_scaled",
    "assemble_augmented", "build_causal_mask", "comm_elements",
    "comm_speedup_pct", "comp_speedup_pct", "compression_rate",
    "cost_report", "device_block_flops", "expand_duplicated",
    "flops_forward", "generate_weights", "landmarks_for_rate",
    "latency_curve", "ledger_expectations", "load_config", "make_input",
    "make_partition_plan", "naive_local_mask", "pdplc_tokens",
    "reference_forward", "run_distributed", "run_verification",
    "segment_means", "with_overrides", "__version__",
]
