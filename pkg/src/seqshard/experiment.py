"""Experiment configuration: presets, INI files, and derived run plans.

Configs are INI files (stdlib `configparser`). Every key is validated;
unknown sections or keys raise `ConfigError` so a typo cannot silently
change an experiment. Command-line flags (seed, precision, mode) override
the corresponding config values.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .analysis import landmarks_for_rate
from .errors import ConfigError
from .model import TransformerConfig

PRECISIONS = {"f32": np.float32, "f64": np.float64}

# Sequence lengths for the text models are fixed operating points chosen to
# reproduce the published cost tables.
PRESETS: dict[str, dict] = {
    "vit-base": dict(n_tokens=197, embed_dim=768, n_heads=12, head_dim=64,
                     ffn_dim=3072, n_blocks=12, model_kind="encoder"),
    "bert-base": dict(n_tokens=256, embed_dim=768, n_heads=12, head_dim=64,
                      ffn_dim=3072, n_blocks=12, model_kind="encoder"),
    "gpt2-base": dict(n_tokens=256, embed_dim=768, n_heads=12, head_dim=64,
                      ffn_dim=3072, n_blocks=12, model_kind="decoder"),
}

_MODEL_KEYS = ("preset", "n_tokens", "embed_dim", "n_heads", "head_dim",
               "ffn_dim", "n_blocks", "model_kind")

# small enough that distributed-equivalence checks run in seconds
VERIFY_MODEL_DEFAULTS = dict(n_tokens=48, embed_dim=64, n_heads=4,
                             head_dim=16, ffn_dim=128, n_blocks=3)
_RUN_KEYS = ("seed", "precision", "mode", "execution")
_NETWORK_KEYS = ("bandwidth_mbps", "per_message_latency_ms",
                 "bytes_per_scalar")
_VERIFY_KEYS = ("trials", "partitions", "landmarks", "n_tokens", "embed_dim",
                "n_heads", "head_dim", "ffn_dim", "n_blocks")
_LATENCY_KEYS = ("partitions", "landmarks", "bandwidths_mbps",
                 "device_gflops")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture dimensions, independent of how the run is partitioned."""

    n_tokens: int
    embed_dim: int
    n_heads: int
    head_dim: int
    ffn_dim: int
    n_blocks: int
    model_kind: str

    def config(self, n_partitions: int = 1,
               landmarks: int = 1) -> TransformerConfig:
        return TransformerConfig(
            n_tokens=self.n_tokens, embed_dim=self.embed_dim,
            head_dim=self.head_dim, n_heads=self.n_heads,
            ffn_dim=self.ffn_dim, n_blocks=self.n_blocks,
            model_kind=self.model_kind, n_partitions=n_partitions,
            landmarks_per_partition=landmarks)


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    seed: int = 0
    precision: str = "f32"
    mode: str = "unicast"
    execution: str = "sequential"
    bandwidth_mbps: float = 100.0
    per_message_latency_ms: float = 1.0
    bytes_per_scalar: int = 4
    verify_trials: int = 20
    verify_partitions: tuple[int, ...] = (2, 3)
    verify_landmarks: int = 4
    verify_model: ModelSpec | None = None
    compare_partitions: tuple[int, ...] = (2, 3)
    compare_landmarks: dict[int, tuple[int, ...]] = field(default_factory=dict)
    compression_rates: tuple[float, ...] = ()
    latency_partitions: int = 2
    latency_landmarks: int = 10
    bandwidths_mbps: tuple[float, ...] = (10, 25, 50, 100, 250, 500, 1000)
    device_gflops: float = 10.0

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(PRECISIONS[self.precision])

    def landmarks_for(self, n_partitions: int) -> tuple[int, ...]:
        if n_partitions in self.compare_landmarks:
            return self.compare_landmarks[n_partitions]
        return (10, 20, 30)


def _require_keys(section: str, options: list[str], allowed: tuple[str, ...],
                  dynamic_prefix: str | None = None) -> None:
    for key in options:
        if key in allowed:
            continue
        if dynamic_prefix and key.startswith(dynamic_prefix):
            suffix = key[len(dynamic_prefix):]
            if suffix.isdigit():
                continue
        raise ConfigError(f"unknown key [{section}] {key}")


def _ints(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in raw.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {raw!r}") \
            from exc


def _floats(raw: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in raw.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {raw!r}") \
            from exc


def _model_from_section(section: configparser.SectionProxy,
                        context: str) -> ModelSpec:
    base: dict = {}
    preset = section.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {preset!r}; choose from "
                f"{sorted(PRESETS)}")
        base.update(PRESETS[preset])
    for key in ("n_tokens", "embed_dim", "n_heads", "head_dim", "ffn_dim",
                "n_blocks"):
        if key in section:
            try:
                base[key] = section.getint(key)
            except ValueError as exc:
                raise ConfigError(
                    f"[{context}] {key} must be an integer") from exc
    if "model_kind" in section:
        base["model_kind"] = section.get("model_kind")
    missing = [key for key in ("n_tokens", "embed_dim", "n_heads", "head_dim",
                               "ffn_dim", "n_blocks", "model_kind")
               if key not in base]
    if missing:
        raise ConfigError(
            f"[{context}] incomplete model: set preset or provide "
            f"{', '.join(missing)}")
    return ModelSpec(**base)


def load_config(path: str | Path | None = None,
                text: str | None = None) -> ExperimentConfig:
    """Parse an INI experiment config; `text` serves in-memory configs."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if text is not None:
        parser.read_string(text)
    elif path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        with path.open() as fh:
            parser.read_file(fh)
    else:
        parser.read_string(DEFAULT_CONFIG)

    known_sections = ("model", "run", "network", "verify", "compare",
                      "latency")
    for name in parser.sections():
        if name not in known_sections:
            raise ConfigError(f"unknown section [{name}]")
    if "model" not in parser:
        raise ConfigError("config needs a [model] section")

    _require_keys("model", parser.options("model"), _MODEL_KEYS)
    model = _model_from_section(parser["model"], "model")
    values: dict = {"model": model}

    if "run" in parser:
        run = parser["run"]
        _require_keys("run", parser.options("run"), _RUN_KEYS)
        if "seed" in run:
            values["seed"] = run.getint("seed")
        if "precision" in run:
            precision = run.get("precision")
            if precision not in PRECISIONS:
                raise ConfigError(
                    f"precision must be one of {sorted(PRECISIONS)}, "
                    f"got {precision!r}")
            values["precision"] = precision
        if "mode" in run:
            mode = run.get("mode")
            if mode not in ("unicast", "broadcast"):
                raise ConfigError(f"mode must be unicast or broadcast, "
                                  f"got {mode!r}")
            values["mode"] = mode
        if "execution" in run:
            execution = run.get("execution")
            if execution not in ("sequential", "threaded"):
                raise ConfigError(
                    f"execution must be sequential or threaded, "
                    f"got {execution!r}")
            values["execution"] = execution

    if "network" in parser:
        net = parser["network"]
        _require_keys("network", parser.options("network"), _NETWORK_KEYS)
        if "bandwidth_mbps" in net:
            values["bandwidth_mbps"] = net.getfloat("bandwidth_mbps")
        if "per_message_latency_ms" in net:
            values["per_message_latency_ms"] = net.getfloat(
                "per_message_latency_ms")
        if "bytes_per_scalar" in net:
            values["bytes_per_scalar"] = net.getint("bytes_per_scalar")

    if "verify" in parser:
        ver = parser["verify"]
        _require_keys("verify", parser.options("verify"), _VERIFY_KEYS)
        if "trials" in ver:
            values["verify_trials"] = ver.getint("trials")
        if "partitions" in ver:
            values["verify_partitions"] = _ints(ver.get("partitions"))
        if "landmarks" in ver:
            values["verify_landmarks"] = ver.getint("landmarks")
        # dims here override the small built-in verification model; the
        # model kind always follows [model]
        dims = {}
        for key in ("n_tokens", "embed_dim", "n_heads", "head_dim",
                    "ffn_dim", "n_blocks"):
            if key in ver:
                try:
                    dims[key] = ver.getint(key)
                except ValueError as exc:
                    raise ConfigError(
                        f"[verify] {key} must be an integer") from exc
        spec = dict(VERIFY_MODEL_DEFAULTS, model_kind=model.model_kind)
        spec.update(dims)
        values["verify_model"] = ModelSpec(**spec)

    if "compare" in parser:
        cmp_section = parser["compare"]
        _require_keys("compare", parser.options("compare"),
                      ("partitions", "compression_rates"),
                      dynamic_prefix="landmarks.")
        if "partitions" in cmp_section:
            values["compare_partitions"] = _ints(cmp_section.get("partitions"))
        landmarks: dict[int, tuple[int, ...]] = {}
        for key in parser.options("compare"):
            if key.startswith("landmarks."):
                landmarks[int(key.split(".", 1)[1])] = _ints(
                    cmp_section.get(key))
        if landmarks:
            values["compare_landmarks"] = landmarks
        if "compression_rates" in cmp_section:
            values["compression_rates"] = _floats(
                cmp_section.get("compression_rates"))

    if "latency" in parser:
        lat = parser["latency"]
        _require_keys("latency", parser.options("latency"), _LATENCY_KEYS)
        if "partitions" in lat:
            values["latency_partitions"] = lat.getint("partitions")
        if "landmarks" in lat:
            values["latency_landmarks"] = lat.getint("landmarks")
        if "bandwidths_mbps" in lat:
            values["bandwidths_mbps"] = _floats(lat.get("bandwidths_mbps"))
        if "device_gflops" in lat:
            values["device_gflops"] = lat.getfloat("device_gflops")

    if values.get("verify_model") is None:
        values["verify_model"] = ModelSpec(
            model_kind=model.model_kind, **VERIFY_MODEL_DEFAULTS)

    try:
        config = ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    _sanity(config)
    return config


def _sanity(config: ExperimentConfig) -> None:
    if config.verify_trials < 1:
        raise ConfigError("verify trials must be at least 1")
    if any(p < 2 for p in config.compare_partitions):
        raise ConfigError("compare partitions must be at least 2")
    if config.latency_partitions < 2:
        raise ConfigError("latency partitions must be at least 2")
    if config.device_gflops <= 0:
        raise ConfigError("device_gflops must be positive")
    if any(b <= 0 for b in config.bandwidths_mbps):
        raise ConfigError("bandwidths must be positive")
    if config.bytes_per_scalar < 1:
        raise ConfigError("bytes_per_scalar must be at least 1")


def with_overrides(config: ExperimentConfig, *, seed: int | None = None,
                   precision: str | None = None,
                   mode: str | None = None) -> ExperimentConfig:
    """Apply command-line overrides on top of a parsed config."""
    updates: dict = {}
    if seed is not None:
        updates["seed"] = seed
    if precision is not None:
        if precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of "
                              f"{sorted(PRECISIONS)}, got {precision!r}")
        updates["precision"] = precision
    if mode is not None:
        if mode not in ("unicast", "broadcast"):
            raise ConfigError(f"mode must be unicast or broadcast, "
                              f"got {mode!r}")
        updates["mode"] = mode
    return replace(config, **updates) if updates else config


def sweep_landmarks(config: ExperimentConfig,
                    n_partitions: int) -> list[tuple[int, float | None]]:
    """(landmark count, requested rate) pairs for the comparison table.

    With `compression_rates` set, landmark counts are derived from the
    requested rates; otherwise the explicit per-partition landmark lists
    are used and the rate is derived from the count downstream.
    """
    if config.compression_rates:
        return [(landmarks_for_rate(config.model.n_tokens, n_partitions, cr),
                 cr)
                for cr in config.compression_rates]
    return [(lpp, None) for lpp in config.landmarks_for(n_partitions)]


DEFAULT_CONFIG = """\
[model]
preset = vit-base

[run]
seed = 0
precision = f32
mode = unicast
execution = sequential

[network]
bandwidth_mbps = 100
per_message_latency_ms = 1
bytes_per_scalar = 4

[verify]
trials = 20
partitions = 2,3
landmarks = 4

[compare]
partitions = 2,3
landmarks.2 = 10,20,30
landmarks.3 = 10,20,30

[latency]
partitions = 2
landmarks = 10
bandwidths_mbps = 10,25,50,100,250,500,1000
device_gflops = 10
"""
