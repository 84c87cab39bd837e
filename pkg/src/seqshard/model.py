"""Transformer configuration, seeded synthetic weights, and the single-device
forward pass used as ground truth by every distributed strategy.

Blocks are pre-normalization: x + MHA(LN(x)), then x + FFN(LN(x)), with one
closing layernorm after the final block. Attention and FFN projections carry
no bias terms; layernorms carry gain and bias. Weights come from a Philox
counter-based generator (64-bit, platform-stable), drawn uniform(-1, 1) and
scaled by 1/sqrt(embed_dim), so entry magnitudes are bounded by 1/sqrt(D) by
construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor
from .attention import attention_reference
from .errors import ConfigError, ShapeError

MODEL_KINDS = ("encoder", "decoder")

_WEIGHT_STREAM = 0
_INPUT_STREAM = 1


@dataclass(frozen=True)
class TransformerConfig:
    n_tokens: int
    embed_dim: int
    head_dim: int
    n_heads: int
    ffn_dim: int
    n_blocks: int
    model_kind: str = "encoder"
    n_partitions: int = 1
    landmarks_per_partition: int = 1

    def __post_init__(self) -> None:
        dims = {"n_tokens": self.n_tokens, "embed_dim": self.embed_dim,
                "head_dim": self.head_dim, "n_heads": self.n_heads,
                "ffn_dim": self.ffn_dim, "n_blocks": self.n_blocks,
                "n_partitions": self.n_partitions,
                "landmarks_per_partition": self.landmarks_per_partition}
        for name, value in dims.items():
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.n_heads * self.head_dim != self.embed_dim:
            raise ConfigError(
                f"n_heads * head_dim must equal embed_dim "
                f"({self.n_heads} * {self.head_dim} != {self.embed_dim})")
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"model_kind must be one of {MODEL_KINDS}, "
                              f"got {self.model_kind!r}")
        if self.n_partitions > self.n_tokens:
            raise ConfigError(
                f"n_partitions {self.n_partitions} exceeds n_tokens {self.n_tokens}")
        if self.landmarks_per_partition > self.n_tokens // self.n_partitions:
            raise ConfigError(
                f"landmarks_per_partition {self.landmarks_per_partition} exceeds "
                f"the smallest partition size "
                f"{self.n_tokens // self.n_partitions}")

    @property
    def is_decoder(self) -> bool:
        return self.model_kind == "decoder"


@dataclass(frozen=True)
class BlockWeights:
    w_q: tuple[np.ndarray, ...]   # per head, D x d
    w_k: tuple[np.ndarray, ...]
    w_v: tuple[np.ndarray, ...]
    w_out: np.ndarray             # D x D
    w_ffn_in: np.ndarray          # D x F
    w_ffn_out: np.ndarray         # F x D
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray


@dataclass(frozen=True)
class WeightSet:
    seed: int
    blocks: tuple[BlockWeights, ...]
    final_gain: np.ndarray
    final_bias: np.ndarray


def _generator(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))


def generate_weights(config: TransformerConfig, seed: int,
                     dtype: np.dtype = np.float64) -> WeightSet:
    """Deterministic synthetic weights for every block, drawn in a fixed
    documented order (per block: per-head q/k/v, output, ffn in/out,
    layernorm params; then the closing layernorm)."""
    rng = _generator(seed, _WEIGHT_STREAM)
    scale = 1.0 / np.sqrt(config.embed_dim)
    d, dim, f = config.head_dim, config.embed_dim, config.ffn_dim

    def mat(rows: int, cols: int) -> np.ndarray:
        return (rng.uniform(-1.0, 1.0, (rows, cols)) * scale).astype(dtype)

    def ln_params() -> tuple[np.ndarray, np.ndarray]:
        gain = (1.0 + 0.05 * rng.uniform(-1.0, 1.0, dim)).astype(dtype)
        bias = (0.05 * rng.uniform(-1.0, 1.0, dim)).astype(dtype)
        return gain, bias

    blocks = []
    for _ in range(config.n_blocks):
        w_q = tuple(mat(dim, d) for _ in range(config.n_heads))
        w_k = tuple(mat(dim, d) for _ in range(config.n_heads))
        w_v = tuple(mat(dim, d) for _ in range(config.n_heads))
        w_out = mat(dim, dim)
        w_ffn_in = mat(dim, f)
        w_ffn_out = mat(f, dim)
        ln1_gain, ln1_bias = ln_params()
        ln2_gain, ln2_bias = ln_params()
        blocks.append(BlockWeights(w_q=w_q, w_k=w_k, w_v=w_v, w_out=w_out,
                                   w_ffn_in=w_ffn_in, w_ffn_out=w_ffn_out,
                                   ln1_gain=ln1_gain, ln1_bias=ln1_bias,
                                   ln2_gain=ln2_gain, ln2_bias=ln2_bias))
    final_gain, final_bias = ln_params()
    return WeightSet(seed=seed, blocks=tuple(blocks), final_gain=final_gain,
                     final_bias=final_bias)


def make_input(config: TransformerConfig, seed: int,
               dtype: np.dtype = np.float64) -> np.ndarray:
    """Synthetic token rows: bounded noise plus a sinusoidal positional
    signal (positions are folded in here; there is no embedding layer)."""
    rng = _generator(seed, _INPUT_STREAM)
    n, dim = config.n_tokens, config.embed_dim
    noise = rng.uniform(-1.0, 1.0, (n, dim))
    pos = np.arange(n)[:, None]
    freq = np.power(10000.0, -(np.arange(dim) // 2 * 2) / dim)[None, :]
    angle = pos * freq
    wave = np.where(np.arange(dim)[None, :] % 2 == 0, np.sin(angle), np.cos(angle))
    return (0.5 * noise + 0.5 * wave).astype(dtype)


def _ffn(x: np.ndarray, bw: BlockWeights) -> np.ndarray:
    return tensor.matmul(tensor.gelu(tensor.matmul(x, bw.w_ffn_in)), bw.w_ffn_out)


def block_forward(x: np.ndarray, bw: BlockWeights,
                  config: TransformerConfig) -> np.ndarray:
    """One pre-normalization block over the full sequence."""
    h = tensor.layernorm(x, bw.ln1_gain, bw.ln1_bias)
    heads = [attention_reference(h, bw.w_q[i], bw.w_k[i], bw.w_v[i],
                                 causal=config.is_decoder)
             for i in range(config.n_heads)]
    attn = tensor.matmul(np.hstack(heads), bw.w_out)
    tensor.charge(tensor.add_flops(*x.shape))
    x = x + attn
    h2 = tensor.layernorm(x, bw.ln2_gain, bw.ln2_bias)
    tensor.charge(tensor.add_flops(*x.shape))
    return x + _ffn(h2, bw)


def reference_forward(x: np.ndarray, weights: WeightSet,
                      config: TransformerConfig) -> np.ndarray:
    """Full single-device forward pass: all blocks, then the closing
    layernorm. Ground truth for every distributed strategy."""
    tensor.require_matrix(x, "model input")
    if x.shape != (config.n_tokens, config.embed_dim):
        raise ShapeError(
            f"input shape {x.shape} does not match "
            f"({config.n_tokens}, {config.embed_dim})")
    if len(weights.blocks) != config.n_blocks:
        raise ConfigError(f"weight set has {len(weights.blocks)} blocks, "
                          f"config wants {config.n_blocks}")
    for bw in weights.blocks:
        x = block_forward(x, bw, config)
    return tensor.layernorm(x, weights.final_gain, weights.final_bias)
