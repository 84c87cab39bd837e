"""Single-head attention evaluators and partition-aware causal masks.

The distributed path never materializes duplicated landmark rows: it scores
each landmark once and weights its exponentiated score by the number of rows
it stands for (the repetition vector g). `attention_duplicated_oracle`
materializes the duplicates and is kept as the independent reference the
weighted path must match to near machine precision.

Masking follows the convention: masked score entries are set to -inf before
exponentiation (equivalently, their exp weights are exactly zero), and row
maxima are taken over visible entries only, so outputs are bit-independent
of whatever sits in masked positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor
from .errors import DegenerateMaskError, ShapeError
from .partition import AugmentedInput, PartitionPlan, SegmentMeans


@dataclass(frozen=True)
class CausalMask:
    """Boolean visibility bits for one partition's queries over its augmented
    key rows (True = visible)."""

    owner: int
    bits: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape


def _attention_core(x_q: np.ndarray, x_kv: np.ndarray, w_q: np.ndarray,
                    w_k: np.ndarray, w_v: np.ndarray,
                    g: np.ndarray | None = None,
                    mask_bits: np.ndarray | None = None) -> np.ndarray:
    """Shared attention path: scores, stable masked exponentiation, duplicate-
    weighted normalization, value mixing."""
    q = tensor.matmul(x_q, w_q)
    k = tensor.matmul(x_kv, w_k)
    v = tensor.matmul(x_kv, w_v)
    scale = q.dtype.type(1.0 / math.sqrt(w_q.shape[1]))
    scaled = tensor.matmul(q, k.T) * scale
    tensor.charge(tensor.exp_scores_flops(*scaled.shape))
    if mask_bits is not None:
        if mask_bits.shape != scaled.shape:
            raise ShapeError(f"mask shape {mask_bits.shape} does not match "
                             f"scores {scaled.shape}")
        scaled = np.where(mask_bits, scaled, scaled.dtype.type(-np.inf))
        tensor.charge(tensor.mask_flops(*scaled.shape))
    row_max = scaled.max(axis=1, keepdims=True)
    if mask_bits is not None and not np.isfinite(row_max).all():
        raise DegenerateMaskError("a query row has no visible keys")
    psi = np.exp(scaled - row_max)  # masked entries become exactly 0
    if g is None:
        g = np.ones(psi.shape[1], dtype=np.int64)
    weights = tensor.row_normalize_weighted(psi, g)
    return tensor.matmul(weights, v)


def attention_reference(x: np.ndarray, w_q: np.ndarray, w_k: np.ndarray,
                        w_v: np.ndarray, causal: bool = False) -> np.ndarray:
    """Plain single-head attention over the full sequence."""
    tensor.require_matrix(x, "attention input")
    mask = None
    if causal:
        mask = np.tril(np.ones((x.shape[0], x.shape[0]), dtype=bool))
    return _attention_core(x, x, w_q, w_k, w_v, mask_bits=mask)


def attention_rows(x_q: np.ndarray, x_kv: np.ndarray, w_q: np.ndarray,
                   w_k: np.ndarray, w_v: np.ndarray,
                   mask_bits: np.ndarray | None = None) -> np.ndarray:
    """Attention with queries from one row block and keys/values from another
    matrix. Used by the full-replication strategy, where a device queries its
    own rows against the complete sequence."""
    tensor.require_matrix(x_q, "query rows")
    tensor.require_matrix(x_kv, "key/value rows")
    return _attention_core(x_q, x_kv, w_q, w_k, w_v, mask_bits=mask_bits)


def attention_permuted_kv(x: np.ndarray, perm: np.ndarray, w_q: np.ndarray,
                          w_k: np.ndarray, w_v: np.ndarray) -> np.ndarray:
    """Attention with key/value rows taken in permuted order.

    Softmax normalizes over all keys, so any bijective reordering of the
    key/value rows leaves the output unchanged; this evaluator is the witness
    used to test that.
    """
    tensor.require_matrix(x, "attention input")
    perm = np.asarray(perm)
    if sorted(perm.tolist()) != list(range(x.shape[0])):
        raise ShapeError(f"not a permutation of 0..{x.shape[0] - 1}")
    return _attention_core(x, x[perm], w_q, w_k, w_v)


def attention_duplicated_oracle(x_p: np.ndarray,
                                landmark_blocks: list[SegmentMeans],
                                w_q: np.ndarray, w_k: np.ndarray,
                                w_v: np.ndarray,
                                mask: CausalMask | None = None) -> np.ndarray:
    """Attention with every landmark physically repeated counts[l] times.

    Key/value rows are the local rows followed by expanded peer blocks in
    ascending source order; a mask given over the compact augmented layout is
    expanded column-wise with the same multiplicities.
    """
    from .partition import expand_duplicated

    tensor.require_matrix(x_p, "local rows")
    blocks = sorted(landmark_blocks, key=lambda b: b.source_partition)
    x_kv = tensor.concat_rows([x_p] + [expand_duplicated(b) for b in blocks])
    mask_bits = None
    if mask is not None:
        n_local = x_p.shape[0]
        counts = np.concatenate([b.counts for b in blocks]) if blocks else \
            np.empty(0, dtype=np.int64)
        if mask.bits.shape != (n_local, n_local + counts.shape[0]):
            raise ShapeError(f"mask shape {mask.bits.shape} does not match "
                             f"augmented layout")
        mask_bits = np.concatenate(
            [mask.bits[:, :n_local],
             np.repeat(mask.bits[:, n_local:], counts, axis=1)], axis=1)
    return _attention_core(x_p, x_kv, w_q, w_k, w_v, mask_bits=mask_bits)


def attention_scaled(x_p: np.ndarray, aug: AugmentedInput, w_q: np.ndarray,
                     w_k: np.ndarray, w_v: np.ndarray,
                     mask: CausalMask | None = None) -> np.ndarray:
    """Duplicate-free attention over an augmented input.

    Scores each augmented row once, then weights exponentiated scores by the
    repetition vector before row normalization, which reproduces the
    duplicated expansion exactly without the redundant rows.
    """
    tensor.require_matrix(x_p, "query rows")
    if x_p.shape[0] != aug.local.shape[0]:
        raise ShapeError(f"query rows {x_p.shape[0]} do not match partition "
                         f"size {aug.local.shape[0]}")
    mask_bits = None
    if mask is not None:
        if mask.bits.shape != (x_p.shape[0], aug.n_rows):
            raise ShapeError(f"mask shape {mask.bits.shape} does not match "
                             f"({x_p.shape[0]}, {aug.n_rows})")
        mask_bits = mask.bits
    return _attention_core(x_p, aug.assembled, w_q, w_k, w_v, g=aug.g,
                           mask_bits=mask_bits)


def build_causal_mask(plan: PartitionPlan, p: int, n_landmarks: int) -> CausalMask:
    """Visibility for partition p's queries over its augmented layout.

    Local columns follow the usual lower triangle; landmark columns are fully
    visible for partitions before p (their tokens all precede p's rows) and
    fully hidden for partitions after it. There are no self-landmark columns.
    """
    n_p = plan.size(p)
    n_peers = plan.n_partitions - 1
    bits = np.zeros((n_p, n_p + n_landmarks * n_peers), dtype=bool)
    bits[:, :n_p] = np.tril(np.ones((n_p, n_p), dtype=bool))
    bits[:, n_p:n_p + n_landmarks * (p - 1)] = True
    return CausalMask(owner=p, bits=bits)


def naive_local_mask(plan: PartitionPlan, p: int, n_landmarks: int) -> CausalMask:
    """Broken construction that ignores partition order: local lower triangle
    with every landmark column visible. Kept as a negative control; for any
    p < P it leaks information from later partitions."""
    n_p = plan.size(p)
    n_peers = plan.n_partitions - 1
    bits = np.zeros((n_p, n_p + n_landmarks * n_peers), dtype=bool)
    bits[:, :n_p] = np.tril(np.ones((n_p, n_p), dtype=bool))
    bits[:, n_p:] = True
    return CausalMask(owner=p, bits=bits)
