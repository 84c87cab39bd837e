"""Dense kernels with deterministic, precision-preserving semantics.

All operations work on 2-D numpy arrays (rows = tokens, columns = features),
validate shapes, and guarantee finite outputs. While a `count_flops` context
is active each kernel charges its documented cost; the analytical model in
`analysis` composes the same cost functions over predicted shapes, which is
what makes instrumented runs and closed-form counts directly comparable.

FLOP conventions (shared with `analysis`):
  multiply-accumulate     2 FLOPs
  softmax                 5 per score element (shift, exp, accumulate, divide)
  score exponentiation    2 per element (scale + exp)
  weighted normalization  3 per element (weight multiply, accumulate, divide)
  mask application        1 per element
  layernorm               8 per element
  gelu                    8 per element
  residual add            1 per element
  segment mean            1 per source element
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from typing import Iterator, Sequence

import numpy as np

from .errors import NumericDegenerateError, ShapeError


# ---------------------------------------------------------------------------
# FLOP cost table


def matmul_flops(m: int, n: int, p: int) -> int:
    return 2 * m * n * p


def softmax_flops(rows: int, cols: int) -> int:
    return 5 * rows * cols


def exp_scores_flops(rows: int, cols: int) -> int:
    return 2 * rows * cols


def weighted_norm_flops(rows: int, cols: int) -> int:
    return 3 * rows * cols


def mask_flops(rows: int, cols: int) -> int:
    return rows * cols


def layernorm_flops(rows: int, cols: int) -> int:
    return 8 * rows * cols


def gelu_flops(rows: int, cols: int) -> int:
    return 8 * rows * cols


def add_flops(rows: int, cols: int) -> int:
    return rows * cols


def segment_mean_flops(rows: int, cols: int) -> int:
    return rows * cols


# ---------------------------------------------------------------------------
# FLOP counting


class FlopCounter:
    """Accumulates FLOPs charged by kernels while installed."""

    def __init__(self) -> None:
        self.total = 0

    def add(self, n: int) -> None:
        self.total += int(n)


_local = threading.local()


def _stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


@contextmanager
def count_flops() -> Iterator[FlopCounter]:
    """Install a counter for the current thread; counters nest."""
    counter = FlopCounter()
    stack = _stack()
    stack.append(counter)
    try:
        yield counter
    finally:
        stack.pop()


def charge(n: int) -> None:
    """Charge `n` FLOPs to every active counter on this thread."""
    for counter in _stack():
        counter.add(n)


# ---------------------------------------------------------------------------
# Validation helpers


def require_matrix(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    if not isinstance(a, np.ndarray) or a.ndim != 2:
        raise ShapeError(f"{name} must be a 2-D array, got "
                         f"{getattr(a, 'shape', type(a).__name__)}")
    return a


def _require_finite(a: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(a).all():
        raise NumericDegenerateError(f"{op} produced non-finite entries")
    return a


# ---------------------------------------------------------------------------
# Kernels


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product a @ b with shape checking."""
    require_matrix(a, "left operand")
    require_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    charge(matmul_flops(a.shape[0], a.shape[1], b.shape[1]))
    return _require_finite(a @ b, "matmul")


def row_softmax(m: np.ndarray) -> np.ndarray:
    """Numerically stable softmax along each row."""
    require_matrix(m, "softmax input")
    if not np.isfinite(m).all():
        raise NumericDegenerateError("softmax input must be finite")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    charge(softmax_flops(*m.shape))
    return _require_finite(e / e.sum(axis=1, keepdims=True), "row_softmax")


def row_normalize_weighted(psi: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Normalize each row of psi under column weights g.

    Row i maps to psi[i, :] * g / sum_j(psi[i, j] * g[j]): the weights act as
    duplicate multiplicities, so a column with weight k carries the mass of k
    identical columns without materializing them.
    """
    require_matrix(psi, "psi")
    g = np.asarray(g)
    if g.ndim != 1 or g.shape[0] != psi.shape[1]:
        raise ShapeError(f"weight vector length {g.shape} does not match "
                         f"{psi.shape[1]} columns")
    if (psi < 0).any():
        raise NumericDegenerateError("psi entries must be non-negative")
    if (g < 1).any():
        raise ShapeError("weights must be >= 1")
    weighted = psi * g.astype(psi.dtype)
    sums = weighted.sum(axis=1, keepdims=True)
    if (sums == 0).any():
        raise NumericDegenerateError("zero row sum in weighted normalization")
    charge(weighted_norm_flops(*psi.shape))
    return _require_finite(weighted / sums, "row_normalize_weighted")


def layernorm(m: np.ndarray, gain: np.ndarray, bias: np.ndarray,
              eps: float = 1e-12) -> np.ndarray:
    """Per-row standardization followed by elementwise gain and bias."""
    require_matrix(m, "layernorm input")
    gain = np.asarray(gain)
    bias = np.asarray(bias)
    if gain.shape != (m.shape[1],) or bias.shape != (m.shape[1],):
        raise ShapeError(f"gain/bias must have shape ({m.shape[1]},)")
    mu = m.mean(axis=1, keepdims=True)
    centered = m - mu
    var = np.square(centered).mean(axis=1, keepdims=True)
    out = centered / np.sqrt(var + m.dtype.type(eps))
    out = out * gain.astype(m.dtype) + bias.astype(m.dtype)
    charge(layernorm_flops(*m.shape))
    return _require_finite(out, "layernorm")


# tanh-form gaussian error linear unit; fixed here so every strategy and the
# reference path share one nonlinearity bit-for-bit.
_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(m: np.ndarray) -> np.ndarray:
    require_matrix(m, "gelu input")
    t = m.dtype.type
    inner = t(_GELU_C) * (m + t(0.044715) * m * m * m)
    out = t(0.5) * m * (t(1.0) + np.tanh(inner))
    charge(gelu_flops(*m.shape))
    return _require_finite(out, "gelu")


def concat_rows(parts: Sequence[np.ndarray]) -> np.ndarray:
    """Stack matrices vertically; all parts must share a column count."""
    if not parts:
        raise ShapeError("concat_rows needs at least one part")
    for p in parts:
        require_matrix(p, "concat part")
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"column counts differ: {sorted(cols)}")
    return np.concatenate(list(parts), axis=0)


def segment_row_mean(m: np.ndarray, start: int, end: int) -> np.ndarray:
    """Column-wise mean of rows [start, end)."""
    require_matrix(m, "segment source")
    if not (0 <= start < end <= m.shape[0]):
        raise ShapeError(f"segment [{start}, {end}) invalid for {m.shape[0]} rows")
    charge(segment_mean_flops(end - start, m.shape[1]))
    return _require_finite(m[start:end].mean(axis=0), "segment_row_mean")
