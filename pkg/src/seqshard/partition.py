"""Position-wise sequence partitioning and landmark compression.

A sequence of N token rows is split into P contiguous partitions (the last
absorbs the remainder). Each partition is summarized by L landmark rows, the
column-wise means of L contiguous segments, together with the per-segment row
counts. Receivers append peers' landmarks to their own rows and keep a
repetition vector so attention can weight each landmark by the number of rows
it stands for.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor
from .errors import (InvalidLandmarkCountError, InvalidPlanError,
                     ProtocolError, ShapeError)


@dataclass(frozen=True)
class PartitionPlan:
    """Contiguous half-open row ranges, one per partition (ids are 1-based)."""

    n_tokens: int
    bounds: tuple[tuple[int, int], ...]

    @property
    def n_partitions(self) -> int:
        return len(self.bounds)

    def range(self, p: int) -> tuple[int, int]:
        if not 1 <= p <= self.n_partitions:
            raise InvalidPlanError(f"partition id {p} outside 1..{self.n_partitions}")
        return self.bounds[p - 1]

    def size(self, p: int) -> int:
        start, end = self.range(p)
        return end - start

    def sizes(self) -> tuple[int, ...]:
        return tuple(end - start for start, end in self.bounds)


def make_partition_plan(n_tokens: int, n_partitions: int) -> PartitionPlan:
    """Split N rows into P contiguous partitions of floor(N/P), the last
    taking the remainder."""
    if n_partitions < 1 or n_tokens < 1:
        raise InvalidPlanError(
            f"need positive sizes, got N={n_tokens}, P={n_partitions}")
    if n_partitions > n_tokens:
        raise InvalidPlanError(
            f"cannot split {n_tokens} rows into {n_partitions} partitions")
    base = n_tokens // n_partitions
    bounds = []
    start = 0
    for p in range(n_partitions):
        size = base if p < n_partitions - 1 else base + n_tokens % n_partitions
        bounds.append((start, start + size))
        start += size
    return PartitionPlan(n_tokens=n_tokens, bounds=tuple(bounds))


@dataclass(frozen=True)
class SegmentMeans:
    """L landmark rows summarizing one partition, with per-segment row counts."""

    source_partition: int
    means: np.ndarray    # L x D
    counts: np.ndarray   # int64, length L, sums to the partition size

    @property
    def n_landmarks(self) -> int:
        return self.means.shape[0]


def segment_means(x_p: np.ndarray, n_landmarks: int,
                  source_partition: int) -> SegmentMeans:
    """Compress a partition to L segment means.

    Rows are cut into L contiguous segments of floor(N_p/L) rows; the last
    segment absorbs the remainder. Each landmark is the column-wise mean of
    its segment.
    """
    tensor.require_matrix(x_p, "partition rows")
    n_rows = x_p.shape[0]
    if not 1 <= n_landmarks <= n_rows:
        raise InvalidLandmarkCountError(
            f"landmark count {n_landmarks} outside [1, {n_rows}]")
    base = n_rows // n_landmarks
    rem = n_rows % n_landmarks
    means = np.empty((n_landmarks, x_p.shape[1]), dtype=x_p.dtype)
    counts = np.empty(n_landmarks, dtype=np.int64)
    start = 0
    for seg in range(n_landmarks):
        size = base if seg < n_landmarks - 1 else base + rem
        means[seg] = tensor.segment_row_mean(x_p, start, start + size)
        counts[seg] = size
        start += size
    return SegmentMeans(source_partition=source_partition, means=means,
                        counts=counts)


@dataclass(frozen=True)
class RowProvenance:
    """Origin of one augmented row: source partition, row kind, and the local
    row index (local rows) or segment index (landmark rows)."""

    source_partition: int
    kind: str            # "local" | "landmark"
    index: int


@dataclass(frozen=True)
class AugmentedInput:
    """A partition's rows followed by peers' landmarks, ascending source id.

    `g` holds the repetition count of each row (1 for local rows, the segment
    row count for landmarks) and always sums to the full sequence length.
    """

    owner: int
    local: np.ndarray
    landmark_blocks: tuple[SegmentMeans, ...]
    assembled: np.ndarray
    g: np.ndarray        # int64, length = assembled rows
    provenance: tuple[RowProvenance, ...]

    @property
    def n_rows(self) -> int:
        return self.assembled.shape[0]


def assemble_augmented(local: np.ndarray, received: list[SegmentMeans],
                       plan: PartitionPlan, self_id: int) -> AugmentedInput:
    """Append peers' landmark blocks to local rows, ascending by source id.

    Exactly one block per peer partition is required; sources must match the
    plan and each block's counts must sum to its source partition size.
    """
    tensor.require_matrix(local, "local rows")
    if local.shape[0] != plan.size(self_id):
        raise ProtocolError(
            f"local rows {local.shape[0]} do not match plan size "
            f"{plan.size(self_id)} for partition {self_id}")
    expected = {p for p in range(1, plan.n_partitions + 1) if p != self_id}
    got = [b.source_partition for b in received]
    if len(set(got)) != len(got):
        raise ProtocolError(f"duplicate landmark sources: {sorted(got)}")
    if set(got) != expected:
        raise ProtocolError(
            f"landmark sources {sorted(got)} do not cover peers {sorted(expected)}")
    blocks = tuple(sorted(received, key=lambda b: b.source_partition))
    for b in blocks:
        if int(b.counts.sum()) != plan.size(b.source_partition):
            raise ProtocolError(
                f"counts from partition {b.source_partition} sum to "
                f"{int(b.counts.sum())}, expected {plan.size(b.source_partition)}")
    parts = [local] + [b.means for b in blocks]
    assembled = tensor.concat_rows(parts)
    g = np.concatenate(
        [np.ones(local.shape[0], dtype=np.int64)]
        + [b.counts for b in blocks])
    if int(g.sum()) != plan.n_tokens:
        raise ProtocolError(
            f"repetition vector sums to {int(g.sum())}, expected {plan.n_tokens}")
    provenance = tuple(
        [RowProvenance(self_id, "local", i) for i in range(local.shape[0])]
        + [RowProvenance(b.source_partition, "landmark", seg)
           for b in blocks for seg in range(b.n_landmarks)])
    return AugmentedInput(owner=self_id, local=local, landmark_blocks=blocks,
                          assembled=assembled, g=g, provenance=provenance)


def expand_duplicated(block: SegmentMeans) -> np.ndarray:
    """Materialize a landmark block as counts[l] copies of each mean row.

    Test oracle for the duplicate-weighted attention path; the runtime never
    builds this matrix.
    """
    if block.counts.shape[0] != block.means.shape[0]:
        raise ShapeError("counts length does not match landmark rows")
    return np.repeat(block.means, block.counts, axis=0)
