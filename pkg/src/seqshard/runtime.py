"""Master-worker simulation of the distributed forward pass.

Devices exchange real serialized byte payloads over an in-memory bus: a
fixed 8-field little-endian header (sender, receiver, block, kind, rows,
cols, landmark count, sequence number) followed by an int64 counts vector
(landmark messages only) and the matrix scalars, row-major, at the run's
compute precision. Every send is recorded in an append-only communication
ledger whose byte column uses the accounting width `bytes_per_scalar`
(default 4, the usual 4-byte wire convention for edge links), independent of
the simulated payload precision.

Workers advance in lockstep, one Transformer block per step, gated on the
arrival of all peer data for the current block:

  single   one device runs the reference blocks unchanged.
  voltage  devices exchange full partition outputs every block and rebuild
           complete key/value matrices (redundant computation baseline).
  prism    devices exchange segment means only; attention runs on the
           augmented input with duplicate weights. Block 0 means are
           computed by the master and shipped with the input partitions.

The same worker state machine runs under a deterministic sequential sweep or
real threads; outputs and ledgers are identical either way.
"""

from __future__ import annotations

import struct
import threading
import queue as queue_mod
from collections import deque
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Callable, IO, Iterable

import numpy as np

from . import tensor
from .attention import (attention_rows, attention_scaled, build_causal_mask,
                        CausalMask)
from .errors import ConfigError, ProtocolError, ShapeError, StallError
from .model import TransformerConfig, WeightSet, block_forward
from .partition import (PartitionPlan, SegmentMeans, assemble_augmented,
                        make_partition_plan, segment_means)

MASTER = 0
BROADCAST = -1

STRATEGIES = ("single", "voltage", "prism")
COMM_MODES = ("unicast", "broadcast")
EXECUTIONS = ("sequential", "threaded")

DEFAULT_DEVICE_FLOPS = 1e10
DEFAULT_STEP_BUDGET = 100_000


class MessageKind(IntEnum):
    INPUT_PARTITION = 1
    SEGMENT_MEANS = 2
    OUTPUT_PARTITION = 3
    CONTROL = 4


_HEADER = struct.Struct("<8i")
_COUNT_DTYPE = np.dtype("<i8")


@dataclass(frozen=True)
class Message:
    """One serialized transfer. `data_elements` counts matrix scalars only;
    `payload_elements` additionally counts the int64 counts vector."""

    sender: int
    receiver: int
    block_index: int
    kind: MessageKind
    rows: int
    cols: int
    n_landmarks: int
    seq_no: int
    payload: bytes

    @property
    def data_elements(self) -> int:
        return self.rows * self.cols

    @property
    def payload_elements(self) -> int:
        extra = self.n_landmarks if self.kind in (MessageKind.SEGMENT_MEANS,
                                                  MessageKind.CONTROL) else 0
        return self.rows * self.cols + extra


def _wire_dtype(dtype: np.dtype) -> np.dtype:
    return np.dtype(dtype).newbyteorder("<")


def encode_message(sender: int, receiver: int, block_index: int,
                   kind: MessageKind, seq_no: int,
                   matrix: np.ndarray | None = None,
                   counts: np.ndarray | None = None) -> Message:
    """Pack header, optional counts vector, and matrix scalars into bytes."""
    if matrix is not None:
        tensor.require_matrix(matrix, "message matrix")
        rows, cols = matrix.shape
        body = np.ascontiguousarray(matrix, dtype=_wire_dtype(matrix.dtype)).tobytes()
    else:
        rows = cols = 0
        body = b""
    if counts is not None:
        n_landmarks = counts.shape[0]
        counts_bytes = np.ascontiguousarray(counts, dtype=_COUNT_DTYPE).tobytes()
    else:
        n_landmarks = 0
        counts_bytes = b""
    header = _HEADER.pack(sender, receiver, block_index, int(kind),
                          rows, cols, n_landmarks, seq_no)
    return Message(sender=sender, receiver=receiver, block_index=block_index,
                   kind=kind, rows=rows, cols=cols, n_landmarks=n_landmarks,
                   seq_no=seq_no, payload=header + counts_bytes + body)


def _check_payload(msg: Message, dtype: np.dtype) -> None:
    counts_bytes = msg.n_landmarks * _COUNT_DTYPE.itemsize \
        if msg.kind in (MessageKind.SEGMENT_MEANS, MessageKind.CONTROL) else 0
    expected = _HEADER.size + counts_bytes + msg.rows * msg.cols * np.dtype(dtype).itemsize
    if len(msg.payload) != expected:
        raise ProtocolError(
            f"payload of {len(msg.payload)} bytes does not match header "
            f"({msg.rows}x{msg.cols}, {msg.n_landmarks} counts) at "
            f"{np.dtype(dtype).itemsize} bytes/scalar")


def decode_matrix(msg: Message, dtype: np.dtype) -> np.ndarray:
    """Recover the matrix scalars from a message payload."""
    _check_payload(msg, dtype)
    counts_bytes = msg.n_landmarks * _COUNT_DTYPE.itemsize \
        if msg.kind in (MessageKind.SEGMENT_MEANS, MessageKind.CONTROL) else 0
    start = _HEADER.size + counts_bytes
    flat = np.frombuffer(msg.payload, dtype=_wire_dtype(dtype), offset=start)
    return flat.reshape(msg.rows, msg.cols).astype(dtype, copy=True)


def decode_counts(msg: Message) -> np.ndarray:
    flat = np.frombuffer(msg.payload, dtype=_COUNT_DTYPE, offset=_HEADER.size,
                         count=msg.n_landmarks)
    return flat.astype(np.int64, copy=True)


def decode_segment_means(msg: Message, dtype: np.dtype,
                         sources: list[int]) -> list[SegmentMeans]:
    """Split a landmark message into per-source blocks.

    Worker exchanges carry one source (the sender); the master's block-0
    package stacks all of a receiver's peers in ascending source order.
    """
    matrix = decode_matrix(msg, dtype)
    counts = decode_counts(msg)
    if msg.rows % max(len(sources), 1) != 0:
        raise ProtocolError(f"{msg.rows} landmark rows do not split over "
                            f"{len(sources)} sources")
    per = msg.rows // len(sources)
    return [SegmentMeans(source_partition=src,
                         means=matrix[i * per:(i + 1) * per],
                         counts=counts[i * per:(i + 1) * per])
            for i, src in enumerate(sources)]


def encode_control(sender: int, receiver: int, plan: PartitionPlan,
                   partition_id: int, seq_no: int) -> Message:
    vec = np.array([partition_id, plan.n_partitions, plan.n_tokens]
                   + [b for pair in plan.bounds for b in pair], dtype=np.int64)
    return encode_message(sender, receiver, 0, MessageKind.CONTROL, seq_no,
                          matrix=None, counts=vec)


def decode_control(msg: Message) -> tuple[int, PartitionPlan]:
    vec = decode_counts(msg)
    partition_id, n_partitions, n_tokens = (int(vec[0]), int(vec[1]), int(vec[2]))
    bounds = tuple((int(vec[3 + 2 * i]), int(vec[4 + 2 * i]))
                   for i in range(n_partitions))
    return partition_id, PartitionPlan(n_tokens=n_tokens, bounds=bounds)


# ---------------------------------------------------------------------------
# Network model and ledger


@dataclass(frozen=True)
class NetworkModel:
    """Link parameters for the timing stub and byte accounting."""

    bandwidth_bps: float = 100e6
    per_message_latency_s: float = 1e-3
    bytes_per_scalar: int = 4


@dataclass
class LedgerEntry:
    elements: int = 0
    bytes: int = 0
    messages: int = 0

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.elements, self.bytes, self.messages)


class CommLedger:
    """Append-only send accounting keyed by (device, block, kind).

    Element counts cover matrix scalars only (the quantity the closed-form
    communication model predicts); the int64 counts vector rides along as
    metadata. Bytes are elements times the accounting width.
    """

    def __init__(self, bytes_per_scalar: int = 4, mode: str = "unicast") -> None:
        self.bytes_per_scalar = bytes_per_scalar
        self.mode = mode
        self._entries: dict[tuple[int, int, MessageKind], LedgerEntry] = {}

    def record_send(self, msg: Message) -> None:
        key = (msg.sender, msg.block_index, msg.kind)
        entry = self._entries.setdefault(key, LedgerEntry())
        entry.elements += msg.data_elements
        entry.bytes += msg.data_elements * self.bytes_per_scalar
        entry.messages += 1

    def merge(self, other: "CommLedger") -> None:
        if other.bytes_per_scalar != self.bytes_per_scalar or other.mode != self.mode:
            raise ProtocolError("cannot merge ledgers with different accounting")
        for key, entry in other._entries.items():
            mine = self._entries.setdefault(key, LedgerEntry())
            mine.elements += entry.elements
            mine.bytes += entry.bytes
            mine.messages += entry.messages

    def entry(self, device: int, block: int, kind: MessageKind) -> LedgerEntry:
        return self._entries.get((device, block, kind), LedgerEntry())

    def items(self) -> list[tuple[tuple[int, int, MessageKind], LedgerEntry]]:
        return sorted(self._entries.items(),
                      key=lambda kv: (kv[0][0], kv[0][1], int(kv[0][2])))

    def total_elements(self, kind: MessageKind | None = None,
                       device: int | None = None) -> int:
        return sum(e.elements for (dev, _, k), e in self._entries.items()
                   if (kind is None or k == kind)
                   and (device is None or dev == device))

    def as_records(self) -> list[dict]:
        return [{"device": dev, "block": block, "kind": kind.name,
                 "elements": e.elements, "bytes": e.bytes,
                 "messages": e.messages}
                for (dev, block, kind), e in self.items()]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CommLedger):
            return NotImplemented
        return (self.bytes_per_scalar == other.bytes_per_scalar
                and self.mode == other.mode
                and {k: v.as_tuple() for k, v in self._entries.items()}
                == {k: v.as_tuple() for k, v in other._entries.items()})


# ---------------------------------------------------------------------------
# Timeline


@dataclass(frozen=True)
class BlockTiming:
    block: int
    compute_s: float
    comm_s: float


@dataclass(frozen=True)
class DeviceTimeline:
    device: int
    blocks: tuple[BlockTiming, ...]
    total_s: float


@dataclass(frozen=True)
class RunTimeline:
    """Lockstep timing stub: per block, the slowest device's compute plus the
    slowest device's exchange; master distribution counted as a prologue."""

    distribution_s: float
    devices: tuple[DeviceTimeline, ...]
    total_latency_s: float


# ---------------------------------------------------------------------------
# Worker state machine


class Worker:
    """One simulated device. Advances one block per `worker_step` call once
    all peer data for the current block has arrived."""

    def __init__(self, device: int, config: TransformerConfig,
                 weights: WeightSet, strategy: str, dtype: np.dtype,
                 comm_mode: str) -> None:
        self.device = device
        self.config = config
        self.weights = weights
        self.strategy = strategy
        self.dtype = np.dtype(dtype)
        self.comm_mode = comm_mode
        self.plan: PartitionPlan | None = None
        self.partition_id: int | None = None
        self.x: np.ndarray | None = None
        self.full_input: np.ndarray | None = None   # voltage block 0
        self.pending: dict[int, dict[int, object]] = {}
        self.block = 0
        self.done = False
        self.block_flops: list[int] = []
        self._mask: CausalMask | None = None
        self._mask_rows: np.ndarray | None = None   # voltage row slice
        self._seq = 0

    # -- message intake ----------------------------------------------------

    def _peers(self) -> list[int]:
        assert self.plan is not None and self.partition_id is not None
        return [p for p in range(1, self.plan.n_partitions + 1)
                if p != self.partition_id]

    def ingest(self, incoming: Iterable[Message]) -> None:
        # control configures the device; data in the same batch is applied
        # after it, so delivery order within a batch never matters.
        batch = sorted(incoming,
                       key=lambda m: 0 if m.kind == MessageKind.CONTROL else 1)
        for msg in batch:
            if msg.kind == MessageKind.CONTROL:
                partition_id, plan = decode_control(msg)
                if partition_id != self.device:
                    raise ProtocolError(
                        f"device {self.device} received control for "
                        f"partition {partition_id}")
                self.partition_id = partition_id
                self.plan = plan
            elif msg.kind == MessageKind.INPUT_PARTITION:
                matrix = decode_matrix(msg, self.dtype)
                if self.strategy == "voltage":
                    self.full_input = matrix
                else:
                    self.x = matrix
            elif msg.kind == MessageKind.SEGMENT_MEANS:
                if self.plan is None:
                    raise ProtocolError("landmarks arrived before control")
                if msg.sender == MASTER:
                    sources = self._peers()
                else:
                    sources = [msg.sender]
                slot = self.pending.setdefault(msg.block_index, {})
                for block in decode_segment_means(msg, self.dtype, sources):
                    if block.source_partition in slot:
                        raise ProtocolError(
                            f"duplicate landmarks from {block.source_partition} "
                            f"for block {msg.block_index}")
                    slot[block.source_partition] = block
            elif msg.kind == MessageKind.OUTPUT_PARTITION:
                slot = self.pending.setdefault(msg.block_index, {})
                if msg.sender in slot:
                    raise ProtocolError(
                        f"duplicate partition rows from {msg.sender} "
                        f"for block {msg.block_index}")
                slot[msg.sender] = decode_matrix(msg, self.dtype)
            else:  # pragma: no cover - IntEnum covers all kinds
                raise ProtocolError(f"unknown message kind {msg.kind}")

    # -- readiness ----------------------------------------------------------

    def ready(self) -> bool:
        if self.done:
            return False
        if self.plan is None or self.partition_id is None:
            return False
        if self.strategy == "single":
            return self.x is not None
        if self.strategy == "voltage":
            if self.block == 0:
                return self.full_input is not None
            slot = self.pending.get(self.block, {})
            return all(q in slot for q in self._peers())
        slot = self.pending.get(self.block, {})
        return self.x is not None and all(q in slot for q in self._peers())

    def waiting_on(self) -> str:
        if self.plan is None:
            return "control message"
        if self.strategy == "voltage" and self.block == 0:
            return "full input"
        if self.strategy != "voltage" and self.x is None:
            return "input partition"
        slot = self.pending.get(self.block, {})
        missing = [q for q in self._peers() if q not in slot]
        return f"block {self.block} data from {missing}" if missing else "nothing"

    # -- block computation ---------------------------------------------------

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _emit_exchange(self, matrix: np.ndarray,
                       counts: np.ndarray | None) -> list[Message]:
        kind = (MessageKind.SEGMENT_MEANS if counts is not None
                else MessageKind.OUTPUT_PARTITION)
        block = self.block + 1
        if self.comm_mode == "broadcast":
            return [encode_message(self.device, BROADCAST, block, kind,
                                   self._next_seq(), matrix, counts)]
        return [encode_message(self.device, peer, block, kind,
                               self._next_seq(), matrix, counts)
                for peer in self._peers()]

    def _step_single(self) -> list[Message]:
        bw = self.weights.blocks[self.block]
        self.x = block_forward(self.x, bw, self.config)
        if self.block == self.config.n_blocks - 1:
            self.x = tensor.layernorm(self.x, self.weights.final_gain,
                                      self.weights.final_bias)
            self.done = True
            return [encode_message(self.device, MASTER, self.config.n_blocks,
                                   MessageKind.OUTPUT_PARTITION,
                                   self._next_seq(), self.x)]
        return []

    def _step_prism(self) -> list[Message]:
        cfg = self.config
        p = self.partition_id
        bw = self.weights.blocks[self.block]
        blocks = [self.pending[self.block][q] for q in self._peers()]
        aug = assemble_augmented(self.x, blocks, self.plan, p)
        h = tensor.layernorm(aug.assembled, bw.ln1_gain, bw.ln1_bias)
        aug_n = replace(aug, assembled=h, local=h[:aug.local.shape[0]])
        if cfg.is_decoder and self._mask is None:
            self._mask = build_causal_mask(self.plan, p,
                                           cfg.landmarks_per_partition)
        mask = self._mask if cfg.is_decoder else None
        heads = [attention_scaled(aug_n.local, aug_n, bw.w_q[i], bw.w_k[i],
                                  bw.w_v[i], mask)
                 for i in range(cfg.n_heads)]
        attn = tensor.matmul(np.hstack(heads), bw.w_out)
        tensor.charge(tensor.add_flops(*self.x.shape))
        self.x = self.x + attn
        h2 = tensor.layernorm(self.x, bw.ln2_gain, bw.ln2_bias)
        ffn = tensor.matmul(tensor.gelu(tensor.matmul(h2, bw.w_ffn_in)),
                            bw.w_ffn_out)
        tensor.charge(tensor.add_flops(*self.x.shape))
        self.x = self.x + ffn
        self.pending.pop(self.block, None)
        if self.block == cfg.n_blocks - 1:
            self.x = tensor.layernorm(self.x, self.weights.final_gain,
                                      self.weights.final_bias)
            self.done = True
            return [encode_message(self.device, MASTER, cfg.n_blocks,
                                   MessageKind.OUTPUT_PARTITION,
                                   self._next_seq(), self.x)]
        z = segment_means(self.x, cfg.landmarks_per_partition, p)
        return self._emit_exchange(z.means, z.counts)

    def _step_voltage(self) -> list[Message]:
        cfg = self.config
        p = self.partition_id
        bw = self.weights.blocks[self.block]
        start, end = self.plan.range(p)
        if self.block == 0:
            full = self.full_input
            self.x = full[start:end].copy()
        else:
            slot = self.pending[self.block]
            parts = [self.x if q == p else slot[q]
                     for q in range(1, self.plan.n_partitions + 1)]
            full = tensor.concat_rows(parts)
        h = tensor.layernorm(full, bw.ln1_gain, bw.ln1_bias)
        mask_bits = None
        if cfg.is_decoder:
            if self._mask_rows is None:
                n = self.plan.n_tokens
                self._mask_rows = np.tril(np.ones((n, n), dtype=bool))[start:end]
            mask_bits = self._mask_rows
        heads = [attention_rows(h[start:end], h, bw.w_q[i], bw.w_k[i],
                                bw.w_v[i], mask_bits)
                 for i in range(cfg.n_heads)]
        attn = tensor.matmul(np.hstack(heads), bw.w_out)
        tensor.charge(tensor.add_flops(*self.x.shape))
        self.x = self.x + attn
        h2 = tensor.layernorm(self.x, bw.ln2_gain, bw.ln2_bias)
        ffn = tensor.matmul(tensor.gelu(tensor.matmul(h2, bw.w_ffn_in)),
                            bw.w_ffn_out)
        tensor.charge(tensor.add_flops(*self.x.shape))
        self.x = self.x + ffn
        self.pending.pop(self.block, None)
        if self.block == cfg.n_blocks - 1:
            self.x = tensor.layernorm(self.x, self.weights.final_gain,
                                      self.weights.final_bias)
            self.done = True
            return [encode_message(self.device, MASTER, cfg.n_blocks,
                                   MessageKind.OUTPUT_PARTITION,
                                   self._next_seq(), self.x)]
        return self._emit_exchange(self.x, None)


def worker_step(state: Worker,
                incoming: list[Message]) -> tuple[Worker, list[Message]]:
    """Ingest messages and, if the current block's inputs are complete,
    advance exactly one block. Returns the state and outgoing messages
    (empty when blocked)."""
    state.ingest(incoming)
    if not state.ready():
        return state, []
    with tensor.count_flops() as counter:
        if state.strategy == "single":
            outgoing = state._step_single()
        elif state.strategy == "voltage":
            outgoing = state._step_voltage()
        else:
            outgoing = state._step_prism()
    state.block_flops.append(counter.total)
    state.block += 1
    return state, outgoing


# ---------------------------------------------------------------------------
# Harnesses


def aggregate(outputs: list[Message], plan: PartitionPlan,
              dtype: np.dtype) -> np.ndarray:
    """Order final output messages by partition id and concatenate rows."""
    by_source: dict[int, np.ndarray] = {}
    for msg in outputs:
        if msg.kind != MessageKind.OUTPUT_PARTITION:
            raise ProtocolError(f"cannot aggregate {msg.kind.name} messages")
        if msg.sender in by_source:
            raise ProtocolError(f"duplicate output from device {msg.sender}")
        by_source[msg.sender] = decode_matrix(msg, dtype)
    expected = set(range(1, plan.n_partitions + 1))
    if set(by_source) != expected:
        raise ProtocolError(
            f"outputs from {sorted(by_source)} do not cover "
            f"partitions {sorted(expected)}")
    parts = [by_source[p] for p in sorted(by_source)]
    for p, part in zip(sorted(by_source), parts):
        if part.shape[0] != plan.size(p):
            raise ProtocolError(
                f"output rows {part.shape[0]} from device {p} do not match "
                f"partition size {plan.size(p)}")
    return np.concatenate(parts, axis=0)


@dataclass(frozen=True)
class RunResult:
    output: np.ndarray
    ledger: CommLedger
    timeline: RunTimeline
    # instrumented per-block kernel charges, one tuple per device (exact ints)
    device_flops: tuple[tuple[int, ...], ...] = ()


class _Bus:
    """Routing, tracing, and per-sender ledger shards for one run."""

    def __init__(self, n_workers: int, net: NetworkModel, comm_mode: str,
                 trace: IO[str] | None,
                 drop_filter: Callable[[Message], bool] | None) -> None:
        self.n_workers = n_workers
        self.comm_mode = comm_mode
        self.trace = trace
        self.drop_filter = drop_filter
        self.ledgers = {dev: CommLedger(net.bytes_per_scalar, comm_mode)
                        for dev in range(n_workers + 1)}
        self._trace_lock = threading.Lock()

    def fan_out(self, msg: Message) -> list[tuple[int, Message]]:
        """Ledger one send and list its (receiver, message) deliveries."""
        self.ledgers[msg.sender].record_send(msg)
        if self.trace is not None:
            line = (f"seq={msg.seq_no} from={msg.sender} to={msg.receiver} "
                    f"block={msg.block_index} kind={msg.kind.name} "
                    f"rows={msg.rows} cols={msg.cols} "
                    f"landmarks={msg.n_landmarks}\n")
            with self._trace_lock:
                self.trace.write(line)
        if self.drop_filter is not None and self.drop_filter(msg):
            return []
        if msg.receiver == BROADCAST:
            return [(dev, msg) for dev in range(1, self.n_workers + 1)
                    if dev != msg.sender]
        return [(msg.receiver, msg)]

    def merged_ledger(self, net: NetworkModel) -> CommLedger:
        merged = CommLedger(net.bytes_per_scalar, self.comm_mode)
        for dev in sorted(self.ledgers):
            merged.merge(self.ledgers[dev])
        return merged


def _master_messages(x: np.ndarray, config: TransformerConfig,
                     plan: PartitionPlan, strategy: str) -> list[Message]:
    msgs: list[Message] = []
    seq = 0
    means = {}
    if strategy == "prism":
        means = {q: segment_means(x[slice(*plan.range(q))],
                                  config.landmarks_per_partition, q)
                 for q in range(1, plan.n_partitions + 1)}
    for p in range(1, plan.n_partitions + 1):
        seq += 1
        msgs.append(encode_control(MASTER, p, plan, p, seq))
        seq += 1
        if strategy == "voltage":
            msgs.append(encode_message(MASTER, p, 0, MessageKind.INPUT_PARTITION,
                                       seq, x))
        else:
            msgs.append(encode_message(MASTER, p, 0, MessageKind.INPUT_PARTITION,
                                       seq, x[slice(*plan.range(p))]))
        if strategy == "prism" and plan.n_partitions > 1:
            peers = [q for q in range(1, plan.n_partitions + 1) if q != p]
            stacked = np.concatenate([means[q].means for q in peers], axis=0)
            counts = np.concatenate([means[q].counts for q in peers])
            seq += 1
            msgs.append(encode_message(MASTER, p, 0, MessageKind.SEGMENT_MEANS,
                                       seq, stacked, counts))
    return msgs


def _run_sequential(workers: dict[int, Worker], initial: list[Message],
                    bus: _Bus, step_budget: int,
                    shuffle_seed: int | None) -> list[Message]:
    mailboxes: dict[int, deque] = {dev: deque() for dev in workers}
    master_inbox: list[Message] = []
    rng = np.random.Generator(np.random.Philox(shuffle_seed)) \
        if shuffle_seed is not None else None

    def deliver(msg: Message) -> None:
        for receiver, m in bus.fan_out(msg):
            if receiver == MASTER:
                master_inbox.append(m)
            else:
                mailboxes[receiver].append(m)

    for msg in initial:
        deliver(msg)
    sweeps = 0
    while not all(w.done for w in workers.values()):
        sweeps += 1
        if sweeps > step_budget:
            raise StallError(f"step budget {step_budget} exhausted")
        progressed = False
        for dev in sorted(workers):
            worker = workers[dev]
            if worker.done:
                continue
            batch = list(mailboxes[dev])
            mailboxes[dev].clear()
            if rng is not None and len(batch) > 1:
                batch = [batch[i] for i in rng.permutation(len(batch))]
            before = worker.block
            _, outgoing = worker_step(worker, batch)
            for msg in outgoing:
                deliver(msg)
            if batch or worker.block != before or worker.done:
                progressed = True
        if not progressed:
            waits = {dev: w.waiting_on() for dev, w in workers.items()
                     if not w.done}
            raise StallError(f"no progress possible; waiting: {waits}")
    return master_inbox


def _run_threaded(workers: dict[int, Worker], initial: list[Message],
                  bus: _Bus, stall_timeout_s: float = 10.0) -> list[Message]:
    mailboxes = {dev: queue_mod.Queue() for dev in workers}
    master_inbox: queue_mod.Queue = queue_mod.Queue()
    errors: list[BaseException] = []
    route_lock = threading.Lock()

    def deliver(msg: Message) -> None:
        # fan_out mutates per-sender ledgers only, but the trace file and
        # drop bookkeeping are shared, so serialize routing.
        with route_lock:
            targets = bus.fan_out(msg)
        for receiver, m in targets:
            if receiver == MASTER:
                master_inbox.put(m)
            else:
                mailboxes[receiver].put(m)

    for msg in initial:
        deliver(msg)

    def runner(dev: int) -> None:
        worker = workers[dev]
        quiet = 0.0
        try:
            while not worker.done:
                batch = []
                try:
                    batch.append(mailboxes[dev].get(timeout=0.05))
                    while True:
                        batch.append(mailboxes[dev].get_nowait())
                except queue_mod.Empty:
                    pass
                before = worker.block
                _, outgoing = worker_step(worker, batch)
                for msg in outgoing:
                    deliver(msg)
                if batch or worker.block != before:
                    quiet = 0.0
                else:
                    quiet += 0.05
                    if quiet > stall_timeout_s:
                        raise StallError(
                            f"device {dev} stalled waiting on "
                            f"{worker.waiting_on()}")
        except BaseException as exc:  # surfaced to the main thread
            errors.append(exc)

    threads = [threading.Thread(target=runner, args=(dev,), daemon=True)
               for dev in sorted(workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    out = []
    while not master_inbox.empty():
        out.append(master_inbox.get_nowait())
    return out


def _build_timeline(workers: dict[int, Worker], master_msgs: list[Message],
                    ledger_shards: dict[int, CommLedger], net: NetworkModel,
                    config: TransformerConfig,
                    device_flops_per_s: float) -> RunTimeline:
    bits_per_elem = 8 * net.bytes_per_scalar
    master_elems = sum(m.data_elements for m in master_msgs)
    distribution_s = (master_elems * bits_per_elem / net.bandwidth_bps
                      + len(master_msgs) * net.per_message_latency_s)
    n_blocks = config.n_blocks
    devices = []
    per_block_compute = np.zeros((len(workers), n_blocks))
    per_block_comm = np.zeros((len(workers), n_blocks))
    for i, dev in enumerate(sorted(workers)):
        ledger = ledger_shards[dev]
        timings = []
        for b in range(n_blocks):
            compute = workers[dev].block_flops[b] / device_flops_per_s
            # exchanges emitted at the end of block b carry label b+1
            # (their consuming block); the final output carries n_blocks.
            sent = 0
            msgs = 0
            for kind in (MessageKind.SEGMENT_MEANS, MessageKind.OUTPUT_PARTITION):
                entry = ledger.entry(dev, b + 1, kind)
                sent += entry.elements
                msgs += entry.messages
            comm = (sent * bits_per_elem / net.bandwidth_bps
                    + msgs * net.per_message_latency_s)
            per_block_compute[i, b] = compute
            per_block_comm[i, b] = comm
            timings.append(BlockTiming(block=b, compute_s=compute, comm_s=comm))
        devices.append(DeviceTimeline(device=dev, blocks=tuple(timings),
                                      total_s=float(per_block_compute[i].sum()
                                                    + per_block_comm[i].sum())))
    lockstep = float((per_block_compute.max(axis=0)
                      + per_block_comm.max(axis=0)).sum())
    return RunTimeline(distribution_s=distribution_s, devices=tuple(devices),
                       total_latency_s=distribution_s + lockstep)


def run_distributed(x: np.ndarray, weights: WeightSet,
                    config: TransformerConfig, strategy: str,
                    net: NetworkModel | None = None, *,
                    comm_mode: str = "unicast",
                    execution: str = "sequential",
                    device_flops_per_s: float = DEFAULT_DEVICE_FLOPS,
                    step_budget: int = DEFAULT_STEP_BUDGET,
                    shuffle_seed: int | None = None,
                    trace: IO[str] | None = None,
                    drop_filter: Callable[[Message], bool] | None = None
                    ) -> RunResult:
    """Simulate one distributed forward pass.

    Returns the aggregated output matrix, the merged communication ledger,
    and the lockstep timing stub. Deterministic in (x, weights, config,
    strategy) regardless of execution mode or arrival interleaving.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    if comm_mode not in COMM_MODES:
        raise ConfigError(f"unknown comm_mode {comm_mode!r}")
    if execution not in EXECUTIONS:
        raise ConfigError(f"unknown execution {execution!r}")
    if strategy == "single" and config.n_partitions != 1:
        raise ConfigError("single strategy requires n_partitions == 1")
    if strategy in ("voltage", "prism") and config.n_partitions < 2:
        raise ConfigError(f"{strategy} strategy requires n_partitions >= 2")
    tensor.require_matrix(x, "input")
    if x.shape != (config.n_tokens, config.embed_dim):
        raise ShapeError(f"input shape {x.shape} does not match "
                         f"({config.n_tokens}, {config.embed_dim})")
    net = net or NetworkModel()
    plan = make_partition_plan(config.n_tokens, config.n_partitions)
    workers = {p: Worker(p, config, weights, strategy, x.dtype, comm_mode)
               for p in range(1, plan.n_partitions + 1)}
    bus = _Bus(plan.n_partitions, net, comm_mode, trace, drop_filter)
    master_msgs = _master_messages(x, config, plan, strategy)
    if execution == "sequential":
        outputs = _run_sequential(workers, master_msgs, bus, step_budget,
                                  shuffle_seed)
    else:
        outputs = _run_threaded(workers, master_msgs, bus)
    output = aggregate(outputs, plan, x.dtype)
    ledger = bus.merged_ledger(net)
    timeline = _build_timeline(workers, master_msgs, bus.ledgers, net, config,
                               device_flops_per_s)
    device_flops = tuple(tuple(workers[p].block_flops)
                         for p in sorted(workers))
    return RunResult(output=output, ledger=ledger, timeline=timeline,
                     device_flops=device_flops)
