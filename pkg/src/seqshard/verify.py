"""Runnable correctness properties.

Each check draws randomized instances from a seeded counter-based generator,
exercises one algebraic or protocol invariant, and reports the worst observed
error. The `verify` command runs every check and fails if any property does.

Numeric identity checks always run in float64: their tolerances (1e-12 for
single-layer identities, 1e-10 end-to-end) measure algebraic equality, not
storage precision. Determinism and ledger checks honor the configured
precision since they assert exact equality at any width.

`inject` deliberately breaks an internal quantity so the suite can prove it
catches the corresponding bug; see `INJECTIONS`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import analysis
from .attention import (attention_duplicated_oracle, attention_permuted_kv,
                        attention_reference, attention_scaled,
                        build_causal_mask, naive_local_mask)
from .errors import ConfigError
from .experiment import ExperimentConfig
from .model import generate_weights, make_input, reference_forward
from .partition import assemble_augmented, make_partition_plan, segment_means
from .runtime import NetworkModel, run_distributed

# "wrong-g": corrupt the repetition vector before the duplicate-free
# attention path; the scaled-vs-duplicated property must then fail.
INJECTIONS = ("wrong-g",)

_IDENTITY_TOL = 1e-12
_FORWARD_TOL = 1e-10


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    trials: int
    max_error: float
    detail: str = ""

    def as_record(self) -> dict:
        return {"property": self.name,
                "passed": "pass" if self.passed else "FAIL",
                "trials": self.trials,
                "max_error": self.max_error,
                "detail": self.detail}


def _rng(seed: int, salt: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence([seed, salt])))


def _attention_instance(rng: np.random.Generator):
    """One randomized partitioned-attention instance."""
    n = int(rng.integers(6, 65))
    p_total = int(rng.choice([2, 3]))
    plan = make_partition_plan(n, p_total)
    lpp = int(rng.integers(1, min(plan.sizes()) + 1))
    dim = int(rng.choice([4, 8]))
    head_dim = int(rng.choice([4, 8]))
    causal = bool(rng.integers(0, 2))
    x = rng.standard_normal((n, dim))
    w_q = rng.standard_normal((dim, head_dim))
    w_k = rng.standard_normal((dim, head_dim))
    w_v = rng.standard_normal((dim, head_dim))
    blocks = {q: segment_means(x[slice(*plan.range(q))], lpp, q)
              for q in range(1, p_total + 1)}
    return plan, lpp, causal, x, (w_q, w_k, w_v), blocks


def check_scaled_matches_duplicated(exp: ExperimentConfig,
                                    inject: str | None = None
                                    ) -> PropertyResult:
    """Duplicate-free scaled attention equals the physically-duplicated
    expansion on every partition of randomized instances."""
    rng = _rng(exp.seed, 101)
    worst = 0.0
    instances = 0
    for _ in range(exp.verify_trials):
        plan, lpp, causal, x, (w_q, w_k, w_v), blocks = \
            _attention_instance(rng)
        for p in range(1, plan.n_partitions + 1):
            local = x[slice(*plan.range(p))]
            peers = [blocks[q] for q in sorted(blocks) if q != p]
            aug = assemble_augmented(local, peers, plan, p)
            if inject == "wrong-g":
                bad = aug.g.copy()
                bad[local.shape[0]:] += 1
                aug = dataclasses.replace(aug, g=bad)
            mask = build_causal_mask(plan, p, lpp) if causal else None
            got = attention_scaled(local, aug, w_q, w_k, w_v, mask)
            want = attention_duplicated_oracle(local, peers, w_q, w_k, w_v,
                                               mask)
            worst = max(worst, float(np.max(np.abs(got - want))))
            instances += 1
    return PropertyResult(
        "scaled_matches_duplicated", worst <= _IDENTITY_TOL, instances, worst,
        f"max |scaled - duplicated| = {worst:.3e} over {instances} instances")


def check_permutation_invariance(exp: ExperimentConfig) -> PropertyResult:
    """Reordering key/value rows leaves bidirectional attention unchanged."""
    rng = _rng(exp.seed, 102)
    worst = 0.0
    for _ in range(exp.verify_trials):
        n = int(rng.integers(4, 65))
        dim = int(rng.choice([4, 8]))
        head_dim = int(rng.choice([4, 8]))
        x = rng.standard_normal((n, dim))
        w_q = rng.standard_normal((dim, head_dim))
        w_k = rng.standard_normal((dim, head_dim))
        w_v = rng.standard_normal((dim, head_dim))
        perm = rng.permutation(n)
        base = attention_reference(x, w_q, w_k, w_v)
        permuted = attention_permuted_kv(x, perm, w_q, w_k, w_v)
        worst = max(worst, float(np.max(np.abs(base - permuted))))
    return PropertyResult(
        "kv_permutation_invariance", worst <= _IDENTITY_TOL,
        exp.verify_trials, worst,
        f"max |base - permuted| = {worst:.3e}")


def check_lossless_limit(exp: ExperimentConfig) -> PropertyResult:
    """With one landmark per row the compressed run reproduces the
    single-device pass; the full-replication strategy always does."""
    spec = exp.verify_model
    worst = 0.0
    runs = 0
    for p_total in exp.verify_partitions:
        if spec.n_tokens % p_total:
            continue  # equal partitions so L can hit every partition size
        n_p = spec.n_tokens // p_total
        config = spec.config(n_partitions=p_total, landmarks=n_p)
        x = make_input(config, exp.seed, np.float64)
        weights = generate_weights(config, exp.seed, np.float64)
        want = reference_forward(x, weights, config)
        for strategy in ("prism", "voltage"):
            got = run_distributed(x, weights, config, strategy,
                                  comm_mode=exp.mode).output
            worst = max(worst, float(np.max(np.abs(got - want))))
            runs += 1
    if not runs:
        return PropertyResult(
            "lossless_limit", False, 0, float("inf"),
            "no partition count divides the verification sequence length")
    return PropertyResult(
        "lossless_limit", worst <= _FORWARD_TOL, runs, worst,
        f"max |distributed - single| = {worst:.3e} over {runs} runs")


def check_causal_future_invariance(exp: ExperimentConfig) -> PropertyResult:
    """Decoder runs: perturbing a suffix of the input leaves every earlier
    row of the output exactly unchanged (value-for-value)."""
    spec = dataclasses.replace(exp.verify_model, model_kind="decoder")
    rng = _rng(exp.seed, 104)
    exact = True
    runs = 0
    detail = ""
    for p_total in exp.verify_partitions:
        config = spec.config(n_partitions=p_total,
                             landmarks=exp.verify_landmarks)
        plan = make_partition_plan(config.n_tokens, p_total)
        weights = generate_weights(config, exp.seed, np.float64)
        x = make_input(config, exp.seed, np.float64)
        base = run_distributed(x, weights, config, "prism",
                               comm_mode=exp.mode).output
        last_start, last_end = plan.range(p_total)
        for _ in range(max(1, exp.verify_trials // len(exp.verify_partitions))):
            cut = int(rng.integers(last_start + 1, last_end))
            perturbed = x.copy()
            perturbed[cut:] += rng.standard_normal(
                perturbed[cut:].shape)
            out = run_distributed(perturbed, weights, config, "prism",
                                  comm_mode=exp.mode).output
            runs += 1
            if not np.array_equal(out[:cut], base[:cut]):
                exact = False
                detail = (f"rows before {cut} changed under P={p_total} "
                          f"suffix perturbation")
            if np.array_equal(out[cut:], base[cut:]):
                exact = False
                detail = f"perturbation at {cut} had no effect (P={p_total})"
    return PropertyResult(
        "causal_future_invariance", exact, runs, 0.0 if exact else float("inf"),
        detail or "earlier rows identical under suffix perturbations")


def check_naive_mask_leaks(exp: ExperimentConfig) -> PropertyResult:
    """Negative control: the order-blind mask (all landmark columns visible)
    must leak future content into partition 1's outputs."""
    rng = _rng(exp.seed, 105)
    leaks = 0
    runs = 0
    for _ in range(exp.verify_trials):
        plan, lpp, _, x, (w_q, w_k, w_v), blocks = _attention_instance(rng)
        local = x[slice(*plan.range(1))]
        peers = [blocks[q] for q in sorted(blocks) if q != 1]
        aug = assemble_augmented(local, peers, plan, 1)

        perturbed = x.copy()
        start2 = plan.range(2)[0]
        perturbed[start2:] += rng.standard_normal(perturbed[start2:].shape)
        blocks2 = {q: segment_means(perturbed[slice(*plan.range(q))], lpp, q)
                   for q in range(1, plan.n_partitions + 1)}
        peers2 = [blocks2[q] for q in sorted(blocks2) if q != 1]
        aug2 = assemble_augmented(local, peers2, plan, 1)

        proper = build_causal_mask(plan, 1, lpp)
        naive = naive_local_mask(plan, 1, lpp)
        runs += 1
        ok_base = attention_scaled(local, aug, w_q, w_k, w_v, proper)
        ok_pert = attention_scaled(local, aug2, w_q, w_k, w_v, proper)
        if not np.array_equal(ok_base, ok_pert):
            return PropertyResult(
                "naive_mask_leaks", False, runs, float("inf"),
                "proper mask failed to isolate partition 1")
        bad_base = attention_scaled(local, aug, w_q, w_k, w_v, naive)
        bad_pert = attention_scaled(local, aug2, w_q, w_k, w_v, naive)
        if not np.array_equal(bad_base, bad_pert):
            leaks += 1
    return PropertyResult(
        "naive_mask_leaks", leaks == runs, runs,
        0.0 if leaks == runs else float("inf"),
        f"order-blind mask leaked future content in {leaks}/{runs} instances "
        f"(must be all)")


def check_ledger_matches_formula(exp: ExperimentConfig) -> PropertyResult:
    """Observed communication ledger equals the closed-form prediction,
    entry for entry, as exact integers."""
    spec = exp.verify_model
    net = NetworkModel(bandwidth_bps=exp.bandwidth_mbps * 1e6,
                       per_message_latency_s=exp.per_message_latency_ms / 1e3,
                       bytes_per_scalar=exp.bytes_per_scalar)
    mismatches = []
    runs = 0
    for p_total in exp.verify_partitions:
        config = spec.config(n_partitions=p_total,
                             landmarks=exp.verify_landmarks)
        x = make_input(config, exp.seed, exp.dtype)
        weights = generate_weights(config, exp.seed, exp.dtype)
        for strategy in ("voltage", "prism"):
            for mode in ("unicast", "broadcast"):
                result = run_distributed(x, weights, config, strategy, net,
                                         comm_mode=mode)
                got = dict(result.ledger.items())
                want = analysis.ledger_expectations(
                    strategy, config, mode, exp.bytes_per_scalar)
                runs += 1
                if got != want:
                    mismatches.append((strategy, p_total, mode))
    single = spec.config()
    x = make_input(single, exp.seed, exp.dtype)
    weights = generate_weights(single, exp.seed, exp.dtype)
    result = run_distributed(x, weights, single, "single", net)
    runs += 1
    if dict(result.ledger.items()) != analysis.ledger_expectations(
            "single", single, "unicast", exp.bytes_per_scalar):
        mismatches.append(("single", 1, "unicast"))
    return PropertyResult(
        "ledger_matches_formula", not mismatches, runs,
        0.0 if not mismatches else float("inf"),
        "all ledgers exact" if not mismatches
        else f"mismatch for {mismatches}")


def check_flops_match_formula(exp: ExperimentConfig) -> PropertyResult:
    """Instrumented kernel charges equal the analytical model, per device and
    per block, as exact integers."""
    spec = exp.verify_model
    mismatches = []
    runs = 0
    cases = [("single", 1)] + [(s, p) for p in exp.verify_partitions
                               for s in ("voltage", "prism")]
    for strategy, p_total in cases:
        landmarks = exp.verify_landmarks if strategy != "single" else 1
        config = spec.config(n_partitions=p_total, landmarks=landmarks)
        plan = make_partition_plan(config.n_tokens, p_total)
        x = make_input(config, exp.seed, exp.dtype)
        weights = generate_weights(config, exp.seed, exp.dtype)
        result = run_distributed(x, weights, config, strategy)
        runs += 1
        want = tuple(
            tuple(analysis.device_block_flops(strategy, config, plan, p, b)
                  for b in range(config.n_blocks))
            for p in range(1, p_total + 1))
        if result.device_flops != want:
            mismatches.append((strategy, p_total))
    return PropertyResult(
        "flops_match_formula", not mismatches, runs,
        0.0 if not mismatches else float("inf"),
        "instrumented == analytic" if not mismatches
        else f"mismatch for {mismatches}")


def check_landmark_mass(exp: ExperimentConfig) -> PropertyResult:
    """Segment means conserve row mass: counts sum to the partition size and
    count-weighted means reproduce the partition's column sums."""
    rng = _rng(exp.seed, 107)
    worst = 0.0
    for _ in range(exp.verify_trials):
        n_p = int(rng.integers(2, 64))
        lpp = int(rng.integers(1, n_p + 1))
        dim = int(rng.choice([3, 8]))
        x_p = rng.standard_normal((n_p, dim))
        block = segment_means(x_p, lpp, 1)
        if int(block.counts.sum()) != n_p:
            return PropertyResult(
                "landmark_mass_conservation", False, exp.verify_trials,
                float("inf"), f"counts sum {int(block.counts.sum())} != {n_p}")
        recovered = block.counts[:, None] * block.means
        worst = max(worst, float(np.max(np.abs(
            recovered.sum(axis=0) - x_p.sum(axis=0)))))
    return PropertyResult(
        "landmark_mass_conservation", worst <= 1e-10, exp.verify_trials,
        worst, f"max column-sum drift = {worst:.3e}")


def check_execution_determinism(exp: ExperimentConfig) -> PropertyResult:
    """Sequential, shuffled-delivery, and threaded executions produce
    identical outputs and identical ledgers."""
    spec = exp.verify_model
    failures = []
    runs = 0
    for p_total in exp.verify_partitions:
        config = spec.config(n_partitions=p_total,
                             landmarks=exp.verify_landmarks)
        x = make_input(config, exp.seed, exp.dtype)
        weights = generate_weights(config, exp.seed, exp.dtype)
        for strategy in ("voltage", "prism"):
            base = run_distributed(x, weights, config, strategy,
                                   comm_mode=exp.mode)
            shuffled = run_distributed(x, weights, config, strategy,
                                       comm_mode=exp.mode,
                                       shuffle_seed=exp.seed + 7)
            threaded = run_distributed(x, weights, config, strategy,
                                       comm_mode=exp.mode,
                                       execution="threaded")
            runs += 1
            for label, other in (("shuffled", shuffled),
                                 ("threaded", threaded)):
                if not np.array_equal(base.output, other.output):
                    failures.append((strategy, p_total, label, "output"))
                if base.ledger != other.ledger:
                    failures.append((strategy, p_total, label, "ledger"))
    return PropertyResult(
        "execution_determinism", not failures, runs,
        0.0 if not failures else float("inf"),
        "all executions byte-identical" if not failures
        else f"divergence: {failures}")


ALL_CHECKS = (
    check_scaled_matches_duplicated,
    check_permutation_invariance,
    check_lossless_limit,
    check_causal_future_invariance,
    check_naive_mask_leaks,
    check_ledger_matches_formula,
    check_flops_match_formula,
    check_landmark_mass,
    check_execution_determinism,
)


def run_verification(exp: ExperimentConfig,
                     inject: str | None = None) -> list[PropertyResult]:
    """Run every property; `inject` feeds the named fault to the check that
    owns it so its detection can itself be tested."""
    if inject is not None and inject not in INJECTIONS:
        raise ConfigError(f"unknown injection {inject!r}; "
                          f"choose from {INJECTIONS}")
    results = []
    for check in ALL_CHECKS:
        if check is check_scaled_matches_duplicated:
            results.append(check(exp, inject))
        else:
            results.append(check(exp))
    return results
