import numpy as np
import pytest

import seqshard as ss
from conftest import small_config
from seqshard import analysis
from seqshard.errors import ConfigError
from seqshard.runtime import NetworkModel


def vit(p=1, landmarks=1, kind="encoder"):
    return ss.TransformerConfig(197, 768, 64, 12, 3072, 12, kind, p,
                                landmarks)


def bert(p, landmarks):
    return ss.TransformerConfig(256, 768, 64, 12, 3072, 12, "encoder", p,
                                landmarks)


class TestCommunicatedTokens:
    def test_voltage_rounds_half_up(self):
        assert analysis.pdplc_tokens("voltage", vit(2, 1)) == 99
        assert analysis.pdplc_tokens("voltage", vit(3, 1)) == 131
        assert analysis.pdplc_tokens("voltage", bert(2, 1)) == 128
        assert analysis.pdplc_tokens("voltage", bert(3, 1)) == 171

    def test_prism_scales_with_peers(self):
        assert analysis.pdplc_tokens("prism", vit(2, 10)) == 10
        assert analysis.pdplc_tokens("prism", vit(3, 10)) == 20
        assert analysis.pdplc_tokens("prism", vit(3, 30)) == 60

    def test_single_sends_nothing(self):
        assert analysis.pdplc_tokens("single", vit()) == 0

    def test_compression_rate(self):
        assert analysis.compression_rate(vit(2, 10)) == pytest.approx(9.9)
        assert analysis.compression_rate(bert(2, 1)) == pytest.approx(128.0)

    def test_landmarks_for_rate(self):
        # floor(N / (cr * P))
        assert analysis.landmarks_for_rate(256, 2, 2.0) == 64
        assert analysis.landmarks_for_rate(256, 2, 10.0) == 12
        assert analysis.landmarks_for_rate(197, 2, 9.9) == 9
        with pytest.raises(ConfigError):
            analysis.landmarks_for_rate(16, 2, 10.0)


class TestPublishedSpeedups:
    """Communication reductions must reproduce the reference tables to two
    decimal places."""

    @pytest.mark.parametrize("p,landmarks,expected", [
        (2, 10, "89.90"), (2, 20, "79.80"), (2, 30, "69.70"),
        (3, 10, "84.73"), (3, 20, "69.47"), (3, 30, "54.20")])
    def test_image_encoder_table(self, p, landmarks, expected):
        cr = analysis.compression_rate(vit(p, landmarks))
        assert f"{analysis.comm_speedup_pct(cr):.2f}" == expected

    @pytest.mark.parametrize("p,landmarks,expected", [
        (2, 13, "89.84"), (2, 1, "99.22"), (3, 9, "89.47"), (3, 1, "98.83")])
    def test_text_encoder_table(self, p, landmarks, expected):
        cr = analysis.compression_rate(bert(p, landmarks))
        assert f"{analysis.comm_speedup_pct(cr):.2f}" == expected

    def test_requested_rate_column(self):
        for cr in range(2, 11):
            want = (1 - 1 / cr) * 100
            assert analysis.comm_speedup_pct(cr) == pytest.approx(want)


class TestFlopModel:
    def test_single_device_total(self):
        gf = analysis.flops_forward("single", vit()).total / 1e9
        assert abs(gf - 35.15) / 35.15 < 0.03

    @pytest.mark.parametrize("strategy,p,landmarks,target", [
        ("voltage", 2, 1, 42.05), ("voltage", 3, 1, 56.06),
        ("prism", 2, 10, 50.11), ("prism", 3, 10, 65.82)])
    def test_per_device_speedups(self, strategy, p, landmarks, target):
        got = analysis.comp_speedup_pct(strategy, vit(p, landmarks))
        assert abs(got - target) < 1.0

    def test_total_is_sum_of_devices(self):
        report = analysis.flops_forward("prism", vit(3, 10))
        assert report.total == sum(report.per_device)
        assert len(report.per_device) == 3

    @pytest.mark.parametrize("strategy,p,landmarks", [
        ("single", 1, 1), ("voltage", 2, 1), ("voltage", 3, 1),
        ("prism", 2, 3), ("prism", 3, 2)])
    @pytest.mark.parametrize("kind", ["encoder", "decoder"])
    def test_analytic_equals_instrumented(self, strategy, p, landmarks, kind):
        cfg = small_config(kind=kind, p=p, landmarks=landmarks)
        x = ss.make_input(cfg, 0, np.float64)
        w = ss.generate_weights(cfg, 0, np.float64)
        result = ss.run_distributed(x, w, cfg, strategy)
        plan = ss.make_partition_plan(cfg.n_tokens, p)
        want = tuple(
            tuple(analysis.device_block_flops(strategy, cfg, plan, q, b)
                  for b in range(cfg.n_blocks))
            for q in range(1, p + 1))
        assert result.device_flops == want

    def test_decoder_charges_mask(self):
        enc = analysis.flops_forward("single", vit()).total
        dec = analysis.flops_forward("single", vit(kind="decoder")).total
        assert dec == enc + 12 * 12 * 197 * 197  # blocks x heads x N^2


class TestLedgerExpectations:
    @pytest.mark.parametrize("strategy", ["voltage", "prism"])
    @pytest.mark.parametrize("p", [2, 3, 4])
    @pytest.mark.parametrize("mode", ["unicast", "broadcast"])
    def test_match_observed(self, strategy, p, mode):
        cfg = small_config(p=p, landmarks=2)
        x = ss.make_input(cfg, 0, np.float64)
        w = ss.generate_weights(cfg, 0, np.float64)
        result = ss.run_distributed(x, w, cfg, strategy, comm_mode=mode)
        assert dict(result.ledger.items()) == analysis.ledger_expectations(
            strategy, cfg, mode)

    def test_prism_total_exchange_volume(self):
        # steady-state blocks: P devices x (P-1) L D elements per block
        cfg = small_config(p=3, landmarks=2)
        expected = analysis.ledger_expectations("prism", cfg)
        per_block = sum(
            e.elements for (dev, block, kind), e in expected.items()
            if kind == ss.MessageKind.SEGMENT_MEANS and dev > 0 and block == 1)
        assert per_block == 3 * 2 * 2 * cfg.embed_dim


class TestLatencyModel:
    def test_single_is_bandwidth_constant(self):
        curve = analysis.latency_curve("single", vit(), NetworkModel(), 1e10,
                                       [10, 100, 1000])
        values = {lat for _, lat in curve}
        assert len(values) == 1

    def test_prism_below_voltage_everywhere(self):
        net = NetworkModel()
        bws = [10, 25, 50, 100, 250, 500, 1000]
        v = analysis.latency_curve("voltage", vit(2, 1), net, 1e10, bws)
        p = analysis.latency_curve("prism", vit(2, 10), net, 1e10, bws)
        assert all(pl < vl for (_, pl), (_, vl) in zip(p, v))

    def test_ratio_approaches_inverse_compression_rate(self):
        net = NetworkModel()
        cfg = vit(2, 10)
        v = analysis.latency_curve("voltage", vit(2, 1), net, 1e10, [1e-7])
        p = analysis.latency_curve("prism", cfg, net, 1e10, [1e-7])
        ratio = p[0][1] / v[0][1]
        cr = analysis.compression_rate(cfg)
        assert abs(ratio - 1 / cr) * cr < 0.01

    def test_latency_decreases_with_bandwidth(self):
        curve = analysis.latency_curve("prism", vit(2, 10), NetworkModel(),
                                       1e10, [10, 100, 1000])
        lats = [lat for _, lat in curve]
        assert lats[0] > lats[1] > lats[2]

    def test_rejects_nonpositive_bandwidth(self):
        with pytest.raises(ConfigError):
            analysis.latency_curve("prism", vit(2, 10), NetworkModel(), 1e10,
                                   [0.0])


class TestCostReport:
    def test_prism_row_fields(self):
        row = analysis.cost_report("prism", vit(2, 10))
        assert row.landmarks == 10
        assert row.pdplc_tokens == 10
        assert row.cr == pytest.approx(9.9)
        assert row.comm_speedup_pct == pytest.approx(89.898989, abs=1e-4)

    def test_requested_rate_overrides_derived(self):
        row = analysis.cost_report("prism", bert(2, 64), requested_cr=2.0)
        assert row.cr == 2.0
        assert row.comm_speedup_pct == pytest.approx(50.0)

    def test_single_row_has_no_comm_columns(self):
        row = analysis.cost_report("single", vit())
        assert row.pdplc_tokens is None
        assert row.cr is None
        assert row.comp_speedup_pct is None
