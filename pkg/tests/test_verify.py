import pytest

from seqshard.errors import ConfigError
from seqshard.experiment import load_config
from seqshard.verify import ALL_CHECKS, run_verification

FAST_CONFIG = """\
[model]
preset = vit-base

[verify]
trials = 6
partitions = 2,3
landmarks = 3
n_tokens = 24
embed_dim = 16
n_heads = 4
head_dim = 4
ffn_dim = 32
n_blocks = 2
"""


@pytest.fixture(scope="module")
def results():
    return run_verification(load_config(text=FAST_CONFIG))


def test_every_property_passes(results):
    failed = [r.name for r in results if not r.passed]
    assert not failed, f"failed properties: {failed}"


def test_all_checks_ran(results):
    assert len(results) == len(ALL_CHECKS)
    names = {r.name for r in results}
    assert "scaled_matches_duplicated" in names
    assert "causal_future_invariance" in names
    assert "naive_mask_leaks" in names


def test_results_carry_evidence(results):
    for r in results:
        assert r.trials > 0
        assert r.detail


def test_wrong_g_injection_is_caught():
    exp = load_config(text=FAST_CONFIG)
    results = run_verification(exp, inject="wrong-g")
    by_name = {r.name: r for r in results}
    assert not by_name["scaled_matches_duplicated"].passed
    # the fault is local to the duplicate-weighted path
    assert by_name["kv_permutation_invariance"].passed


def test_unknown_injection_rejected():
    exp = load_config(text=FAST_CONFIG)
    with pytest.raises(ConfigError):
        run_verification(exp, inject="wrong-everything")
