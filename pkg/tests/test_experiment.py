import numpy as np
import pytest

from seqshard.errors import ConfigError
from seqshard.experiment import (PRESETS, load_config, sweep_landmarks,
                                 with_overrides)


def test_default_config_is_valid():
    exp = load_config()
    assert exp.model.n_tokens == 197
    assert exp.precision == "f32"
    assert exp.dtype == np.float32
    assert exp.verify_model is not None
    assert exp.verify_model.model_kind == "encoder"


def test_presets_cover_the_three_models():
    assert set(PRESETS) == {"vit-base", "bert-base", "gpt2-base"}
    for dims in PRESETS.values():
        assert dims["n_heads"] * dims["head_dim"] == dims["embed_dim"]


def test_preset_with_dimension_override():
    exp = load_config(text="[model]\npreset = vit-base\nn_blocks = 2\n")
    assert exp.model.n_blocks == 2
    assert exp.model.embed_dim == 768


def test_explicit_dimensions_without_preset():
    exp = load_config(text=(
        "[model]\nn_tokens = 10\nembed_dim = 8\nn_heads = 2\nhead_dim = 4\n"
        "ffn_dim = 16\nn_blocks = 1\nmodel_kind = decoder\n"))
    assert exp.model.n_tokens == 10
    assert exp.model.model_kind == "decoder"


def test_incomplete_model_rejected():
    with pytest.raises(ConfigError):
        load_config(text="[model]\nn_tokens = 10\n")


def test_unknown_preset_rejected():
    with pytest.raises(ConfigError):
        load_config(text="[model]\npreset = resnet\n")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        load_config(text="[model]\npreset = vit-base\ncolour = blue\n")


def test_unknown_section_rejected():
    with pytest.raises(ConfigError):
        load_config(text="[model]\npreset = vit-base\n[plotting]\nx = 1\n")


def test_bad_precision_rejected():
    with pytest.raises(ConfigError):
        load_config(text="[model]\npreset = vit-base\n[run]\nprecision = f16\n")


def test_per_partition_landmark_lists():
    exp = load_config(text=(
        "[model]\npreset = bert-base\n"
        "[compare]\npartitions = 2,3\nlandmarks.2 = 13,1\nlandmarks.3 = 9,1\n"))
    assert exp.landmarks_for(2) == (13, 1)
    assert exp.landmarks_for(3) == (9, 1)
    assert sweep_landmarks(exp, 2) == [(13, None), (1, None)]


def test_compression_rate_sweep():
    exp = load_config(text=(
        "[model]\npreset = gpt2-base\n"
        "[compare]\npartitions = 2\ncompression_rates = 2,4\n"))
    assert sweep_landmarks(exp, 2) == [(64, 2.0), (32, 4.0)]


def test_verify_section_overrides_dims():
    exp = load_config(text=(
        "[model]\npreset = gpt2-base\n[verify]\ntrials = 5\nn_tokens = 30\n"))
    assert exp.verify_trials == 5
    assert exp.verify_model.n_tokens == 30
    assert exp.verify_model.model_kind == "decoder"  # follows [model]


def test_inline_comments_allowed():
    exp = load_config(text="[model]\npreset = vit-base  ; image encoder\n")
    assert exp.model.n_tokens == 197


def test_overrides_apply():
    exp = load_config()
    out = with_overrides(exp, seed=9, precision="f64", mode="broadcast")
    assert (out.seed, out.precision, out.mode) == (9, "f64", "broadcast")
    assert out.dtype == np.float64


def test_override_rejects_bad_values():
    exp = load_config()
    with pytest.raises(ConfigError):
        with_overrides(exp, precision="f128")
    with pytest.raises(ConfigError):
        with_overrides(exp, mode="multicast")


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


def test_shipped_configs_parse():
    import pathlib
    root = pathlib.Path(__file__).resolve().parents[1] / "configs"
    for name in ("vit-base.ini", "bert-base.ini", "gpt2-base.ini"):
        exp = load_config(root / name)
        assert exp.model.n_blocks == 12
