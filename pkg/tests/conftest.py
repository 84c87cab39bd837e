import numpy as np
import pytest

import seqshard as ss


def small_config(kind: str = "encoder", p: int = 1, landmarks: int = 1,
                 **over) -> ss.TransformerConfig:
    base = dict(n_tokens=24, embed_dim=16, head_dim=4, n_heads=4,
                ffn_dim=32, n_blocks=2, model_kind=kind,
                n_partitions=p, landmarks_per_partition=landmarks)
    base.update(over)
    return ss.TransformerConfig(**base)


def philox(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


@pytest.fixture
def rng() -> np.random.Generator:
    return philox(1234)
