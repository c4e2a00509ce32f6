import numpy as np
import pytest

from ropekit import RopeConfig
from ropekit.protocol import SurrogateSpec
from ropekit.rescale import ntk_anchored_fill


@pytest.fixture
def phi3() -> RopeConfig:
    return RopeConfig(theta_base=10000.0, head_dim=96, pretrained_len=2048, target_len=131072)


@pytest.fixture
def llama3() -> RopeConfig:
    return RopeConfig(theta_base=500000.0, head_dim=128, pretrained_len=8192, target_len=131072)


def toy_config() -> RopeConfig:
    """Small instance for search tests: 8 cosine dims, extension ratio 4."""
    return RopeConfig(theta_base=500.0, head_dim=16, pretrained_len=128, target_len=512)


def toy_surrogate_spec() -> SurrogateSpec:
    """Hidden optimum at split index 4 with an off-grid non-decreasing tail."""
    config = toy_config()
    tail = np.array([4.25, 4.75, 5.25, 5.75])
    target = np.concatenate([ntk_anchored_fill(config, 4, float(tail[0])), tail])
    return SurrogateSpec(hidden_target=target, ood_penalty_weight=10.0, d_rcd_cos=4)


@pytest.fixture
def toy() -> RopeConfig:
    return toy_config()


@pytest.fixture
def toy_spec() -> SurrogateSpec:
    return toy_surrogate_spec()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(1234))


def make_book(seed: int, n_words: int = 4000) -> str:
    """Deterministic filler text long enough for corpus targets."""
    gen = np.random.Generator(np.random.PCG64(seed))
    words = ["lorem", "ipsum", "dolor", "amet", "vento", "orbis", "silva", "petra"]
    return " ".join(words[int(gen.integers(len(words)))] + str(int(gen.integers(100))) for _ in range(n_words))
