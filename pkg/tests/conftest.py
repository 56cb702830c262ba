import numpy as np
import pytest

from decaylab import kernels
from decaylab._rng import Rng, derive
from decaylab.gate import GateWindow
from decaylab.synthvid import (
    Occlusion,
    OutOfView,
    SequenceConfig,
    generate_sequence,
)

kernels.tune_allocator()


@pytest.fixture(scope="session")
def static_sequence():
    cfg = SequenceConfig(
        width=96, height=96, length=30, seed=101, target_size=16,
        velocity=0.0, jitter_sd=0.0, start_center=(40.3, 50.7),
    )
    return generate_sequence(cfg)


@pytest.fixture(scope="session")
def moving_sequence():
    cfg = SequenceConfig(
        width=96, height=96, length=40, seed=102, target_size=16,
        velocity=0.9, jitter_sd=0.25,
    )
    return generate_sequence(cfg)


@pytest.fixture(scope="session")
def ov_sequence():
    cfg = SequenceConfig(
        width=160, height=160, length=45, seed=103, target_size=14,
        velocity=1.0, jitter_sd=0.2, events=(OutOfView(15, 25),),
    )
    return generate_sequence(cfg)


@pytest.fixture(scope="session")
def occ_sequence():
    cfg = SequenceConfig(
        width=96, height=96, length=40, seed=104, target_size=16,
        velocity=0.8, jitter_sd=0.2, events=(Occlusion(18, 26),),
    )
    return generate_sequence(cfg)


def make_toy_windows(n: int, history: int, seed: int) -> list[GateWindow]:
    """Linearly separable gate data: sharp-peak maps vs near-flat maps."""
    rng = Rng(seed)
    out = []
    yy, xx = np.mgrid[0:32, 0:32]
    for i in range(n):
        label = i % 2
        maps = []
        for _ in range(history):
            base = 0.05 * rng.uniform_array(32 * 32).reshape(32, 32)
            if label == 1:
                r = 4 + rng.randint(24)
                c = 4 + rng.randint(24)
                base = base + 0.9 * np.exp(-((yy - r) ** 2 + (xx - c) ** 2) / 8.0)
            maps.append(base)
        out.append(GateWindow(np.stack(maps), label))
    return out


@pytest.fixture(scope="session")
def toy_windows():
    return make_toy_windows(64, 4, derive(7, "toy-set"))


@pytest.fixture(scope="session")
def toy_gate_training(toy_windows):
    """The 500-step toy training run, shared by unit and acceptance tests."""
    from decaylab.gate import init_classifier, train_gate

    clf = init_classifier(derive(0, "toy-init"))
    clf, losses = train_gate(clf, toy_windows, steps=500, batch_size=16,
                             lr=0.01, momentum=0.9, seed=7)
    return clf, losses
