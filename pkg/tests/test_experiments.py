from metadepth.experiments import DESK_META, equal_compute_steps
from metadepth.metainit import MetaConfig
from metadepth.trainer import SupervisedConfig


def test_equal_compute_desk_numbers():
    # 256 pairs, K=50 -> T=5; 5*5*4*50 = 5000 images = 625 batches of 8; plus 15*32 stage-2 steps
    assert equal_compute_steps(DESK_META, 256, SupervisedConfig()) == 480 + 625


def test_equal_compute_zero_epochs():
    assert equal_compute_steps(MetaConfig(N=0), 100, SupervisedConfig(epochs=2, batch_size=10)) == 20


def test_equal_compute_respects_explicit_steps():
    assert equal_compute_steps(MetaConfig(N=1, L=1, K=10), 20, SupervisedConfig(steps=3, batch_size=5)) == 3 + 4
