import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from milearn.networks import ModelConfig, PrimaryConfig, init_model  # noqa: E402
from milearn.pyramid import compute_geometry  # noqa: E402
from milearn.textures import texture  # noqa: E402
from milearn.trainer import Dataset, TrainConfig, train_all  # noqa: E402


def tiny_geometry():
    return compute_geometry(8, 0.6, 16, 16)


def tiny_model_config(num_scales=3, **kw):
    base = dict(num_scales=num_scales, primary=PrimaryConfig(blocks=3, channels=4), embedding_dim=8,
                encoder_channels=(4, 8), encoder_input_size=16)
    base.update(kw)
    return ModelConfig(**base)


def tiny_images(n=2, seed0=0):
    return [texture(seed0 + s, 16, 16) for s in range(n)]


def train_tiny(n_images=2, iterations=6, seed=0, **model_kw):
    geom = tiny_geometry()
    cfg = tiny_model_config(geom.k, **model_kw)
    model = init_model(cfg, np.random.default_rng(seed))
    data = Dataset(tiny_images(n_images), geom, cfg.encoder_input_size)
    tcfg = TrainConfig(iterations_per_scale=iterations, batch_size=n_images, seed=seed)
    return train_all(model, data, tcfg)


@pytest.fixture(scope="session")
def tiny_ckpt():
    return train_tiny()


def pytest_terminal_summary(terminalreporter):
    from records import MEASURED
    if MEASURED:
        terminalreporter.section("acceptance measurements")
        for key, value in MEASURED.items():
            terminalreporter.write_line(f"{key}: {value}")
