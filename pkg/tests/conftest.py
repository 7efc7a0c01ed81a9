import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from claprobe.netcore import (  # noqa: E402
    IDENTITY,
    Layer,
    NetworkSpec,
    dense_layer,
    leaky_relu,
    mlp,
    relu,
)


def random_mlp(seed, widths=(3, 8, 8, 4), slope=0.2, output=IDENTITY, role="generator"):
    rng = np.random.default_rng(seed)
    act = leaky_relu(slope) if slope > 0 else relu()
    return mlp(list(widths), act, output, rng, role)


def random_gan(seed, latent=3, hidden=(8, 8), data=4, dhidden=(8,), slope=0.2):
    rng = np.random.default_rng(seed)
    act = leaky_relu(slope) if slope > 0 else relu()
    gen = mlp([latent, *hidden, data], act, IDENTITY, rng, "generator")
    disc = mlp([data, *dhidden, 1], act, IDENTITY, rng, "discriminator")
    return gen, disc


def random_conv_net(seed, slope=0.2):
    """dense stem -> 2x4x4 featuremap -> conv -> upsample -> conv, all small."""
    rng = np.random.default_rng(seed)
    act = leaky_relu(slope)
    stem = dense_layer(rng.normal(0, 0.7, (32, 3)), rng.normal(0, 0.1, 32), act, out_shape=(2, 4, 4))
    c1 = Layer("conv2d", (2, 4, 4), rng.normal(0, 0.5, (3, 2, 3, 3)), rng.normal(0, 0.1, 3), act,
               stride=1, padding=1)
    up = Layer("upsample_nearest", (3, 4, 4), factor=2)
    c2 = Layer("conv2d", (3, 8, 8), rng.normal(0, 0.5, (2, 3, 3, 3)), rng.normal(0, 0.1, 2), IDENTITY,
               stride=2, padding=1)
    return NetworkSpec([stem, c1, up, c2], (3,))


@pytest.fixture
def small_net():
    return random_mlp(0)


@pytest.fixture
def conv_net():
    return random_conv_net(0)


PLANTED_CFG = dict(latent_dim=2, data_dim=8, gen_hidden=(16, 16, 16), disc_hidden=(16,), seed=0)


def planted_fixture(amplitude=4.0, radius=1.0, seed=0):
    from claprobe.gymkit import TrainConfig, plant_artifact_generator

    cfg = TrainConfig(**{**PLANTED_CFG, "seed": seed})
    return plant_artifact_generator(cfg, [0.5, 0.5], radius, amplitude=amplitude)


@pytest.fixture
def planted_files(tmp_path):
    """Planted generator, its clean reference and a matching discriminator on disk."""
    from claprobe.gymkit import TrainConfig, build_gan
    from claprobe.netcore import save_model_file

    fx = planted_fixture()
    _, disc = build_gan(TrainConfig(**PLANTED_CFG))
    paths = {name: tmp_path / f"{name}.bin" for name in ("planted", "clean", "disc")}
    save_model_file(fx.planted, paths["planted"])
    save_model_file(fx.clean, paths["clean"])
    save_model_file(disc, paths["disc"])
    return fx, paths


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
