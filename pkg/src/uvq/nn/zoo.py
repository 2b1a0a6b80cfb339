"""The four toy networks and their datasets."""
import numpy as np

from . import data
from .layers import BatchNorm, Conv2d3x3, Dense, Flatten, ReLU, SoftmaxOutput
from .net import TinyNet

NET_NAMES = ("mlp-2x32", "mlp-3x64", "cnn-small", "ae-small")


def mlp_2x32(seed=0):
    rng = np.random.default_rng(seed)
    layers = [Dense(2, 32, rng=rng), ReLU(), Dense(32, 32, rng=rng), ReLU(),
              Dense(32, 2, rng=rng), SoftmaxOutput()]
    blocks = [("stage1", (0, 2)), ("stage2", (2, 4)), ("head", (4, 5))]
    return TinyNet("mlp-2x32", layers, blocks, (2,))


def mlp_3x64(seed=0):
    rng = np.random.default_rng(seed)
    layers = []
    blocks = []
    width_in = 2
    for s in range(3):
        start = len(layers)
        layers += [Dense(width_in, 64, rng=rng), BatchNorm(64), ReLU()]
        blocks.append((f"stage{s + 1}", (start, len(layers))))
        width_in = 64
    layers += [Dense(64, 3, rng=rng), SoftmaxOutput()]
    blocks.append(("head", (9, 10)))
    return TinyNet("mlp-3x64", layers, blocks, (2,))


def cnn_small(seed=0):
    rng = np.random.default_rng(seed)
    layers = [Conv2d3x3(1, 8, rng=rng), BatchNorm(8), ReLU(),
              Conv2d3x3(8, 16, rng=rng), BatchNorm(16), ReLU(),
              Flatten(), Dense(16 * 64, 4, rng=rng), SoftmaxOutput()]
    blocks = [("conv1", (0, 3)), ("conv2", (3, 6)), ("head", (6, 8))]
    return TinyNet("cnn-small", layers, blocks, (1, 8, 8))


def ae_small(seed=0):
    rng = np.random.default_rng(seed)
    layers = [Dense(16, 32, rng=rng), ReLU(), Dense(32, 8, rng=rng), ReLU(),
              Dense(8, 32, rng=rng), ReLU(), Dense(32, 16, rng=rng)]
    blocks = [("enc1", (0, 2)), ("enc2", (2, 4)), ("dec1", (4, 6)), ("head", (6, 7))]
    return TinyNet("ae-small", layers, blocks, (16,), task="regression")


_BUILDERS = {"mlp-2x32": mlp_2x32, "mlp-3x64": mlp_3x64, "cnn-small": cnn_small, "ae-small": ae_small}
_DATASETS = {"mlp-2x32": data.two_clusters, "mlp-3x64": data.spirals,
             "cnn-small": data.patterns, "ae-small": data.signals}
DEFAULT_EPOCHS = {"mlp-2x32": 50, "mlp-3x64": 60, "cnn-small": 12, "ae-small": 60}


def build_net(name, seed=0):
    try:
        return _BUILDERS[name](seed)
    except KeyError:
        raise KeyError(f"unknown network {name!r}; choose from {NET_NAMES}") from None


def dataset_for(name, seed=0):
    return _DATASETS[name](seed=seed)
