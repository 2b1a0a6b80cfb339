"""Dense tensor substrate: layers, reverse-mode gradients, toy nets, datasets."""
from .data import Dataset
from .layers import BatchNorm, Conv2d3x3, Dense, Flatten, ReLU, SoftmaxOutput
from .net import TinyNet, backward, forward
from .train import evaluate, train_float
from .zoo import NET_NAMES, build_net, dataset_for

__all__ = [
    "BatchNorm", "Conv2d3x3", "Dataset", "Dense", "Flatten", "NET_NAMES", "ReLU",
    "SoftmaxOutput", "TinyNet", "backward", "build_net", "dataset_for", "evaluate",
    "forward", "train_float",
]
