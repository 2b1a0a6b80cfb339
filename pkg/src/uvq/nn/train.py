"""Float training of the toy zoo and evaluation helpers."""
import numpy as np

from ..errors import TrainingError
from .optim import Adam


def output_loss(net, out, y):
    """Loss and its gradient w.r.t. the network output used for float training.

    Classification nets end in a softmax, so cross-entropy is used; regression
    nets use the per-sample squared error averaged over the batch.
    """
    m = len(out)
    if net.task == "classification":
        p = np.clip(out, 1e-300, None)
        loss = -np.sum(y * np.log(p)) / m
        return loss, -y / p / m
    diff = out - y
    return np.sum(diff * diff) / m, 2.0 * diff / m


def evaluate(net, x, y):
    """Accuracy for classifiers, R^2 for regressors."""
    out = net.predict(x)
    if net.task == "classification":
        return float(np.mean(out.argmax(axis=1) == y.argmax(axis=1)))
    ss_res = np.sum((out - y) ** 2)
    ss_tot = np.sum((y - y.mean(axis=0)) ** 2)
    return float(1.0 - ss_res / ss_tot)


def train_float(net, ds, epochs, seed=0, lr=1e-2, batch=32):
    """Train a copy of ``net`` on ``ds['train']``; return it with its test metric."""
    net = net.copy()
    x, y = ds.split("train")
    rng = np.random.default_rng(seed)
    opt = Adam(lr)
    for epoch in range(epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), batch):
            idx = order[start:start + batch]
            out, _ = net.forward(x[idx], training=True)
            loss, g = output_loss(net, out, y[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"{net.name}: non-finite loss at epoch {epoch}", epoch=epoch)
            grads = net.backward(g)
            net.load_state(opt.update(net.parameters(), grads))
    # weights stored at fp32 precision, so a saved bundle reloads bit-identically
    net.load_state({k: v.astype(np.float32).astype(np.float64) for k, v in net.state().items()})
    return net, evaluate(net, *ds.split("test"))
