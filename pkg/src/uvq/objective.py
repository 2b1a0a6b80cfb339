"""Loss terms of the assignment-learning objective and their gradients.

The quantized network runs on soft-reconstructed weights. Gradients reach the
candidate logits through the weight gradient, the linear weighted-average map
(its Jacobian w.r.t. a ratio is the candidate codeword) and the softmax.
"""
from dataclasses import dataclass

import numpy as np

from .assignment import ratios, reconstruct_hard, reconstruct_soft
from .errors import ContractError, StateError
from .nn.optim import Adamax


@dataclass(frozen=True)
class LossBreakdown:
    task: float
    kd: float
    reg: float
    total: float

    def as_dict(self):
        return {"task": self.task, "kd": self.kd, "reg": self.reg, "total": self.total}


def _per_sample_sq(diff):
    return np.sum(diff.reshape(len(diff), -1) ** 2, axis=1)


def task_loss(output, target):
    """Mean squared error between output and target (mean over samples and elements)."""
    output = np.asarray(output, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if output.shape != target.shape:
        raise ValueError(f"output {output.shape} and target {target.shape} differ")
    return float(np.mean((output - target) ** 2))


def task_loss_grad(output, target):
    return 2.0 * (output - target) / output.size


def kd_loss(blocks_fp, blocks_q):
    """Sum over blocks of the batch-mean squared feature distance."""
    if set(blocks_fp) != set(blocks_q):
        raise ContractError(f"block mismatch: {sorted(blocks_fp)} vs {sorted(blocks_q)}")
    total = 0.0
    for name in blocks_fp:
        total += float(np.mean(_per_sample_sq(blocks_q[name] - blocks_fp[name])))
    return total


def kd_loss_grads(blocks_fp, blocks_q):
    return {b: 2.0 * (blocks_q[b] - blocks_fp[b]) / len(blocks_q[b]) for b in blocks_q}


def reg_loss(assignments):
    """n * sum r(1-r) over unfrozen sub-vectors / sub-vector count, summed per layer."""
    total = 0.0
    for la in _iter(assignments):
        r = ratios(la)[la.unfrozen]
        total += la.n * float(np.sum(r * (1.0 - r))) / la.num_subvectors
    return total


def reg_loss_ratio_grad(la, r):
    g = la.n * (1.0 - 2.0 * r) / la.num_subvectors
    g[~la.unfrozen] = 0.0
    return g


def total_loss(task, kd, reg, weights=(1.0, 1.0, 1.0)):
    wt, wk, wr = weights
    return LossBreakdown(task, kd, reg, wt * task + wk * kd + wr * reg)


def _iter(assignments):
    return assignments.values() if isinstance(assignments, dict) else assignments


class QuantizedNet:
    """A network whose compressible weights are driven by candidate assignments."""

    def __init__(self, net, assignments):
        self.net = net
        self.assignments = {la.layer: la for la in _iter(assignments)}
        self._loaded = None

    def load_soft(self):
        self._loaded = {}
        for layer, la in self.assignments.items():
            r = ratios(la)
            self._loaded[layer] = r
            self.net.set_weight_matrix(layer, reconstruct_soft(la, r))

    def load_hard(self):
        self._loaded = None
        for layer, la in self.assignments.items():
            self.net.set_weight_matrix(layer, reconstruct_hard(la))

    def forward(self, x, taps=()):
        if self._loaded is None:
            raise StateError("soft weights are not loaded")
        return self.net.forward(x, taps=taps)

    def aux_parameter_names(self, include_uncompressed_weights=False):
        """Trainable parameters not represented by assignments."""
        names = []
        for key in self.net.parameters():
            layer, pname = key.split(".", 1)
            if pname == "weight" and (int(layer) in self.assignments or not include_uncompressed_weights):
                continue
            names.append(key)
        return names


def backward_to_logits(qnet, loss_grad, tap_grads=None, reg_weight=1.0):
    """Gradients of the combined loss w.r.t. every layer's logits and the net's parameters.

    Returns ``(logit_grads, param_grads)``; frozen sub-vectors get exactly zero.
    """
    if qnet._loaded is None:
        raise StateError("no soft forward pass recorded")
    for layer, la in qnet.assignments.items():
        if not np.array_equal(ratios(la), qnet._loaded[layer]):
            raise StateError(f"layer {layer}: assignments changed since the forward pass")
    param_grads = qnet.net.backward(loss_grad, tap_grads)
    logit_grads = {}
    for layer, la in qnet.assignments.items():
        r = qnet._loaded[layer]
        gw = qnet.net.weight_grad_matrix(layer)
        gpad = np.zeros((la.rows, la.grid_cols * la.d))
        gpad[:, :la.cols] = gw  # pad positions carry no gradient
        gsv = gpad.reshape(-1, la.d)
        gr = np.einsum("sd,snd->sn", gsv, la.candidate_codewords())
        if reg_weight:
            gr = gr + reg_weight * reg_loss_ratio_grad(la, r)
        gz = r * (gr - np.sum(r * gr, axis=1, keepdims=True))
        gz[~la.unfrozen] = 0.0
        logit_grads[layer] = gz
        param_grads.pop(f"{layer}.weight", None)
    return logit_grads, param_grads


def make_ratio_optimizer(lr=0.3):
    return Adamax(lr)


def step(opt, logits, grads):
    """One Adamax update of a dict of logit arrays; returns the new arrays."""
    if set(logits) != set(grads):
        raise ValueError("logits and gradients cover different layers")
    for key in logits:
        if np.shape(logits[key]) != np.shape(grads[key]):
            raise ValueError(f"{key}: shape mismatch {np.shape(logits[key])} vs {np.shape(grads[key])}")
    return opt.update(logits, grads)
