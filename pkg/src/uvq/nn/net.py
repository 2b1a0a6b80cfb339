"""TinyNet: an ordered layer list with named blocks used as distillation taps."""
import copy

import numpy as np

from ..errors import ShapeError, StateError
from .layers import layer_from_spec


class TinyNet:
    """A small sequential network.

    ``blocks`` is an ordered list of ``(name, (start, stop))`` half-open layer
    ranges. The feature of a block is the output of its last layer. Every
    compressible layer belongs to exactly one block.
    """

    def __init__(self, name, layers, blocks, input_shape, task="classification"):
        self.name = name
        self.layers = list(layers)
        self.blocks = [(b, (int(s), int(e))) for b, (s, e) in blocks]
        self.input_shape = tuple(input_shape)
        self.task = task
        self._recorded = False
        self._check_blocks()

    def _check_blocks(self):
        covered = []
        prev = 0
        for name, (s, e) in self.blocks:
            if s < prev or e <= s or e > len(self.layers):
                raise ValueError(f"block {name!r} range {(s, e)} is not ordered and disjoint")
            covered.extend(range(s, e))
            prev = e
        missing = [i for i in self.compressible_layers() if i not in covered]
        if missing:
            raise ValueError(f"compressible layers {missing} are not covered by any block")

    # structure -------------------------------------------------------------
    def compressible_layers(self):
        return [i for i, layer in enumerate(self.layers) if layer.compressible]

    def block_names(self):
        return [b for b, _ in self.blocks]

    def parameters(self):
        """Trainable parameters keyed ``"<layer>.<name>"`` (live references)."""
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    def buffers(self):
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.buffers.items()}

    def state(self):
        out = self.parameters()
        out.update(self.buffers())
        return out

    def load_state(self, tensors):
        for key, value in tensors.items():
            idx, pname = key.split(".", 1)
            layer = self.layers[int(idx)]
            target = layer.params if pname in layer.params else layer.buffers
            if pname not in target:
                raise KeyError(key)
            if np.shape(value) != target[pname].shape:
                raise ShapeError(f"{key}: expected {target[pname].shape}, got {np.shape(value)}")
            target[pname] = np.array(value, dtype=np.float64)

    def copy(self):
        clone = copy.deepcopy(self)
        clone.clear()
        return clone

    def clear(self):
        for layer in self.layers:
            layer._cache = None
            layer.grads = {}
        self._recorded = False

    def spec(self):
        return {
            "name": self.name,
            "task": self.task,
            "input_shape": list(self.input_shape),
            "layers": [layer.spec() for layer in self.layers],
            "blocks": [[b, [s, e]] for b, (s, e) in self.blocks],
        }

    @classmethod
    def from_spec(cls, spec):
        layers = [layer_from_spec(s) for s in spec["layers"]]
        blocks = [(b, tuple(r)) for b, r in spec["blocks"]]
        return cls(spec["name"], layers, blocks, spec["input_shape"], spec.get("task", "classification"))

    # computation -----------------------------------------------------------
    def forward(self, x, taps=(), training=False):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"{self.name}: expected input (batch, {self.input_shape}), got {x.shape}")
        taps = set(taps)
        unknown = taps - set(self.block_names())
        if unknown:
            raise KeyError(f"unknown blocks {sorted(unknown)}")
        ends = {e - 1: b for b, (_, e) in self.blocks if b in taps}
        feats = {}
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, training=training)
            if i in ends:
                feats[ends[i]] = x
        self._recorded = True
        return x, feats

    def forward_range(self, x, start, stop, training=False):
        for layer in self.layers[start:stop]:
            x = layer.forward(x, training=training)
        return x

    def predict(self, x, batch=512):
        outs = [self.forward(x[i:i + batch])[0] for i in range(0, len(x), batch)]
        self.clear()
        return np.concatenate(outs, axis=0)

    def backward(self, loss_grad, tap_grads=None):
        """Reverse pass; ``tap_grads`` injects extra gradients at block outputs.

        Returns gradients of every trainable parameter keyed like ``parameters()``.
        """
        if not self._recorded:
            raise StateError(f"{self.name}: backward without a forward pass")
        tap_grads = tap_grads or {}
        inject = {e - 1: tap_grads[b] for b, (_, e) in self.blocks if b in tap_grads}
        g = np.asarray(loss_grad, dtype=np.float64)
        for i in range(len(self.layers) - 1, -1, -1):
            if i in inject:
                g = g + inject[i]
            g = self.layers[i].backward(g)
        self._recorded = False
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.grads.items()}

    # canonical 2-D weights of compressible layers
    def weight_matrix(self, idx):
        return self.layers[idx].weight_matrix()

    def set_weight_matrix(self, idx, w):
        self.layers[idx].set_weight_matrix(w)

    def weight_grad_matrix(self, idx):
        return self.layers[idx].weight_grad_matrix()


def forward(net, x, taps=()):
    return net.forward(x, taps=taps)


def backward(net, loss_grad, tap_grads=None):
    return net.backward(loss_grad, tap_grads)
