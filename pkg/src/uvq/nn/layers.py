"""Fixed layer set with hand-written forward/backward passes.

Every layer keeps the intermediates of its last forward call and consumes them
in ``backward``. Parameters live in ``layer.params`` (trainable) and
``layer.buffers`` (non-trainable, e.g. batchnorm running statistics);
``backward`` fills ``layer.grads`` for trainable parameters only.
"""
import numpy as np

from ..errors import ShapeError, StateError


class Layer:
    kind = "layer"
    compressible = False

    def __init__(self):
        self.params = {}
        self.buffers = {}
        self.grads = {}
        self._cache = None

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def spec(self):
        return {"kind": self.kind}

    def _take_cache(self):
        if self._cache is None:
            raise StateError(f"{self.kind}: backward called without a recorded forward pass")
        cache, self._cache = self._cache, None
        return cache


class Dense(Layer):
    kind = "dense"
    compressible = True

    def __init__(self, in_features, out_features, bias=True, rng=None):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        rng = np.random.default_rng(0) if rng is None else rng
        bound = np.sqrt(6.0 / in_features)
        self.params["weight"] = rng.uniform(-bound, bound, (out_features, in_features)) / np.sqrt(2.0)
        if bias:
            self.params["bias"] = np.zeros(out_features)

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"dense expects (batch, {self.in_features}), got {x.shape}")
        self._cache = x
        y = x @ self.params["weight"].T
        if "bias" in self.params:
            y = y + self.params["bias"]
        return y

    def backward(self, grad):
        x = self._take_cache()
        self.grads["weight"] = grad.T @ x
        if "bias" in self.params:
            self.grads["bias"] = grad.sum(axis=0)
        return grad @ self.params["weight"]

    # canonical 2-D view used for sub-vector decomposition
    def weight_matrix(self):
        return self.params["weight"]

    def set_weight_matrix(self, w):
        self.params["weight"] = np.array(w, dtype=np.float64).reshape(self.out_features, self.in_features)

    def weight_grad_matrix(self):
        return self.grads["weight"]

    def spec(self):
        return {"kind": self.kind, "in": self.in_features, "out": self.out_features,
                "bias": "bias" in self.params}


class Conv2d3x3(Layer):
    """3x3 convolution, stride 1, zero padding 1 (spatial size preserved)."""

    kind = "conv2d-3x3"
    compressible = True

    def __init__(self, in_channels, out_channels, bias=True, rng=None):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        rng = np.random.default_rng(0) if rng is None else rng
        fan_in = in_channels * 9
        bound = np.sqrt(6.0 / fan_in)
        self.params["weight"] = rng.uniform(-bound, bound, (out_channels, in_channels, 3, 3)) / np.sqrt(2.0)
        if bias:
            self.params["bias"] = np.zeros(out_channels)

    @staticmethod
    def _im2col(x):
        n, c, h, w = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
        # (n, c, h, w, 3, 3) -> (n, h, w, c, 3, 3): rows ordered as weight.reshape(out, c*9)
        return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"conv expects (batch, {self.in_channels}, H, W), got {x.shape}")
        n, _, h, w = x.shape
        cols = self._im2col(x)
        y = cols @ self.weight_matrix().T
        if "bias" in self.params:
            y = y + self.params["bias"]
        self._cache = (cols, x.shape)
        return y.reshape(n, h, w, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, grad):
        cols, (n, c, h, w) = self._take_cache()
        g2 = grad.transpose(0, 2, 3, 1).reshape(n * h * w, self.out_channels)
        self.grads["weight"] = (g2.T @ cols).reshape(self.params["weight"].shape)
        if "bias" in self.params:
            self.grads["bias"] = g2.sum(axis=0)
        dcols = (g2 @ self.weight_matrix()).reshape(n, h, w, c, 3, 3)
        dxp = np.zeros((n, c, h + 2, w + 2))
        for ky in range(3):
            for kx in range(3):
                dxp[:, :, ky:ky + h, kx:kx + w] += dcols[:, :, :, :, ky, kx].transpose(0, 3, 1, 2)
        return dxp[:, :, 1:-1, 1:-1]

    def weight_matrix(self):
        return self.params["weight"].reshape(self.out_channels, self.in_channels * 9)

    def set_weight_matrix(self, w):
        self.params["weight"] = np.array(w, dtype=np.float64).reshape(self.out_channels, self.in_channels, 3, 3)

    def weight_grad_matrix(self):
        return self.grads["weight"].reshape(self.out_channels, self.in_channels * 9)

    def spec(self):
        return {"kind": self.kind, "in": self.in_channels, "out": self.out_channels,
                "bias": "bias" in self.params}


class BatchNorm(Layer):
    """Per-channel batch normalization for (N, C) or (N, C, H, W) inputs.

    In training mode batch statistics are used and the running averages are
    updated; otherwise the running statistics are treated as constants.
    """

    kind = "batchnorm"

    def __init__(self, num_features, momentum=0.1, eps=1e-5):
        super().__init__()
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(num_features)
        self.params["beta"] = np.zeros(num_features)
        self.buffers["running_mean"] = np.zeros(num_features)
        self.buffers["running_var"] = np.ones(num_features)

    def _axes(self, x):
        if x.ndim == 2:
            return (0,), (1, -1)
        if x.ndim == 4:
            return (0, 2, 3), (1, -1, 1, 1)
        raise ShapeError(f"batchnorm expects 2-D or 4-D input, got {x.shape}")

    def forward(self, x, training=False):
        axes, bshape = self._axes(x)
        if x.shape[1] != self.num_features:
            raise ShapeError(f"batchnorm expects {self.num_features} channels, got {x.shape[1]}")
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = x.size // self.num_features
            self.buffers["running_mean"] = (1 - self.momentum) * self.buffers["running_mean"] + self.momentum * mean
            unbiased = var * m / max(m - 1, 1)
            self.buffers["running_var"] = (1 - self.momentum) * self.buffers["running_var"] + self.momentum * unbiased
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
        self._cache = (xhat, inv_std, training, axes, bshape)
        return xhat * self.params["gamma"].reshape(bshape) + self.params["beta"].reshape(bshape)

    def backward(self, grad):
        xhat, inv_std, training, axes, bshape = self._take_cache()
        self.grads["gamma"] = (grad * xhat).sum(axis=axes)
        self.grads["beta"] = grad.sum(axis=axes)
        gxhat = grad * self.params["gamma"].reshape(bshape)
        if not training:
            return gxhat * inv_std.reshape(bshape)
        m = grad.size // self.num_features
        s1 = gxhat.sum(axis=axes).reshape(bshape)
        s2 = (gxhat * xhat).sum(axis=axes).reshape(bshape)
        return inv_std.reshape(bshape) / m * (m * gxhat - s1 - xhat * s2)

    def spec(self):
        return {"kind": self.kind, "features": self.num_features,
                "momentum": self.momentum, "eps": self.eps}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False):
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, 0.0)

    def backward(self, grad):
        return np.where(self._take_cache(), grad, 0.0)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, training=False):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._take_cache())


class SoftmaxOutput(Layer):
    kind = "softmax-output"

    def forward(self, x, training=False):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        self._cache = p
        return p

    def backward(self, grad):
        p = self._take_cache()
        return p * (grad - (grad * p).sum(axis=1, keepdims=True))


def layer_from_spec(spec):
    kind = spec["kind"]
    if kind == "dense":
        return Dense(spec["in"], spec["out"], bias=spec.get("bias", True))
    if kind == "conv2d-3x3":
        return Conv2d3x3(spec["in"], spec["out"], bias=spec.get("bias", True))
    if kind == "batchnorm":
        return BatchNorm(spec["features"], spec.get("momentum", 0.1), spec.get("eps", 1e-5))
    simple = {"relu": ReLU, "flatten": Flatten, "softmax-output": SoftmaxOutput}
    if kind not in simple:
        raise ValueError(f"unknown layer kind {kind!r}")
    return simple[kind]()
