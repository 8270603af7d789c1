"""Forward and backward passes for every layer the network uses.

All layers take batched channel-first input: [B, C, L] for the 1-d
extractor layers, [B, C, H, W] for the 2-d stack. A layer run in train
mode keeps a cache for its backward pass; eval-mode forwards are pure and
cache nothing. Backward returns the input gradient and stores parameter
gradients on the layer (`grad_*` attributes, exposed via `named_grads`).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, StateError
from .tensor_ops import FLOAT, col2im_batch, conv_output_length, im2col_batch

VAR_FLOOR = 1e-12
PROB_CLAMP = 1e-12


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(FLOAT)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    z = np.asarray(logits, dtype=FLOAT)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Layer:
    """Base class; stateless layers only override forward/backward."""

    def named_params(self) -> dict[str, np.ndarray]:
        return {}

    def named_grads(self) -> dict[str, np.ndarray]:
        return {}

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called without a train-mode forward")
        return self._cache


class Conv1d(Layer):
    """Standard 1-d convolution (cross-correlation), valid padding."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int = 1,
                 rng: np.random.Generator | None = None):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.weight = np.zeros((out_channels, in_channels, kernel), dtype=FLOAT)
        self.bias = np.zeros(out_channels, dtype=FLOAT)
        if rng is not None:
            self.weight[:] = glorot_uniform(
                rng, self.weight.shape, in_channels * kernel, out_channels * kernel)
        self._cache = None

    def named_params(self):
        return {"weight": self.weight, "bias": self.bias}

    def named_grads(self):
        return {"weight": self.grad_weight, "bias": self.grad_bias}

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeError(f"Conv1d expects [B, {self.in_channels}, L], got {x.shape}")
        cols = im2col_batch(x, (self.kernel,), (self.stride,))
        w_mat = self.weight.reshape(self.out_channels, -1)
        y = np.matmul(w_mat, cols) + self.bias[:, None]
        self._cache = (x.shape, cols) if train else None
        return y

    def backward(self, grad):
        x_shape, cols = self._take_cache()
        w_mat = self.weight.reshape(self.out_channels, -1)
        self.grad_weight = np.einsum("bol,bjl->oj", grad, cols).reshape(self.weight.shape)
        self.grad_bias = grad.sum(axis=(0, 2))
        dcols = np.matmul(w_mat.T, grad)
        return col2im_batch(dcols, x_shape, (self.kernel,), (self.stride,))


class DepthwiseConv1d(Layer):
    """Per-channel 1-d convolution: channel c sees only kernel c."""

    def __init__(self, channels: int, kernel: int, stride: int = 1,
                 rng: np.random.Generator | None = None):
        self.channels = channels
        self.kernel = kernel
        self.stride = stride
        self.kernels = np.zeros((channels, kernel), dtype=FLOAT)
        self.bias = np.zeros(channels, dtype=FLOAT)
        if rng is not None:
            self.kernels[:] = glorot_uniform(rng, self.kernels.shape, kernel, kernel)
        self._cache = None

    def named_params(self):
        return {"kernels": self.kernels, "bias": self.bias}

    def named_grads(self):
        return {"kernels": self.grad_kernels, "bias": self.grad_bias}

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[1] != self.channels:
            raise ShapeError(f"DepthwiseConv1d expects [B, {self.channels}, L], got {x.shape}")
        conv_output_length(x.shape[2], self.kernel, self.stride)
        windows = sliding_window_view(x, self.kernel, axis=2)[:, :, :: self.stride, :]
        y = np.einsum("bclk,ck->bcl", windows, self.kernels) + self.bias[None, :, None]
        self._cache = (x.shape, windows) if train else None
        return y

    def backward(self, grad):
        x_shape, windows = self._take_cache()
        self.grad_kernels = np.einsum("bclk,bcl->ck", windows, grad)
        self.grad_bias = grad.sum(axis=(0, 2))
        dx = np.zeros(x_shape, dtype=FLOAT)
        l_out = grad.shape[2]
        for t in range(self.kernel):
            dx[:, :, t : t + self.stride * l_out : self.stride] += (
                grad * self.kernels[:, t][None, :, None]
            )
        return dx


class PointwiseConv(Layer):
    """1x1 convolution: per-position linear mix across channels."""

    def __init__(self, in_channels: int, out_channels: int,
                 rng: np.random.Generator | None = None):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.weights = np.zeros((out_channels, in_channels), dtype=FLOAT)
        self.bias = np.zeros(out_channels, dtype=FLOAT)
        if rng is not None:
            self.weights[:] = glorot_uniform(rng, self.weights.shape, in_channels, out_channels)
        self._cache = None

    def named_params(self):
        return {"weights": self.weights, "bias": self.bias}

    def named_grads(self):
        return {"weights": self.grad_weights, "bias": self.grad_bias}

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeError(f"PointwiseConv expects [B, {self.in_channels}, L], got {x.shape}")
        y = np.matmul(self.weights, x) + self.bias[:, None]
        self._cache = x if train else None
        return y

    def backward(self, grad):
        x = self._take_cache()
        self.grad_weights = np.einsum("bol,bcl->oc", grad, x)
        self.grad_bias = grad.sum(axis=(0, 2))
        return np.matmul(self.weights.T, grad)


class BatchNorm(Layer):
    """Per-channel batch normalization with running statistics.

    Train mode normalizes by the biased batch mean/variance pooled over all
    non-channel axes (variance floored at 1e-12 before the sqrt); eval mode
    uses the running statistics. `update_running` can be cleared to make
    train-mode forwards side-effect free (gradient checking).
    """

    def __init__(self, channels: int, epsilon: float = 1e-5, momentum: float = 0.9):
        self.channels = channels
        self.epsilon = epsilon
        self.momentum = momentum
        self.gamma = np.ones(channels, dtype=FLOAT)
        self.beta = np.zeros(channels, dtype=FLOAT)
        self.running_mean = np.zeros(channels, dtype=FLOAT)
        self.running_var = np.ones(channels, dtype=FLOAT)
        self.update_running = True
        self._cache = None

    def named_params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def named_grads(self):
        return {"gamma": self.grad_gamma, "beta": self.grad_beta}

    def named_buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def _bshape(self, ndim):
        return (1, self.channels) + (1,) * (ndim - 2)

    def forward(self, x, train=False):
        if x.ndim < 2 or x.shape[1] != self.channels:
            raise ShapeError(f"BatchNorm expects channel axis 1 == {self.channels}, got {x.shape}")
        bshape = self._bshape(x.ndim)
        axes = (0,) + tuple(range(2, x.ndim))
        if train:
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            mask = var > VAR_FLOOR
            var_f = np.maximum(var, VAR_FLOOR)
            inv = 1.0 / np.sqrt(var_f + self.epsilon)
            xm = x - mu.reshape(bshape)
            xhat = xm * inv.reshape(bshape)
            if self.update_running:
                self.running_mean[:] = self.momentum * self.running_mean + (1 - self.momentum) * mu
                self.running_var[:] = self.momentum * self.running_var + (1 - self.momentum) * var
            m = x.size // self.channels
            self._cache = (xm, xhat, inv, mask, m, axes)
        else:
            inv = 1.0 / np.sqrt(np.maximum(self.running_var, VAR_FLOOR) + self.epsilon)
            xhat = (x - self.running_mean.reshape(bshape)) * inv.reshape(bshape)
            self._cache = None
        return self.gamma.reshape(bshape) * xhat + self.beta.reshape(bshape)

    def backward(self, grad):
        xm, xhat, inv, mask, m, axes = self._take_cache()
        bshape = self._bshape(grad.ndim)
        self.grad_gamma = (grad * xhat).sum(axis=axes)
        self.grad_beta = grad.sum(axis=axes)
        dxhat = grad * self.gamma.reshape(bshape)
        # d/dvar through the floor is zero on floored (near-constant) channels
        dvar = (dxhat * xm).sum(axis=axes) * (-0.5) * inv**3 * mask
        dmu = -(dxhat.sum(axis=axes)) * inv + dvar * (-2.0 / m) * xm.sum(axis=axes)
        return (
            dxhat * inv.reshape(bshape)
            + dvar.reshape(bshape) * 2.0 * xm / m
            + dmu.reshape(bshape) / m
        )


class ReLU(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x, train=False):
        self._cache = (x > 0) if train else None
        return np.maximum(x, 0.0)

    def backward(self, grad):
        mask = self._take_cache()
        return grad * mask  # derivative at exactly 0 is 0

    def activation_signature(self):
        return None if self._cache is None else hash(self._cache.tobytes())


class DilatedConv2d(Layer):
    """2-d convolution dilated along the height (time) axis only, stride 1."""

    def __init__(self, in_channels: int, out_channels: int, kernel_h: int, kernel_w: int,
                 dilation: int, rng: np.random.Generator | None = None):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_h = kernel_h
        self.kernel_w = kernel_w
        self.dilation = dilation
        self.weight = np.zeros((out_channels, in_channels, kernel_h, kernel_w), dtype=FLOAT)
        self.bias = np.zeros(out_channels, dtype=FLOAT)
        if rng is not None:
            taps = kernel_h * kernel_w
            self.weight[:] = glorot_uniform(
                rng, self.weight.shape, in_channels * taps, out_channels * taps)
        self._cache = None

    def named_params(self):
        return {"weight": self.weight, "bias": self.bias}

    def named_grads(self):
        return {"weight": self.grad_weight, "bias": self.grad_bias}

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"DilatedConv2d expects [B, {self.in_channels}, H, W], got {x.shape}")
        h_out = conv_output_length(x.shape[2], self.kernel_h, 1, self.dilation)
        w_out = conv_output_length(x.shape[3], self.kernel_w, 1, 1)
        cols = im2col_batch(x, (self.kernel_h, self.kernel_w), (1, 1), (self.dilation, 1))
        w_mat = self.weight.reshape(self.out_channels, -1)
        y = (np.matmul(w_mat, cols) + self.bias[:, None]).reshape(
            x.shape[0], self.out_channels, h_out, w_out)
        self._cache = (x.shape, cols) if train else None
        return y

    def backward(self, grad):
        x_shape, cols = self._take_cache()
        b = grad.shape[0]
        g_mat = grad.reshape(b, self.out_channels, -1)
        w_mat = self.weight.reshape(self.out_channels, -1)
        self.grad_weight = np.einsum("bol,bjl->oj", g_mat, cols).reshape(self.weight.shape)
        self.grad_bias = g_mat.sum(axis=(0, 2))
        dcols = np.matmul(w_mat.T, g_mat)
        return col2im_batch(
            dcols, x_shape, (self.kernel_h, self.kernel_w), (1, 1), (self.dilation, 1))


class Pool2d(Layer):
    """2x2 max or average pooling with stride 2; trailing odd row/column dropped."""

    def __init__(self, kind: str):
        if kind not in ("max", "avg"):
            raise ValueError(f"pool kind must be 'max' or 'avg', got {kind!r}")
        self.kind = kind
        self._cache = None

    def forward(self, x, train=False):
        if x.ndim != 4:
            raise ShapeError(f"Pool2d expects [B, C, H, W], got {x.shape}")
        b, c, h, w = x.shape
        if h < 2 or w < 2:
            raise ShapeError(f"Pool2d needs H >= 2 and W >= 2, got {h}x{w}")
        h2, w2 = h // 2, w // 2
        blocks = (
            x[:, :, : 2 * h2, : 2 * w2]
            .reshape(b, c, h2, 2, w2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, h2, w2, 4)
        )
        if self.kind == "max":
            idx = blocks.argmax(axis=-1)  # first max wins on ties (row-major block scan)
            y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
            self._cache = (x.shape, idx) if train else None
        else:
            y = blocks.mean(axis=-1)
            self._cache = x.shape if train else None
        return y

    def backward(self, grad):
        cache = self._take_cache()
        if self.kind == "max":
            x_shape, idx = cache
        else:
            x_shape = cache
        b, c, h, w = x_shape
        h2, w2 = h // 2, w // 2
        dblocks = np.zeros((b, c, h2, w2, 4), dtype=FLOAT)
        if self.kind == "max":
            np.put_along_axis(dblocks, idx[..., None], grad[..., None], axis=-1)
        else:
            dblocks += (grad / 4.0)[..., None]
        dx = np.zeros(x_shape, dtype=FLOAT)
        dx[:, :, : 2 * h2, : 2 * w2] = (
            dblocks.reshape(b, c, h2, w2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, 2 * h2, 2 * w2)
        )
        return dx

    def activation_signature(self):
        if self.kind != "max" or self._cache is None:
            return None
        return hash(self._cache[1].tobytes())


class Flatten(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x, train=False):
        self._cache = x.shape if train else None
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._take_cache())


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = np.zeros((out_features, in_features), dtype=FLOAT)
        self.bias = np.zeros(out_features, dtype=FLOAT)
        if rng is not None:
            self.weight[:] = glorot_uniform(rng, self.weight.shape, in_features, out_features)
        self._cache = None

    def named_params(self):
        return {"weight": self.weight, "bias": self.bias}

    def named_grads(self):
        return {"weight": self.grad_weight, "bias": self.grad_bias}

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"Linear expects [B, {self.in_features}], got {x.shape}")
        self._cache = x if train else None
        return x @ self.weight.T + self.bias

    def backward(self, grad):
        x = self._take_cache()
        self.grad_weight = grad.T @ x
        self.grad_bias = grad.sum(axis=0)
        return grad @ self.weight


class SoftmaxCrossEntropy:
    """Fused softmax + cross-entropy head.

    `forward` turns logits into probabilities; `loss` evaluates the clamped
    mean cross-entropy against integer labels; `backward` returns the exact
    logit gradient (probs - onehot) / B of the mean loss.
    """

    def __init__(self):
        self._cache = None

    def forward(self, logits: np.ndarray, train: bool = False) -> np.ndarray:
        probs = softmax(logits)
        self._cache = probs if train else None
        return probs

    def loss(self, probs: np.ndarray, labels: np.ndarray) -> float:
        labels = np.asarray(labels)
        p_true = probs[np.arange(probs.shape[0]), labels]
        self._labels = labels
        return float(-np.log(np.maximum(p_true, PROB_CLAMP)).mean())

    def backward(self) -> np.ndarray:
        if self._cache is None:
            raise StateError("SoftmaxCrossEntropy.backward called without a train-mode forward")
        probs = self._cache
        b = probs.shape[0]
        d = probs.copy()
        d[np.arange(b), self._labels] -= 1.0
        return d / b


class Sequential(Layer):
    """Ordered layer stack; parameter names are '<index>.<param>'."""

    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def named_params(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.named_params().items():
                out[f"{i}.{name}"] = arr
        return out

    def named_grads(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.named_grads().items():
                out[f"{i}.{name}"] = arr
        return out

    def named_buffers(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.named_buffers().items():
                out[f"{i}.{name}"] = arr
        return out

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def activation_signature(self):
        """Hash of all cached ReLU masks and max-pool argmax indices.

        Two forwards with equal signatures took the same linear region of
        every piecewise-linear unit; a differing signature between two
        nearby points means a kink lies between them.
        """
        sigs = tuple(
            layer.activation_signature()
            for layer in self.layers
            if hasattr(layer, "activation_signature")
        )
        return hash(sigs)
