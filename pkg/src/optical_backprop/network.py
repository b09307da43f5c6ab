"""Layer graph, forward/backward passes, losses, checkpoints.

Backpropagation is hand-written per layer, mirroring the optical signal path:
the backward pass through every weighted layer is the adjoint of its forward
map (the same interconnect traversed in reverse), and each activation layer
multiplies the error by its backward response -- exact derivative, probe
transmission, or tabulated function, per the layer's NonlinearitySpec.

Networks carry no biases and no output nonlinearity: the loss acts directly
on the final pre-activations.
"""

import base64
import json

import numpy as np

from . import nonlinearity, tensor_ops
from .nonlinearity import NonlinearitySpec, ValidationError
from .tensor_ops import DimensionError

LOSS_KINDS = ("mse", "cce")


class StateError(RuntimeError):
    """backward was called without a preceding forward."""


class Dense:
    """Fully-connected layer z = a . W^T with W of shape (n_out, n_in)."""

    def __init__(self, n_in, n_out, dtype=np.float32):
        self.n_in = n_in
        self.n_out = n_out
        self.weights = np.zeros((n_out, n_in), dtype=dtype)
        self._a_prev = None

    def forward(self, a):
        if a.ndim != 2 or a.shape[1] != self.n_in:
            raise DimensionError(f"dense expects (batch, {self.n_in}), got {a.shape}")
        self._a_prev = a
        return tensor_ops.matmul(a, self.weights.T)

    def backward(self, delta):
        if self._a_prev is None:
            raise StateError("dense backward before forward")
        grad = tensor_ops.matmul(delta.T, self._a_prev) / delta.shape[0]
        rho = tensor_ops.matmul(delta, self.weights)
        return grad, rho

    def to_dict(self):
        return {"kind": "dense", "n_in": self.n_in, "n_out": self.n_out,
                "weights": _encode_weights(self.weights)}


class Conv2d:
    """Valid 5x5 cross-correlation layer, kernels of shape (C_out, C_in, 5, 5)."""

    def __init__(self, c_in, c_out, kh=5, kw=5, dtype=np.float32):
        self.c_in = c_in
        self.c_out = c_out
        self.weights = np.zeros((c_out, c_in, kh, kw), dtype=dtype)
        self._col = None
        self._in_hw = None

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise DimensionError(f"conv expects (batch, {self.c_in}, H, W), got {x.shape}")
        out, self._col = tensor_ops.conv2d_forward_cached(x, self.weights)
        self._in_hw = x.shape[2:]
        return out

    def backward(self, delta):
        if self._col is None:
            raise StateError("conv backward before forward")
        grad, rho = tensor_ops.conv2d_backward(delta, self._col, self.weights, self._in_hw)
        return grad / delta.shape[0], rho

    def to_dict(self):
        c_out, c_in, kh, kw = self.weights.shape
        return {"kind": "conv", "c_in": c_in, "c_out": c_out, "kh": kh, "kw": kw,
                "weights": _encode_weights(self.weights)}


class Pool2d:
    def __init__(self, mode):
        if mode not in ("mean", "max"):
            raise ValidationError(f"pool mode must be 'mean' or 'max', got {mode!r}")
        self.mode = mode
        self._cache = None

    def forward(self, x):
        out, self._cache = tensor_ops.pool2d(x, self.mode)
        return out

    def backward(self, delta):
        if self._cache is None:
            raise StateError("pool backward before forward")
        return None, tensor_ops.pool2d_backward(delta, self._cache, self.mode)

    def to_dict(self):
        return {"kind": "pool", "mode": self.mode}


class Flatten:
    def __init__(self):
        self._in_shape = None

    def forward(self, x):
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, delta):
        if self._in_shape is None:
            raise StateError("flatten backward before forward")
        return None, delta.reshape(self._in_shape)

    def to_dict(self):
        return {"kind": "flatten"}


class Activation:
    """Elementwise nonlinearity; caches pre-activations for the backward response."""

    def __init__(self, spec):
        self.spec = spec
        self._z = None

    def forward(self, z):
        self._z = z
        return nonlinearity.forward(self.spec, z)

    def backward(self, rho):
        if self._z is None:
            raise StateError("activation backward before forward")
        response = np.asarray(nonlinearity.backward_response(self.spec, self._z), dtype=rho.dtype)
        return None, rho * response

    def to_dict(self):
        return {"kind": "activation", "spec": self.spec.to_dict()}


class Network:
    """Ordered layer stack ending in the output pre-activations z_L."""

    def __init__(self, layers, dtype=np.float32):
        self.layers = list(layers)
        self.dtype = np.dtype(dtype)
        self._forward_done = False

    def weighted_layers(self):
        return [l for l in self.layers if hasattr(l, "weights")]

    @property
    def output_size(self):
        for layer in reversed(self.layers):
            if isinstance(layer, Dense):
                return layer.n_out
        raise ValidationError("network has no dense output layer")

    def forward(self, x):
        """Run the stack on a batch (or a single sample), caching intermediates."""
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == self._single_ndim()
        if single:
            x = x[None]
        for layer in self.layers:
            x = layer.forward(x)
        self._forward_done = True
        return x[0] if single else x

    def backward(self, delta_l):
        """Backpropagate output-layer errors; returns per-weighted-layer gradients.

        Gradients are averaged over the batch, returned in forward layer order.
        """
        if not self._forward_done:
            raise StateError("backward before forward")
        delta = np.asarray(delta_l, dtype=self.dtype)
        if delta.ndim == 1:
            delta = delta[None]
        grads = []
        for layer in reversed(self.layers):
            grad, delta = layer.backward(delta)
            if grad is not None:
                grads.append(grad)
        return grads[::-1]

    def predict(self, x):
        """Class index = argmax over output pre-activations (lowest index wins ties)."""
        z = self.forward(x)
        return int(np.argmax(z)) if z.ndim == 1 else np.argmax(z, axis=1)

    def _single_ndim(self):
        first = self.layers[0]
        if isinstance(first, (Conv2d, Pool2d)):
            return 3
        return 1

    def to_dict(self):
        return {"layers": [l.to_dict() for l in self.layers], "dtype": self.dtype.name}


def output_error(z_l, target, loss):
    """Loss value and output-layer error for a batch of final pre-activations.

    mse: L = sum_i (z_i - t_i)^2 / 2 per sample, delta = z - t.
    cce: softmax with max subtraction, L = -sum_i t_i log p_i, delta = p - t
    (targets must be one-hot).  The returned loss is averaged over the batch;
    delta stays per-sample.
    """
    z = np.asarray(z_l)
    t = np.asarray(target)
    if z.shape != t.shape:
        raise DimensionError(f"output shape {z.shape} != target shape {t.shape}")
    single = z.ndim == 1
    if single:
        z, t = z[None], t[None]
    if loss == "mse":
        delta = z - t
        value = 0.5 * np.sum(delta * delta) / z.shape[0]
    elif loss == "cce":
        if not (np.all((t == 0) | (t == 1)) and np.allclose(t.sum(axis=1), 1.0)):
            raise ValidationError("cce targets must be one-hot")
        shifted = z - z.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        p = exp / exp.sum(axis=1, keepdims=True)
        value = -np.sum(t * np.log(np.maximum(p, np.finfo(p.dtype).tiny))) / z.shape[0]
        delta = p - t
    else:
        raise ValidationError(f"loss must be one of {LOSS_KINDS}, got {loss!r}")
    return float(value), (delta[0] if single else delta)


def _encode_weights(w):
    w = np.ascontiguousarray(w)
    return {"dtype": w.dtype.name, "shape": list(w.shape),
            "data": base64.b64encode(w.astype(w.dtype.newbyteorder("<")).tobytes()).decode("ascii")}


def _decode_weights(d):
    raw = base64.b64decode(d["data"])
    w = np.frombuffer(raw, dtype=np.dtype(d["dtype"]).newbyteorder("<"))
    return w.reshape(d["shape"]).astype(d["dtype"])


def _layer_from_dict(d, dtype):
    kind = d["kind"]
    if kind == "dense":
        layer = Dense(d["n_in"], d["n_out"], dtype=dtype)
        layer.weights = _decode_weights(d["weights"]).astype(dtype)
        return layer
    if kind == "conv":
        layer = Conv2d(d["c_in"], d["c_out"], d["kh"], d["kw"], dtype=dtype)
        layer.weights = _decode_weights(d["weights"]).astype(dtype)
        return layer
    if kind == "pool":
        return Pool2d(d["mode"])
    if kind == "flatten":
        return Flatten()
    if kind == "activation":
        return Activation(NonlinearitySpec.from_dict(d["spec"]))
    raise ValidationError(f"unknown layer kind {kind!r}")


CHECKPOINT_VERSION = 1


def save_checkpoint(net, path, seed=None, meta=None):
    """Write a versioned JSON checkpoint: layer kinds, shapes, raw weights, run seed."""
    payload = {"format_version": CHECKPOINT_VERSION, "seed": seed, "meta": meta or {}}
    payload.update(net.to_dict())
    with open(path, "w") as f:
        json.dump(payload, f)


def load_checkpoint(path):
    """Rebuild (network, payload) from a checkpoint file."""
    with open(path) as f:
        payload = json.load(f)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {payload.get('format_version')!r}")
    dtype = np.dtype(payload["dtype"])
    net = Network([_layer_from_dict(d, dtype) for d in payload["layers"]], dtype=dtype)
    return net, payload
