"""Small dense networks with hand-written backprop, losses and momentum SGD.

Everything is float64 numpy. An :class:`Mlp` caches the intermediates of its
last forward pass so that :meth:`Mlp.backward` can run once afterwards.
"""

import numpy as np

from .errors import NonFiniteError, ShapeError, StateError

ACTIVATIONS = ("relu", "identity", "sigmoid", "softmax")
LOSS_KINDS = ("softmax_ce", "sigmoid_bce", "confusion_bce")
EPS = 1e-7


class Param:
    """A learnable array with its gradient and momentum buffer."""

    def __init__(self, values):
        self.values = np.array(values, dtype=np.float64)
        self.grad = np.zeros_like(self.values)
        self.velocity = np.zeros_like(self.values)

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad[...] = 0.0


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _activate(z, tag):
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "identity":
        return z
    if tag == "sigmoid":
        return sigmoid(z)
    return softmax(z)


class Dense:
    def __init__(self, weights, bias, activation="identity"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.W = Param(weights)
        self.b = Param(bias)
        if self.W.values.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ShapeError(f"bad dense shapes W{self.W.shape} b{self.b.shape}")
        self.activation = activation

    @property
    def in_dim(self):
        return self.W.shape[0]

    @property
    def out_dim(self):
        return self.W.shape[1]

    @classmethod
    def init(cls, fan_in, fan_out, activation, rng):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        return cls(W, np.zeros(fan_out), activation)


class Mlp:
    """Stack of dense layers.

    For a sigmoid or softmax head, ``backward`` takes the gradient w.r.t. the
    final pre-activation (the form :func:`losses` returns). For relu/identity
    outputs it takes the gradient w.r.t. the output itself.
    """

    def __init__(self, layers):
        if not layers:
            raise ShapeError("an Mlp needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer dims {a.out_dim} -> {b.in_dim} do not chain")
        for layer in layers[:-1]:
            if layer.activation in ("sigmoid", "softmax"):
                raise ValueError("sigmoid/softmax only allowed on the last layer")
        self.layers = list(layers)
        self._cache = None

    @classmethod
    def build(cls, dims, hidden="relu", out="identity", rng=None):
        """``dims=[2, 64, 32]`` gives two layers; ``out`` is the last activation."""
        rng = np.random.default_rng() if rng is None else rng
        layers = []
        for i, (a, b) in enumerate(zip(dims, dims[1:])):
            tag = out if i == len(dims) - 2 else hidden
            layers.append(Dense.init(a, b, tag, rng))
        return cls(layers)

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def params(self):
        return [p for layer in self.layers for p in (layer.W, layer.b)]

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"expected batch of width {self.in_dim}, got shape {x.shape}")
        inputs, pre = [], []
        h = x
        for layer in self.layers:
            inputs.append(h)
            z = h @ layer.W.values + layer.b.values
            pre.append(z)
            h = _activate(z, layer.activation)
        self._cache = (inputs, pre)
        return h

    def __call__(self, x):
        return self.forward(x)

    def backward(self, grad):
        """Accumulate parameter gradients and return d(loss)/d(input)."""
        if self._cache is None:
            raise StateError("backward called before forward")
        inputs, pre = self._cache
        g = np.asarray(grad, dtype=np.float64)
        if g.shape != pre[-1].shape:
            raise ShapeError(f"grad shape {g.shape} != output shape {pre[-1].shape}")
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            if layer.activation == "relu":
                g = g * (pre[k] > 0)
            # identity passes through; sigmoid/softmax heads arrive as logit grads
            layer.W.grad += inputs[k].T @ g
            layer.b.grad += g.sum(axis=0)
            g = g @ layer.W.values.T
        return g

    def copy(self):
        layers = [Dense(l.W.values.copy(), l.b.values.copy(), l.activation) for l in self.layers]
        return Mlp(layers)


def sgd_step(params, lr, momentum=0.0):
    """Momentum SGD: ``v <- m*v - lr*g; w <- w + v``; gradients are then zeroed."""
    if not lr > 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if not 0 <= momentum < 1:
        raise ValueError(f"momentum must be in [0, 1), got {momentum}")
    params = list(params)
    for i, p in enumerate(params):
        if not np.all(np.isfinite(p.grad)):
            finite = np.abs(p.grad[np.isfinite(p.grad)])
            raise NonFiniteError(
                f"non-finite gradient in param {i} (shape {p.shape}); "
                f"max finite |grad| = {finite.max() if finite.size else float('nan'):.3g}"
            )
    for p in params:
        p.velocity *= momentum
        p.velocity -= lr * p.grad
        p.values += p.velocity
        p.zero_grad()


def _row_weights(n, sample_weight):
    if sample_weight is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(sample_weight, dtype=np.float64)
    if w.shape != (n,):
        raise ShapeError(f"sample_weight shape {w.shape} != ({n},)")
    return w


def losses(kind, predictions, targets=None, sample_weight=None):
    """Return ``(loss, grad)`` with ``grad`` taken w.r.t. the head's logits.

    ``predictions`` are probabilities: a [M x K] softmax matrix for
    ``softmax_ce`` (``targets`` are column indices) and sigmoid outputs of
    shape [M] or [M x 1] for the two bce kinds. ``confusion_bce`` ignores
    ``targets``: it is cross-entropy against the uniform label 1/2.

    The loss is a weighted sum over rows; the default weight is 1/M (a mean).
    """
    p = np.asarray(predictions, dtype=np.float64)
    if kind == "softmax_ce":
        if p.ndim != 2:
            raise ShapeError("softmax_ce expects a [M x K] matrix")
        m = p.shape[0]
        y = np.asarray(targets, dtype=np.int64)
        if y.shape != (m,):
            raise ShapeError(f"targets shape {y.shape} != ({m},)")
        w = _row_weights(m, sample_weight)
        picked = np.clip(p[np.arange(m), y], EPS, 1 - EPS)
        loss = float(np.sum(w * -np.log(picked)))
        grad = p.copy()
        grad[np.arange(m), y] -= 1.0
        return loss, grad * w[:, None]

    if kind not in ("sigmoid_bce", "confusion_bce"):
        raise ValueError(f"unknown loss kind {kind!r}")
    flat = p.reshape(-1)
    m = flat.shape[0]
    w = _row_weights(m, sample_weight)
    pc = np.clip(flat, EPS, 1 - EPS)
    if kind == "sigmoid_bce":
        t = np.broadcast_to(np.asarray(targets, dtype=np.float64).reshape(-1), (m,))
        per_row = -(t * np.log(pc) + (1 - t) * np.log(1 - pc))
        g = flat - t
    else:
        per_row = -0.5 * np.log(pc) - 0.5 * np.log(1 - pc)
        g = flat - 0.5
    return float(np.sum(w * per_row)), (g * w).reshape(p.shape)
