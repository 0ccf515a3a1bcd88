"""Independent reference implementations used by the tests.

Nothing here calls into the vectorised code paths it is compared against.
"""

import math

import numpy as np

from dctn.nn import Mlp, losses


def scalar_forward(net, row):
    """Forward pass of one input row with explicit Python loops."""
    h = [float(v) for v in row]
    for layer in net.layers:
        W, b = layer.W.values, layer.b.values
        z = []
        for k in range(W.shape[1]):
            acc = float(b[k])
            for i in range(W.shape[0]):
                acc += h[i] * float(W[i, k])
            z.append(acc)
        if layer.activation == "relu":
            h = [max(v, 0.0) for v in z]
        elif layer.activation == "sigmoid":
            h = [1.0 / (1.0 + math.exp(-v)) for v in z]
        elif layer.activation == "softmax":
            top = max(z)
            e = [math.exp(v - top) for v in z]
            h = [v / sum(e) for v in e]
        else:
            h = z
    return h


def random_net(rng, kind):
    """Small random MLP (1-3 layers, <= 16 units) with the head ``kind`` needs."""
    n_layers = int(rng.integers(1, 4))
    d_in = int(rng.integers(1, 6))
    hidden = [int(rng.integers(2, 17)) for _ in range(n_layers - 1)]
    d_out = int(rng.integers(2, 6)) if kind == "softmax_ce" else 1
    out = "softmax" if kind == "softmax_ce" else "sigmoid"
    hidden_act = str(rng.choice(["relu", "identity"]))
    net = Mlp.build([d_in, *hidden, d_out], hidden=hidden_act, out=out, rng=rng)
    # zero biases put dead-relu outputs exactly on the next kink
    for layer in net.layers:
        layer.b.values[:] = rng.uniform(-0.5, 0.5, size=layer.out_dim)
    return net


def random_problem(rng, kind, net):
    m = int(rng.integers(1, 9))
    x = rng.normal(size=(m, net.in_dim))
    if kind == "softmax_ce":
        t = rng.integers(0, net.out_dim, size=m)
    elif kind == "sigmoid_bce":
        t = rng.integers(0, 2, size=m).astype(float)
    else:
        t = None
    return x, t


def finite_difference_check(net, kind, x, t, eps=1e-5):
    """Relative error between analytic and central-difference gradients.

    Returns ``max(param_error, input_error)`` where each error is
    ``|a - n| / max(|a|, |n|, 1e-12)`` over the flattened gradient vector.
    """

    def loss_at():
        return losses(kind, net.forward(x), t)[0]

    net.zero_grad()
    _, g = losses(kind, net.forward(x), t)
    g_in = net.backward(g)
    analytic = np.concatenate([p.grad.ravel() for p in net.params()])
    numeric = []
    for p in net.params():
        flat = p.values.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = loss_at()
            flat[i] = old - eps
            down = loss_at()
            flat[i] = old
            numeric.append((up - down) / (2 * eps))
    numeric = np.array(numeric)

    num_in = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        old = x[idx]
        x[idx] = old + eps
        up = loss_at()
        x[idx] = old - eps
        down = loss_at()
        x[idx] = old
        num_in[idx] = (up - down) / (2 * eps)
    net.zero_grad()

    def rel(a, n):
        return np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)

    return max(rel(analytic, numeric), rel(g_in.ravel(), num_in.ravel()))


def brute_force_confidence(scores, softmaxes, class_sets, class_list):
    """Triple loop over samples, classes and sources."""
    n = len(scores)
    out = np.zeros((n, len(class_list)))
    for i in range(n):
        for k, c in enumerate(class_list):
            eligible = [j for j, cs in enumerate(class_sets) if c in cs]
            if not eligible:
                continue
            denom = 0.0
            for j in eligible:
                denom += float(scores[i][j])
            total = 0.0
            for j in eligible:
                w = float(scores[i][j]) / denom if denom > 0 else 1.0 / len(eligible)
                total += w * float(softmaxes[j][i][list(class_sets[j]).index(c)])
            out[i, k] = total
    return out


def random_operator_case(rng, n_sources, n_classes, n_samples=1, mask_kind="random"):
    """Random class sets (union = all classes), positive scores and softmax rows."""
    classes = list(range(n_classes))
    if mask_kind == "vanilla" or n_sources == 1:
        sets = [classes] * n_sources
    elif mask_kind == "disjoint":
        cuts = np.array_split(classes, n_sources)
        sets = [list(map(int, c)) for c in cuts]
        sets = [s if s else [classes[-1]] for s in sets]
    else:
        sets = []
        for _ in range(n_sources):
            size = int(rng.integers(1, n_classes + 1))
            sets.append(sorted(int(c) for c in rng.choice(classes, size, replace=False)))
        missing = set(classes) - set().union(*map(set, sets))
        for c in missing:
            j = int(rng.integers(0, n_sources))
            sets[j] = sorted(set(sets[j]) | {c})
    scores = rng.uniform(0.01, 5.0, size=(n_samples, n_sources))
    softmaxes = []
    for cs in sets:
        raw = rng.uniform(0.01, 1.0, size=(n_samples, len(cs)))
        softmaxes.append(raw / raw.sum(axis=1, keepdims=True))
    return scores, softmaxes, sets, classes
