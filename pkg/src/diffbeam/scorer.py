"""Frame scorers mapping a feature sequence (T, F) to emissions (T, |D|)."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class LinearScorer:
    """em = x @ W + b."""

    def __init__(self, n_feats, n_tokens, seed=0):
        rng = np.random.default_rng(seed)
        self.W = _uniform(rng, n_feats, (n_feats, n_tokens))
        self.b = np.zeros(n_tokens)

    @property
    def receptive_field(self):
        return 1

    def params(self):
        return {"W": self.W, "b": self.b}

    def forward(self, x):
        return x @ self.W + self.b, x

    def backward(self, cache, dem):
        x = cache
        return {"W": x.T @ dem, "b": dem.sum(axis=0)}

    def score(self, x):
        return self.forward(x)[0]

    def score_backward(self, x, dem):
        return self.backward(x, dem)


def _pad(k):
    left = (k - 1) // 2
    return left, k - 1 - left


def conv1d(x, W, b):
    """Same-length 1-D convolution. x: (T, Cin), W: (k, Cin, Cout)."""
    k = W.shape[0]
    left, right = _pad(k)
    xp = np.pad(x, ((left, right), (0, 0)))
    win = sliding_window_view(xp, k, axis=0)  # (T, Cin, k)
    return np.einsum("tck,kco->to", win, W) + b, win


def conv1d_backward(win, W, dout):
    k = W.shape[0]
    left, right = _pad(k)
    T = dout.shape[0]
    dW = np.einsum("tck,to->kco", win, dout)
    db = dout.sum(axis=0)
    dxp = np.zeros((T + k - 1, W.shape[1]))
    for j in range(k):
        dxp[j:j + T] += dout @ W[j].T
    return dxp[left:left + T], dW, db


class GLUConvScorer:
    """Stack of gated 1-D convolutions followed by a linear projection.

    Each layer computes ``(X*W + b) * sigmoid(X*W' + b')`` with same-length
    zero padding.
    """

    def __init__(self, n_feats, n_tokens, channels=(16,), kernels=(5,), seed=0):
        if len(channels) != len(kernels):
            raise ValueError("channels and kernels must have the same length")
        rng = np.random.default_rng(seed)
        self.layers = []
        cin = n_feats
        for i, (c, k) in enumerate(zip(channels, kernels)):
            fan = k * cin
            self.layers.append(
                {
                    "W": _uniform(rng, fan, (k, cin, c)),
                    "b": np.zeros(c),
                    "Wg": _uniform(rng, fan, (k, cin, c)),
                    "bg": np.zeros(c),
                }
            )
            cin = c
        self.proj_W = _uniform(rng, cin, (cin, n_tokens))
        self.proj_b = np.zeros(n_tokens)

    @property
    def receptive_field(self):
        return 1 + sum(layer["W"].shape[0] - 1 for layer in self.layers)

    def params(self):
        p = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.items():
                p[f"glu{i}.{name}"] = arr
        p["proj.W"] = self.proj_W
        p["proj.b"] = self.proj_b
        return p

    def forward(self, x):
        caches = []
        h = x
        for layer in self.layers:
            a, win = conv1d(h, layer["W"], layer["b"])
            g, _ = conv1d(h, layer["Wg"], layer["bg"])
            s = _sigmoid(g)
            caches.append((win, a, s))
            h = a * s
        em = h @ self.proj_W + self.proj_b
        return em, (caches, h)

    def backward(self, cache, dem):
        caches, h = cache
        grads = {"proj.W": h.T @ dem, "proj.b": dem.sum(axis=0)}
        dh = dem @ self.proj_W.T
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            win, a, s = caches[i]
            da = dh * s
            dg = dh * a * s * (1.0 - s)
            dx1, grads[f"glu{i}.W"], grads[f"glu{i}.b"] = conv1d_backward(win, layer["W"], da)
            dx2, grads[f"glu{i}.Wg"], grads[f"glu{i}.bg"] = conv1d_backward(win, layer["Wg"], dg)
            dh = dx1 + dx2
        return grads

    def score(self, x):
        return self.forward(x)[0]

    def score_backward(self, x, dem):
        return self.backward(self.forward(x)[1], dem)


def make_scorer(kind, n_feats, n_tokens, channels=(16,), kernels=(5,), seed=0):
    if kind == "linear":
        return LinearScorer(n_feats, n_tokens, seed=seed)
    if kind == "glu":
        return GLUConvScorer(n_feats, n_tokens, channels, kernels, seed=seed)
    raise ValueError(f"unknown scorer kind {kind!r}")
