"""Plain-numpy feedforward network with analytic backpropagation.

Used for the cost predictor (identity output) and, wrapped with a scaled
sigmoid, for the conformal value predictor. ReLU hidden layers; the ReLU
subgradient at exactly zero is taken as 0.
"""

from __future__ import annotations

import io

import numpy as np

from .milp import DimensionMismatch


class Mlp:
    def __init__(self, layer_dims, weights=None, biases=None, seed=0):
        self.layer_dims = list(int(d) for d in layer_dims)
        if len(self.layer_dims) < 2:
            raise ValueError("need at least input and output dims")
        if weights is None:
            rng = np.random.default_rng(seed)
            weights, biases = [], []
            for fan_in, fan_out in zip(self.layer_dims, self.layer_dims[1:]):
                weights.append(rng.standard_normal((fan_out, fan_in))
                               * np.sqrt(2.0 / fan_in))
                biases.append(np.zeros(fan_out))
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        for w, b, din, dout in zip(self.weights, self.biases,
                                   self.layer_dims, self.layer_dims[1:]):
            if w.shape != (dout, din) or b.shape != (dout,):
                raise DimensionMismatch("parameter shapes do not chain")

    @property
    def input_dim(self):
        return self.layer_dims[0]

    @property
    def output_dim(self):
        return self.layer_dims[-1]

    def copy(self) -> "Mlp":
        return Mlp(self.layer_dims, [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases])

    def forward(self, x, cache=None):
        """Evaluate the network. x is (d,) or a batch (B, d); hidden layers
        use ReLU, the output layer is linear. When `cache` is a list the
        pre-activations are appended to it for backward()."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        a = x.reshape(1, -1) if single else x
        if a.shape[1] != self.input_dim:
            raise DimensionMismatch(
                f"input dim {a.shape[1]} != {self.input_dim}")
        if cache is not None:
            cache.append(a)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            a = z if i == last else np.maximum(0.0, z)
            if cache is not None:
                cache.append(a)
        return a[0] if single else a

    def backward(self, cache, upstream):
        """Gradients of sum_b upstream_b . output_b w.r.t. all parameters.

        `cache` is the activation list filled by forward(); upstream is
        (n_out,) or (B, n_out) matching the cached batch. Returns
        (weight_grads, bias_grads).
        """
        upstream = np.asarray(upstream, dtype=float)
        if upstream.ndim == 1:
            upstream = upstream.reshape(1, -1)
        if len(cache) != len(self.weights) + 1:
            raise ValueError("stale or missing activation cache")
        grad_w = [None] * len(self.weights)
        grad_b = [None] * len(self.weights)
        delta = upstream
        for i in range(len(self.weights) - 1, -1, -1):
            a_prev = cache[i]
            grad_w[i] = delta.T @ a_prev
            grad_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i]) * (cache[i] > 0.0)
        return grad_w, grad_b

    def apply_update(self, grad_w, grad_b, step):
        for w, gw in zip(self.weights, grad_w):
            w -= step * gw
        for b, gb in zip(self.biases, grad_b):
            b -= step * gb

    def to_text(self) -> str:
        out = io.StringIO()
        out.write("mlp " + " ".join(str(d) for d in self.layer_dims) + "\n")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.write(f"W{i} " + " ".join(f"{v:.17g}" for v in w.ravel())
                      + "\n")
            out.write(f"b{i} " + " ".join(f"{v:.17g}" for v in b) + "\n")
        return out.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "Mlp":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        dims = [int(d) for d in lines[0].split()[1:]]
        weights, biases = [], []
        idx = 1
        for din, dout in zip(dims, dims[1:]):
            wv = np.array([float(v) for v in lines[idx].split()[1:]])
            bv = np.array([float(v) for v in lines[idx + 1].split()[1:]])
            weights.append(wv.reshape(dout, din))
            biases.append(bv)
            idx += 2
        return cls(dims, weights, biases)


def finite_difference_grads(mlp: Mlp, x, upstream, step=1e-5):
    """Central-difference gradients of upstream . mlp(x); test oracle."""
    upstream = np.asarray(upstream, dtype=float)

    def value():
        out = mlp.forward(x)
        return float((out * upstream).sum())

    grad_w, grad_b = [], []
    for w in mlp.weights:
        g = np.zeros_like(w)
        it = np.nditer(w, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = w[idx]
            w[idx] = orig + step
            up = value()
            w[idx] = orig - step
            down = value()
            w[idx] = orig
            g[idx] = (up - down) / (2 * step)
        grad_w.append(g)
    for b in mlp.biases:
        g = np.zeros_like(b)
        for i in range(b.size):
            orig = b[i]
            b[i] = orig + step
            up = value()
            b[i] = orig - step
            down = value()
            b[i] = orig
            g[i] = (up - down) / (2 * step)
        grad_b.append(g)
    return grad_w, grad_b
