"""Small fully-connected networks with hand-written reverse-mode gradients.

Everything the agent trains runs through Mlp (ReLU hidden layers, linear
output) and Adam below; no autodiff framework is involved, so gradient
correctness is pinned by finite-difference tests instead.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch


class Mlp:
    """Feedforward net; params are stored as interleaved [W1, b1, W2, b2, ...]."""

    def __init__(self, layer_sizes, rng: np.random.Generator | None = None):
        self.layer_sizes = list(int(n) for n in layer_sizes)
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.params: list[np.ndarray] = []
        rng = rng or np.random.default_rng(0)
        for fan_in, fan_out in zip(self.layer_sizes, self.layer_sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.params.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cached(x)
        return y

    def forward_cached(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.layer_sizes[0]:
            raise ShapeMismatch(
                f"expected input dim {self.layer_sizes[0]}, got {x.shape[1]}"
            )
        # hidden activations are computed in place (ReLU over the
        # pre-activation buffer); the cache keeps the active-unit masks
        h = x
        hiddens = [x]
        masks = []
        for i in range(self.n_layers - 1):
            z = h @ self.params[2 * i]
            z += self.params[2 * i + 1]
            masks.append(z > 0.0)
            np.maximum(z, 0.0, out=z)
            h = z
            hiddens.append(h)
        out = h @ self.params[-2]
        out = out + self.params[-1]
        if squeeze:
            return out[0], (hiddens, masks, True)
        return out, (hiddens, masks, False)

    def backward(self, cache, grad_out: np.ndarray):
        """Gradients of sum(grad_out * output) w.r.t. params and input."""
        hiddens, masks, squeezed = cache
        delta = np.asarray(grad_out, dtype=float)
        if squeezed:
            delta = delta[None, :]
        grads: list[np.ndarray | None] = [None] * len(self.params)
        for i in range(self.n_layers - 1, -1, -1):
            grads[2 * i] = hiddens[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.params[2 * i].T
                delta *= masks[i - 1]
        grad_input = delta @ self.params[0].T
        if squeezed:
            grad_input = grad_input[0]
        return grads, grad_input

    def copy(self) -> "Mlp":
        clone = Mlp.__new__(Mlp)
        clone.layer_sizes = list(self.layer_sizes)
        clone.params = [p.copy() for p in self.params]
        return clone


def zeros_like_params(params) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in params]


class Adam:
    """Standard Adam with bias correction; state serializes for checkpoints."""

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = zeros_like_params(params)
        self.v = zeros_like_params(params)

    def step(self, params, grads) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def to_state(self) -> dict:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "t": self.t,
            "m": [a.tolist() for a in self.m],
            "v": [a.tolist() for a in self.v],
        }

    @classmethod
    def from_state(cls, state: dict, params) -> "Adam":
        opt = cls(params, state["lr"], state["beta1"], state["beta2"], state["eps"])
        opt.t = state["t"]
        opt.m = [np.array(a, dtype=float).reshape(p.shape) for a, p in zip(state["m"], params)]
        opt.v = [np.array(a, dtype=float).reshape(p.shape) for a, p in zip(state["v"], params)]
        return opt
