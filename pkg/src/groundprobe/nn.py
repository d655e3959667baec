"""Feed-forward building blocks with hand-written backward passes.

Parameters are plain dicts of numpy arrays so that optimizers, checkpoints
and the finite-difference checker can treat every model the same way.
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

Params = dict[str, np.ndarray]
LossAndGrads = Callable[[Params], tuple[float, Params]]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. ``logits``."""
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def mlp_shapes(d_in: int, hidden: Sequence[int], d_out: int = 2) -> list[tuple[int, int]]:
    dims = [d_in, *hidden, d_out]
    return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]


def mlp_param_count(d_in: int, hidden: Sequence[int], d_out: int = 2) -> int:
    return sum(a * b + b for a, b in mlp_shapes(d_in, hidden, d_out))


def init_mlp(
    rng: np.random.Generator,
    d_in: int,
    hidden: Sequence[int],
    d_out: int = 2,
    prefix: str = "",
    dtype=np.float64,
    out_scale: float | None = None,
) -> Params:
    """He-initialized weights, zero biases. ``out_scale`` overrides the last layer's std."""
    params = {}
    shapes = mlp_shapes(d_in, hidden, d_out)
    for i, (a, b) in enumerate(shapes):
        std = np.sqrt(2.0 / a)
        if i == len(shapes) - 1 and out_scale is not None:
            std = out_scale
        params[f"{prefix}W{i}"] = (rng.standard_normal((a, b)) * std).astype(dtype)
        params[f"{prefix}b{i}"] = np.zeros(b, dtype=dtype)
    return params


def mlp_forward(params: Params, x: np.ndarray, n_layers: int, prefix: str = ""):
    """Return logits and the activations cache needed by :func:`mlp_backward`."""
    acts = [x]
    h = x
    for i in range(n_layers):
        z = h @ params[f"{prefix}W{i}"] + params[f"{prefix}b{i}"]
        h = np.maximum(z, 0.0) if i < n_layers - 1 else z
        acts.append(h)
    return h, acts


def mlp_backward(
    params: Params, acts: list[np.ndarray], dout: np.ndarray, n_layers: int, prefix: str = ""
) -> tuple[Params, np.ndarray]:
    grads = {}
    d = dout
    for i in reversed(range(n_layers)):
        h_in = acts[i]
        grads[f"{prefix}W{i}"] = h_in.T @ d
        grads[f"{prefix}b{i}"] = d.sum(axis=0)
        d = d @ params[f"{prefix}W{i}"].T
        if i > 0:
            d = d * (acts[i] > 0)
    return grads, d


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: Params, grads: Mapping[str, np.ndarray]) -> None:
        for k, g in grads.items():
            params[k] -= (self.lr * g).astype(params[k].dtype, copy=False)


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: Params = {}
        self.v: Params = {}
        self.t = 0

    def step(self, params: Params, grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            params[k] -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(params[k].dtype)


def relative_error(a: np.ndarray | float, b: np.ndarray | float) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))


def check_gradients(
    params: Params,
    loss_and_grads: LossAndGrads,
    epsilon: float = 1e-5,
    n_samples: int = 100,
    seed: int = 0,
    candidates: Mapping[str, np.ndarray] | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``params`` must be float64; they are perturbed in place and restored.
    ``candidates`` optionally maps a parameter name to the flat indices worth
    sampling (e.g. only embedding rows the batch actually touches).
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must lie in [1e-6, 1e-3], got {epsilon}")
    _, analytic = loss_and_grads(params)
    rng = np.random.default_rng(seed)
    pool = []
    for name in sorted(params):
        idx = np.arange(params[name].size) if candidates is None or name not in candidates else np.asarray(candidates[name])
        pool.extend((name, int(i)) for i in idx)
    if not pool:
        return 0.0
    picks = rng.choice(len(pool), size=min(n_samples, len(pool)), replace=False)
    worst = 0.0
    for p in picks:
        name, i = pool[p]
        flat = params[name].reshape(-1)
        old = flat[i]
        flat[i] = old + epsilon
        plus, _ = loss_and_grads(params)
        flat[i] = old - epsilon
        minus, _ = loss_and_grads(params)
        flat[i] = old
        numeric = (plus - minus) / (2 * epsilon)
        ga = analytic[name].reshape(-1)[i] if name in analytic else 0.0
        worst = max(worst, float(relative_error(ga, numeric)))
    return worst
