"""Small fully-connected Q networks in plain numpy.

Float64 forward/backward passes with hand-written gradients keep the learner
free of framework dependencies and make the gradient computation directly
checkable against finite differences. Parameters for one network are a list
of (W, b) pairs; hidden layers use ReLU, the output layer is linear.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MlpParams = list[tuple[np.ndarray, np.ndarray]]


def mlp_init(sizes: list[int], rng: np.random.Generator) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    params: MlpParams = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        params.append((w, b))
    return params


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Batch forward pass; x has shape (batch, in_dim)."""
    h = x
    last = len(params) - 1
    for i, (w, b) in enumerate(params):
        z = h @ w + b
        h = z if i == last else np.maximum(z, 0.0)
    return h


def mlp_forward_cached(params: MlpParams, x: np.ndarray):
    """Forward pass keeping the per-layer inputs and pre-activations
    needed for the backward pass."""
    inputs = []
    pre = []
    h = x
    last = len(params) - 1
    for i, (w, b) in enumerate(params):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
    return h, (inputs, pre)


def mlp_backward(params: MlpParams, cache, dy: np.ndarray) -> MlpParams:
    """Gradients of a scalar loss wrt every parameter, given dL/d(output).

    Returns (dW, db) pairs aligned with ``params``.
    """
    inputs, pre = cache
    grads: MlpParams = [None] * len(params)  # type: ignore[list-item]
    delta = dy
    for i in range(len(params) - 1, -1, -1):
        if i < len(params) - 1:
            delta = delta * (pre[i] > 0.0)   # ReLU gate
        w, _ = params[i]
        grads[i] = (inputs[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = delta @ w.T
    return grads


def zeros_like_params(params: MlpParams) -> MlpParams:
    return [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]


def clone_params(params: MlpParams) -> MlpParams:
    return [(w.copy(), b.copy()) for w, b in params]


def flatten_params(params: MlpParams) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b.ravel()])
                           for w, b in params]) if params else np.zeros(0)


def unflatten_params(flat: np.ndarray, like: MlpParams) -> MlpParams:
    out: MlpParams = []
    i = 0
    for w, b in like:
        out.append((flat[i:i + w.size].reshape(w.shape).copy(),
                    flat[i + w.size:i + w.size + b.size].copy()))
        i += w.size + b.size
    if i != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, expected {i}")
    return out


@dataclass
class AdamState:
    """First/second moment accumulators and the shared step counter."""

    m: list[MlpParams]
    v: list[MlpParams]
    step: int = 0

    @classmethod
    def for_networks(cls, nets: list[MlpParams]) -> "AdamState":
        return cls(m=[zeros_like_params(p) for p in nets],
                   v=[zeros_like_params(p) for p in nets])


def adam_step(nets: list[MlpParams], grads: list[MlpParams], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One Adam update applied in place across a list of networks."""
    state.step += 1
    t = state.step
    bias1 = 1.0 - beta1 ** t
    bias2 = 1.0 - beta2 ** t
    for params, gparams, mparams, vparams in zip(nets, grads, state.m, state.v):
        for (w, b), (gw, gb), (mw, mb), (vw, vb) in zip(params, gparams,
                                                        mparams, vparams):
            for arr, g, m, v in ((w, gw, mw, vw), (b, gb, mb, vb)):
                m *= beta1
                m += (1.0 - beta1) * g
                v *= beta2
                v += (1.0 - beta2) * np.square(g)
                arr -= lr * (m / bias1) / (np.sqrt(v / bias2) + eps)
