"""Small multilayer perceptrons in plain numpy: forward, backward, Adam, soft updates.

Everything is float64. Inputs may be a single vector ``(d,)`` or a batch
``(n, d)``; outputs follow the same rank.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hexworld import DomainError

CHECKPOINT_VERSION = 1
ACTIVATIONS = ("relu", "sigmoid", "identity")


class NumericError(ArithmeticError):
    """Raised when a loss or gradient stops being finite."""


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_activation: str = "identity"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DomainError("need one bias per weight matrix and at least one layer")
        if self.output_activation not in ACTIVATIONS:
            raise DomainError(f"unknown output activation {self.output_activation!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DomainError(f"layer {i}: weight {w.shape} does not match bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise DomainError(f"layer {i} input {w.shape[0]} != previous output {self.weights[i - 1].shape[1]}")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> MlpParams:
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.output_activation)

    def same_shape(self, other: MlpParams) -> bool:
        return [a.shape for a in self.arrays()] == [a.shape for a in other.arrays()]


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, p: MlpParams, **kw) -> AdamState:
        return cls([np.zeros_like(a) for a in p.arrays()], [np.zeros_like(a) for a in p.arrays()], **kw)


def init_mlp(sizes, rng: np.random.Generator, output_activation: str = "identity") -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    sizes = list(sizes)
    if len(sizes) < 2:
        raise DomainError("an MLP needs input and output sizes")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, output_activation)


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        # split form avoids overflow warnings for large |z|
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    return z


def _activation_grad(z, a, kind):
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


def _as_batch(p: MlpParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != p.weights[0].shape[0]:
        raise DomainError(f"input shape {x.shape} does not match network input {p.weights[0].shape[0]}")
    return x2, single


def _trace(p: MlpParams, x2: np.ndarray):
    acts, pres = [x2], []
    last = len(p.weights) - 1
    h = x2
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = h @ w + b
        h = _activate(z, p.output_activation if i == last else "relu")
        pres.append(z)
        acts.append(h)
    return acts, pres


def forward(p: MlpParams, x) -> np.ndarray:
    x2, single = _as_batch(p, x)
    out = _trace(p, x2)[0][-1]
    return out[0] if single else out


def backward(p: MlpParams, x, upstream) -> tuple[Gradients, np.ndarray]:
    """Reverse-mode derivatives of ``sum(upstream * forward(p, x))``.

    Batched inputs accumulate (sum) parameter gradients over rows.
    """
    x2, single = _as_batch(p, x)
    g = np.asarray(upstream, dtype=float)
    g = g[None, :] if g.ndim == 1 else g
    if g.shape != (x2.shape[0], p.weights[-1].shape[1]):
        raise DomainError(f"upstream shape {np.shape(upstream)} does not match output")
    acts, pres = _trace(p, x2)
    last = len(p.weights) - 1
    gw = [None] * len(p.weights)
    gb = [None] * len(p.weights)
    for i in range(last, -1, -1):
        kind = p.output_activation if i == last else "relu"
        delta = g * _activation_grad(pres[i], acts[i + 1], kind)
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        g = delta @ p.weights[i].T
    return Gradients(gw, gb), (g[0] if single else g)


def adam_step(s: AdamState, p: MlpParams, g: Gradients, lr: float) -> tuple[AdamState, MlpParams]:
    """One bias-corrected Adam update. Returns new state and parameters."""
    grads = g.arrays()
    params = p.arrays()
    if [a.shape for a in grads] != [a.shape for a in params] or len(s.m) != len(params):
        raise DomainError("gradient, parameter, and optimizer shapes disagree")
    if not all(np.all(np.isfinite(a)) for a in grads):
        raise NumericError("non-finite gradient; parameters left unchanged")
    t = s.step + 1
    m = [s.beta1 * mi + (1 - s.beta1) * gi for mi, gi in zip(s.m, grads)]
    v = [s.beta2 * vi + (1 - s.beta2) * gi * gi for vi, gi in zip(s.v, grads)]
    c1 = 1 - s.beta1**t
    c2 = 1 - s.beta2**t
    new = [a - lr * (mi / c1) / (np.sqrt(vi / c2) + s.eps) for a, mi, vi in zip(params, m, v)]
    state = AdamState(m, v, t, s.beta1, s.beta2, s.eps)
    return state, MlpParams(new[0::2], new[1::2], p.output_activation)


def soft_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    if not target.same_shape(online):
        raise DomainError("target and online networks differ in shape")
    if not 0.0 <= tau <= 1.0:
        raise DomainError(f"tau {tau} outside [0, 1]")
    mixed = [tau * o + (1 - tau) * t for t, o in zip(target.arrays(), online.arrays())]
    return MlpParams(mixed[0::2], mixed[1::2], target.output_activation)


# -- checkpoints -------------------------------------------------------------


def params_to_dict(p: MlpParams) -> dict:
    return {
        "output_activation": p.output_activation,
        "layers": [
            {"shape": list(w.shape), "weights": w.ravel().tolist(), "bias": b.tolist()}
            for w, b in zip(p.weights, p.biases)
        ],
    }


def params_from_dict(d: dict) -> MlpParams:
    ws, bs = [], []
    for layer in d["layers"]:
        ws.append(np.asarray(layer["weights"], dtype=float).reshape(layer["shape"]))
        bs.append(np.asarray(layer["bias"], dtype=float))
    return MlpParams(ws, bs, d["output_activation"])


def adam_to_dict(s: AdamState) -> dict:
    return {
        "step": s.step, "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps,
        "m": [{"shape": list(a.shape), "data": a.ravel().tolist()} for a in s.m],
        "v": [{"shape": list(a.shape), "data": a.ravel().tolist()} for a in s.v],
    }


def adam_from_dict(d: dict) -> AdamState:
    def load(items):
        return [np.asarray(it["data"], dtype=float).reshape(it["shape"]) for it in items]
    return AdamState(load(d["m"]), load(d["v"]), d["step"], d["beta1"], d["beta2"], d["eps"])


def save_checkpoint(path, p: MlpParams, adam: AdamState | None = None) -> None:
    """Write a versioned JSON checkpoint. Python floats round-trip exactly."""
    doc = {"version": CHECKPOINT_VERSION, "params": params_to_dict(p)}
    if adam is not None:
        doc["adam"] = adam_to_dict(adam)
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[MlpParams, AdamState | None]:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise DomainError(f"unsupported checkpoint version {doc.get('version')!r}")
    adam = adam_from_dict(doc["adam"]) if "adam" in doc else None
    return params_from_dict(doc["params"]), adam
