"""A small numpy MLP with hand-written backprop and Adam.

Row-vector convention: a layer maps ``h -> h @ W + b`` with ``W`` of shape
``(fan_in, fan_out)``. Hidden layers use a leaky rectifier, the output layer
is linear. Parameters default to float64; training loops may ask for
float32 to halve memory traffic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .scm import make_rng

CHECKPOINT_VERSION = 1


class NNError(RuntimeError):
    pass


class Mlp:
    def __init__(self, sizes: Sequence[int], slope: float = 0.2, seed: int = 0, zero: bool = False,
                 dtype=np.float64):
        if len(sizes) < 2:
            raise NNError("an MLP needs at least input and output sizes")
        self.sizes = [int(s) for s in sizes]
        self.slope = float(slope)
        self.dtype = np.dtype(dtype)
        rng = make_rng(seed)
        self.params: List[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            a = np.sqrt(6.0 / (fan_in + fan_out))
            w = np.zeros((fan_in, fan_out)) if zero else rng.uniform(-a, a, (fan_in, fan_out))
            self.params += [w.astype(self.dtype), np.zeros(fan_out, self.dtype)]
        self.version = 0

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def layer(self, k: int):
        return self.params[2 * k], self.params[2 * k + 1]

    def touch(self) -> None:
        """Mark parameters as changed; older caches become stale."""
        self.version += 1

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise NNError(f"input width {x.shape[-1]} does not match {self.sizes[0]}")
        inputs, pre = [], []
        h = x
        for k in range(self.n_layers):
            w, b = self.layer(k)
            inputs.append(h)
            a = h @ w + b
            if k < self.n_layers - 1:
                pre.append(a >= 0)
                h = np.maximum(a, self.slope * a)
            else:
                h = a
        return h, {"inputs": inputs, "pre": pre, "version": self.version}

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out: np.ndarray):
        """Return (parameter gradients in ``params`` order, input gradient)."""
        if cache.get("version") != self.version:
            raise NNError("stale cache: parameters changed since forward")
        grads: List[np.ndarray] = [None] * len(self.params)
        g = np.asarray(grad_out, dtype=self.dtype)
        for k in range(self.n_layers - 1, -1, -1):
            w, _ = self.layer(k)
            if k < self.n_layers - 1:
                g = np.where(cache["pre"][k], g, self.slope * g)
            grads[2 * k] = cache["inputs"][k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ w.T
        return grads, g

    def state_dict(self) -> dict:
        return {"sizes": self.sizes, "slope": self.slope, "dtype": self.dtype.name,
                "params": [p.tolist() for p in self.params]}

    @classmethod
    def from_state(cls, d: dict) -> "Mlp":
        m = cls(d["sizes"], d["slope"], zero=True, dtype=d.get("dtype", "float64"))
        m.params = [np.array(p, dtype=m.dtype) for p in d["params"]]
        return m


@dataclass
class Adam:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]) -> List[np.ndarray]:
        """Bias-corrected Adam update, applied in place."""
        if len(params) != len(grads):
            raise NNError("parameter / gradient count mismatch")
        for i, (p, g) in enumerate(zip(params, grads)):
            if p.shape != g.shape:
                raise NNError(f"gradient {i} has shape {g.shape}, parameter has {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NNError(f"non-finite gradient in tensor {i} at step {self.step_count + 1}")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params

    def state_dict(self) -> dict:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "step_count": self.step_count,
            "m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v],
        }

    @classmethod
    def from_state(cls, d: dict) -> "Adam":
        return cls(d["lr"], d["beta1"], d["beta2"], d["eps"], d["step_count"],
                   [np.array(a) for a in d["m"]], [np.array(a) for a in d["v"]])


def save_checkpoint(path, models: dict, optimizer: Adam | None = None) -> None:
    doc = {
        "format": "invariant_crl.checkpoint",
        "version": CHECKPOINT_VERSION,
        "models": {k: m.state_dict() for k, m in models.items()},
        "optimizer": None if optimizer is None else optimizer.state_dict(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise NNError(f"unsupported checkpoint version {doc.get('version')}")
    models = {k: Mlp.from_state(v) for k, v in doc["models"].items()}
    opt = None if doc["optimizer"] is None else Adam.from_state(doc["optimizer"])
    return models, opt
