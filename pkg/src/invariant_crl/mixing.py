"""Invertible leaky-rectifier MLP used as the latent-to-observation map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scm import make_rng

MAX_CONDITION = 25.0


class MixingError(ValueError):
    pass


def leaky(x, slope):
    return np.where(x >= 0, x, slope * x)


def leaky_inverse(y, slope):
    return np.where(y >= 0, y, y / slope)


@dataclass(frozen=True, eq=False)
class MixingNet:
    """Square layers ``h <- leaky(h W^T + b)``; the last layer is linear."""

    layers: tuple
    slope: float = 0.2

    def __post_init__(self):
        if not 0 < self.slope < 1:
            raise MixingError("activation slope must lie in (0, 1)")
        if not self.layers:
            raise MixingError("need at least one layer")
        frozen = []
        dim = None
        for w, b in self.layers:
            w = np.array(w, dtype=float)
            b = np.array(b, dtype=float)
            if w.ndim != 2 or w.shape[0] != w.shape[1] or b.shape != (w.shape[0],):
                raise MixingError("layers must be square with matching bias")
            if dim is not None and w.shape[0] != dim:
                raise MixingError("all layers must share one dimension")
            dim = w.shape[0]
            cond = np.linalg.cond(w)
            if not cond <= MAX_CONDITION:
                raise MixingError(f"layer condition number {cond:.3g} exceeds {MAX_CONDITION}")
            w.setflags(write=False)
            b.setflags(write=False)
            frozen.append((w, b))
        object.__setattr__(self, "layers", tuple(frozen))

    @property
    def dim(self) -> int:
        return self.layers[0][0].shape[0]

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "layers": [{"weight": w.tolist(), "bias": b.tolist()} for w, b in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixingNet":
        layers = tuple((np.array(l["weight"]), np.array(l["bias"])) for l in d["layers"])
        return cls(layers, float(d.get("slope", 0.2)))


def identity_mixing(dim: int, n_layers: int = 1, slope: float = 0.2) -> MixingNet:
    return MixingNet(tuple((np.eye(dim), np.zeros(dim)) for _ in range(n_layers)), slope)


def random_mixing(dim: int, n_layers: int = 3, seed: int = 0, slope: float = 0.2) -> MixingNet:
    """Random invertible net; singular values of every layer lie in [0.5, 2]."""
    if n_layers < 1:
        raise MixingError("n_layers must be >= 1")
    rng = make_rng(seed)
    layers = []
    for _ in range(n_layers):
        u, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        v, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        s = rng.uniform(0.5, 2.0, dim)
        layers.append(((u * s) @ v.T, rng.normal(0.0, 0.5, dim)))
    return MixingNet(tuple(layers), slope)


def _check(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != dim:
        raise MixingError(f"expected a matrix with {dim} columns, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise MixingError("non-finite input")
    return x


def mix(net: MixingNet, z) -> np.ndarray:
    h = _check(getattr(z, "values", z), net.dim)
    last = len(net.layers) - 1
    for k, (w, b) in enumerate(net.layers):
        h = h @ w.T + b
        if k < last:
            h = leaky(h, net.slope)
    return h


def unmix(net: MixingNet, x) -> np.ndarray:
    h = _check(x, net.dim)
    last = len(net.layers) - 1
    for k in range(last, -1, -1):
        w, b = net.layers[k]
        if k < last:
            h = leaky_inverse(h, net.slope)
        h = np.linalg.solve(w, (h - b).T).T
    return h


def observations_to_csv(x: np.ndarray, path) -> None:
    header = ",".join(f"x{i + 1}" for i in range(x.shape[1]))
    np.savetxt(path, x, delimiter=",", header=header, comments="", fmt="%.17g")
