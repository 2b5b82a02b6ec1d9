"""Invariance and sufficiency losses, with analytic input gradients.

All alignment-style losses use the per-row convention: squared L2 norm summed
over coordinates, averaged over rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

INVARIANCE_KINDS = ("sample_level", "marginal_distribution", "risk")
DEFAULT_MULTIPLIERS = (0.5, 1.0, 2.0)


class LossError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Selector:
    """Binary mask routing encoding coordinates to one invariance property."""

    mask: tuple
    property_id: int = 0
    env_group: tuple = (0, 1)
    block_size: Optional[int] = None

    def __post_init__(self):
        mask = tuple(int(bool(m)) for m in self.mask)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "env_group", tuple(int(e) for e in self.env_group))
        if self.block_size is not None and sum(mask) != self.block_size:
            raise LossError(f"mask selects {sum(mask)} coordinates, block size is {self.block_size}")
        if len(set(self.env_group)) < 2:
            raise LossError("an invariance needs at least two environments")

    @classmethod
    def from_indices(cls, width: int, indices, **kw) -> "Selector":
        idx = set(indices)
        return cls(tuple(int(i in idx) for i in range(width)), **kw)

    @property
    def indices(self) -> list:
        return [i for i, m in enumerate(self.mask) if m]

    def complement(self) -> "Selector":
        return Selector(tuple(1 - m for m in self.mask), self.property_id, self.env_group)


@dataclass(frozen=True, eq=False)
class InvarianceSpec:
    kind: str
    invariant_set: tuple
    env_group: tuple
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in INVARIANCE_KINDS:
            raise LossError(f"unknown invariance kind {self.kind!r}")
        if len(set(self.env_group)) < 2:
            raise LossError("an invariance needs at least two environments")
        if self.weight < 0:
            raise LossError("invariance weight must be nonnegative")


def select(mask, v: np.ndarray) -> np.ndarray:
    """Keep the entries (or columns, for matrices) where ``mask`` is 1."""
    mask = np.asarray(getattr(mask, "mask", mask)).astype(bool)
    v = np.asarray(v)
    if v.shape[-1] != mask.shape[0]:
        raise LossError(f"mask length {mask.shape[0]} does not match vector length {v.shape[-1]}")
    return v[..., mask]


def _same_shape(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise LossError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mse_reconstruction(x_hat, x, return_grad: bool = False):
    """Squared L2 per row, averaged over rows."""
    x_hat, x = _same_shape(x_hat, x)
    diff = x_hat - x
    n = diff.shape[0]
    val = float(np.sum(diff * diff) / n)
    if return_grad:
        return val, 2.0 * diff / n
    return val


def l2_alignment(enc_a, enc_b, return_grad: bool = False):
    """Mean squared row-wise distance between paired encodings."""
    a, b = _same_shape(enc_a, enc_b)
    diff = a - b
    n = diff.shape[0]
    val = float(np.sum(diff * diff) / n)
    if return_grad:
        g = 2.0 * diff / n
        return val, g, -g
    return val


def _sqdist(a, b):
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def median_bandwidth(x, y, max_points: int = 400, seed: int = 0) -> float:
    """Median pairwise Euclidean distance of the pooled sample."""
    pooled = np.vstack([np.asarray(x, dtype=float), np.asarray(y, dtype=float)])
    if len(pooled) > max_points:
        idx = np.random.Generator(np.random.Philox(seed)).choice(len(pooled), max_points, replace=False)
        pooled = pooled[idx]
    d = _sqdist(pooled, pooled)[np.triu_indices(len(pooled), 1)]
    med = float(np.sqrt(np.median(d)))
    return med if med > 0 else 1.0


def mmd_bandwidths(x, y, multipliers: Sequence[float] = DEFAULT_MULTIPLIERS) -> list:
    med = median_bandwidth(x, y)
    return [m * med for m in multipliers]


def _kernel_mixture(bandwidths, dists):
    """Yield ``(c, kernels)`` per bandwidth with ``k = exp(-c d)``.

    A bandwidth whose squared ratio to the widest one is a power of two is
    obtained from the widest kernel by repeated squaring instead of ``exp``.
    """
    bws = sorted((float(s) for s in bandwidths), reverse=True)
    if not bws or bws[-1] <= 0:
        raise LossError("bandwidths must be positive")
    c0 = 1.0 / (2.0 * bws[0] ** 2)
    cache = {1: tuple(np.exp(d * -c0) for d in dists)}
    for s in bws:
        c = 1.0 / (2.0 * s * s)
        ratio = c / c0
        p = int(round(ratio))
        if p >= 1 and abs(ratio - p) < 1e-12 and p & (p - 1) == 0:
            q = max(k for k in cache if k <= p and p % k == 0)
            while q < p:
                cache[2 * q] = tuple(k * k for k in cache[q])
                q *= 2
            yield c, cache[p]
        else:
            yield c, tuple(np.exp(d * -c) for d in dists)


def mmd_rbf(X, Y, bandwidths: Optional[Sequence[float]] = None, return_grad: bool = False):
    """Biased (V-statistic) squared MMD summed over a Gaussian bandwidth mixture.

    With ``return_grad`` the result is ``(value, dX, dY)``; bandwidths are held
    fixed when differentiating. float32 inputs are computed in float32.
    """
    dtype = np.result_type(np.asarray(X).dtype, np.asarray(Y).dtype, np.float32)
    X = np.asarray(X, dtype=dtype)
    Y = np.asarray(Y, dtype=dtype)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != Y.shape[1]:
        raise LossError("MMD inputs must be matrices of equal width")
    if len(X) < 1 or len(Y) < 1:
        raise LossError("MMD needs non-empty samples")
    if bandwidths is None:
        bandwidths = mmd_bandwidths(X, Y)
    n, m = len(X), len(Y)
    dxx, dyy, dxy = _sqdist(X, X), _sqdist(Y, Y), _sqdist(X, Y)
    val = 0.0
    gx = np.zeros(X.shape)
    gy = np.zeros(Y.shape)
    for c, (kxx, kyy, kxy) in _kernel_mixture(bandwidths, (dxx, dyy, dxy)):
        val += float(kxx.mean(dtype=float)) + float(kyy.mean(dtype=float)) - 2.0 * float(kxy.mean(dtype=float))
        if return_grad:
            # d k(a,b)/da = -2c (a-b) k(a,b)
            gx += (4.0 * c / n**2) * (kxx @ X - kxx.sum(1)[:, None] * X)
            gx -= (4.0 * c / (n * m)) * (kxy @ Y - kxy.sum(1)[:, None] * X)
            gy += (4.0 * c / m**2) * (kyy @ Y - kyy.sum(1)[:, None] * Y)
            gy -= (4.0 * c / (n * m)) * (kxy.T @ X - kxy.sum(0)[:, None] * Y)
    val = max(float(val), 0.0)
    if return_grad:
        return val, gx, gy
    return val


def risk_variance(risks, return_grad: bool = False):
    """Population variance of per-environment risks."""
    r = np.asarray(risks, dtype=float)
    if r.ndim != 1 or len(r) < 2:
        raise LossError("need risks from at least two environments")
    centered = r - r.mean()
    val = float(np.mean(centered**2))
    if return_grad:
        return val, 2.0 * centered / len(r)
    return val


def pairwise_risk_gap(risks) -> float:
    """Mean over all ordered pairs (including i == j) of squared differences."""
    r = np.asarray(risks, dtype=float)
    return float(np.mean((r[:, None] - r[None, :]) ** 2))


def mse_risk(pred, target, return_grad: bool = False):
    """Mean squared error of a regression head (per-row sum over outputs)."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float).reshape(pred.shape)
    return mse_reconstruction(pred, target, return_grad)
