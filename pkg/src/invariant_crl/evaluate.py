"""Identifiability metrics at block, affine and element granularity."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from .scm import make_rng

SCHEMA_VERSION = 1


class MetricError(ValueError):
    pass


def _split(n, seed):
    perm = make_rng(seed).permutation(n)
    half = n // 2
    return perm[:half], perm[half:]


def _r2(y, pred):
    sst = np.sum((y - y.mean()) ** 2)
    return float(1.0 - np.sum((y - pred) ** 2) / sst)


def _whiten(train, test):
    """ZCA-whiten both halves with training statistics.

    Directions with negligible training variance are dropped, so exact
    duplicate columns are harmless.
    """
    mu = train.mean(0)
    cov = np.atleast_2d(np.cov(train, rowvar=False))
    vals, vecs = np.linalg.eigh(cov)
    keep = vals > 1e-10 * max(vals.max(), 1e-300)
    inv_sqrt = (vecs[:, keep] / np.sqrt(vals[keep])) @ vecs[:, keep].T
    return (train - mu) @ inv_sqrt, (test - mu) @ inv_sqrt


def _sqdist(a, b):
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def krr_r2(features, target, ridge: float = 1e-3, bandwidth: Optional[float] = None,
           max_points: int = 2000, seed: int = 0) -> float:
    """Held-out R^2 of Gaussian-kernel ridge regression.

    Inputs are whitened on the training half, which makes the score
    invariant to invertible affine maps of the features. The kernel system
    is ``(K + ridge * I) alpha = y - mean(y)``; the bandwidth defaults to
    the median pairwise distance of the whitened training features.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(target, dtype=float).ravel()
    if len(x) != len(y):
        raise MetricError("features and target disagree on sample count")
    if len(y) > max_points:
        idx = make_rng(seed + 7919).choice(len(y), max_points, replace=False)
        x, y = x[idx], y[idx]
    if len(y) < 100:
        raise MetricError("krr_r2 needs at least 100 samples")
    if np.std(y) == 0:
        raise MetricError("target has zero variance")
    tr, te = _split(len(y), seed)
    xtr, xte = _whiten(x[tr], x[te])
    ytr, yte = y[tr], y[te]
    d_tr = _sqdist(xtr, xtr)
    if bandwidth is None:
        med = np.median(np.sqrt(d_tr[np.triu_indices(len(tr), 1)]))
        bandwidth = med if med > 0 else 1.0
    c = 1.0 / (2.0 * bandwidth**2)
    k = np.exp(-c * d_tr)
    k[np.diag_indices_from(k)] += ridge
    y_mu = ytr.mean()
    alpha = np.linalg.solve(k, ytr - y_mu)
    pred = np.exp(-c * _sqdist(xte, xtr)) @ alpha + y_mu
    return _r2(yte, pred)


@dataclass
class AffineFit:
    r2: np.ndarray
    rank_deficient: bool


def affine_fit_r2(z_hat, z, seed: int = 0) -> AffineFit:
    """Per-latent held-out R^2 of the best affine map from ``z_hat`` to ``z``."""
    z_hat = np.asarray(z_hat, dtype=float)
    z = np.asarray(z, dtype=float)
    if z_hat.ndim == 1:
        z_hat = z_hat[:, None]
    if z.ndim == 1:
        z = z[:, None]
    if len(z_hat) != len(z):
        raise MetricError("z_hat and z disagree on sample count")
    if len(z) <= z_hat.shape[1] + 1:
        raise MetricError("need more samples than encoding columns")
    tr, te = _split(len(z), seed)
    design = np.column_stack([z_hat, np.ones(len(z_hat))])
    coef, _, rank, _ = np.linalg.lstsq(design[tr], z[tr], rcond=None)
    pred = design[te] @ coef
    r2 = np.array([_r2(z[te, j], pred[:, j]) for j in range(z.shape[1])])
    return AffineFit(r2, bool(rank < design.shape[1]))


def spearman_matrix(a, b) -> np.ndarray:
    """Spearman correlations between columns of ``a`` (rows) and ``b`` (cols).

    Constant columns get correlation 0.
    """
    ra = np.apply_along_axis(rankdata, 0, np.asarray(a, dtype=float))
    rb = np.apply_along_axis(rankdata, 0, np.asarray(b, dtype=float))
    ra = ra - ra.mean(0)
    rb = rb - rb.mean(0)
    na = np.sqrt((ra**2).sum(0))
    nb = np.sqrt((rb**2).sum(0))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = (ra.T @ rb) / np.outer(na, nb)
    corr[~np.isfinite(corr)] = 0.0
    return np.clip(corr, -1.0, 1.0)


def matched_correlation(z_hat, z):
    """Return (correlation matrix, assignment, mean matched |rho|).

    ``corr[i, j]`` correlates estimated column ``i`` with latent ``j``;
    ``assignment[j]`` is the estimated column matched to latent ``j``.
    """
    z_hat = np.asarray(z_hat, dtype=float)
    z = np.asarray(z, dtype=float)
    if z_hat.shape != z.shape:
        raise MetricError("matched correlation needs equal widths")
    corr = spearman_matrix(z_hat, z)
    rows, cols = linear_sum_assignment(-np.abs(corr))
    assignment = np.empty(z.shape[1], dtype=int)
    assignment[cols] = rows
    matched = np.abs(corr[assignment, np.arange(z.shape[1])])
    return corr, assignment, float(np.sort(matched).mean())


@dataclass
class IdentifiabilityReport:
    block_r2: dict
    affine_r2: list
    correlation: list
    assignment: list
    mean_matched_corr: float
    full_krr_r2: list = field(default_factory=list)
    affine_rank_deficient: bool = False
    metadata: dict = field(default_factory=dict)

    def flat(self) -> dict:
        out = {"schema_version": SCHEMA_VERSION}
        for k, v in self.block_r2.items():
            out[f"block_r2_{k}"] = v
        for j, v in enumerate(self.affine_r2):
            out[f"affine_r2_z{j + 1}"] = v
        for j, v in enumerate(self.full_krr_r2):
            out[f"krr_r2_z{j + 1}"] = v
        out["mean_matched_corr"] = self.mean_matched_corr
        out["assignment"] = list(self.assignment)
        out["correlation"] = self.correlation
        out["affine_rank_deficient"] = self.affine_rank_deficient
        for k, v in self.metadata.items():
            out[f"meta_{k}"] = v
        return out

    def to_json(self) -> str:
        return json.dumps(self.flat(), indent=2, sort_keys=True)

    def csv_row(self) -> dict:
        """Scalar columns only, for aggregation across seeds."""
        return {k: v for k, v in self.flat().items() if isinstance(v, (int, float, str, bool))}


def identifiability_report(z_hat, z, block: Optional[Sequence] = None, seed: int = 0,
                           metadata: Optional[dict] = None, **krr_kw) -> IdentifiabilityReport:
    """Evaluate an encoding against ground-truth latents.

    ``block`` lists encoding columns whose KRR R^2 against every latent is
    reported as ``block_r2["z<j>"]``; without it the whole encoding is used.
    """
    z_hat = np.asarray(z_hat, dtype=float)
    z = np.asarray(z, dtype=float)
    cols = list(range(z_hat.shape[1])) if block is None else list(block)
    block_r2 = {f"z{j + 1}": krr_r2(z_hat[:, cols], z[:, j], seed=seed, **krr_kw) for j in range(z.shape[1])}
    full = [krr_r2(z_hat, z[:, j], seed=seed, **krr_kw) for j in range(z.shape[1])]
    aff = affine_fit_r2(z_hat, z, seed=seed)
    if z_hat.shape == z.shape:
        corr, assignment, mcc = matched_correlation(z_hat, z)
    else:
        corr, assignment, mcc = np.zeros((z_hat.shape[1], z.shape[1])), np.zeros(0, int), float("nan")
    return IdentifiabilityReport(
        block_r2=block_r2,
        affine_r2=aff.r2.tolist(),
        correlation=corr.tolist(),
        assignment=[int(a) for a in assignment],
        mean_matched_corr=mcc,
        full_krr_r2=full,
        affine_rank_deficient=aff.rank_deficient,
        metadata=dict(metadata or {}),
    )


def granularity_consistency(report: IdentifiabilityReport, tau_affine: float = 0.95,
                            tau_element: float = 0.9, tau_block: float = 0.9) -> dict:
    """Check the downward implication ladder affine => element and affine => block.

    Returns flags that are True when the implication holds (vacuously when the
    affine premise fails).
    """
    premise = bool(report.affine_r2) and min(report.affine_r2) >= tau_affine
    block_scores = report.full_krr_r2 or list(report.block_r2.values())
    element_ok = (not premise) or report.mean_matched_corr >= tau_element
    block_ok = (not premise) or min(block_scores) >= tau_block
    return {
        "affine_premise": premise,
        "affine_implies_element": bool(element_ok),
        "affine_implies_block": bool(block_ok),
        "violations": [name for name, ok in (("element", element_ok), ("block", block_ok)) if not ok],
    }
