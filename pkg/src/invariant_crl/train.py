"""Penalised training objectives: reconstruction plus weighted invariance terms.

Three scenarios share one loop shape: marginal invariance (MMD between
selected encodings of environment pairs), multiview alignment (L2 between
selected encodings of paired views) and risk invariance (variance of
per-environment risks).
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import losses
from .nn import Adam, Mlp, NNError
from .scm import make_rng

log = logging.getLogger(__name__)

SCENARIOS = ("marginal", "multiview", "vrex")


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history or {}


@dataclass
class TrainConfig:
    batch_size: int = 4000
    n_epochs: int = 200
    learning_rate: float = 1e-3
    lambda_invariance: float = 1.0
    seed: int = 0
    encoding_width: Optional[int] = None
    scenario: str = "marginal"
    hidden: int = 128
    depth: int = 3
    slope: float = 0.2
    mmd_batch: int = 500
    reconstruction: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.lambda_invariance < 0:
            raise ValueError("lambda_invariance must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainedModel:
    encoders: List[Mlp]
    decoders: List[Mlp]
    selectors: List[losses.Selector]
    history: Dict[str, List[float]]
    config: TrainConfig
    x_mean: np.ndarray
    x_std: np.ndarray
    head: Optional[Mlp] = None
    extras: dict = field(default_factory=dict)

    def standardize(self, x):
        return (np.asarray(x, dtype=float) - self.x_mean) / self.x_std

    def encode(self, x, view: int = 0) -> np.ndarray:
        enc = self.encoders[min(view, len(self.encoders) - 1)]
        return enc(self.standardize(x))

    def predict(self, x) -> np.ndarray:
        return self.head(self.encode(x))

    def history_rows(self):
        keys = list(self.history)
        for e in range(len(self.history[keys[0]])):
            yield {"epoch": e + 1, **{k: self.history[k][e] for k in keys}}


def mlp_sizes(d_in, d_out, cfg: TrainConfig):
    return [d_in] + [cfg.hidden] * (cfg.depth - 1) + [d_out]


def _stats(arrays):
    pooled = np.vstack(arrays)
    mean = pooled.mean(0)
    std = pooled.std(0)
    std[std == 0] = 1.0
    return mean, std


class _Params:
    """Flat view over several MLPs for a single Adam instance."""

    def __init__(self, nets):
        self.nets = [n for n in nets if n is not None]
        self.list = [p for n in self.nets for p in n.params]

    def grads(self, per_net):
        out = []
        for net in self.nets:
            g = per_net.get(id(net))
            out += g if g is not None else [np.zeros_like(p) for p in net.params]
        return out

    def touch(self):
        for n in self.nets:
            n.touch()


def _accumulate(store, net, grads):
    cur = store.get(id(net))
    if cur is None:
        store[id(net)] = grads
    else:
        store[id(net)] = [a + b for a, b in zip(cur, grads)]


def _check_finite(value, name, epoch, history):
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite {name} loss at epoch {epoch}", history)


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    n_batches = max(1, n // batch_size)
    return [perm[i * batch_size:(i + 1) * batch_size] for i in range(n_batches)]


def _env_pairs(selectors):
    for sel in selectors:
        for a, b in itertools.combinations(sel.env_group, 2):
            yield sel, a, b


def train_marginal_invariance(env_data: Sequence[np.ndarray], selectors: Sequence[losses.Selector],
                              cfg: TrainConfig) -> TrainedModel:
    """Shared encoder/decoder; MMD between selected encodings of every env pair.

    ``env_data[k]`` holds the observations of environment ``k``. Each step
    draws one minibatch per environment; the MMD term uses at most
    ``cfg.mmd_batch`` rows of each.
    """
    if len(env_data) < 2:
        raise ValueError("marginal invariance needs at least two environments")
    for sel in selectors:
        if any(e >= len(env_data) or e < 0 for e in sel.env_group):
            raise ValueError(f"selector references unknown environment in {sel.env_group}")
    data = [np.asarray(x, dtype=float) for x in env_data]
    d = data[0].shape[1]
    width = cfg.encoding_width or d
    mean, std = _stats(data)
    data = [(x - mean) / std for x in data]

    enc = Mlp(mlp_sizes(d, width, cfg), cfg.slope, seed=cfg.seed * 1000 + 1, dtype=cfg.dtype)
    dec = Mlp(mlp_sizes(width, d, cfg), cfg.slope, seed=cfg.seed * 1000 + 2, dtype=cfg.dtype)
    params = _Params([enc, dec])
    opt = Adam(lr=cfg.learning_rate)
    rng = make_rng(cfg.seed * 1000 + 3)
    masks = {id(s): np.array(s.mask, bool) for s in selectors}
    history = {"recon": [], "invariance": [], "total": []}
    for k in range(len(data)):
        history[f"recon_env{k}"] = []

    n_steps = min(len(x) for x in data) // cfg.batch_size or 1
    for epoch in range(1, cfg.n_epochs + 1):
        perms = [rng.permutation(len(x)) for x in data]
        sums = {k: 0.0 for k in history}
        for step in range(n_steps):
            grads = {}
            codes, caches, batch = [], [], []
            recon_total = 0.0
            code_grads = []
            for k, x in enumerate(data):
                xb = x[perms[k][step * cfg.batch_size:(step + 1) * cfg.batch_size]]
                code, ecache = enc.forward(xb)
                codes.append(code)
                caches.append(ecache)
                batch.append(xb)
                gcode = np.zeros_like(code)
                if cfg.reconstruction:
                    xh, dcache = dec.forward(code)
                    r, gxh = losses.mse_reconstruction(xh, xb, return_grad=True)
                    recon_total += r
                    sums[f"recon_env{k}"] += r
                    gdec, gin = dec.backward(dcache, gxh)
                    _accumulate(grads, dec, gdec)
                    gcode += gin
                code_grads.append(gcode)
            inv_total = 0.0
            for sel, a, b in _env_pairs(selectors):
                m = masks[id(sel)]
                na = min(cfg.mmd_batch, len(codes[a]))
                nb = min(cfg.mmd_batch, len(codes[b]))
                val, ga, gb = losses.mmd_rbf(codes[a][:na, m], codes[b][:nb, m], return_grad=True)
                inv_total += val
                if cfg.lambda_invariance > 0:
                    code_grads[a][:na, m] += cfg.lambda_invariance * ga
                    code_grads[b][:nb, m] += cfg.lambda_invariance * gb
            for k in range(len(data)):
                genc, _ = enc.backward(caches[k], code_grads[k])
                _accumulate(grads, enc, genc)
            total = recon_total + cfg.lambda_invariance * inv_total
            _check_finite(total, "total", epoch, history)
            try:
                opt.step(params.list, params.grads(grads))
            except NNError as exc:
                raise TrainingDiverged(str(exc), history) from exc
            params.touch()
            sums["recon"] += recon_total
            sums["invariance"] += inv_total
            sums["total"] += total
        for key in history:
            history[key].append(sums[key] / n_steps)
        if epoch % 25 == 0 or epoch == cfg.n_epochs:
            log.info("epoch %d recon %.4g inv %.4g", epoch, history["recon"][-1], history["invariance"][-1])
    return TrainedModel([enc], [dec], list(selectors), history, cfg, mean, std)


def train_multiview(view_data: Sequence[np.ndarray], shared_block_size: int, cfg: TrainConfig) -> TrainedModel:
    """One encoder/decoder per view; L2 alignment on the first shared coordinates.

    Rows of the views must be paired (generated from the same latent draw).
    """
    if len(view_data) < 2:
        raise ValueError("multiview training needs at least two views")
    views = [np.asarray(v, dtype=float) for v in view_data]
    if len({len(v) for v in views}) != 1:
        raise ValueError("views must have paired (equal) row counts")
    n = len(views[0])
    stats = [(v.mean(0), np.where(v.std(0) > 0, v.std(0), 1.0)) for v in views]
    views = [(v - m) / s for v, (m, s) in zip(views, stats)]
    encs, decs = [], []
    for k, v in enumerate(views):
        width = cfg.encoding_width or v.shape[1]
        if not 0 < shared_block_size <= width:
            raise ValueError("shared block must fit inside the encoding")
        encs.append(Mlp(mlp_sizes(v.shape[1], width, cfg), cfg.slope, seed=cfg.seed * 1000 + 10 + k, dtype=cfg.dtype))
        decs.append(Mlp(mlp_sizes(width, v.shape[1], cfg), cfg.slope, seed=cfg.seed * 1000 + 20 + k, dtype=cfg.dtype))
    params = _Params(encs + (decs if cfg.reconstruction else []))
    opt = Adam(lr=cfg.learning_rate)
    rng = make_rng(cfg.seed * 1000 + 3)
    s = shared_block_size
    history = {"recon": [], "invariance": [], "total": []}
    n_steps = n // cfg.batch_size or 1
    for epoch in range(1, cfg.n_epochs + 1):
        perm = rng.permutation(n)
        sums = dict.fromkeys(history, 0.0)
        for step in range(n_steps):
            idx = perm[step * cfg.batch_size:(step + 1) * cfg.batch_size]
            grads = {}
            codes, caches, code_grads = [], [], []
            recon_total = 0.0
            for enc, dec, v in zip(encs, decs, views):
                code, cache = enc.forward(v[idx])
                gcode = np.zeros(code.shape)
                if cfg.reconstruction:
                    xh, dcache = dec.forward(code)
                    r, gxh = losses.mse_reconstruction(xh, v[idx], return_grad=True)
                    recon_total += r
                    gdec, gin = dec.backward(dcache, gxh)
                    _accumulate(grads, dec, gdec)
                    gcode += gin
                codes.append(code)
                caches.append(cache)
                code_grads.append(gcode)
            inv_total = 0.0
            for a, b in itertools.combinations(range(len(views)), 2):
                val, ga, gb = losses.l2_alignment(codes[a][:, :s], codes[b][:, :s], return_grad=True)
                inv_total += val
                code_grads[a][:, :s] += cfg.lambda_invariance * ga
                code_grads[b][:, :s] += cfg.lambda_invariance * gb
            for enc, cache, g in zip(encs, caches, code_grads):
                _accumulate(grads, enc, enc.backward(cache, g)[0])
            total = recon_total + cfg.lambda_invariance * inv_total
            _check_finite(total, "total", epoch, history)
            opt.step(params.list, params.grads(grads))
            params.touch()
            sums["recon"] += recon_total
            sums["invariance"] += inv_total
            sums["total"] += total
        for key in history:
            history[key].append(sums[key] / n_steps)
    model = TrainedModel(encs, decs if cfg.reconstruction else [], [], history, cfg,
                         stats[0][0], stats[0][1])
    model.extras["view_stats"] = stats
    model.extras["shared_block_size"] = s
    return model


def encode_view(model: TrainedModel, x, view: int) -> np.ndarray:
    m, s = model.extras["view_stats"][view]
    return model.encoders[view]((np.asarray(x, dtype=float) - m) / s)


def _risk_step(enc, head, batches, lam, penalize):
    """Per-environment MSE risks, objective value and gradients."""
    outs = []
    risks = []
    rgrads = []
    for xb, yb in batches:
        code, ecache = enc.forward(xb)
        pred, hcache = head.forward(code)
        r, g = losses.mse_risk(pred, yb, return_grad=True)
        outs.append((ecache, hcache))
        risks.append(r)
        rgrads.append(g)
    k = len(batches)
    if penalize:
        var, dvar = losses.risk_variance(risks, return_grad=True)
        weights = [1.0 / k + lam * dv for dv in dvar]
    else:
        var = losses.risk_variance(risks)
        weights = [1.0 / k] * k
    grads = {}
    for (ecache, hcache), g, w in zip(outs, rgrads, weights):
        ghead, gcode = head.backward(hcache, w * g)
        _accumulate(grads, head, ghead)
        _accumulate(grads, enc, enc.backward(ecache, gcode)[0])
    mean_risk = float(np.mean(risks))
    return mean_risk, var, risks, grads


def train_vrex(env_data: Sequence, cfg: TrainConfig, penalize: bool = True) -> TrainedModel:
    """Encoder plus linear head on mean risk + lambda * variance of env risks.

    ``env_data`` is a list of ``(observations, labels)``. With
    ``penalize=False`` the variance term is neither differentiated nor
    weighted, which is plain pooled empirical risk minimisation.
    """
    if len(env_data) < 2:
        raise ValueError("risk invariance needs at least two labelled environments")
    xs = [np.asarray(x, dtype=float) for x, _ in env_data]
    ys = [np.asarray(y, dtype=float).reshape(len(y), -1) for _, y in env_data]
    d = xs[0].shape[1]
    width = cfg.encoding_width or d
    mean, std = _stats(xs)
    xs = [(x - mean) / std for x in xs]
    enc = Mlp(mlp_sizes(d, width, cfg), cfg.slope, seed=cfg.seed * 1000 + 1, dtype=cfg.dtype)
    head = Mlp([width, ys[0].shape[1]], cfg.slope, seed=cfg.seed * 1000 + 4, dtype=cfg.dtype)
    params = _Params([enc, head])
    opt = Adam(lr=cfg.learning_rate)
    rng = make_rng(cfg.seed * 1000 + 3)
    history = {"risk": [], "invariance": [], "total": []}
    for k in range(len(xs)):
        history[f"risk_env{k}"] = []
    n_steps = min(len(x) for x in xs) // cfg.batch_size or 1
    lam = cfg.lambda_invariance if penalize else 0.0
    for epoch in range(1, cfg.n_epochs + 1):
        perms = [rng.permutation(len(x)) for x in xs]
        sums = dict.fromkeys(history, 0.0)
        for step in range(n_steps):
            sl = slice(step * cfg.batch_size, (step + 1) * cfg.batch_size)
            batches = [(x[p[sl]], y[p[sl]]) for x, y, p in zip(xs, ys, perms)]
            mean_risk, var, risks, grads = _risk_step(enc, head, batches, lam, penalize)
            total = mean_risk + lam * var
            _check_finite(total, "total", epoch, history)
            opt.step(params.list, params.grads(grads))
            params.touch()
            sums["risk"] += mean_risk
            sums["invariance"] += var
            sums["total"] += total
            for k, r in enumerate(risks):
                sums[f"risk_env{k}"] += r
        for key in history:
            history[key].append(sums[key] / n_steps)
    return TrainedModel([enc], [], [], history, cfg, mean, std, head=head)


def train_erm(env_data: Sequence, cfg: TrainConfig) -> TrainedModel:
    return train_vrex(env_data, cfg, penalize=False)
