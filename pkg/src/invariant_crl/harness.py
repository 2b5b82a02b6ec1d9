"""Experiment wiring: latent SCM -> mixing -> training -> identifiability report.

Each scenario runner takes an :class:`ExperimentConfig` and returns a
:class:`RunRecord` holding one report per seed plus the aggregate.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import os
import platform
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import yaml

from . import __version__, evaluate, losses, mixing, nn, scm, train

log = logging.getLogger(__name__)

SCENARIOS = ("nintervention", "multiview", "vrex", "variant_demo", "oracle")
OUT_ENV = "INVARIANT_CRL_OUT"
SUPPRESSION_THRESHOLD = 0.2
IDENTIFIED_THRESHOLD = 0.8


class ConfigError(ValueError):
    pass


SCENARIO_OPTIONS = {
    "nintervention": {
        "target": 1,
        "mu_range": [2.0, 5.0],
        "new_std": 0.02,
        "block": [0, 2],
        "degenerate": False,
    },
    "multiview": {
        "view_latents": [[0, 1], [0, 2]],
        "shared_block_size": 1,
    },
    "vrex": {
        "lambdas": [0.0, 1.0, 10.0, 100.0],
        "label_noise": 1.0,
        "spurious_gain": [0.5, 1.5],
        "spurious_noise": 0.5,
        "identical_envs": False,
        "probe_points": 500,
    },
    "variant_demo": {
        "variant": "independent",
        "target": 1,
        "mu_range": [2.0, 5.0],
        "new_std": 0.5,
        "block": [0, 2],
    },
    "oracle": {},
}

TRAIN_DEFAULTS = {
    "vrex": {"n_epochs": 60, "batch_size": 1000, "depth": 1},
}


def _default_scm(scenario: str, variant: str = "dependent") -> scm.LinearGaussianScm:
    if scenario == "multiview":
        return scm.LinearGaussianScm.from_edges(3, {(0, 1): 0.3, (0, 2): 0.3}, [0, 0, 0], [1, 1, 1])
    if scenario == "variant_demo" and variant == "independent":
        # z2 stands alone; z1 -> z3
        return scm.LinearGaussianScm.from_edges(3, {(0, 2): 1.0}, [0, 0, 0], [1, 1, 1])
    return scm.chain_scm()


@dataclass
class ExperimentConfig:
    scenario: str
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    n_samples: int = 50000
    scm: Optional[dict] = None
    interventions: List[dict] = field(default_factory=list)
    mixing_layers: Optional[int] = None
    mixing_slope: float = 0.2
    train: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    outdir: Optional[str] = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if not self.seeds:
            raise ConfigError("seed list must be non-empty")
        if self.n_samples < 2:
            raise ConfigError("n_samples must be >= 2")
        unknown = set(self.options) - set(SCENARIO_OPTIONS[self.scenario])
        if unknown:
            raise ConfigError(f"unknown options for {self.scenario}: {sorted(unknown)}")
        allowed = {f.name for f in fields(train.TrainConfig)} - {"seed", "scenario"}
        bad = set(self.train) - allowed
        if bad:
            raise ConfigError(f"unknown train settings: {sorted(bad)}")
        bad = set(self.eval) - {"ridge", "max_points"}
        if bad:
            raise ConfigError(f"unknown eval settings: {sorted(bad)}")
        self.options = {**SCENARIO_OPTIONS[self.scenario], **self.options}
        self.train = {**TRAIN_DEFAULTS.get(self.scenario, {}), **self.train}
        if self.mixing_layers is None:
            # the risk-invariance demo lives in the linear-SEM regime
            self.mixing_layers = 1 if self.scenario == "vrex" else 3
        self.eval = {"ridge": 1e-3, "max_points": 2000, **self.eval}
        if self.scm is None and self.scenario != "oracle":
            self.scm = _default_scm(self.scenario, self.options.get("variant", "dependent")).to_dict()
        if self.scenario == "oracle" and self.scm is None:
            self.scm = scm.chain_scm().to_dict()
        try:
            base = self.base_scm()
            for spec in self.intervention_specs():
                scm.EnvironmentModel(base, spec, 1)
            resolved = self.train_config(0).to_dict()
            self.train = {k: v for k, v in resolved.items() if k not in ("seed", "scenario")}
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        self._check_groups(base)

    def _check_groups(self, base):
        n = base.n_nodes
        opts = self.options
        if self.scenario in ("nintervention", "variant_demo"):
            if not 0 <= opts["target"] < n:
                raise ConfigError("intervention target out of range")
            if any(not 0 <= b < n for b in opts["block"]):
                raise ConfigError("selector block references a missing encoding coordinate")
        if self.scenario == "multiview":
            if len(opts["view_latents"]) < 2:
                raise ConfigError("multiview needs at least two views")
            for v in opts["view_latents"]:
                if any(not 0 <= j < n for j in v):
                    raise ConfigError("view references a missing latent")
        if self.scenario == "vrex" and len(opts["spurious_gain"]) < 2:
            raise ConfigError("vrex needs at least two environments")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "scenario" not in d:
            raise ConfigError("config needs a scenario")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a mapping")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    def semantic(self) -> dict:
        """Fields that determine results for a given seed."""
        d = self.to_dict()
        d.pop("outdir")
        d.pop("seeds")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def base_scm(self) -> scm.LinearGaussianScm:
        return scm.LinearGaussianScm.from_dict(self.scm)

    def intervention_specs(self) -> List[scm.InterventionSpec]:
        return [scm.InterventionSpec.from_dict(d) for d in self.interventions]

    def train_config(self, seed: int, **overrides) -> train.TrainConfig:
        kind = {"multiview": "multiview", "vrex": "vrex"}.get(self.scenario, "marginal")
        return train.TrainConfig(**{**self.train, **overrides, "seed": seed, "scenario": kind})

    def output_root(self) -> Path:
        return Path(self.outdir or os.environ.get(OUT_ENV, "runs"))


def apply_overrides(doc: dict, assignments: List[str]) -> dict:
    """Apply ``dotted.key=value`` overrides; values are parsed as YAML scalars."""
    doc = copy.deepcopy(doc)
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override inside non-mapping {key!r}")
        node[parts[-1]] = yaml.safe_load(raw)
    return doc


def derive_seed(seed: int, tag: str) -> int:
    """Independent integer seed for one named stream of one run."""
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass
class SeedResult:
    seed: int
    report: evaluate.IdentifiabilityReport
    history: Dict[str, list]
    extra: dict = field(default_factory=dict)
    model: Optional[train.TrainedModel] = field(default=None, repr=False)


@dataclass
class RunRecord:
    scenario: str
    config: dict
    config_hash: str
    results: List[SeedResult]
    summary: dict
    wall_clock: float = 0.0
    version: str = __version__
    rows: List[dict] = field(default_factory=list)

    def report_dicts(self) -> List[dict]:
        out = []
        for r in self.results:
            d = r.report.flat()
            d.update({f"extra_{k}": v for k, v in r.extra.items()})
            out.append(d)
        return out


# ---------------------------------------------------------------- scenarios


def mixed_environments(envs, n, seed, cfg: ExperimentConfig):
    net = mixing.random_mixing(envs[0].base.n_nodes, cfg.mixing_layers, derive_seed(seed, "mixing"),
                               cfg.mixing_slope)
    zs = [scm.sample(e, n, derive_seed(seed, f"latent{e.env_id}")).values for e in envs]
    xs = [mixing.mix(net, z) for z in zs]
    return net, zs, xs


def nintervention_envs(cfg: ExperimentConfig, seed: int):
    base = cfg.base_scm()
    opts = cfg.options
    t = opts["target"]
    if opts["degenerate"]:
        mean, cov = scm.joint_moments(base)
        mu, sd = float(mean[t]), float(np.sqrt(cov[t, t]))
    else:
        lo, hi = opts["mu_range"]
        mu = float(scm.make_rng(derive_seed(seed, "mu")).uniform(lo, hi))
        sd = float(opts["new_std"])
    spec = scm.InterventionSpec("nintervention", t, mu, sd)
    return [scm.EnvironmentModel(base, env_id=0), scm.EnvironmentModel(base, spec, 1)], mu, sd


def _marginal_run(cfg: ExperimentConfig, seed: int, envs, extra: dict) -> SeedResult:
    n = cfg.n_samples
    net, zs, xs = mixed_environments(envs, n, seed, cfg)
    block = list(cfg.options["block"])
    width = cfg.train.get("encoding_width") or xs[0].shape[1]
    sel = losses.Selector.from_indices(width, block, env_group=tuple(e.env_id for e in envs),
                                       block_size=len(block))
    tcfg = cfg.train_config(seed)
    model = train.train_marginal_invariance(xs, [sel], tcfg)
    z = np.vstack(zs)
    codes = model.encode(np.vstack(xs))
    report = evaluate.identifiability_report(
        codes, z, block=block, seed=seed, metadata={"seed": seed, "scenario": cfg.scenario,
                                                   "mixing_seed": derive_seed(seed, "mixing"),
                                                   "n_per_env": n, **extra}, **cfg.eval)
    comp = sel.complement().indices
    extra = dict(extra)
    if comp:
        extra["complement_r2"] = {
            f"z{j + 1}": evaluate.krr_r2(codes[:, comp], z[:, j], seed=seed, **cfg.eval)
            for j in range(z.shape[1])
        }
    return SeedResult(seed, report, model.history, extra, model)


def run_nintervention(cfg: ExperimentConfig) -> RunRecord:
    if cfg.scenario != "nintervention":
        raise ConfigError("run_nintervention needs scenario 'nintervention'")

    def one(seed):
        envs, mu, sd = nintervention_envs(cfg, seed)
        try:
            return _marginal_run(cfg, seed, envs, {"mu_tilde": mu, "sigma_tilde": sd})
        except train.TrainingDiverged as exc:
            raise train.TrainingDiverged(f"seed {seed}: {exc}", exc.history) from exc

    return _collect(cfg, one)


def variant_envs(cfg: ExperimentConfig, seed: int):
    base = cfg.base_scm()
    opts = cfg.options
    lo, hi = opts["mu_range"]
    mu = float(scm.make_rng(derive_seed(seed, "mu")).uniform(lo, hi))
    spec = scm.InterventionSpec("nintervention", opts["target"], mu, float(opts["new_std"]))
    return [scm.EnvironmentModel(base, env_id=0), scm.EnvironmentModel(base, spec, 1)], mu


def run_variant_demo(cfg: ExperimentConfig) -> RunRecord:
    """Marginal-invariance training, then score the complement block on the variant latent."""
    if cfg.scenario != "variant_demo":
        raise ConfigError("run_variant_demo needs scenario 'variant_demo'")

    def one(seed):
        envs, mu = variant_envs(cfg, seed)
        res = _marginal_run(cfg, seed, envs, {"mu_tilde": mu, "variant": cfg.options["variant"]})
        t = cfg.options["target"]
        res.extra["variant_complement_r2"] = res.extra["complement_r2"][f"z{t + 1}"]
        return res

    return _collect(cfg, one)


def demo_variant_latents(variant: str = "independent", config: Optional[ExperimentConfig] = None) -> RunRecord:
    """Run the variant-latent demo for ``variant`` in {"independent", "dependent"}.

    The report's ``extra["variant_complement_r2"]`` is the complement block's
    R^2 against the variant latent. Only the independent case, with
    reconstruction enforced, is expected to score high.
    """
    if variant not in ("independent", "dependent"):
        raise ConfigError(f"unknown variant scenario {variant!r}")
    if config is None:
        config = ExperimentConfig("variant_demo", options={"variant": variant})
    elif config.options["variant"] != variant:
        raise ConfigError("config disagrees with requested variant scenario")
    return run_variant_demo(config)


def multiview_data(cfg: ExperimentConfig, seed: int):
    base = cfg.base_scm()
    z = scm.sample(scm.EnvironmentModel(base), cfg.n_samples, derive_seed(seed, "latent0")).values
    views = []
    for k, idx in enumerate(cfg.options["view_latents"]):
        net = mixing.random_mixing(len(idx), cfg.mixing_layers, derive_seed(seed, f"mixing{k}"),
                                   cfg.mixing_slope)
        views.append(mixing.mix(net, z[:, idx]))
    return z, views


def run_multiview(cfg: ExperimentConfig) -> RunRecord:
    if cfg.scenario != "multiview":
        raise ConfigError("run_multiview needs scenario 'multiview'")
    s = int(cfg.options["shared_block_size"])
    view_latents = cfg.options["view_latents"]
    shared = sorted(set.intersection(*(set(v) for v in view_latents)))

    def one(seed):
        z, views = multiview_data(cfg, seed)
        model = train.train_multiview(views, s, cfg.train_config(seed))
        codes = [train.encode_view(model, v, k) for k, v in enumerate(views)]
        first = codes[0]
        report = evaluate.identifiability_report(
            first, z[:, view_latents[0]] if first.shape[1] == len(view_latents[0]) else z,
            block=list(range(s)), seed=seed, metadata={"seed": seed, "scenario": "multiview"}, **cfg.eval)
        # block R^2 of each view's shared coordinates against every latent
        per_view = []
        for c in codes:
            per_view.append({f"z{j + 1}": evaluate.krr_r2(c[:, :s], z[:, j], seed=seed, **cfg.eval)
                             for j in range(z.shape[1])})
        report.block_r2 = {k: float(np.mean([pv[k] for pv in per_view])) for k in per_view[0]}
        extra = {
            "shared_latents": [j + 1 for j in shared],
            "per_view_shared_r2": per_view,
            "final_alignment": model.history["invariance"][-1],
        }
        return SeedResult(seed, report, model.history, extra, model)

    return _collect(cfg, one)


def vrex_data(cfg: ExperimentConfig, seed: int, n: Optional[int] = None):
    """Latents (z1, z2) with y = z1 + noise and z2 = gain_k * y + noise.

    The label depends on z1 alone; z2 is a proxy of the label whose gain,
    and hence whose marginal, changes across environments.
    """
    n = n or cfg.n_samples
    opts = cfg.options
    gains = opts["spurious_gain"]
    if opts["identical_envs"]:
        gains = [gains[0]] * len(gains)
    net = mixing.random_mixing(2, cfg.mixing_layers, derive_seed(seed, "mixing"), cfg.mixing_slope)
    data = []
    for k, gain in enumerate(gains):
        rng = scm.make_rng(derive_seed(seed, f"latent{k}"))
        z1 = rng.standard_normal(n)
        y = z1 + opts["label_noise"] * rng.standard_normal(n)
        z2 = gain * y + opts["spurious_noise"] * rng.standard_normal(n)
        z = np.column_stack([z1, z2])
        data.append((z, mixing.mix(net, z), y))
    return net, data


def latent_sensitivity(model: train.TrainedModel, net: mixing.MixingNet, z: np.ndarray, h: float = 1e-3):
    """Mean absolute finite-difference derivative of the prediction along each latent."""
    out = []
    for j in range(z.shape[1]):
        e = np.zeros(z.shape[1])
        e[j] = h
        up = model.predict(mixing.mix(net, z + e))
        dn = model.predict(mixing.mix(net, z - e))
        out.append(float(np.mean(np.abs(up - dn)) / (2 * h)))
    return out


def run_vrex(cfg: ExperimentConfig) -> RunRecord:
    """Sweep the invariance weight; one row per (lambda, seed)."""
    if cfg.scenario != "vrex":
        raise ConfigError("run_vrex needs scenario 'vrex'")
    lambdas = [float(l) for l in cfg.options["lambdas"]]
    rows = []
    results = []
    start = time.perf_counter()
    for seed in cfg.seeds:
        net, data = vrex_data(cfg, seed)
        probe = np.vstack([z[: cfg.options["probe_points"]] for z, _, _ in data])
        for lam in lambdas:
            model = train.train_vrex([(x, y) for _, x, y in data], cfg.train_config(seed, lambda_invariance=lam))
            preds = [model.predict(x).ravel() for _, x, _ in data]
            risks = [float(np.mean((p - y) ** 2)) for p, (_, _, y) in zip(preds, data)]
            sens = latent_sensitivity(model, net, probe)
            row = {
                "lambda": lam, "seed": seed,
                "pooled_risk": float(np.mean(risks)),
                "risk_variance": losses.risk_variance(risks),
                "z1_sensitivity": sens[0], "z2_sensitivity": sens[1],
            }
            rows.append(row)
            z = np.vstack([z for z, _, _ in data])
            codes = np.vstack([model.encode(x) for _, x, _ in data])
            rep = evaluate.identifiability_report(codes, z, seed=seed,
                                                  metadata={"seed": seed, "scenario": "vrex", "lambda": lam},
                                                  **cfg.eval)
            results.append(SeedResult(seed, rep, model.history, dict(row), model))
    summary = {}
    for lam in lambdas:
        sub = [r for r in rows if r["lambda"] == lam]
        for key in ("pooled_risk", "risk_variance", "z1_sensitivity", "z2_sensitivity"):
            summary[f"lambda={lam:g}/{key}"] = _stats([r[key] for r in sub])
    return RunRecord(cfg.scenario, cfg.to_dict(), cfg.config_hash(), results, summary,
                     time.perf_counter() - start, rows=rows)


def oracle_table(cfg: ExperimentConfig) -> List[dict]:
    base = cfg.base_scm()
    specs = cfg.intervention_specs()
    if not specs:
        specs = [scm.InterventionSpec("imperfect", t, 1.0 + t, 0.3) for t in range(base.n_nodes)]
        specs.append(scm.InterventionSpec("nintervention", min(1, base.n_nodes - 1), 3.0, 0.02))
    rows = []
    for k, spec in enumerate(specs, start=1):
        env = scm.EnvironmentModel(base, spec, k)
        marginal, score_set = scm.invariant_partition(env)
        rep = scm.verify_invariance_oracle(base, env)
        agree = rep.invariant_sets() == (marginal, score_set)
        rows.append({
            "env_id": k,
            "kind": spec.kind,
            "target": spec.target + 1,
            "marginal_invariant": [i + 1 for i in sorted(marginal)],
            "score_invariant": [i + 1 for i in sorted(score_set)],
            "marginal_flags": rep.marginal,
            "score_flags": rep.score,
            "joint_marginal_ok": rep.joint_marginal_ok,
            "agrees": agree,
        })
    return rows


def run_oracle(cfg: ExperimentConfig) -> List[dict]:
    if cfg.scenario != "oracle":
        raise ConfigError("run_oracle needs scenario 'oracle'")
    return oracle_table(cfg)


RUNNERS = {
    "nintervention": run_nintervention,
    "multiview": run_multiview,
    "vrex": run_vrex,
    "variant_demo": run_variant_demo,
}


def run(cfg: ExperimentConfig):
    if cfg.scenario == "oracle":
        return run_oracle(cfg)
    return RUNNERS[cfg.scenario](cfg)


# ---------------------------------------------------------------- aggregation


def _stats(values) -> dict:
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        # avoid rounding noise in the mean leaking into the spread
        return {"mean": lo, "sd": 0.0, "min": lo, "max": hi}
    return {"mean": float(v.mean()), "sd": float(v.std()), "min": lo, "max": hi}


def _metric_values(report_dicts: List[dict]) -> Dict[str, list]:
    keys = sorted({k for d in report_dicts for k, v in d.items()
                   if isinstance(v, (int, float)) and not isinstance(v, bool)
                   and k not in ("schema_version", "meta_seed", "extra_seed")})
    return {k: [d[k] for d in report_dicts if k in d] for k in keys}


def aggregate(records) -> dict:
    """Per-metric mean, population sd, min and max across reports.

    Accepts RunRecords or flat report dicts; all must share one scenario.
    """
    dicts = []
    for r in records:
        dicts.extend(r.report_dicts() if isinstance(r, RunRecord) else [r])
    if not dicts:
        raise ValueError("nothing to aggregate")
    scenarios = {d.get("meta_scenario") for d in dicts}
    if len(scenarios) > 1:
        raise ValueError(f"cannot aggregate mixed scenarios {sorted(map(str, scenarios))}")
    return {k: _stats(v) for k, v in _metric_values(dicts).items()}


def _collect(cfg: ExperimentConfig, one) -> RunRecord:
    start = time.perf_counter()
    results = []
    for seed in cfg.seeds:
        t0 = time.perf_counter()
        res = one(seed)
        log.info("%s seed %d done in %.1fs", cfg.scenario, seed, time.perf_counter() - t0)
        results.append(res)
    dicts = []
    for r in results:
        d = r.report.flat()
        for k, v in r.extra.items():
            if isinstance(v, dict):
                d.update({f"extra_{k}_{kk}": vv for kk, vv in v.items() if isinstance(vv, (int, float))})
            elif isinstance(v, (int, float)) and not isinstance(v, bool):
                d[f"extra_{k}"] = v
        dicts.append(d)
    summary = {k: _stats(v) for k, v in _metric_values(dicts).items()}
    summary.update(_verdicts(cfg, summary))
    return RunRecord(cfg.scenario, cfg.to_dict(), cfg.config_hash(), results, summary,
                     time.perf_counter() - start)


def _verdicts(cfg, summary) -> dict:
    out = {}
    if cfg.scenario == "nintervention":
        t = cfg.options["target"]
        block = set(cfg.options["block"])
        z2 = summary[f"block_r2_z{t + 1}"]["mean"]
        out["flags"] = {
            "variant_suppressed": z2 <= SUPPRESSION_THRESHOLD,
            "invariant_identified": all(summary[f"block_r2_z{j + 1}"]["mean"] >= IDENTIFIED_THRESHOLD
                                        for j in block),
            "degenerate_control": bool(cfg.options["degenerate"]),
        }
    return out


# ---------------------------------------------------------------- output


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_csv(rows: List[dict], path) -> None:
    rows = list(rows)
    keys = list(rows[0]) if rows else []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow(_jsonable(r))


def save_model(model: train.TrainedModel, path) -> None:
    nets = {f"encoder{k}": e for k, e in enumerate(model.encoders)}
    nets.update({f"decoder{k}": d for k, d in enumerate(model.decoders)})
    if model.head is not None:
        nets["head"] = model.head
    nn.save_checkpoint(path, nets)


def run_dir(cfg: ExperimentConfig) -> Path:
    return cfg.output_root() / cfg.scenario / cfg.config_hash()


def write_record(record: RunRecord, cfg: ExperimentConfig) -> Path:
    """``<root>/<scenario>/<hash>/<seed>/`` per seed, summary at the hash level."""
    root = run_dir(cfg)
    for res in record.results:
        sub = root / str(res.seed)
        if record.rows:
            sub = root / str(res.seed) / f"lambda={res.extra['lambda']:g}"
        sub.mkdir(parents=True, exist_ok=True)
        doc = {**res.report.flat(), "extra": res.extra, "config": record.config,
               "config_hash": record.config_hash}
        dump_json(doc, sub / "report.json")
        keys = list(res.history)
        write_csv([{"epoch": e + 1, **{k: res.history[k][e] for k in keys}}
                   for e in range(len(res.history[keys[0]]))], sub / "losses.csv")
        if res.model is not None:
            save_model(res.model, sub / "checkpoint.json")
    meta = {
        "schema_version": evaluate.SCHEMA_VERSION,
        "scenario": record.scenario,
        "config_hash": record.config_hash,
        "config": record.config,
        "seeds": [r.seed for r in record.results],
        "summary": record.summary,
        "library_version": record.version,
        "python": platform.python_version(),
    }
    dump_json(meta, root / "summary.json")
    write_csv([{"metric": k, **v} for k, v in record.summary.items() if "mean" in v], root / "summary.csv")
    if record.rows:
        write_csv(record.rows, root / "sweep.csv")
    # timing kept apart so report files stay byte-reproducible
    dump_json({"wall_clock_seconds": record.wall_clock}, root / "timing.json")
    return root


def plan(cfg: ExperimentConfig) -> dict:
    """Resolved configuration and what a run would produce."""
    out = {"scenario": cfg.scenario, "config_hash": cfg.config_hash(), "resolved_config": cfg.to_dict()}
    if cfg.scenario != "oracle":
        out["output_dir"] = str(run_dir(cfg))
        out["seeds"] = cfg.seeds
    return out
