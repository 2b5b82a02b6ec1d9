"""Linear-Gaussian latent structural causal models.

Nodes are indexed ``0..N-1`` in declaration order. An edge ``(j, i)`` means
``j -> i`` and is stored in ``weights[i, j]``.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

KINDS = ("observational", "perfect", "imperfect", "nintervention")


class ScmError(ValueError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; the stream depends only on ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


@dataclass(frozen=True)
class Dag:
    n_nodes: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ScmError("a DAG needs at least one node")
        edges = [tuple(int(v) for v in e) for e in self.edges]
        if len(set(edges)) != len(edges):
            raise ScmError("duplicate edges")
        for j, i in edges:
            if not (0 <= j < self.n_nodes and 0 <= i < self.n_nodes):
                raise ScmError(f"edge {(j, i)} out of range for {self.n_nodes} nodes")
            if i == j:
                raise ScmError(f"self-loop on node {i}")
        object.__setattr__(self, "edges", frozenset(edges))
        # raises on cycles
        object.__setattr__(self, "_order", _kahn(self.n_nodes, self.edges))

    def parents(self, i: int) -> list[int]:
        return sorted(j for j, c in self.edges if c == i)

    def children(self, j: int) -> list[int]:
        return sorted(c for p, c in self.edges if p == j)


def _kahn(n: int, edges: Iterable[tuple[int, int]]) -> tuple[int, ...]:
    indeg = [0] * n
    out: list[list[int]] = [[] for _ in range(n)]
    for j, i in edges:
        indeg[i] += 1
        out[j].append(i)
    heap = [v for v in range(n) if indeg[v] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        v = heapq.heappop(heap)
        order.append(v)
        for c in out[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    if len(order) != n:
        raise ScmError("graph contains a cycle")
    return tuple(order)


def topological_order(dag: Dag) -> tuple[int, ...]:
    """Topological order, ties broken by ascending node index."""
    return dag._order


def transitive_closure_of(dag: Dag, targets: Iterable[int]) -> frozenset:
    """Targets together with all of their descendants."""
    seen = set(targets)
    stack = list(seen)
    while stack:
        for c in dag.children(stack.pop()):
            if c not in seen:
                seen.add(c)
                stack.append(c)
    return frozenset(seen)


def closed_parent_set(dag: Dag, targets: Iterable[int]) -> frozenset:
    targets = set(targets)
    out = set(targets)
    for t in targets:
        out.update(dag.parents(t))
    return frozenset(out)


def markov_blanket(dag: Dag, node: int) -> frozenset:
    """Parents, children and co-parents of ``node`` (excluding the node)."""
    mb = set(dag.parents(node))
    for c in dag.children(node):
        mb.add(c)
        mb.update(dag.parents(c))
    mb.discard(node)
    return frozenset(mb)


@dataclass(frozen=True, eq=False)
class LinearGaussianScm:
    dag: Dag
    weights: np.ndarray
    intercepts: np.ndarray
    noise_std: np.ndarray

    def __post_init__(self):
        n = self.dag.n_nodes
        w = np.array(self.weights, dtype=float).reshape(n, n)
        c = np.array(self.intercepts, dtype=float).reshape(n)
        s = np.array(self.noise_std, dtype=float).reshape(n)
        pattern = {(j, i) for i, j in zip(*np.nonzero(w))}
        if pattern != set(self.dag.edges):
            raise ScmError("weight sparsity pattern must match the DAG edges exactly")
        if not np.all(np.isfinite(w)) or not np.all(np.isfinite(c)):
            raise ScmError("non-finite parameters")
        if not np.all(s > 0):
            raise ScmError("noise_std must be strictly positive")
        for a in (w, c, s):
            a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "intercepts", c)
        object.__setattr__(self, "noise_std", s)

    @property
    def n_nodes(self) -> int:
        return self.dag.n_nodes

    @classmethod
    def from_edges(cls, n_nodes, weighted_edges, intercepts, noise_std):
        """Build from ``{(parent, child): weight}``."""
        w = np.zeros((n_nodes, n_nodes))
        for (j, i), v in dict(weighted_edges).items():
            w[i, j] = v
        dag = Dag(n_nodes, frozenset(dict(weighted_edges)))
        return cls(dag, w, intercepts, noise_std)

    def to_dict(self) -> dict:
        n = self.n_nodes
        edges = sorted(self.dag.edges)
        return {
            "n_nodes": n,
            "edges": [[j, i] for j, i in edges],
            "weights": self.weights.tolist(),
            "intercepts": self.intercepts.tolist(),
            "noise_std": self.noise_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearGaussianScm":
        dag = Dag(int(d["n_nodes"]), frozenset(tuple(e) for e in d["edges"]))
        return cls(dag, np.array(d["weights"]), np.array(d["intercepts"]), np.array(d["noise_std"]))


def chain_scm(mu1=10.5, sigma1=0.8, alpha1=0.02, beta1=0.0, sigma2=0.5,
              alpha2=1.0, beta2=3.0, sigma3=1.0) -> LinearGaussianScm:
    """Three-node chain z1 -> z2 -> z3 with the ablation defaults."""
    return LinearGaussianScm.from_edges(
        3, {(0, 1): alpha1, (1, 2): alpha2}, [mu1, beta1, beta2], [sigma1, sigma2, sigma3]
    )


def random_scm(n_nodes: int, seed: int, edge_prob: float = 0.5) -> LinearGaussianScm:
    """Random lower-triangular SCM; weights bounded away from zero."""
    rng = make_rng(seed)
    edges = {}
    for i in range(n_nodes):
        for j in range(i):
            if rng.random() < edge_prob:
                edges[(j, i)] = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.5)
    return LinearGaussianScm.from_edges(
        n_nodes, edges, rng.normal(0.0, 1.0, n_nodes), rng.uniform(0.5, 1.5, n_nodes)
    )


def joint_moments(scm: LinearGaussianScm) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of ``z = B z + c + u``."""
    n = scm.n_nodes
    a = np.linalg.inv(np.eye(n) - scm.weights)
    mean = a @ scm.intercepts
    cov = a @ np.diag(scm.noise_std**2) @ a.T
    return mean, 0.5 * (cov + cov.T)


@dataclass(frozen=True, eq=False)
class InterventionSpec:
    kind: str = "observational"
    target: Optional[int] = None
    new_intercept: float = 0.0
    new_std: float = 1.0
    new_weights: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScmError(f"unknown intervention kind {self.kind!r}")
        if self.kind == "observational":
            if self.target is not None:
                raise ScmError("observational spec takes no target")
        elif self.target is None:
            raise ScmError(f"{self.kind} intervention needs a target")
        if not self.new_std > 0:
            raise ScmError("new_std must be positive")
        if self.new_weights is not None:
            if self.kind != "imperfect":
                raise ScmError("only imperfect interventions carry parent weights")
            object.__setattr__(self, "new_weights", tuple(float(v) for v in self.new_weights))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "target": self.target,
            "new_intercept": float(self.new_intercept),
            "new_std": float(self.new_std),
            "new_weights": None if self.new_weights is None else list(self.new_weights),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InterventionSpec":
        return cls(
            kind=d.get("kind", "observational"),
            target=d.get("target"),
            new_intercept=float(d.get("new_intercept", 0.0)),
            new_std=float(d.get("new_std", 1.0)),
            new_weights=d.get("new_weights"),
        )


OBSERVATIONAL = InterventionSpec()


@dataclass(frozen=True, eq=False)
class EnvironmentModel:
    base: LinearGaussianScm
    spec: InterventionSpec = OBSERVATIONAL
    env_id: int = 0

    def __post_init__(self):
        t = self.spec.target
        if t is not None and not 0 <= t < self.base.n_nodes:
            raise ScmError(f"target {t} out of range")
        if self.spec.new_weights is not None:
            if len(self.spec.new_weights) != len(self.base.dag.parents(t)):
                raise ScmError("new_weights must have one entry per parent of the target")


@dataclass(frozen=True, eq=False)
class LatentBatch:
    values: np.ndarray
    env_id: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ScmError("latent batch must be a matrix")
        if not np.all(np.isfinite(v)):
            raise ScmError("latent batch has non-finite entries")
        object.__setattr__(self, "values", v)

    def to_csv(self, path, prefix: str = "z") -> None:
        n = self.values.shape[1]
        header = ",".join([f"{prefix}{i + 1}" for i in range(n)] + ["env_id"])
        data = np.column_stack([self.values, np.full(len(self.values), self.env_id)])
        fmt = ["%.17g"] * n + ["%d"]
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt=fmt)


def intervened_scm(env: EnvironmentModel) -> LinearGaussianScm:
    """The mechanism-replaced SCM for perfect and imperfect interventions."""
    spec, base = env.spec, env.base
    if spec.kind == "observational":
        return base
    if spec.kind == "nintervention":
        raise ScmError("a nintervention is not a mechanism replacement")
    t = spec.target
    w = base.weights.copy()
    c = base.intercepts.copy()
    s = base.noise_std.copy()
    c[t] = spec.new_intercept
    s[t] = spec.new_std
    if spec.kind == "perfect":
        w[t, :] = 0.0
        edges = frozenset(e for e in base.dag.edges if e[1] != t)
        return LinearGaussianScm(Dag(base.n_nodes, edges), w, c, s)
    if spec.new_weights is not None:
        parents = base.dag.parents(t)
        w[t, parents] = spec.new_weights
        if np.any(w[t, parents] == 0):
            edges = frozenset(e for e in base.dag.edges if not (e[1] == t and w[t, e[0]] == 0))
            return LinearGaussianScm(Dag(base.n_nodes, edges), w, c, s)
    return LinearGaussianScm(base.dag, w, c, s)


def env_moments(env: EnvironmentModel) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form mean and covariance of the environment's latent law."""
    if env.spec.kind != "nintervention":
        return joint_moments(intervened_scm(env))
    mean, cov = joint_moments(env.base)
    t = env.spec.target
    mean = mean.copy()
    cov = cov.copy()
    mean[t] = env.spec.new_intercept
    cov[t, :] = 0.0
    cov[:, t] = 0.0
    cov[t, t] = env.spec.new_std**2
    return mean, cov


def _ancestral_sample(scm: LinearGaussianScm, noise: np.ndarray) -> np.ndarray:
    z = np.zeros_like(noise)
    for i in topological_order(scm.dag):
        z[:, i] = z @ scm.weights[i] + scm.intercepts[i] + scm.noise_std[i] * noise[:, i]
    return z


def sample(env: EnvironmentModel, n: int, seed: int) -> LatentBatch:
    """Draw ``n`` i.i.d. latent rows.

    Stream layout: one Philox stream per ``seed``; standard-normal noise of
    shape ``(n, N)`` is drawn first, then (nintervention only) one column of
    replacement draws.
    """
    if n < 1:
        raise ScmError("n must be positive")
    rng = make_rng(seed)
    noise = rng.standard_normal((n, env.base.n_nodes))
    if env.spec.kind == "nintervention":
        # children were already computed from the pre-change value
        z = _ancestral_sample(env.base, noise)
        t = env.spec.target
        z[:, t] = env.spec.new_intercept + env.spec.new_std * rng.standard_normal(n)
    else:
        z = _ancestral_sample(intervened_scm(env), noise)
    return LatentBatch(z, env.env_id)


def gaussian_score(mean: np.ndarray, cov: np.ndarray, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return -np.linalg.solve(cov, (z - mean).T).T


def score(scm: LinearGaussianScm, z: np.ndarray) -> np.ndarray:
    """Gradient of the log-density of the SCM's joint at ``z`` (vector or rows)."""
    mean, cov = joint_moments(scm)
    return gaussian_score(mean, cov, z)


def env_score(env: EnvironmentModel, z: np.ndarray) -> np.ndarray:
    mean, cov = env_moments(env)
    return gaussian_score(mean, cov, z)


def invariant_partition(env: EnvironmentModel) -> tuple[frozenset, frozenset]:
    """(marginal-invariant set, score-invariant set) relative to the base SCM.

    For a nintervention the remaining nodes keep their joint law, but the
    score of every node in the target's Markov blanket changes, since the
    base log-density couples them to the target.
    """
    if env.spec.kind == "observational":
        raise ScmError("no intervention to partition against")
    dag, t = env.base.dag, env.spec.target
    nodes = frozenset(range(dag.n_nodes))
    if env.spec.kind == "nintervention":
        return nodes - {t}, nodes - ({t} | markov_blanket(dag, t))
    return nodes - transitive_closure_of(dag, [t]), nodes - closed_parent_set(dag, [t])


@dataclass
class OracleReport:
    marginal: list
    score: list
    joint_marginal_ok: bool
    max_mean_gap: list
    max_var_gap: list

    def invariant_sets(self) -> tuple[frozenset, frozenset]:
        return (
            frozenset(i for i, f in enumerate(self.marginal) if f),
            frozenset(i for i, f in enumerate(self.score) if f),
        )


def probe_points(scm: LinearGaussianScm, n: int = 25, seed: int = 0) -> np.ndarray:
    return sample(EnvironmentModel(scm), n, seed).values


def verify_invariance_oracle(base: LinearGaussianScm, env: EnvironmentModel,
                             tol: float = 1e-9) -> OracleReport:
    """Per-node analytic invariance check from closed-form moments and scores."""
    if env.base is not base:
        raise ScmError("environment must be built on the given base SCM")
    m0, c0 = joint_moments(base)
    m1, c1 = env_moments(env)
    mean_gap = np.abs(m0 - m1)
    var_gap = np.abs(np.diag(c0) - np.diag(c1))
    marginal = [bool(a <= tol and b <= tol) for a, b in zip(mean_gap, var_gap)]
    inv = [i for i, f in enumerate(marginal) if f]
    joint_ok = bool(np.all(np.abs(c0[np.ix_(inv, inv)] - c1[np.ix_(inv, inv)]) <= tol))
    z = probe_points(base)
    gap = np.abs(gaussian_score(m0, c0, z) - gaussian_score(m1, c1, z)).max(axis=0)
    return OracleReport(
        marginal=marginal,
        score=[bool(g <= tol) for g in gap],
        joint_marginal_ok=joint_ok,
        max_mean_gap=mean_gap.tolist(),
        max_var_gap=var_gap.tolist(),
    )
