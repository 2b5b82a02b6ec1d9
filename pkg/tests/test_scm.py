import numpy as np
import pytest
from scipy.stats import multivariate_normal

from invariant_crl import scm
from invariant_crl.scm import Dag, EnvironmentModel, InterventionSpec

CHAIN = Dag(3, frozenset({(0, 1), (1, 2)}))


def within_se(sample, mean, cov, k=4.0):
    """Empirical mean/covariance within ``k`` standard errors of the truth."""
    n = len(sample)
    emp_mean = sample.mean(0)
    emp_cov = np.cov(sample, rowvar=False).reshape(len(mean), len(mean))
    se_mean = np.sqrt(np.diag(cov) / n)
    d = np.diag(cov)
    se_cov = np.sqrt((np.outer(d, d) + cov**2) / n)
    return bool(np.all(np.abs(emp_mean - mean) <= k * se_mean)
                and np.all(np.abs(emp_cov - cov) <= k * se_cov))


class TestDag:
    def test_chain_order(self):
        assert scm.topological_order(CHAIN) == (0, 1, 2)

    def test_empty_order(self):
        assert scm.topological_order(Dag(3)) == (0, 1, 2)

    def test_tie_break_ascending(self):
        assert scm.topological_order(Dag(3, frozenset({(0, 2), (1, 2)}))) == (0, 1, 2)
        assert scm.topological_order(Dag(3, frozenset({(2, 0)}))) == (1, 2, 0)

    def test_order_respects_edges(self):
        d = scm.random_scm(6, seed=3).dag
        pos = {v: i for i, v in enumerate(scm.topological_order(d))}
        assert all(pos[j] < pos[i] for j, i in d.edges)

    @pytest.mark.parametrize("edges", [{(0, 1), (1, 0)}, {(0, 1), (1, 2), (2, 0)}, {(1, 1)}, {(0, 5)}])
    def test_rejects_bad_graphs(self, edges):
        with pytest.raises(scm.ScmError):
            Dag(3, frozenset(edges))

    def test_transitive_closure(self):
        assert scm.transitive_closure_of(CHAIN, [1]) == {1, 2}
        assert scm.transitive_closure_of(CHAIN, [2]) == {2}
        tri = Dag(3, frozenset({(0, 1), (0, 2), (1, 2)}))
        assert scm.transitive_closure_of(tri, [0]) == {0, 1, 2}

    def test_closed_parent_set(self):
        assert scm.closed_parent_set(CHAIN, [1]) == {0, 1}
        assert scm.closed_parent_set(CHAIN, [2]) == {1, 2}
        assert scm.closed_parent_set(CHAIN, [0]) == {0}


class TestMoments:
    def test_ablation_chain_closed_form(self):
        mean, cov = scm.joint_moments(scm.chain_scm())
        np.testing.assert_allclose(mean, [10.5, 0.21, 3.21], atol=1e-12)
        np.testing.assert_allclose(np.diag(cov)[1:], [0.250256, 1.250256], atol=1e-12)

    def test_ablation_chain_monte_carlo(self):
        model = scm.chain_scm()
        z = scm.sample(EnvironmentModel(model), 10**6, seed=11).values
        mean, cov = scm.joint_moments(model)
        assert within_se(z, mean, cov)

    def test_single_and_independent(self):
        one = scm.LinearGaussianScm.from_edges(1, {}, [0.0], [1.0])
        mean, cov = scm.joint_moments(one)
        assert mean.tolist() == [0.0] and cov.tolist() == [[1.0]]
        two = scm.LinearGaussianScm.from_edges(2, {}, [1.0, -1.0], [0.5, 2.0])
        _, cov = scm.joint_moments(two)
        assert cov[0, 1] == 0 and cov[1, 0] == 0

    def test_sparsity_must_match(self):
        with pytest.raises(scm.ScmError):
            scm.LinearGaussianScm(CHAIN, np.zeros((3, 3)), np.zeros(3), np.ones(3))
        with pytest.raises(scm.ScmError):
            scm.LinearGaussianScm.from_edges(2, {(0, 1): 1.0}, [0, 0], [1.0, 0.0])


class TestSampling:
    def test_nintervention_means(self):
        env = EnvironmentModel(scm.chain_scm(), InterventionSpec("nintervention", 1, 3.0, 0.02), 1)
        z = scm.sample(env, 10**5, seed=5).values
        mean, cov = scm.env_moments(env)
        np.testing.assert_allclose(mean, [10.5, 3.0, 3.21])
        se = np.sqrt(np.diag(cov) / len(z))
        assert np.all(np.abs(z.mean(0) - mean) <= 4 * se)

    def test_nintervention_children_use_old_value(self):
        env = EnvironmentModel(scm.chain_scm(), InterventionSpec("nintervention", 1, 3.0, 0.02), 1)
        z = scm.sample(env, 20000, seed=1).values
        # z3 is independent of the replaced z2
        assert abs(np.corrcoef(z[:, 1], z[:, 2])[0, 1]) < 0.05

    def test_observational_matches_moments(self):
        model = scm.random_scm(4, seed=2)
        z = scm.sample(EnvironmentModel(model), 10**5, seed=9).values
        assert within_se(z, *scm.joint_moments(model))

    def test_determinism(self):
        env = EnvironmentModel(scm.chain_scm())
        a = scm.sample(env, 100, seed=4).values
        b = scm.sample(env, 100, seed=4).values
        assert np.array_equal(a, b)
        assert not np.array_equal(a, scm.sample(env, 100, seed=5).values)

    @pytest.mark.parametrize("kind", ["perfect", "imperfect"])
    def test_interventional_moments(self, kind):
        model = scm.random_scm(4, seed=8, edge_prob=0.8)
        env = EnvironmentModel(model, InterventionSpec(kind, 2, 1.5, 0.7), 1)
        z = scm.sample(env, 10**5, seed=3).values
        assert within_se(z, *scm.env_moments(env))

    def test_csv_export(self, tmp_path):
        batch = scm.sample(EnvironmentModel(scm.chain_scm(), env_id=2), 5, seed=0)
        batch.to_csv(tmp_path / "z.csv")
        lines = (tmp_path / "z.csv").read_text().splitlines()
        assert lines[0] == "z1,z2,z3,env_id"
        assert len(lines) == 6 and lines[1].endswith(",2")


class TestScore:
    def test_standard_normal(self):
        one = scm.LinearGaussianScm.from_edges(1, {}, [0.0], [1.0])
        assert scm.score(one, np.array([0.5])) == pytest.approx([-0.5])

    def test_zero_at_mean(self):
        model = scm.chain_scm()
        mean, _ = scm.joint_moments(model)
        np.testing.assert_allclose(scm.score(model, mean), 0.0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_finite_difference(self, seed):
        model = scm.chain_scm() if seed == 0 else scm.random_scm(5, seed=seed)
        mean, cov = scm.joint_moments(model)
        logpdf = multivariate_normal(mean, cov).logpdf
        pts = scm.sample(EnvironmentModel(model), 25, seed=seed + 100).values
        h = 1e-5
        for z in pts:
            fd = np.array([(logpdf(z + h * e) - logpdf(z - h * e)) / (2 * h) for e in np.eye(len(z))])
            got = scm.score(model, z)
            assert np.linalg.norm(got - fd) <= 1e-6 * np.linalg.norm(fd) + 1e-9


class TestPartition:
    base = scm.chain_scm()

    def env(self, kind, target, mu=4.0, sd=0.3):
        return EnvironmentModel(self.base, InterventionSpec(kind, target, mu, sd), 1)

    def test_imperfect_middle(self):
        assert scm.invariant_partition(self.env("imperfect", 1)) == ({0}, {2})

    def test_nintervention_middle(self):
        marginal, score = scm.invariant_partition(self.env("nintervention", 1))
        assert marginal == {0, 2}
        assert score == set()

    def test_perfect_leaf(self):
        assert scm.invariant_partition(self.env("perfect", 2)) == ({0, 1}, {0})

    def test_observational_rejected(self):
        with pytest.raises(scm.ScmError, match="no intervention"):
            scm.invariant_partition(EnvironmentModel(self.base))

    def test_diamond(self):
        diamond = scm.LinearGaussianScm.from_edges(
            4, {(0, 1): 0.8, (0, 2): -0.7, (1, 3): 1.1, (2, 3): 0.9}, [0, 0, 0, 0], [1, 1, 1, 1])
        env = EnvironmentModel(diamond, InterventionSpec("perfect", 1, 2.0, 0.5), 1)
        marginal, score_set = scm.invariant_partition(env)
        assert marginal == {0, 2}
        # node 4's conditional is untouched, so its score is invariant too
        assert score_set == {2, 3}
        assert scm.verify_invariance_oracle(diamond, env).invariant_sets() == (marginal, score_set)


class TestOracle:
    base = scm.chain_scm()

    def test_imperfect(self):
        env = EnvironmentModel(self.base, InterventionSpec("imperfect", 1, 1.0, 0.2), 1)
        rep = scm.verify_invariance_oracle(self.base, env)
        assert rep.marginal == [True, False, False]
        assert rep.invariant_sets() == scm.invariant_partition(env)

    def test_nintervention(self):
        env = EnvironmentModel(self.base, InterventionSpec("nintervention", 1, 3.0, 0.02), 1)
        rep = scm.verify_invariance_oracle(self.base, env)
        assert rep.marginal == [True, False, True]
        assert rep.joint_marginal_ok

    def test_identity(self):
        rep = scm.verify_invariance_oracle(self.base, EnvironmentModel(self.base))
        assert all(rep.marginal) and all(rep.score)

    def test_degenerate_reports_invariant(self):
        env = EnvironmentModel(self.base, InterventionSpec("imperfect", 1, 0.0, 0.5), 1)
        assert scm.verify_invariance_oracle(self.base, env).marginal == [True, True, True]

    def test_requires_same_base(self):
        env = EnvironmentModel(scm.chain_scm())
        with pytest.raises(scm.ScmError):
            scm.verify_invariance_oracle(self.base, env)


def test_config_roundtrip():
    model = scm.random_scm(5, seed=1)
    again = scm.LinearGaussianScm.from_dict(model.to_dict())
    assert again.dag.edges == model.dag.edges
    assert np.array_equal(again.weights, model.weights)
    spec = InterventionSpec("imperfect", 3, 1.0, 2.0, [0.5])
    assert InterventionSpec.from_dict(spec.to_dict()).to_dict() == spec.to_dict()
