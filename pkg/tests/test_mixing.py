import numpy as np
import pytest

from invariant_crl import mixing, scm
from invariant_crl.mixing import MixingNet


def test_identity_net():
    net = mixing.identity_mixing(3)
    z = np.random.default_rng(0).normal(size=(10, 3))
    assert np.array_equal(mixing.mix(net, z), z)
    assert np.array_equal(mixing.unmix(net, z), z)


def test_linear_single_layer():
    net = MixingNet(((2 * np.eye(3), np.zeros(3)),))
    z = np.random.default_rng(1).normal(size=(5, 3))
    np.testing.assert_allclose(mixing.mix(net, z), 2 * z)


def test_leaky_inverse_exact():
    assert mixing.leaky_inverse(mixing.leaky(np.array([-1.0]), 0.2), 0.2)[0] == -1.0


def test_seeded_determinism():
    a, b = mixing.random_mixing(3, 3, seed=7), mixing.random_mixing(3, 3, seed=7)
    for (wa, ba), (wb, bb) in zip(a.layers, b.layers):
        assert np.array_equal(wa, wb) and np.array_equal(ba, bb)


def test_seed7_roundtrip_on_ablation_latents():
    net = mixing.random_mixing(3, 3, seed=7)
    z = scm.sample(scm.EnvironmentModel(scm.chain_scm()), 1000, seed=0).values
    assert np.max(np.abs(mixing.unmix(net, mixing.mix(net, z)) - z)) < 1e-8


@pytest.mark.parametrize("seed", range(20))
def test_roundtrip_random_nets(seed):
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(1, 9))
    net = mixing.random_mixing(dim, int(rng.integers(1, 5)), seed=seed)
    z = rng.normal(0, 3, size=(1000, dim))
    assert np.max(np.abs(mixing.unmix(net, mixing.mix(net, z)) - z)) < 1e-6


def test_injective_on_batch():
    net = mixing.random_mixing(4, 3, seed=2)
    z = np.random.default_rng(2).normal(size=(500, 4))
    x = mixing.mix(net, z)
    d = np.linalg.norm(x[:, None] - x[None], axis=-1) + np.eye(len(x))
    assert d.min() > 1e-9


def test_jacobian_nonsingular():
    net = mixing.random_mixing(3, 3, seed=4)
    rng = np.random.default_rng(4)
    h = 1e-6
    for z in rng.normal(0, 2, size=(50, 3)):
        jac = np.column_stack([
            (mixing.mix(net, (z + h * e)[None]) - mixing.mix(net, (z - h * e)[None]))[0] / (2 * h)
            for e in np.eye(3)
        ])
        assert np.linalg.svd(jac, compute_uv=False).min() > 1e-6


def test_condition_number_enforced():
    with pytest.raises(mixing.MixingError):
        MixingNet(((np.diag([1.0, 100.0]), np.zeros(2)),))


def test_slope_range():
    with pytest.raises(mixing.MixingError):
        mixing.identity_mixing(2, slope=1.5)


def test_rejects_nonfinite_and_shape():
    net = mixing.identity_mixing(2)
    with pytest.raises(mixing.MixingError):
        mixing.mix(net, np.array([[np.nan, 0.0]]))
    with pytest.raises(mixing.MixingError):
        mixing.mix(net, np.zeros((3, 3)))


def test_serialization(tmp_path):
    net = mixing.random_mixing(3, 2, seed=1)
    again = MixingNet.from_dict(net.to_dict())
    z = np.random.default_rng(0).normal(size=(4, 3))
    assert np.array_equal(mixing.mix(net, z), mixing.mix(again, z))
    mixing.observations_to_csv(mixing.mix(net, z), tmp_path / "x.csv")
    assert (tmp_path / "x.csv").read_text().splitlines()[0] == "x1,x2,x3"
