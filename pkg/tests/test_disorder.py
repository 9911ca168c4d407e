import numpy as np
import pytest
from scipy import stats

from meshsim.disorder import (
    DisorderModel,
    InstanceSeed,
    MeshInstance,
    instance_rng,
    sample_coupler_transitivity,
    sample_couplers,
    sample_losses,
    sample_mesh_instance,
    sample_shifter_loss,
)
from meshsim.mesh import MeshTopology, MziPhysical


def truncnorm_moments(mean, std, lo, hi):
    d = stats.truncnorm((lo - mean) / std, (hi - mean) / std, loc=mean, scale=std)
    return d.mean(), d.std()


def test_model_validation():
    with pytest.raises(ValueError, match="coupler_std"):
        DisorderModel(coupler_std=-0.1)
    with pytest.raises(ValueError, match="loss_mean"):
        DisorderModel(loss_mean=1.5)
    assert DisorderModel.ideal().coupler_std == 0.0


def test_zero_variance_is_exact():
    model = DisorderModel(coupler_std=0.0, loss_std=0.0)
    rng = np.random.default_rng(0)
    assert sample_coupler_transitivity(model, rng) == 0.5
    assert sample_shifter_loss(model, rng) == 0.0516
    inst = sample_mesh_instance(model, MeshTopology(6, 5), InstanceSeed(3))
    assert np.all(inst.t == 0.5) and np.all(inst.gamma == 0.0516)


def test_coupler_statistics():
    x = sample_couplers(DisorderModel(), np.random.default_rng(11), 100_000)
    assert abs(x.mean() - 0.5) < 1e-3
    assert abs(x.std() - 0.043) < 2e-3


def test_loss_statistics_match_truncated_normal():
    model = DisorderModel()
    x = sample_losses(model, np.random.default_rng(12), 100_000)
    mean, std = truncnorm_moments(model.loss_mean, model.loss_std, 0.0, 1.0)
    assert abs(x.mean() - mean) < 2e-3 and abs(x.std() - std) < 2e-3
    assert 0.0516 <= x.mean() <= 0.0545
    assert 0.026 <= x.std() <= 0.0284


def test_half_normal_mean():
    x = sample_losses(DisorderModel(loss_mean=0.0, loss_std=0.01), np.random.default_rng(13), 100_000)
    assert abs(x.mean() - 0.01 * np.sqrt(2 / np.pi)) < 2e-4


def test_truncation_bounds():
    rng = np.random.default_rng(14)
    t = sample_couplers(DisorderModel(coupler_mean=0.999, coupler_std=0.1), rng, 1_000_000)
    assert t.max() <= 1.0 and t.min() >= 0.0
    g = sample_losses(DisorderModel(), rng, 1_000_000)
    assert g.min() >= 0.0 and g.max() < 1.0
    assert all(sample_coupler_transitivity(DisorderModel(0.999, 0.1), rng) <= 1 for _ in range(1000))


def test_scalar_and_batch_agree_in_distribution():
    model = DisorderModel(coupler_mean=0.9, coupler_std=0.1)
    rng = np.random.default_rng(15)
    scalar = np.array([sample_coupler_transitivity(model, rng) for _ in range(20_000)])
    batch = sample_couplers(model, rng, 20_000)
    assert stats.ks_2samp(scalar, batch).pvalue > 1e-3


def test_instance_determinism_and_independence():
    topo = MeshTopology(8, 6)
    model = DisorderModel()
    a = sample_mesh_instance(model, topo, InstanceSeed(7, 0))
    assert a == sample_mesh_instance(model, topo, InstanceSeed(7, 0))
    assert a != sample_mesh_instance(model, topo, InstanceSeed(7, 1))
    assert a != sample_mesh_instance(model, topo, InstanceSeed(8, 0))


def test_negative_master_seed_is_masked():
    a = instance_rng(InstanceSeed(-1, 2)).random()
    b = instance_rng(InstanceSeed(2**64 - 1, 2)).random()
    assert a == b
    with pytest.raises(ValueError):
        InstanceSeed(0, -1)


def test_streams_are_distinct():
    seed = InstanceSeed(5, 5)
    assert instance_rng(seed, 0).random() != instance_rng(seed, 1).random()


def test_instance_layout_and_access():
    topo = MeshTopology(4, 3)
    inst = sample_mesh_instance(DisorderModel(), topo, InstanceSeed(1))
    assert inst.t.shape == (topo.n_mzis, 2) and inst.gamma.shape == (topo.n_mzis, 4)
    p = inst.physical((1, 0))
    assert isinstance(p, MziPhysical)
    k = topo.index[(1, 0)]
    assert (p.t1, p.t2) == tuple(inst.t[k])
    assert len(inst.as_dict()) == topo.n_mzis
    with pytest.raises(ValueError):
        inst.t[0, 0] = 0.1


def test_canonical_draw_order():
    """The first standard normals of the stream map onto (t1, t2, gamma1..4) of MZI (0, 0)."""
    model = DisorderModel(coupler_std=0.01, loss_std=0.001, loss_mean=0.5)
    topo = MeshTopology(4, 2)
    seed = InstanceSeed(9, 4)
    z = instance_rng(seed).standard_normal((topo.n_mzis, 6))
    inst = sample_mesh_instance(model, topo, seed)
    np.testing.assert_allclose(inst.t, 0.5 + 0.01 * z[:, :2])
    np.testing.assert_allclose(inst.gamma, 0.5 + 0.001 * z[:, 2:])


def test_ideal_instance_rejects_bad_values():
    topo = MeshTopology(2, 1)
    with pytest.raises(ValueError):
        MeshInstance(topo, np.array([[0.5, 1.2]]), np.zeros((1, 4)))
    assert MeshInstance.ideal(topo).physical((0, 0)) == MziPhysical()


def test_t1_independence_across_mzis():
    topo = MeshTopology(4, 2)
    model = DisorderModel()
    samples = np.array([sample_mesh_instance(model, topo, InstanceSeed(3, i)).t[:, 0] for i in range(10_000)])
    c = np.corrcoef(samples.T)
    off = c[~np.eye(len(c), dtype=bool)]
    assert np.abs(off).max() < 0.02
