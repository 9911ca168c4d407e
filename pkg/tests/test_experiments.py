import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import textbook_ipea_iteration

from meshsim.disorder import STREAM_PHASE_DISORDER, DisorderModel, InstanceSeed, MeshInstance, instance_rng, sample_mesh_instance
from meshsim.experiments import (
    IPEA_LAYERS,
    IPEA_MODES,
    WALK_COIN,
    WALK_FIRST_LAYER,
    WALK_PREP,
    IpeaConfig,
    WalkConfig,
    build_ipea_iteration,
    build_walk_program,
    central_modes,
    coexistence_signature,
    correlation_mass_split,
    density_peak,
    excess_kurtosis,
    feedback_angle,
    ipea_study,
    log_density_r2,
    participation_ratio,
    position_variance,
    prepared_state,
    run_ipea,
    run_walk_ensemble,
    total_variation_distance,
    variance_exponent,
    walk_phases,
    walk_realization,
)
from meshsim.fock import FockState, two_photon_statistics
from meshsim.mesh import MeshTopology, MziPhysical, mesh_transfer
from meshsim.tuner import ProgramObjective, TuneOptions

IDEAL_IPEA = MeshInstance.ideal(MeshTopology(IPEA_MODES, IPEA_LAYERS))
SMALL_WALK = WalkConfig(n_walk_layers=6, n_modes=16, n_realizations=8)


# -- phase estimation ------------------------------------------------------------


def test_feedback_angle_examples():
    assert feedback_angle([]) == 0.0
    assert feedback_angle([1]) == pytest.approx(-np.pi / 2)
    assert feedback_angle([0, 1]) == pytest.approx(-np.pi / 4)
    assert feedback_angle([1, 1]) == pytest.approx(-3 * np.pi / 4)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.lists(st.integers(0, 1), max_size=4), st.floats(0, 0.999))
def test_iteration_matches_textbook_circuit(k, later, lam):
    it = build_ipea_iteration(k, later, lam)
    ref = textbook_ipea_iteration(2 * np.pi * 2 ** (k - 1) * lam, feedback_angle(later))
    np.testing.assert_allclose(it.ideal, ref, atol=1e-12)
    # each section realizes its target on the ideal mesh
    for prog, target in it.sections:
        assert ProgramObjective(IDEAL_IPEA, prog, target).fidelity() > 1 - 1e-9


def test_sections_tile_the_region():
    it = build_ipea_iteration(1, [], 0.3)
    spans = [p.layers for p, _ in it.sections]
    assert spans[0][0] == 0 and spans[-1][1] == IPEA_LAYERS
    assert all(a[1] == b[0] for a, b in zip(spans, spans[1:]))
    # single-qubit sections occupy even layers only
    assert all(l % 2 == 0 for p, _ in (it.sections[0], it.sections[2]) for l in range(*p.layers))


def test_zero_eigenphase_gives_identity_cphase_and_zero_bits():
    it = build_ipea_iteration(2, [0], 0.0)
    np.testing.assert_allclose(it.sections[1][1].matrix, np.eye(4))
    run = run_ipea(IpeaConfig(0.0, n_bits=2), IDEAL_IPEA)
    assert run.bits == (0, 0)


def test_half_eigenphase_single_bit():
    run = run_ipea(IpeaConfig(0.5, n_bits=1), IDEAL_IPEA)
    assert run.bits == (1,) and run.estimate == 0.5


def test_ideal_mesh_reads_101():
    run = run_ipea(IpeaConfig(0.625, n_bits=3), IDEAL_IPEA)
    assert run.bit_string == "101"
    assert min(run.fidelities) >= 1 - 1e-6
    assert run.fidelity == min(run.fidelities)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.data())
def test_exact_binary_fractions_are_recovered(m, data):
    numerator = data.draw(st.integers(0, 2**m - 1))
    run = run_ipea(IpeaConfig(numerator / 2**m, n_bits=m), IDEAL_IPEA)
    assert run.estimate == numerator / 2**m


def test_shot_mode_on_ideal_mesh_is_exact():
    run = run_ipea(IpeaConfig(0.625, shots=5), IDEAL_IPEA, rng=np.random.default_rng(3))
    assert run.bit_string == "101"


def test_ipea_config_validation():
    for kwargs in ({"eigenphase": 1.0}, {"eigenphase": 0.1, "n_bits": 0}, {"eigenphase": 0.1, "aggregation": "max"}, {"eigenphase": 0.1, "shots": 0}):
        with pytest.raises(ValueError):
            IpeaConfig(**kwargs)
    with pytest.raises(ValueError):
        build_ipea_iteration(0, [], 0.1)
    with pytest.raises(ValueError):
        run_ipea(IpeaConfig(0.1), MeshInstance.ideal(MeshTopology(6, 9)))


def test_optimizing_sections_helps_on_disordered_chip():
    inst = sample_mesh_instance(DisorderModel(), MeshTopology(IPEA_MODES, IPEA_LAYERS), InstanceSeed(0, 1))
    opts = TuneOptions(n_starts=2, max_evaluations=1500)
    raw = run_ipea(IpeaConfig(0.625), inst)
    tuned = run_ipea(IpeaConfig(0.625, optimize=True), inst, opts)
    assert tuned.fidelity > raw.fidelity
    mean = run_ipea(IpeaConfig(0.625, aggregation="mean"), inst)
    assert mean.fidelity >= raw.fidelity


def test_ipea_study_thread_invariant():
    cfg = IpeaConfig(0.625)
    a = ipea_study(cfg, DisorderModel(), 4, 1, threads=1)
    b = ipea_study(cfg, DisorderModel(), 4, 1, threads=2)
    assert a.records == b.records
    assert [r.index for r in a.records] == [0, 1, 2, 3]


# -- walks -----------------------------------------------------------------------


def test_disorder_free_walk_settings():
    prog = build_walk_program(WalkConfig(), np.random.default_rng(0))
    cfg = WalkConfig()
    for (l, j), s in prog.settings.items():
        if l >= WALK_FIRST_LAYER:
            assert (s.theta, s.phi) == (WALK_COIN.theta, WALK_COIN.phi)
        elif l == 0 and 2 * j == cfg.launch_mode:
            assert s == WALK_PREP
        else:
            assert s.theta == np.pi
    assert prog.free == frozenset()


def test_tid_disorder_shares_columns_and_td_does_not():
    cfg = WalkConfig(phi_max_tid=2 * np.pi)
    _, phi = walk_phases(cfg, np.random.default_rng(1))
    topo = cfg.topology
    by_top = {}
    for l, sl in enumerate(topo.layer_slices[WALK_FIRST_LAYER:], WALK_FIRST_LAYER):
        for top, p in zip(topo.tops[sl], phi[sl]):
            by_top.setdefault(top, set()).add(p)
    assert all(len(v) == 1 for v in by_top.values())
    assert len({next(iter(v)) for v in by_top.values()}) == len(by_top)
    _, phi_td = walk_phases(WalkConfig(phi_max_td=2 * np.pi), np.random.default_rng(1))
    sl = topo.layer_slices
    assert not np.allclose(phi_td[sl[2]], phi_td[sl[4]])
    assert np.all((phi_td >= 0) & (phi_td < 2 * np.pi))


def test_tid_draws_unaffected_by_td_strength():
    a = walk_phases(WalkConfig(phi_max_tid=1.0), np.random.default_rng(5))[1]
    b = walk_phases(WalkConfig(phi_max_tid=1.0, phi_max_td=1e-300), np.random.default_rng(5))[1]
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_prepared_state_equal_moduli():
    amps = prepared_state()
    np.testing.assert_allclose(np.abs(amps), [1 / np.sqrt(2), 0, 1 / np.sqrt(2)], atol=1e-12)
    alpha = np.angle(amps[2] / amps[0])
    assert alpha == pytest.approx(0.0, abs=1e-12)
    # coupler imbalance breaks the balance
    lopsided = prepared_state(MziPhysical(0.6, 0.6))
    assert abs(lopsided[1]) > 1e-3


@pytest.mark.parametrize("fab", [False, True])
def test_realization_matches_full_transfer(fab):
    cfg = WalkConfig(n_walk_layers=6, n_modes=16, phi_max_tid=2.0, phi_max_td=1.0, include_fabrication=fab)
    gamma, dens = walk_realization(cfg, 3, 2)
    seed = InstanceSeed(3, 2)
    prog = build_walk_program(cfg, instance_rng(seed, STREAM_PHASE_DISORDER))
    inst = sample_mesh_instance(cfg.model, cfg.topology, seed) if fab else None
    u = mesh_transfer(cfg.topology, prog, inst)
    a = cfg.launch_mode
    ref, ref_density = two_photon_statistics(u, FockState.from_modes(cfg.n_modes, [a, a + 1]))
    np.testing.assert_allclose(gamma, ref.gamma, atol=1e-12)
    np.testing.assert_allclose(dens[-1], ref_density, atol=1e-12)


def test_ensemble_shapes_and_normalization():
    res = run_walk_ensemble(WalkConfig(n_walk_layers=15, phi_max_tid=1.0, n_realizations=5))
    assert res.density.shape == (17, 36) and res.gamma.shape == (36, 36)
    np.testing.assert_allclose(res.density.sum(axis=1), 2.0, atol=1e-12)
    assert np.triu(res.gamma).sum() == pytest.approx(1.0)
    np.testing.assert_allclose(res.gamma, res.gamma.T)
    assert res.variance.shape == (15,)
    np.testing.assert_allclose(res.output_density, res.density[-1])


def test_disorder_free_realizations_identical():
    a = walk_realization(SMALL_WALK, 0, 0)
    b = walk_realization(SMALL_WALK, 9, 4)
    np.testing.assert_array_equal(a[0], b[0])


def test_ensemble_thread_invariant_and_index_ranges():
    cfg = WalkConfig(n_walk_layers=6, n_modes=16, phi_max_tid=2 * np.pi, n_realizations=7)
    a = run_walk_ensemble(cfg, 4, threads=1)
    b = run_walk_ensemble(cfg, 4, threads=3)
    assert np.array_equal(a.density, b.density) and np.array_equal(a.gamma, b.gamma)
    # realizations are addressed by index: split ranges recombine
    first = run_walk_ensemble(WalkConfig(**{**cfg.__dict__, "n_realizations": 3}), 4)
    rest = run_walk_ensemble(WalkConfig(**{**cfg.__dict__, "n_realizations": 4, "first_realization": 3}), 4)
    np.testing.assert_allclose((3 * first.gamma + 4 * rest.gamma) / 7, a.gamma, atol=1e-15)


def test_walk_config_validation():
    for kwargs in ({"n_walk_layers": 0}, {"phi_max_tid": -1}, {"n_realizations": 0}, {"n_modes": 2}, {"first_realization": -1}):
        with pytest.raises(ValueError):
            WalkConfig(**kwargs)


# -- observables -----------------------------------------------------------------


def test_variance_and_exponent():
    d = np.zeros((3, 9))
    d[:, 4] = 2
    np.testing.assert_allclose(position_variance(d), 0)
    layers = np.arange(1, 16)
    assert variance_exponent(3 * layers**2.0) == pytest.approx(2.0)
    assert variance_exponent(0.5 * layers) == pytest.approx(1.0)


def test_participation_and_kurtosis():
    assert participation_ratio(np.ones(10)) == pytest.approx(10)
    assert participation_ratio([0, 2, 0]) == pytest.approx(1)
    x = np.arange(200)
    gauss = np.exp(-0.5 * ((x - 100) / 12.0) ** 2)
    assert excess_kurtosis(gauss) == pytest.approx(0.0, abs=1e-6)
    laplace = np.exp(-np.abs(x - 100) / 8.0)
    assert excess_kurtosis(laplace) == pytest.approx(3.0, abs=0.05)


def test_exponential_profile_fits_perfectly():
    x = np.arange(41)
    d = np.exp(-np.abs(x - 20) / 3.0)
    assert density_peak(d) == pytest.approx(20, abs=0.5)
    assert log_density_r2(d) == pytest.approx(1.0, abs=1e-3)
    gauss = np.exp(-0.5 * ((x - 20) / 5.0) ** 2)
    assert log_density_r2(gauss) < 0.97
    modes = central_modes(np.ones(10), 0.8)
    assert modes[0] == 0 and modes[-1] <= 9


def test_density_peak_between_modes():
    assert density_peak([0.5, 1, 1, 0.5]) == pytest.approx(1.5)
    assert density_peak([1, 3, 1, 0.5]) == pytest.approx(1.0)
    assert density_peak(np.exp(-np.abs(np.arange(9) - 3.3))) == pytest.approx(3.3)


def test_mass_split_and_tvd():
    g = np.zeros((6, 6))
    g[0, 1] = g[1, 0] = 0.25
    g[0, 5] = g[5, 0] = 0.5
    g[3, 3] = 0.25
    assert correlation_mass_split(g) == pytest.approx((0.5, 0.5))
    assert total_variation_distance([1, 0], [0, 1]) == pytest.approx(1)
    assert total_variation_distance([1, 1], [2, 2]) == 0


def test_coexistence_signature_shapes():
    x = np.arange(31).astype(float)
    edges = np.exp(-((x - 3) ** 2)) + np.exp(-((x - 27) ** 2)) + 0.01
    centre = np.exp(-np.abs(x - 15.5) / 2)
    assert coexistence_signature(edges, 15) == (True, False)
    assert coexistence_signature(centre, 15) == (False, True)
    assert coexistence_signature(edges + centre, 15) == (True, True)


def test_disorder_free_walk_spreads_ballistically():
    res = run_walk_ensemble(WalkConfig(n_realizations=1))
    assert 1.8 <= variance_exponent(res.variance) <= 2.2
    edges, _ = coexistence_signature(res.output_density, WalkConfig().launch_mode)
    assert edges


def test_weak_disorder_shows_bunching_and_localization_together():
    launch = WalkConfig().launch_mode
    signature = {
        phi: coexistence_signature(run_walk_ensemble(WalkConfig(phi_max_tid=phi)).output_density, launch)
        for phi in (0.6 * np.pi, 2 * np.pi)
    }
    assert signature[0.6 * np.pi] == (True, True)
    # strong disorder keeps only the central peak
    assert signature[2 * np.pi] == (False, True)
