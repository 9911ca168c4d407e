"""Composite studies: iterative phase estimation and disordered two-photon walks.

Iterative phase estimation (IPEA)
---------------------------------
One iteration runs on an 8-mode x 9-layer region with the CPHASE dual-rail
encoding (ancilla qubit on modes (2, 3), system qubit on (5, 4)):

    layer  0     Rz(omega) H on the ancilla, identity on the system qubit
    layers 1-7   CPHASE(2 pi 2^(k-1) lambda): identity bars, then the 6-layer gate
    layer  8     H on the ancilla

``Rz(w) = diag(1, e^{iw})`` commutes with CPHASE, so the cascade equals the
textbook iteration ``H Rz CPHASE H``. Even layers never couple a qubit rail to
another qubit's rail or to an ancilla mode, so the single-qubit sections cannot
leak into the CPHASE ancillas and the cascaded post-selected transform is the
product of the three section transforms. The odd layer between the input
section and the gate therefore belongs to the CPHASE section, where it is tuned
together with the gate. The system qubit is prepared in the
eigenstate ``|1>`` and the ancilla in ``|0>``. Iterations run from the least
significant bit ``k = m`` down to ``k = 1`` with feedback
``omega_k = -2 pi (0.0 b_{k+1} ... b_m)_2``.

Quantum walks
-------------
A 36-mode x 17-layer lattice: one preparation MZI at ``(eta, phi) = (0.5,
pi/2)`` launched with one photon in each input, one layer of bar-state routing
MZIs, then walk layers with ``theta = pi/2``. Output phases ``phi`` carry the
disorder: time-independent offsets are shared by every walk layer at the same
top mode, time-dependent offsets are drawn afresh per layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .disorder import (
    STREAM_PHASE_DISORDER,
    STREAM_SHOTS,
    DisorderModel,
    InstanceSeed,
    MeshInstance,
    instance_rng,
    sample_mesh_instance,
)
from .fock import FockState, normalize_pairs, pair_probabilities, transition_amplitude, two_photon_density
from .gates import (
    CPHASE_ENCODING,
    CPHASE_MODES,
    HADAMARD,
    GateProgram,
    GateTarget,
    merge_programs,
    nominal_cphase_program,
    phase_gate,
    region_program,
)
from .mesh import (
    BAR,
    IDEAL,
    TWO_PI,
    MeshTopology,
    MziPhysical,
    MziSettings,
    apply_layer,
    mzi_blocks,
    physical_mzi_transfer,
    stage_arrays,
)
from .tuner import ProgramObjective, TuneOptions, optimize_program, parallel_map

# -- iterative phase estimation -------------------------------------------------

IPEA_MODES = CPHASE_MODES
IPEA_LAYERS = 9
IPEA_CPHASE_FIRST_LAYER = 2
# ancilla qubit MZI index within even layers: modes (2, 3)
_ANCILLA_MZI = 1
# tuning used for each section when optimizing
IPEA_TUNE_OPTIONS = TuneOptions(n_starts=4, max_evaluations=4000)


@dataclass(frozen=True)
class IpeaConfig:
    """``eigenphase`` is lambda in ``U|u> = exp(2 pi i lambda)|u>``."""

    eigenphase: float
    n_bits: int = 3
    optimize: bool = False
    aggregation: str = "min"
    shots: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.eigenphase < 1.0:
            raise ValueError("eigenphase must lie in [0, 1)")
        if self.n_bits < 1:
            raise ValueError("n_bits must be positive")
        if self.aggregation not in ("min", "mean"):
            raise ValueError("aggregation must be 'min' or 'mean'")
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be positive")


def feedback_angle(later_bits: Sequence[int]) -> float:
    """``-2 pi (0.0 b_{k+1} b_{k+2} ...)_2`` for ``later_bits = (b_{k+1}, b_{k+2}, ...)``."""
    return -TWO_PI * sum(b / 2.0 ** (j + 2) for j, b in enumerate(later_bits))


@dataclass(frozen=True)
class IpeaIteration:
    k: int
    omega: float
    cphase_phase: float
    sections: Tuple[Tuple[GateProgram, GateTarget], ...]
    ideal: np.ndarray


def build_ipea_iteration(k: int, later_bits: Sequence[int], eigenphase: float) -> IpeaIteration:
    """The three sections of iteration ``k`` given the bits ``(b_{k+1}, ..., b_m)`` already measured."""
    if k < 1:
        raise ValueError("bit index k counts from 1")
    if any(b not in (0, 1) for b in later_bits):
        raise ValueError("measured bits must be 0 or 1")
    omega = feedback_angle(later_bits)
    phase = float(np.mod(TWO_PI * 2.0 ** (k - 1) * eigenphase, TWO_PI))
    enc = CPHASE_ENCODING
    eye = np.eye(2, dtype=complex)
    rz_h = phase_gate(omega) @ HADAMARD
    # Rz(w) H = e^{iw} diag(e^{-iw}, 1) R(pi/2): one MZI at (pi/2, -w)
    prep = region_program((0, 1), (0, IPEA_MODES), {(0, _ANCILLA_MZI): MziSettings(np.pi / 2, -omega)}, enc, "prep")
    prep_target = GateTarget(np.kron(rz_h, eye), "prep")
    gate, cphase_target = nominal_cphase_program(phase, first_layer=IPEA_CPHASE_FIRST_LAYER)
    transit = region_program((1, IPEA_CPHASE_FIRST_LAYER), (0, IPEA_MODES), {}, enc)
    cphase = merge_programs([transit, gate], "cphase")
    out = region_program((IPEA_LAYERS - 1, IPEA_LAYERS), (0, IPEA_MODES), {(IPEA_LAYERS - 1, _ANCILLA_MZI): MziSettings(np.pi / 2, 0.0)}, enc, "output")
    out_target = GateTarget(np.kron(HADAMARD, eye), "output")
    ideal = out_target.matrix @ cphase_target.matrix @ prep_target.matrix
    return IpeaIteration(k, omega, phase, ((prep, prep_target), (cphase, cphase_target), (out, out_target)), ideal)


@dataclass(frozen=True)
class IpeaRun:
    bits: Tuple[int, ...]  # (b_1, ..., b_m), most significant first
    fidelities: Tuple[float, ...]  # per iteration, in execution order (k = m .. 1)
    fidelity: float  # aggregated over iterations

    @property
    def bit_string(self) -> str:
        return "".join(str(b) for b in self.bits)

    @property
    def estimate(self) -> float:
        return sum(b / 2.0 ** (j + 1) for j, b in enumerate(self.bits))


def _ancilla_marginal(v: np.ndarray) -> Tuple[float, float]:
    """Post-selected ancilla probabilities for the input ancilla |0>, system |1>."""
    p = np.abs(v[:, 1]) ** 2
    p0, p1 = p[0] + p[1], p[2] + p[3]
    return p0 / (p0 + p1), p1 / (p0 + p1)


def run_ipea(
    config: IpeaConfig,
    instance: MeshInstance,
    options: TuneOptions = IPEA_TUNE_OPTIONS,
    rng: Optional[np.random.Generator] = None,
) -> IpeaRun:
    """Run all ``n_bits`` iterations on one chip, optionally tuning each section first.

    Bits are the maximum-likelihood outcome of the exact post-selected ancilla
    distribution, or of ``config.shots`` simulated detections when set (ties
    resolve to 0).
    """
    topo = instance.topology
    if topo.n_modes < IPEA_MODES or topo.n_layers < IPEA_LAYERS:
        raise ValueError(f"IPEA needs a {IPEA_MODES}x{IPEA_LAYERS} mesh")
    if config.shots is not None and rng is None:
        rng = instance_rng(instance.seed or InstanceSeed(0), STREAM_SHOTS)
    tuned = {}

    def section_program(prog: GateProgram, target: GateTarget) -> GateProgram:
        if not config.optimize:
            return prog
        key = (prog.layers, tuple(sorted(prog.settings.items())))
        if key not in tuned:
            tuned[key] = optimize_program(instance, prog, target, options).program
        return tuned[key]

    later: list = []
    fids = []
    for k in range(config.n_bits, 0, -1):
        it = build_ipea_iteration(k, later, config.eigenphase)
        full = merge_programs([section_program(p, t) for p, t in it.sections], f"ipea-k{k}")
        obj = ProgramObjective(instance, full, GateTarget(it.ideal, f"ipea-k{k}"))
        v = obj.transform()
        fids.append(obj.fidelity())
        _, p1 = _ancilla_marginal(v)
        if config.shots is None:
            bit = int(p1 > 0.5)
        else:
            ones = int(rng.binomial(config.shots, min(1.0, max(0.0, p1))))
            bit = int(2 * ones > config.shots)
        later.insert(0, bit)
    agg = min(fids) if config.aggregation == "min" else float(np.mean(fids))
    return IpeaRun(tuple(later), tuple(fids), float(agg))


@dataclass(frozen=True)
class IpeaRecord:
    index: int
    bits: str
    fidelity: float


@dataclass
class IpeaStudyResult:
    config: IpeaConfig
    model: DisorderModel
    master_seed: int
    records: list = field(default_factory=list)

    @property
    def fidelities(self) -> np.ndarray:
        return np.array([r.fidelity for r in self.records])

    @property
    def median_fidelity(self) -> float:
        return float(np.median(self.fidelities))


def ipea_instance(config: IpeaConfig, model: DisorderModel, master_seed: int, index: int, options: TuneOptions) -> IpeaRecord:
    seed = InstanceSeed(master_seed, index)
    inst = sample_mesh_instance(model, MeshTopology(IPEA_MODES, IPEA_LAYERS), seed)
    run = run_ipea(config, inst, options, instance_rng(seed, STREAM_SHOTS))
    return IpeaRecord(index, run.bit_string, run.fidelity)


def ipea_study(
    config: IpeaConfig,
    model: DisorderModel,
    n_instances: int,
    master_seed: int = 0,
    options: TuneOptions = IPEA_TUNE_OPTIONS,
    threads: int = 1,
) -> IpeaStudyResult:
    if n_instances < 1:
        raise ValueError("n_instances must be at least 1")
    args = [(config, model, master_seed, i, options) for i in range(n_instances)]
    records = parallel_map(ipea_instance, args, threads)
    return IpeaStudyResult(config, model, master_seed, sorted(records, key=lambda r: r.index))


# -- quantum walks --------------------------------------------------------------

WALK_PREP = MziSettings(np.pi / 2, np.pi / 2)
# preparation layer, routing layer, then the walk
WALK_FIRST_LAYER = 2
WALK_COIN = MziSettings(np.pi / 2, 0.0)


@dataclass(frozen=True)
class WalkConfig:
    n_walk_layers: int = 15
    phi_max_tid: float = 0.0
    phi_max_td: float = 0.0
    n_realizations: int = 1000
    include_fabrication: bool = False
    model: DisorderModel = DisorderModel()
    n_modes: int = 36
    first_realization: int = 0

    def __post_init__(self):
        if self.n_walk_layers < 1:
            raise ValueError("n_walk_layers must be positive")
        if self.phi_max_tid < 0 or self.phi_max_td < 0:
            raise ValueError("disorder strengths must be non-negative")
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be positive")
        if self.first_realization < 0:
            raise ValueError("first_realization must be non-negative")
        if self.n_modes < 4:
            raise ValueError("need at least 4 modes")

    @property
    def topology(self) -> MeshTopology:
        return MeshTopology(self.n_modes, self.n_walk_layers + 2)

    @property
    def launch_mode(self) -> int:
        """Top mode of the preparation MZI (even, near the middle)."""
        return 2 * ((self.n_modes - 2) // 4)


def walk_phases(config: WalkConfig, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """``(theta, phi)`` for every MZI in canonical address order.

    Draw order: all time-independent offsets (indexed by top mode
    ``0 .. n_modes - 2``), then the time-dependent offsets as a
    ``(walk layer, top mode)`` array. Both are always drawn, so switching one
    kind of disorder off leaves the other's realizations unchanged.
    """
    topo = config.topology
    n_top = config.n_modes - 1
    tid = rng.uniform(0.0, 1.0, n_top) * config.phi_max_tid
    td = rng.uniform(0.0, 1.0, (config.n_walk_layers, n_top)) * config.phi_max_td
    theta = np.full(topo.n_mzis, BAR.theta)
    phi = np.full(topo.n_mzis, BAR.phi)
    tops = topo.tops
    for l, sl in enumerate(topo.layer_slices):
        if l == 0:
            k = sl.start + config.launch_mode // 2
            theta[k], phi[k] = WALK_PREP.theta, WALK_PREP.phi
        elif l >= WALK_FIRST_LAYER:
            top = tops[sl]
            theta[sl] = WALK_COIN.theta
            phi[sl] = np.mod(WALK_COIN.phi + tid[top] + td[l - WALK_FIRST_LAYER, top], TWO_PI)
    return theta, phi


def build_walk_program(config: WalkConfig, rng: np.random.Generator) -> GateProgram:
    topo = config.topology
    theta, phi = walk_phases(config, rng)
    settings = {a: MziSettings(float(theta[i]), float(phi[i])) for i, a in enumerate(topo.addresses)}
    return GateProgram((0, topo.n_layers), (0, topo.n_modes), settings, frozenset(), name="walk")


def prepared_state(physical: MziPhysical = IDEAL) -> np.ndarray:
    """Amplitudes of ``(|2,0>, |1,1>, |0,2>)`` after the preparation MZI with inputs ``|1,1>``."""
    u = physical_mzi_transfer(WALK_PREP, physical)
    inp = FockState((1, 1))
    return np.array([transition_amplitude(u, inp, FockState(s)) for s in ((2, 0), (1, 1), (0, 2))])


@dataclass
class WalkEnsembleResult:
    """Ensemble averages; ``density[l]`` is the mode density after mesh layer ``l``.

    Rows ``WALK_FIRST_LAYER`` onwards follow the walk layers.
    """

    config: WalkConfig
    master_seed: int
    gamma: np.ndarray
    density: np.ndarray

    @property
    def output_density(self) -> np.ndarray:
        return self.density[-1]

    @property
    def variance(self) -> np.ndarray:
        """Position variance after each walk layer (walk layer 1 first)."""
        return position_variance(self.density[WALK_FIRST_LAYER:])


def walk_realization(config: WalkConfig, master_seed: int, index: int) -> Tuple[np.ndarray, np.ndarray]:
    """Output correlation matrix and per-layer densities of one realization."""
    topo = config.topology
    seed = InstanceSeed(master_seed, index)
    theta, phi = walk_phases(config, instance_rng(seed, STREAM_PHASE_DISORDER))
    if config.include_fabrication:
        inst = sample_mesh_instance(config.model, topo, seed)
        t, g = inst.t, inst.gamma
    else:
        t, g = np.full((topo.n_mzis, 2), 0.5), np.zeros((topo.n_mzis, 4))
    m, _, _ = mzi_blocks(theta, phi, *stage_arrays(t, g))
    x = np.zeros((topo.n_modes, 2), dtype=complex)
    a = config.launch_mode
    x[a, 0] = x[a + 1, 1] = 1.0
    tops = topo.tops
    densities = np.empty((topo.n_layers, topo.n_modes))
    gamma = None
    for l, sl in enumerate(topo.layer_slices):
        apply_layer(x, tops[sl], m[sl])
        # renormalized to two detected photons at every layer
        gamma = normalize_pairs(pair_probabilities(x[:, 0], x[:, 1]))
        densities[l] = two_photon_density(gamma)
    return gamma, densities


def _walk_chunk(config: WalkConfig, master_seed: int, start: int, stop: int):
    out = [walk_realization(config, master_seed, i) for i in range(start, stop)]
    return np.stack([o[0] for o in out]), np.stack([o[1] for o in out])


def run_walk_ensemble(config: WalkConfig, master_seed: int = 0, threads: int = 1) -> WalkEnsembleResult:
    """Average over realizations ``first_realization .. + n_realizations``.

    Every realization is computed on its own and the averages are taken over
    the stacked results in index order, so the output does not depend on how
    the work is split across processes.
    """
    lo = config.first_realization
    hi = lo + config.n_realizations
    n_chunks = max(1, min(threads, config.n_realizations))
    edges = np.linspace(lo, hi, n_chunks + 1).astype(int)
    args = [(config, master_seed, int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]
    parts = parallel_map(_walk_chunk, args, threads)
    gammas = np.concatenate([p[0] for p in parts])
    densities = np.concatenate([p[1] for p in parts])
    return WalkEnsembleResult(config, master_seed, gammas.mean(axis=0), densities.mean(axis=0))


# -- walk observables -----------------------------------------------------------


def _distribution(density: np.ndarray) -> np.ndarray:
    d = np.asarray(density, dtype=float)
    return d / d.sum(axis=-1, keepdims=True)


def position_variance(density: np.ndarray) -> np.ndarray:
    """Variance of the mode index under the (last-axis) density."""
    p = _distribution(density)
    x = np.arange(p.shape[-1])
    mean = (p * x).sum(axis=-1, keepdims=True)
    return (p * (x - mean) ** 2).sum(axis=-1)


def variance_exponent(variance: Sequence[float], first: int = 5, last: int = 15) -> float:
    """Slope of ``log variance`` against ``log l`` over walk layers ``first .. last`` (1-based)."""
    v = np.asarray(variance, dtype=float)
    layers = np.arange(1, len(v) + 1)
    sel = (layers >= first) & (layers <= last)
    return float(np.polyfit(np.log(layers[sel]), np.log(v[sel]), 1)[0])


def participation_ratio(density: np.ndarray) -> float:
    """``1 / sum p^2``: number of modes effectively occupied."""
    p = _distribution(density)
    return float(1.0 / np.sum(p**2))


def excess_kurtosis(density: np.ndarray) -> float:
    p = _distribution(density)
    x = np.arange(len(p))
    mean = np.sum(p * x)
    m2 = np.sum(p * (x - mean) ** 2)
    m4 = np.sum(p * (x - mean) ** 4)
    return float(m4 / m2**2 - 3.0)


def central_modes(density: np.ndarray, mass: float = 0.9) -> np.ndarray:
    """Modes between the ``(1 - mass) / 2`` and ``(1 + mass) / 2`` quantiles of the density."""
    c = np.cumsum(_distribution(density))
    lo = int(np.searchsorted(c, (1 - mass) / 2))
    hi = int(np.searchsorted(c, (1 + mass) / 2))
    return np.arange(lo, min(hi, len(c) - 1) + 1)


def density_peak(density: np.ndarray) -> float:
    """Peak position at sub-mode resolution.

    Models ``log p`` around the maximum as a symmetric cusp ``a - b |x - x0|``:
    the slope ``b`` comes from the side of the smaller neighbour and ``x0`` from
    the larger one. Exact for exponential profiles centred on a mode or
    between two modes.
    """
    p = _distribution(density)
    k = int(np.argmax(p))
    if k == 0 or k == len(p) - 1 or p[k - 1] <= 0 or p[k + 1] <= 0:
        return float(k)
    y = np.log(p[k - 1 : k + 2])
    side = 1 if y[2] >= y[0] else -1
    slope = y[1] - y[1 - side]
    if slope <= 0:
        return float(k)
    x0 = k + side * (0.5 + (y[1 + side] - y[1]) / (2 * slope))
    return float(np.clip(x0, k - 0.5, k + 0.5))


def log_density_r2(density: np.ndarray, mass: float = 0.9) -> float:
    """R^2 of a linear fit of log density against distance from its peak over the central modes."""
    p = _distribution(density)
    modes = central_modes(p, mass)
    modes = modes[p[modes] > 0]
    dist = np.abs(modes - density_peak(p))
    y = np.log(p[modes])
    slope, icpt = np.polyfit(dist, y, 1)
    resid = y - (slope * dist + icpt)
    return float(1.0 - np.sum(resid**2) / np.sum((y - y.mean()) ** 2))


def total_variation_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(0.5 * np.abs(_distribution(a) - _distribution(b)).sum())


def correlation_mass_split(gamma: np.ndarray, width: int = 2) -> Tuple[float, float]:
    """Upper-triangle correlation mass with ``|q - r| <= width`` and with ``|q - r| > width``."""
    g = np.triu(np.asarray(gamma))
    q, r = np.indices(g.shape)
    near = np.abs(q - r) <= width
    return float(g[near].sum()), float(g[~near].sum())


def coexistence_signature(density: np.ndarray, launch_mode: int) -> Tuple[bool, bool]:
    """``(edge_peaks, central_peak)`` for a walk launched into modes ``launch_mode, launch_mode + 1``.

    ``edge_peaks``: on both sides, the highest mode in the outer third of the
    occupied support exceeds the mean of the two modes just inward of it.
    ``central_peak``: the launch pair's mean exceeds the mean of the two modes
    on either side of it.
    """
    p = _distribution(density)
    occupied = np.flatnonzero(p > 1e-3 * p.max())
    lo, hi = occupied[0], occupied[-1]
    third = max(1, (hi - lo + 1) // 3)
    k_left = lo + int(np.argmax(p[lo : lo + third]))
    k_right = hi - third + 1 + int(np.argmax(p[hi - third + 1 : hi + 1]))
    edges = p[k_left] > p[k_left + 1 : k_left + 3].mean() and p[k_right] > p[k_right - 2 : k_right].mean()
    a = launch_mode
    centre = p[a : a + 2].mean() > np.concatenate([p[a - 2 : a], p[a + 2 : a + 4]]).mean()
    return bool(edges), bool(centre)
