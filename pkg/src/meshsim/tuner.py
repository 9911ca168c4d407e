"""Process fidelity and phase-setting optimization on disordered meshes.

The fidelity of a post-selected transform ``V`` against an ideal ``V0`` is the
normalized Hilbert-Schmidt overlap

    F = |Tr(V^dag V0)|^2 / (Tr(V^dag V) Tr(V0^dag V0)),

invariant under global phase and rescaling of either argument. With unit
vectors ``v = vec(V)/|V|`` and ``v0 = vec(V0)/|V0|`` the infidelity is the
squared norm of the residual ``r = v - <v0, v> v0``, which is what the local
optimizer minimizes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import qmc

from .disorder import DisorderModel, InstanceSeed, MeshInstance, sample_mesh_instance
from .gates import GateProgram, GateTarget, nominal_cnot_program, nominal_cphase_program
from . import _kernels
from .mesh import TWO_PI, MeshTopology, MziSettings, stage_arrays

log = logging.getLogger(__name__)


def fidelity(v: np.ndarray, v0: np.ndarray) -> float:
    v = np.asarray(v, dtype=complex)
    v0 = np.asarray(v0, dtype=complex)
    if v.shape != v0.shape:
        raise ValueError(f"shape mismatch {v.shape} vs {v0.shape}")
    nv = np.vdot(v, v).real
    n0 = np.vdot(v0, v0).real
    if nv == 0 or n0 == 0:
        raise ValueError("fidelity is undefined for a zero matrix")
    return float(min(1.0, abs(np.vdot(v, v0)) ** 2 / (nv * n0)))


class ProgramObjective:
    """Fast evaluation of a program's post-selected transform on one instance.

    Parameters are the program's free phases in sorted ``(address, name)``
    order; ``x`` replaces those entries of the program's settings.
    """

    def __init__(self, instance: MeshInstance, program: GateProgram, target: GateTarget):
        topo = instance.topology
        program.check_fits(topo)
        if program.encoding is None:
            raise ValueError("program has no dual-rail encoding")
        self.program = program
        self.target = target
        m0, m1 = program.modes
        self.n_modes = m1 - m0
        addresses = program.region_addresses()
        self.addresses = addresses
        k = np.array([topo.index[a] for a in addresses], dtype=np.int64)
        self.c1, self.c2, self.amp = stage_arrays(instance.t[k], instance.gamma[k])
        self.tops = np.array([2 * j + l % 2 - m0 for l, j in addresses], dtype=np.int64)
        counts = [sum(1 for a in addresses if a[0] == l) for l in range(*program.layers)]
        self.bounds = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        pos = {a: i for i, a in enumerate(addresses)}
        self.theta0 = np.array([program.settings[a].theta for a in addresses])
        self.phi0 = np.array([program.settings[a].phi for a in addresses])
        self.free = sorted(program.free)
        # index of each free parameter in the concatenated (theta..., phi...) vector
        self.free_cols = np.array(
            [pos[a] + (0 if name == "theta" else len(addresses)) for a, name in self.free], dtype=np.int64
        )
        self.x0 = np.concatenate([self.theta0, self.phi0])[self.free_cols]

        states = [tuple(m - m0 for m in s.mode_list()) for s in program.encoding.basis(m1)]
        n_photons = len(states[0])
        if n_photons not in (1, 2):
            raise ValueError("fast evaluation supports one or two photons")
        self.two_photons = n_photons == 2
        modes = sorted({m for s in states for m in s})
        col = {m: i for i, m in enumerate(modes)}
        self.modes = np.array(modes, dtype=np.int64)
        self.i1 = np.array([col[s[0]] for s in states], dtype=np.int64)
        self.i2 = np.array([col[s[-1]] for s in states], dtype=np.int64)
        dim = len(states)
        if target.matrix.shape != (dim, dim):
            raise ValueError(f"target is {target.matrix.shape}, program basis has {dim} states")
        v0 = target.matrix.ravel()
        self.v0 = v0 / np.linalg.norm(v0)
        self.evaluations = 0

    def settings_arrays(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        full = np.concatenate([self.theta0, self.phi0])
        full[self.free_cols] = x
        n = len(self.addresses)
        return full[:n], full[n:]

    def _forward(self, x):
        theta, phi = self.settings_arrays(np.asarray(x, dtype=float))
        m, s1, s2 = _kernels.mzi_stack(theta, phi, self.c1, self.c2, self.amp)
        states = _kernels.propagate(m, self.tops, self.bounds, self.n_modes, self.modes)
        return m, s1, s2, states

    def transform(self, x: Optional[np.ndarray] = None) -> np.ndarray:
        """Post-selected transform (rows: outputs, columns: inputs)."""
        x = self.x0 if x is None else x
        states = self._forward(x)[-1]
        y = _kernels.output_block(states, self.modes)
        return _kernels.post_selected(y, self.i1, self.i2, self.two_photons)

    def fidelity(self, x: Optional[np.ndarray] = None) -> float:
        return fidelity(self.transform(x), self.target.matrix)

    def residual(self, x: np.ndarray) -> np.ndarray:
        """Real-stacked residual whose squared norm is the infidelity."""
        self.evaluations += 1
        return _kernels.residual(self.transform(x), self.v0)

    def transform_jacobian(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Flattened transform and its derivative ``(d * d, n_free)``."""
        self.evaluations += 1
        m, s1, s2, states = self._forward(x)
        y = _kernels.output_block(states, self.modes)
        v = _kernels.post_selected(y, self.i1, self.i2, self.two_photons)
        dv = _kernels.transform_jacobian(
            m, s1, s2, states, self.tops, self.bounds, self.modes,
            self.i1, self.i2, self.two_photons, self.free_cols,
        )
        return v.ravel(), dv

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """d(residual)/dx for the free parameters, shape ``(2 * dim**2, n_free)``."""
        v, dv = self.transform_jacobian(x)
        return _kernels.residual_jacobian(v, dv, self.v0)

    def fidelity_gradient(self, x: np.ndarray) -> np.ndarray:
        """Gradient of F with respect to the free parameters (``F = 1 - |r|^2``)."""
        return -2.0 * self.residual(x) @ self.jacobian(x)


# -- optimization ----------------------------------------------------------------


@dataclass(frozen=True)
class TuneOptions:
    """Multistart settings.

    Start points are the nominal program followed by ``n_starts - 1`` points of
    a scrambled Sobol sequence over ``[0, 2 pi)^d`` seeded with ``seed``. Each
    start is refined by Levenberg-Marquardt on the fidelity residual until the
    relative change of the infidelity drops below ``local_tolerance``.
    ``stop_fidelity`` ends the multistart early once reached.
    """

    n_starts: int = 16
    local_tolerance: float = 1e-8
    max_evaluations: int = 20000
    seed: int = 0
    stop_fidelity: Optional[float] = None

    def __post_init__(self):
        if self.n_starts < 1:
            raise ValueError("n_starts must be positive")
        if self.max_evaluations < self.n_starts:
            raise ValueError("max_evaluations must be at least n_starts")
        if not self.local_tolerance > 0:
            raise ValueError("local_tolerance must be positive")


@dataclass(frozen=True)
class TuneResult:
    program: GateProgram
    fidelity: float
    nominal_fidelity: float
    evaluations: int
    budget_limited: bool


def torus_distance(x: np.ndarray, y: np.ndarray) -> float:
    d = np.mod(np.asarray(x) - np.asarray(y) + np.pi, TWO_PI) - np.pi
    return float(np.linalg.norm(d))


def _refine(obj: ProgramObjective, x0: np.ndarray, tol: float, budget: int) -> Tuple[np.ndarray, bool]:
    """Levenberg-Marquardt on the fidelity residual within ``budget`` evaluations.

    Marquardt scaling (running maximum of the Jacobian column norms) and the
    Nielsen damping update. Stops when an accepted step lowers the infidelity
    by less than ``tol`` relative, when the step or gradient vanishes, or when
    the budget is spent. Returns the point and whether the search converged
    (as opposed to running out of budget).
    """
    stop_at = obj.evaluations + budget
    x = np.array(x0, dtype=float)
    r = obj.residual(x)
    cost = _kernels.sum_squares(r)
    if len(x) == 0:
        return x, True
    lam, nu = 1e-3, 2.0
    scale = np.zeros(len(x))
    jac = None
    while obj.evaluations + 2 <= stop_at and cost > 1e-30:
        if jac is None:
            jac = obj.jacobian(x)
            scale = np.maximum(scale, _kernels.column_squares(jac))
            floor = 1e-12 * scale.max() if scale.max() > 0 else 1.0
            scale = np.maximum(scale, floor)
        dx, g, predicted = _kernels.damped_step(jac, r, lam, scale)
        if np.max(np.abs(g)) <= 1e-14:
            return x, True
        x_new = x + dx
        r_new = obj.residual(x_new)
        cost_new = _kernels.sum_squares(r_new)
        actual = cost - cost_new
        small_step = np.sqrt(_kernels.sum_squares(dx)) <= 1e-12 * (np.sqrt(_kernels.sum_squares(x)) + 1e-12)
        if predicted > 0 and actual > 0:
            rho = actual / predicted
            x, r, old, cost, jac = x_new, r_new, cost, cost_new, None
            lam *= max(1 / 3, 1 - (2 * rho - 1) ** 3)
            nu = 2.0
            if actual <= tol * old and predicted <= tol * old:
                return x, True
        else:
            lam *= nu
            nu *= 2.0
        if small_step:
            return x, True
    return x, cost <= 1e-30


def optimize_program(
    instance: MeshInstance,
    program: GateProgram,
    target: GateTarget,
    options: TuneOptions = TuneOptions(),
) -> TuneResult:
    """Maximize the post-selected fidelity over the program's free phases.

    The nominal settings are always a candidate, so the result never falls
    below the nominal fidelity. Among candidates within 1e-12 of the best
    fidelity the one closest to the nominal settings (torus distance) wins.
    The result is flagged ``budget_limited`` when starts were skipped for lack
    of budget or when the winning local search was cut off before converging.
    """
    obj = ProgramObjective(instance, program, target)
    x_nom = obj.x0.copy()
    f_nom = obj.fidelity(x_nom)
    candidates: List[Tuple[float, np.ndarray, bool]] = [(f_nom, x_nom, True)]
    starts = [x_nom] if len(x_nom) else []
    if options.n_starts > 1 and len(x_nom):
        sobol = qmc.Sobol(len(x_nom), scramble=True, seed=options.seed)
        points = sobol.random_base2(max(0, int(np.ceil(np.log2(options.n_starts - 1)))))
        starts += list(points[: options.n_starts - 1] * TWO_PI)
    skipped = False
    for k, x0 in enumerate(starts):
        remaining = options.max_evaluations - obj.evaluations
        if remaining <= 0:
            skipped = True
            break
        # unused budget of early starts rolls over to later ones
        share = max(2, remaining // (len(starts) - k))
        x, converged = _refine(obj, x0, options.local_tolerance, share)
        x = np.mod(x, TWO_PI)
        candidates.append((obj.fidelity(x), x, converged))
        if k == 0:
            # the nominal point is only as settled as the search started from it
            candidates[0] = (f_nom, x_nom, converged)
        if options.stop_fidelity is not None and max(c[0] for c in candidates) >= options.stop_fidelity:
            break
    best_f = max(c[0] for c in candidates)
    ties = [c for c in candidates if c[0] >= best_f - 1e-12]
    f, x, converged = min(ties, key=lambda c: torus_distance(c[1], x_nom))
    budget_limited = skipped or not converged
    theta, phi = obj.settings_arrays(x)
    settings = {a: MziSettings(theta[i], phi[i]) for i, a in enumerate(obj.addresses)}
    if budget_limited:
        log.info("optimization of %s hit the evaluation budget", program.name)
    return TuneResult(program.with_settings(settings), f, f_nom, obj.evaluations, budget_limited)


def program_fidelity(instance: MeshInstance, program: GateProgram, target: GateTarget) -> float:
    return ProgramObjective(instance, program, target).fidelity()


# -- Monte Carlo studies -----------------------------------------------------------

CPHASE_STUDY_PHASES = tuple(k * TWO_PI / 6 for k in range(6))
# six phases per CPHASE instance; the synthesized starting points are already close
CPHASE_TUNE_OPTIONS = TuneOptions(n_starts=4, max_evaluations=4000)


def default_tune_options(gate: str) -> TuneOptions:
    return CPHASE_TUNE_OPTIONS if gate.lower() == "cphase" else TuneOptions()


@dataclass
class InstanceRecord:
    index: int
    pre: float
    post: float
    evaluations: int
    budget_limited: bool = False


@dataclass
class StudyResult:
    gate: str
    model: DisorderModel
    master_seed: int
    options: TuneOptions
    records: List[InstanceRecord] = field(default_factory=list)

    @property
    def pre(self) -> np.ndarray:
        return np.array([r.pre for r in self.records])

    @property
    def post(self) -> np.ndarray:
        return np.array([r.post for r in self.records])

    @property
    def median_pre(self) -> float:
        return float(np.median(self.pre))

    @property
    def median_post(self) -> float:
        return float(np.median(self.post))


def gate_programs(gate: str) -> List[Tuple[GateProgram, GateTarget]]:
    gate = gate.lower()
    if gate == "cnot":
        return [nominal_cnot_program()]
    if gate == "cphase":
        return [nominal_cphase_program(p) for p in CPHASE_STUDY_PHASES]
    raise ValueError(f"unknown gate {gate!r}; expected 'cnot' or 'cphase'")


def study_instance(gate: str, model: DisorderModel, master_seed: int, index: int, options: TuneOptions) -> InstanceRecord:
    """Pre/post fidelity of one sampled instance; CPHASE scores are minima over the study phases."""
    programs = gate_programs(gate)
    layers = max(p.layers[1] for p, _ in programs)
    modes = max(p.modes[1] for p, _ in programs)
    inst = sample_mesh_instance(model, MeshTopology(modes, layers), InstanceSeed(master_seed, index))
    pre, post, evals, limited = [], [], 0, False
    for prog, target in programs:
        res = optimize_program(inst, prog, target, options)
        pre.append(res.nominal_fidelity)
        post.append(res.fidelity)
        evals += res.evaluations
        limited |= res.budget_limited
    return InstanceRecord(index, min(pre), min(post), evals, limited)


def monte_carlo_gate_study(
    gate: str,
    model: DisorderModel,
    n_instances: int,
    master_seed: int = 0,
    options: TuneOptions = TuneOptions(),
    threads: int = 1,
) -> StudyResult:
    if n_instances < 1:
        raise ValueError("n_instances must be at least 1")
    gate_programs(gate)
    args = [(gate, model, master_seed, i, options) for i in range(n_instances)]
    records = parallel_map(study_instance, args, threads)
    return StudyResult(gate.lower(), model, master_seed, options, sorted(records, key=lambda r: r.index))


def parallel_map(fn, args: Sequence[tuple], threads: int = 1) -> list:
    """``[fn(*a) for a in args]``, optionally across worker processes; order preserved."""
    if threads <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, *zip(*args)))
