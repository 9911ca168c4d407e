"""Ideal-mesh synthesis of gate programs with a prescribed success probability.

Process fidelity ignores the scale of the post-selected transform, so an
unconstrained fidelity search happily converges to programs whose transform
is nearly zero. Synthesis instead solves

    V(x) = sqrt(p) e^{i alpha} V0

for the free phases ``x`` and a global phase ``alpha``, with the success
probability ``p`` fixed in advance.

Run ``python -m meshsim.synthesis`` to regenerate the frozen CPHASE programs.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares
from scipy.stats import qmc

from .disorder import MeshInstance
from .gates import (
    CPHASE_ASSET_PHASES,
    GateProgram,
    GateTarget,
    cphase_matrix,
    cphase_region_program,
    cphase_success_probability,
)
from .mesh import TWO_PI, MeshTopology, MziSettings
from .tuner import ProgramObjective

log = logging.getLogger(__name__)


class SynthesisError(RuntimeError):
    def __init__(self, message: str, fidelity: float):
        super().__init__(f"{message} (best fidelity {fidelity:.12f})")
        self.fidelity = fidelity


def synthesize_program(
    program: GateProgram,
    target: GateTarget,
    success_probability: float,
    n_starts: int = 64,
    seed: int = 0,
    min_fidelity: float = 1 - 1e-9,
) -> GateProgram:
    """Settings of ``program``'s free phases realizing ``target`` exactly on an ideal mesh."""
    if not 0 < success_probability <= 1:
        raise ValueError("success probability must lie in (0, 1]")
    topo = MeshTopology(program.modes[1] + program.modes[1] % 2, program.layers[1])
    obj = ProgramObjective(MeshInstance.ideal(topo), program, target)
    u = target.matrix.ravel()
    amp = np.sqrt(success_probability)

    def residual(z):
        r = obj.transform(z[:-1]).ravel() - amp * np.exp(1j * z[-1]) * u
        return np.concatenate([r.real, r.imag])

    def jacobian(z):
        _, dv = obj.transform_jacobian(z[:-1])
        j = np.hstack([dv, (-1j * amp * np.exp(1j * z[-1]) * u)[:, None]])
        return np.vstack([j.real, j.imag])

    starts = qmc.Sobol(len(obj.x0) + 1, scramble=True, seed=seed).random_base2(int(np.ceil(np.log2(n_starts))))
    best_f, best_x = -1.0, None
    for z0 in starts[:n_starts] * TWO_PI:
        res = least_squares(residual, z0, jac=jacobian, method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=1500)
        f = obj.fidelity(res.x[:-1])
        if f > best_f:
            best_f, best_x = f, res.x[:-1]
        if 2 * res.cost < 1e-24:
            break
    if best_f < min_fidelity:
        raise SynthesisError(f"no exact realization of {target.name!r} found", best_f)
    theta, phi = obj.settings_arrays(np.mod(best_x, TWO_PI))
    return program.with_settings({a: MziSettings(theta[i], phi[i]) for i, a in enumerate(obj.addresses)})


def synthesize_cphase(phase: float, seed: int = 0) -> GateProgram:
    phase = float(np.mod(phase, TWO_PI))
    target = GateTarget(cphase_matrix(phase), "cphase")
    return synthesize_program(cphase_region_program(), target, cphase_success_probability(phase), seed=seed)


def write_cphase_assets(path: Path) -> None:
    programs = {}
    for phase in CPHASE_ASSET_PHASES:
        prog = synthesize_cphase(phase)
        programs[repr(round(phase, 12))] = prog.to_table()
        log.info("synthesized CPHASE(%.6f)", phase)
    text = json.dumps({"schema_version": 1, "programs": programs}, indent=1, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    default = Path(__file__).with_name("data") / "cphase_programs.json"
    write_cphase_assets(Path(sys.argv[1]) if len(sys.argv) > 1 else default)
