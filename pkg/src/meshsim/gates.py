"""Dual-rail gate programs for the MZI lattice.

Programs are written in absolute lattice coordinates. Idle MZIs inside a
program region are set to the identity bar state ``(theta, phi) = (pi, pi)``.

Nominal six-mode CNOT layout (modes 0 and 5 are vacuum ancillas; control on
modes (1, 2), target on modes (3, 4))::

    layer  parity  MZI (modes)   role              theta              phi
    0      even    (0,1)         idle              pi                 pi
    0      even    (2,3)         idle              pi                 pi
    0      even    (4,5)         idle              pi                 pi
    1      odd     (1,2)         idle              pi                 pi
    1      odd     (3,4)         target H          pi/2               0
    2      even    (0,1)         eta = 1/3         2 asin(sqrt(1/3))  0
    2      even    (2,3)         eta = 1/3         2 asin(sqrt(1/3))  0
    2      even    (4,5)         eta = 1/3         2 asin(sqrt(1/3))  pi
    3      odd     (1,2)         phase on mode 1   pi                 pi/2 - theta_13
    3      odd     (3,4)         target H          pi/2               0
    4      even    (0,1)         idle              pi                 pi
    4      even    (2,3)         phase on mode 2   pi                 pi/2 - theta_13
    4      even    (4,5)         idle              pi                 pi

On an ideal lattice every MZI equals ``i e^{i theta/2} diag(e^{i phi}, 1)
[[s, c], [c, -s]]`` with ``s = sin(theta/2)``. The three eta = 1/3 MZIs form
the post-selected controlled-Z (phi = pi on (4,5) fixes the sign of the
target-1 arm), the two eta = 1/2 MZIs are exact Hadamards, and the two phase
bars remove the residual global phase ``i e^{i theta_13}`` so that the
post-selected transform is exactly ``CNOT / 3``.

CPHASE(phase) lives on an 8-mode x 6-layer region with control on modes
(2, 3), target on modes (5, 4) (so the two logical-1 rails, 3 and 4, are
adjacent) and vacuum ancillas on modes 0, 1, 6, 7. Its settings are
synthesized on an ideal mesh at the success probability of
:func:`cphase_success_probability` and shipped as package data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from typing import Dict, FrozenSet, Iterable, Optional, Sequence, Tuple

import numpy as np

from .fock import FockState
from .mesh import TWO_PI, Address, MeshTopology, MziSettings, theta_for_splitting_ratio

IDENTITY_BAR = MziSettings(np.pi, np.pi)

CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)


def cphase_matrix(phase: float) -> np.ndarray:
    return np.diag([1, 1, 1, np.exp(1j * phase)]).astype(complex)


def phase_gate(angle: float) -> np.ndarray:
    """``diag(1, e^{i angle})``."""
    return np.diag([1, np.exp(1j * angle)]).astype(complex)


@dataclass(frozen=True)
class DualRailEncoding:
    """Mode pair of every qubit: ``pairs[q] = (mode carrying |0>, mode carrying |1>)``."""

    pairs: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        pairs = tuple((int(a), int(b)) for a, b in self.pairs)
        flat = [m for p in pairs for m in p]
        if len(set(flat)) != len(flat):
            raise ValueError(f"dual-rail mode pairs overlap: {pairs}")
        object.__setattr__(self, "pairs", pairs)

    @property
    def n_qubits(self) -> int:
        return len(self.pairs)

    @property
    def modes(self) -> Tuple[int, ...]:
        return tuple(sorted(m for p in self.pairs for m in p))

    def basis(self, n_modes: int) -> list:
        """Computational basis states, qubit 0 most significant."""
        states = []
        for k in range(2 ** self.n_qubits):
            bits = [(k >> (self.n_qubits - 1 - q)) & 1 for q in range(self.n_qubits)]
            states.append(FockState.from_modes(n_modes, [self.pairs[q][b] for q, b in enumerate(bits)]))
        return states


@dataclass(frozen=True)
class GateTarget:
    matrix: np.ndarray
    name: str = ""

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] not in (2, 4):
            raise ValueError(f"gate target must be 2x2 or 4x4, got shape {m.shape}")
        if not np.allclose(m.conj().T @ m, np.eye(len(m)), atol=1e-12):
            raise ValueError(f"gate target {self.name!r} is not unitary")
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True)
class GateProgram:
    """Phase settings for a rectangular lattice region.

    ``layers`` and ``modes`` are half-open ranges; ``settings`` covers every MZI
    of the region; ``free`` lists the ``(address, "theta" | "phi")`` parameters
    an optimizer may vary.
    """

    layers: Tuple[int, int]
    modes: Tuple[int, int]
    settings: Dict[Address, MziSettings]
    free: FrozenSet[Tuple[Address, str]]
    encoding: Optional[DualRailEncoding] = None
    name: str = ""

    def __post_init__(self):
        l0, l1 = self.layers
        m0, m1 = self.modes
        if not (0 <= l0 < l1 and 0 <= m0 < m1):
            raise ValueError(f"empty or negative region layers={self.layers} modes={self.modes}")
        region = set(self.region_addresses())
        missing = region - set(self.settings)
        if missing:
            raise ValueError(f"settings do not cover region MZIs {sorted(missing)}")
        extra = set(self.settings) - region
        if extra:
            raise ValueError(f"settings outside the region: {sorted(extra)}")
        bad = {a for a, _ in self.free} - region
        if bad or any(p not in ("theta", "phi") for _, p in self.free):
            raise ValueError("free parameters must name region MZIs and 'theta'/'phi'")

    def region_addresses(self) -> list:
        """Addresses of MZIs with both modes inside the mode range, canonical order."""
        return _region_addresses(self.layers, self.modes)

    def fits(self, topology: MeshTopology) -> bool:
        return self.layers[1] <= topology.n_layers and self.modes[1] <= topology.n_modes

    def check_fits(self, topology: MeshTopology) -> None:
        if not self.fits(topology):
            raise ValueError(
                f"program region layers={self.layers} modes={self.modes} does not fit "
                f"a {topology.n_modes}x{topology.n_layers} topology"
            )

    def with_settings(self, settings: Dict[Address, MziSettings]) -> "GateProgram":
        merged = dict(self.settings)
        merged.update(settings)
        return replace(self, settings=merged)

    def to_table(self) -> dict:
        """Serializable form: region plus ``address -> (theta, phi)`` rows."""
        return {
            "name": self.name,
            "layers": list(self.layers),
            "modes": list(self.modes),
            "encoding": [list(p) for p in self.encoding.pairs] if self.encoding else None,
            "settings": [[l, j, s.theta, s.phi] for (l, j), s in sorted(self.settings.items())],
            "free": sorted([l, j, p] for (l, j), p in self.free),
        }

    @classmethod
    def from_table(cls, table: dict) -> "GateProgram":
        enc = table.get("encoding")
        return cls(
            layers=tuple(table["layers"]),
            modes=tuple(table["modes"]),
            settings={(int(l), int(j)): MziSettings(th, ph) for l, j, th, ph in table["settings"]},
            free=frozenset(((int(l), int(j)), p) for l, j, p in table["free"]),
            encoding=DualRailEncoding(tuple(map(tuple, enc))) if enc else None,
            name=table.get("name", ""),
        )


def all_free(addresses: Iterable[Address]) -> FrozenSet[Tuple[Address, str]]:
    return frozenset((a, p) for a in addresses for p in ("theta", "phi"))


def region_program(
    layers: Tuple[int, int],
    modes: Tuple[int, int],
    settings: Dict[Address, MziSettings],
    encoding: Optional[DualRailEncoding] = None,
    name: str = "",
) -> GateProgram:
    """Program over a region with idle MZIs at the identity bar and every phase free."""
    addresses = _region_addresses(layers, modes)
    full = {a: settings.get(a, IDENTITY_BAR) for a in addresses}
    return GateProgram(layers, modes, full, all_free(addresses), encoding, name)


def _region_addresses(layers, modes) -> list:
    out = []
    m0, m1 = modes
    for l in range(*layers):
        p = l % 2
        j = 0
        while 2 * j + p + 1 < m1:
            if 2 * j + p >= m0:
                out.append((l, j))
            j += 1
    return out


def merge_programs(programs: Sequence[GateProgram], name: str = "") -> GateProgram:
    """Load programs on disjoint regions into one program spanning their union.

    Region MZIs not covered by any input program are set to the identity bar.
    """
    settings: Dict[Address, MziSettings] = {}
    free = set()
    for prog in programs:
        clash = set(prog.settings) & set(settings)
        if clash:
            raise ValueError(f"programs overlap at {sorted(clash)}")
        settings.update(prog.settings)
        free |= prog.free
    layers = (min(p.layers[0] for p in programs), max(p.layers[1] for p in programs))
    modes = (min(p.modes[0] for p in programs), max(p.modes[1] for p in programs))
    encoding = programs[0].encoding
    addresses = _region_addresses(layers, modes)
    full = {a: settings.get(a, IDENTITY_BAR) for a in addresses}
    free |= all_free(set(addresses) - set(settings))
    return GateProgram(layers, modes, full, frozenset(free), encoding, name)


# -- CNOT ----------------------------------------------------------------------

CNOT_ENCODING = DualRailEncoding(((1, 2), (3, 4)))
THETA_THIRD = theta_for_splitting_ratio(1.0 / 3.0)
THETA_HALF = theta_for_splitting_ratio(0.5)

CNOT_LAYOUT = {
    (1, 1): (THETA_HALF, 0.0),
    (2, 0): (THETA_THIRD, 0.0),
    (2, 1): (THETA_THIRD, 0.0),
    (2, 2): (THETA_THIRD, np.pi),
    (3, 0): (np.pi, np.pi / 2 - THETA_THIRD),
    (3, 1): (THETA_HALF, 0.0),
    (4, 1): (np.pi, np.pi / 2 - THETA_THIRD),
}


def nominal_cnot_program(first_layer: int = 0, first_mode: int = 0) -> Tuple[GateProgram, GateTarget]:
    """Six-mode post-selected CNOT on a 6-mode x 5-layer region.

    ``first_layer`` and ``first_mode`` must be even so the lattice parity of the
    layout is preserved.
    """
    if first_layer % 2 or first_mode % 2:
        raise ValueError("CNOT region must start on an even layer and an even mode")
    settings = {
        (l + first_layer, j + first_mode // 2): MziSettings(*v) for (l, j), v in CNOT_LAYOUT.items()
    }
    enc = DualRailEncoding(tuple((a + first_mode, b + first_mode) for a, b in CNOT_ENCODING.pairs))
    prog = region_program(
        (first_layer, first_layer + 5), (first_mode, first_mode + 6), settings, enc, name="cnot"
    )
    return prog, GateTarget(CNOT, "cnot")


# -- single-qubit rotations ----------------------------------------------------


def decompose_single_qubit(target: np.ndarray) -> Tuple[float, float, float]:
    """Angles ``(theta, phi, beta)`` with ``target ~ diag(e^{i phi}, 1) R(theta) diag(1, e^{i beta})``.

    ``R(theta) = [[s, c], [c, -s]]``, ``s = sin(theta/2)``; equality holds up to a
    global phase. Matrix rows/columns are in mode order (top mode first).
    """
    t = np.asarray(target, dtype=complex)
    s = min(1.0, abs(t[0, 0]))
    theta = 2.0 * np.arcsin(s)
    tol = 1e-12
    if abs(t[1, 0]) < tol:
        # diagonal: diag(e^{i phi}, -e^{i beta}); take beta = 0
        return theta, float(np.angle(t[0, 0] / t[1, 1]) + np.pi), 0.0
    if abs(t[0, 0]) < tol:
        # anti-diagonal: [[0, e^{i(phi+beta)}], [1, 0]]; take beta = 0
        return theta, float(np.angle(t[0, 1] / t[1, 0])), 0.0
    phi = np.angle(t[0, 0] / t[1, 0])
    beta = np.angle(t[1, 1] / t[1, 0]) - np.pi
    return theta, float(phi), float(beta)


def single_qubit_program(
    target: GateTarget, qubit: Tuple[int, int], layer: int, n_modes: int
) -> GateProgram:
    """One MZI on the qubit's mode pair at ``layer``, plus an input-phase bar.

    The MZI couples the qubit's two modes ``(a, a + 1)``; the input phase on
    mode ``a + 1`` comes from the bar-state MZI ``(a + 1, a + 2)`` in the previous
    layer. The program region covers both layers and modes ``a .. a + 2``.
    """
    m = np.asarray(target.matrix)
    if m.shape != (2, 2):
        raise ValueError("single-qubit target must be 2x2")
    lo, hi = sorted(qubit)
    if hi != lo + 1:
        raise ValueError(f"qubit modes {qubit} are not adjacent")
    if lo % 2 != layer % 2:
        raise ValueError(f"modes {qubit} are not coupled in layer {layer}")
    if layer < 1 or hi + 1 >= n_modes:
        raise ValueError(f"no room for the input-phase MZI of qubit {qubit} at layer {layer}")
    if qubit[0] > qubit[1]:
        m = PAULI_X @ m @ PAULI_X
    theta, phi, beta = decompose_single_qubit(m)
    rot = (layer, (lo - layer % 2) // 2)
    pre = (layer - 1, (hi - (layer - 1) % 2) // 2)
    settings = {rot: MziSettings(theta, phi), pre: MziSettings(np.pi, beta - np.pi)}
    return GateProgram(
        (layer - 1, layer + 1),
        (lo, hi + 2),
        settings,
        all_free(settings),
        DualRailEncoding((tuple(qubit),)),
        name=target.name,
    )


def two_qubit_local_program(
    targets: Sequence[GateTarget],
    encoding: DualRailEncoding,
    layer: int,
    n_modes: int,
    name: str = "",
) -> Tuple[GateProgram, GateTarget]:
    """Single-qubit rotations on both qubits in one lattice layer, as a full-width section."""
    progs = [single_qubit_program(t, q, layer, n_modes) for t, q in zip(targets, encoding.pairs)]
    merged = merge_programs(progs, name)
    full = region_program((layer - 1, layer + 1), (0, n_modes), merged.settings, encoding, name)
    matrix = np.kron(targets[0].matrix, targets[1].matrix)
    return full, GateTarget(matrix, name)


# -- CPHASE --------------------------------------------------------------------

CPHASE_ENCODING = DualRailEncoding(((2, 3), (5, 4)))
CPHASE_MODES = 8
CPHASE_LAYERS = 6
# frozen programs: multiples of pi/4 and of pi/3
CPHASE_ASSET_PHASES = tuple(sorted({round(k * np.pi / 4, 12) for k in range(8)} | {round(k * np.pi / 3, 12) for k in range(6)}))


def cphase_success_probability(phase: float) -> float:
    """Success probability targeted by the synthesized CPHASE(phase) programs.

    With ``s = |sin(phase / 2)|`` and the phase wrapped to ``(-pi, pi]``::

        p = (1 + 2 s + 2 sqrt(2 s) |cos((|phase| + pi) / 4)|)^-2

    This is 1 at phase 0 and 1/9 at phase pi. It is the value reached by
    attenuating both logical-0 rails to amplitude ``a = sqrt(sqrt(p))`` and
    applying ``a [[1, b], [c, 1]]`` with ``b c = e^{i phase} - 1`` to the two
    logical-1 rails, which needs four vacuum ancilla modes.
    """
    phase = float(np.mod(phase + np.pi, TWO_PI) - np.pi)
    s = abs(np.sin(phase / 2))
    return float((1 + 2 * s + 2 * np.sqrt(2 * s) * abs(np.cos((abs(phase) + np.pi) / 4))) ** -2)


def cphase_region_program(first_layer: int = 0) -> GateProgram:
    """Identity program over the CPHASE region; CPHASE(0) exactly."""
    if first_layer % 2:
        raise ValueError("CPHASE region must start on an even layer")
    layers = (first_layer, first_layer + CPHASE_LAYERS)
    return region_program(layers, (0, CPHASE_MODES), {}, CPHASE_ENCODING, "cphase")


@lru_cache(maxsize=None)
def _cphase_assets() -> dict:
    try:
        text = resources.files("meshsim").joinpath("data/cphase_programs.json").read_text(encoding="utf-8")
    except FileNotFoundError:
        return {}
    return {float(k): v for k, v in json.loads(text)["programs"].items()}


@lru_cache(maxsize=64)
def _cphase_settings(phase: float) -> Tuple[Tuple[Address, MziSettings], ...]:
    if phase == 0.0:
        return tuple(cphase_region_program().settings.items())
    region = [[0, CPHASE_LAYERS], [0, CPHASE_MODES]]
    for key, table in _cphase_assets().items():
        if abs(key - phase) < 1e-9 and [table["layers"], table["modes"]] == region:
            return tuple(GateProgram.from_table(table).settings.items())
    from .synthesis import synthesize_cphase

    return tuple(synthesize_cphase(phase).settings.items())


def nominal_cphase_program(phase: float, first_layer: int = 0) -> Tuple[GateProgram, GateTarget]:
    """CPHASE(phase) on the 8-mode x 6-layer region starting at ``first_layer`` (even).

    Programs for the frozen phases load from package data; other phases are
    synthesized on first use (a few seconds) and cached for the process.
    """
    if not np.isfinite(phase):
        raise ValueError(f"phase must be finite, got {phase}")
    key = round(float(np.mod(phase, TWO_PI)), 12) % round(TWO_PI, 12)
    base = cphase_region_program(first_layer)
    settings = {(l + first_layer, j): s for (l, j), s in _cphase_settings(key)}
    return base.with_settings(settings), GateTarget(cphase_matrix(phase), "cphase")
