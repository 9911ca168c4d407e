"""Transfer matrices of single MZIs and of rectangular (brick-wall) MZI lattices.

An MZI is two directional couplers around an internal phase ``theta``, followed
by an output phase ``phi`` on the upper arm::

    U(theta, phi) = 1/2 diag(e^{i phi}, 1) B diag(e^{i theta}, 1) B,   B = [[1, i], [i, 1]]

Closed form::

    U = 1/2 [[e^{i phi}(e^{i theta} - 1), i e^{i phi}(e^{i theta} + 1)],
             [i (e^{i theta} + 1),          1 - e^{i theta}          ]]

``theta = pi`` is the bar state and ``theta = 0`` the cross state. With
``phi = pi`` the bar state is exactly the identity.

Mesh layout: layer ``l`` couples modes ``(2j + l % 2, 2j + 1 + l % 2)`` for every
pair that fits inside ``[0, n_modes)``. MZIs are addressed as ``(layer, position)``
with ``position = j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Optional, Tuple, Union

import numpy as np

TWO_PI = 2.0 * np.pi

Address = Tuple[int, int]


@dataclass(frozen=True)
class MziSettings:
    """Programmable phases of one MZI, stored reduced mod 2*pi."""

    theta: float = np.pi
    phi: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.theta) and np.isfinite(self.phi)):
            raise ValueError(f"MZI phases must be finite, got ({self.theta}, {self.phi})")
        object.__setattr__(self, "theta", float(np.mod(self.theta, TWO_PI)))
        object.__setattr__(self, "phi", float(np.mod(self.phi, TWO_PI)))


BAR = MziSettings(np.pi, 0.0)


@dataclass(frozen=True)
class MziPhysical:
    """Fabricated parameters of one MZI.

    ``t1``/``t2`` are the bar transmissions of the input/output couplers;
    ``gamma1``/``gamma2`` are the power losses of the upper/lower arm shifters of
    the internal stage, ``gamma3``/``gamma4`` those of the output stage.
    """

    t1: float = 0.5
    t2: float = 0.5
    gamma1: float = 0.0
    gamma2: float = 0.0
    gamma3: float = 0.0
    gamma4: float = 0.0

    def __post_init__(self):
        for name in ("t1", "t2"):
            t = getattr(self, name)
            if not 0.0 <= t <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {t}")
        for name in ("gamma1", "gamma2", "gamma3", "gamma4"):
            g = getattr(self, name)
            if not 0.0 <= g < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {g}")

    @property
    def gammas(self) -> Tuple[float, float, float, float]:
        return (self.gamma1, self.gamma2, self.gamma3, self.gamma4)


IDEAL = MziPhysical()


@dataclass(frozen=True)
class MeshTopology:
    n_modes: int
    n_layers: int

    def __post_init__(self):
        if self.n_modes < 2 or self.n_modes % 2:
            raise ValueError(f"n_modes must be a positive even integer, got {self.n_modes}")
        if self.n_layers < 1:
            raise ValueError(f"n_layers must be positive, got {self.n_layers}")

    def n_positions(self, layer: int) -> int:
        return (self.n_modes - layer % 2) // 2

    def modes(self, address: Address) -> Tuple[int, int]:
        """Mode pair ``(top, top + 1)`` coupled by the MZI at ``address``."""
        self.check(address)
        layer, pos = address
        top = 2 * pos + layer % 2
        return top, top + 1

    def check(self, address: Address) -> None:
        layer, pos = address
        if not (0 <= layer < self.n_layers and 0 <= pos < self.n_positions(layer)):
            raise KeyError(
                f"MZI address {tuple(address)} lies outside the {self.n_modes}x{self.n_layers} topology"
            )

    @cached_property
    def addresses(self) -> Tuple[Address, ...]:
        """All MZI addresses in canonical order: layer-major, then position."""
        return tuple((l, j) for l in range(self.n_layers) for j in range(self.n_positions(l)))

    @cached_property
    def index(self) -> dict:
        return {a: k for k, a in enumerate(self.addresses)}

    @cached_property
    def tops(self) -> np.ndarray:
        """Top mode of every MZI, in canonical order."""
        return np.array([2 * j + l % 2 for l, j in self.addresses], dtype=int)

    @cached_property
    def layer_slices(self) -> Tuple[slice, ...]:
        out, start = [], 0
        for l in range(self.n_layers):
            n = self.n_positions(l)
            out.append(slice(start, start + n))
            start += n
        return tuple(out)

    @property
    def n_mzis(self) -> int:
        return len(self.addresses)


def ideal_mzi_transfer(settings: MziSettings) -> np.ndarray:
    """2x2 transfer matrix of a lossless MZI with balanced couplers."""
    et = np.exp(1j * settings.theta)
    ep = np.exp(1j * settings.phi)
    return 0.5 * np.array(
        [[ep * (et - 1), 1j * ep * (et + 1)], [1j * (et + 1), 1 - et]],
        dtype=complex,
    )


def coupler(t: float) -> np.ndarray:
    st, ct = np.sqrt(t), np.sqrt(1.0 - t)
    return np.array([[st, 1j * ct], [1j * ct, st]], dtype=complex)


def physical_mzi_transfer(settings: MziSettings, physical: MziPhysical = IDEAL) -> np.ndarray:
    """2x2 transfer matrix of a fabricated MZI.

    Each stage is a coupler followed by a lossy phase screen,
    ``diag(sqrt(1-g_a) e^{i p}, sqrt(1-g_b)) @ coupler(t)``; the internal stage
    carries ``(t1, gamma1, gamma2, theta)`` and the output stage
    ``(t2, gamma3, gamma4, phi)``.
    """
    g1, g2, g3, g4 = physical.gammas
    s1 = np.diag([np.sqrt(1 - g1) * np.exp(1j * settings.theta), np.sqrt(1 - g2)]) @ coupler(physical.t1)
    s2 = np.diag([np.sqrt(1 - g3) * np.exp(1j * settings.phi), np.sqrt(1 - g4)]) @ coupler(physical.t2)
    return s2 @ s1


def splitting_ratio(theta: float) -> float:
    """Bar-port power transmission ``eta = sin^2(theta / 2)`` of an ideal MZI."""
    return float(np.sin(theta / 2.0) ** 2)


def theta_for_splitting_ratio(eta: float) -> float:
    """Inverse of :func:`splitting_ratio` on ``theta`` in ``[0, pi]``."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"splitting ratio must lie in [0, 1], got {eta}")
    return float(2.0 * np.arcsin(np.sqrt(eta)))


# -- vectorized stage construction --------------------------------------------


def stage_arrays(t: np.ndarray, gammas: np.ndarray):
    """Per-MZI coupler matrices and loss amplitudes.

    Returns ``(c1, c2, amp)`` with ``c1``/``c2`` of shape ``(n, 2, 2)`` and ``amp``
    of shape ``(n, 4)`` holding ``sqrt(1 - gamma)``.
    """
    t = np.asarray(t, dtype=float).reshape(-1, 2)
    st, ct = np.sqrt(t), np.sqrt(1.0 - t)
    c = np.empty(t.shape + (2, 2), dtype=complex)
    c[..., 0, 0] = st
    c[..., 1, 1] = st
    c[..., 0, 1] = 1j * ct
    c[..., 1, 0] = 1j * ct
    amp = np.sqrt(1.0 - np.asarray(gammas, dtype=float).reshape(-1, 4))
    return c[:, 0], c[:, 1], amp


def mzi_blocks(theta: np.ndarray, phi: np.ndarray, c1, c2, amp):
    """Stacked 2x2 transfer matrices ``m = s2 @ s1``; returns ``(m, s1, s2)``."""
    s1 = c1.copy()
    s1[:, 0, :] *= (amp[:, 0] * np.exp(1j * theta))[:, None]
    s1[:, 1, :] *= amp[:, 1][:, None]
    s2 = c2.copy()
    s2[:, 0, :] *= (amp[:, 2] * np.exp(1j * phi))[:, None]
    s2[:, 1, :] *= amp[:, 3][:, None]
    return s2 @ s1, s1, s2


def apply_layer(x: np.ndarray, tops: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Left-multiply the rows of ``x`` by one layer of 2x2 blocks (in place)."""
    top = x[tops]
    bot = x[tops + 1]
    x[tops] = m[:, 0, 0, None] * top + m[:, 0, 1, None] * bot
    x[tops + 1] = m[:, 1, 0, None] * top + m[:, 1, 1, None] * bot
    return x


# -- mesh composition ----------------------------------------------------------

SettingsLike = Union[Mapping[Address, MziSettings], "object"]


def _settings_arrays(topology: MeshTopology, settings) -> Tuple[np.ndarray, np.ndarray]:
    theta = np.full(topology.n_mzis, np.pi)
    phi = np.zeros(topology.n_mzis)
    mapping = getattr(settings, "settings", settings)
    if mapping is None:
        return theta, phi
    for address, s in mapping.items():
        topology.check(address)
        k = topology.index[tuple(address)]
        theta[k], phi[k] = s.theta, s.phi
    return theta, phi


def _physical_arrays(topology: MeshTopology, physical) -> Tuple[np.ndarray, np.ndarray]:
    if physical is None:
        return np.full((topology.n_mzis, 2), 0.5), np.zeros((topology.n_mzis, 4))
    if hasattr(physical, "t") and hasattr(physical, "gamma"):
        if physical.topology != topology:
            raise ValueError("mesh instance topology does not match")
        return physical.t, physical.gamma
    t = np.full((topology.n_mzis, 2), 0.5)
    g = np.zeros((topology.n_mzis, 4))
    for address, p in physical.items():
        topology.check(address)
        k = topology.index[tuple(address)]
        t[k] = (p.t1, p.t2)
        g[k] = p.gammas
    return t, g


def mesh_transfer(
    topology: MeshTopology,
    settings=None,
    physical=None,
    layers: Optional[Iterable[int]] = None,
) -> np.ndarray:
    """N x N transfer matrix of the lattice, earliest layer applied first.

    ``settings`` is a mapping ``address -> MziSettings`` or anything with a
    ``settings`` attribute holding one (a ``GateProgram``); unlisted MZIs are in
    the bar state. ``physical`` is a mapping ``address -> MziPhysical`` or a
    ``MeshInstance``; ``None`` means ideal components. ``layers`` restricts the
    product to a subset of layers (in increasing order).
    """
    theta, phi = _settings_arrays(topology, settings)
    t, g = _physical_arrays(topology, physical)
    c1, c2, amp = stage_arrays(t, g)
    m, _, _ = mzi_blocks(theta, phi, c1, c2, amp)
    u = np.eye(topology.n_modes, dtype=complex)
    tops = topology.tops
    for l in range(topology.n_layers) if layers is None else layers:
        sl = topology.layer_slices[l]
        apply_layer(u, tops[sl], m[sl])
    return u
