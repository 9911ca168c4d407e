"""Multi-photon evolution through linear optics via matrix permanents.

Loss is carried by sub-unitary transfer matrices; post-selected quantities are
renormalized over the retained outcomes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import factorial, prod, sqrt
from typing import Iterable, Sequence, Tuple

import numpy as np

MAX_PHOTONS = 4


@dataclass(frozen=True)
class FockState:
    """Photon occupation numbers per mode."""

    occupations: Tuple[int, ...]

    def __post_init__(self):
        occ = tuple(int(n) for n in self.occupations)
        if any(n < 0 for n in occ):
            raise ValueError(f"occupations must be non-negative, got {occ}")
        object.__setattr__(self, "occupations", occ)

    @classmethod
    def from_modes(cls, n_modes: int, modes: Iterable[int]) -> "FockState":
        """State with one photon per entry of ``modes`` (repeats allowed)."""
        occ = [0] * n_modes
        for m in modes:
            occ[m] += 1
        return cls(tuple(occ))

    @property
    def n_photons(self) -> int:
        return sum(self.occupations)

    @property
    def n_modes(self) -> int:
        return len(self.occupations)

    def mode_list(self) -> list:
        """Mode index of every photon, sorted, with multiplicity."""
        return [m for m, n in enumerate(self.occupations) for _ in range(n)]

    def __str__(self):
        return "|" + ",".join(map(str, self.occupations)) + ">"


def permanent(m) -> complex:
    """Permanent of a square matrix.

    Direct expansion up to 3x3, Ryser's inclusion-exclusion formula beyond.
    """
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"permanent needs a square matrix, got shape {m.shape}")
    n = m.shape[0]
    if n == 0:
        return 1.0
    if n == 1:
        return m[0, 0]
    if n == 2:
        return m[0, 0] * m[1, 1] + m[0, 1] * m[1, 0]
    if n == 3:
        return (
            m[0, 0] * (m[1, 1] * m[2, 2] + m[1, 2] * m[2, 1])
            + m[0, 1] * (m[1, 0] * m[2, 2] + m[1, 2] * m[2, 0])
            + m[0, 2] * (m[1, 0] * m[2, 1] + m[1, 1] * m[2, 0])
        )
    total = 0.0
    for k in range(1, n + 1):
        for cols in itertools.combinations(range(n), k):
            total += (-1) ** k * np.prod(m[:, cols].sum(axis=1))
    return (-1) ** n * total


def _check_photons(n: int) -> None:
    if n < 1:
        raise ValueError("at least one photon is required")
    if n > MAX_PHOTONS:
        raise ValueError(f"{n} photons exceed the supported maximum of {MAX_PHOTONS}")


def transition_amplitude(u: np.ndarray, inp: FockState, out: FockState) -> complex:
    """Amplitude <out| U |inp> for a linear-optical transfer matrix ``u``."""
    if inp.n_photons != out.n_photons:
        raise ValueError(f"photon number mismatch: {inp.n_photons} in, {out.n_photons} out")
    _check_photons(inp.n_photons)
    sub = np.asarray(u)[np.ix_(out.mode_list(), inp.mode_list())]
    norm = prod(factorial(n) for n in inp.occupations) * prod(factorial(n) for n in out.occupations)
    return permanent(sub) / sqrt(norm)


@dataclass(frozen=True)
class PostSelectedTransform:
    """Post-selected process matrix; ``matrix[j, k] = <out_j| U |in_k>``."""

    matrix: np.ndarray
    success_probability: np.ndarray

    def normalized(self) -> np.ndarray:
        """Matrix scaled to unit Hilbert-Schmidt norm."""
        norm = np.linalg.norm(self.matrix)
        if norm == 0:
            raise ValueError("post-selected transform vanishes")
        return self.matrix / norm


def post_selected_transform(
    u: np.ndarray, in_basis: Sequence[FockState], out_basis: Sequence[FockState]
) -> PostSelectedTransform:
    photons = {s.n_photons for s in itertools.chain(in_basis, out_basis)}
    if len(photons) != 1:
        raise ValueError(f"basis states carry inconsistent photon numbers {sorted(photons)}")
    mat = np.array([[transition_amplitude(u, i, o) for i in in_basis] for o in out_basis], dtype=complex)
    return PostSelectedTransform(mat, np.sum(np.abs(mat) ** 2, axis=0))


def fock_basis(n_modes: int, n_photons: int) -> list:
    """All Fock states of ``n_photons`` photons in ``n_modes`` modes."""
    return [
        FockState.from_modes(n_modes, c)
        for c in itertools.combinations_with_replacement(range(n_modes), n_photons)
    ]


# -- two-photon statistics -----------------------------------------------------


@dataclass(frozen=True)
class CorrelationMatrix:
    """Two-photon output statistics.

    ``gamma[q, r] = gamma[r, q]`` is the probability of detecting the photons in
    modes ``{q, r}``; the upper triangle (diagonal included) sums to 1.
    """

    gamma: np.ndarray

    def density(self) -> np.ndarray:
        return two_photon_density(self.gamma)


def two_photon_density(gamma: np.ndarray) -> np.ndarray:
    """Mean photon number per mode; sums to 2."""
    return gamma.sum(axis=1) + np.diag(gamma)


def pair_probabilities(col_a: np.ndarray, col_b: np.ndarray) -> np.ndarray:
    """Unnormalized symmetric pair-probability matrix for photons entering two distinct modes.

    ``col_a``/``col_b`` are the transfer-matrix columns of the two input modes,
    possibly stacked along leading axes.
    """
    amp = col_a[..., :, None] * col_b[..., None, :]
    amp = amp + np.swapaxes(amp, -1, -2)
    p = np.abs(amp) ** 2
    # bunched outcome |2_q>: amplitude 2 U_qa U_qb / sqrt(2)
    idx = np.arange(p.shape[-1])
    p[..., idx, idx] *= 0.5
    return p


def normalize_pairs(p: np.ndarray) -> np.ndarray:
    """Scale pair probabilities so every (stacked) upper triangle sums to 1."""
    return p / np.triu(p).sum(axis=(-2, -1), keepdims=True)


def two_photon_statistics(u: np.ndarray, inp: FockState) -> Tuple[CorrelationMatrix, np.ndarray]:
    """Correlation matrix and mode density at the output, post-selected on two detections."""
    if inp.n_photons != 2:
        raise ValueError(f"two_photon_statistics needs exactly 2 photons, got {inp.n_photons}")
    u = np.asarray(u)
    a, b = inp.mode_list()
    p = pair_probabilities(u[:, a], u[:, b])
    if a == b:
        # |2_a>: amplitudes pick up 1/sqrt(2) from the input normalization
        p = 0.5 * p
    if np.triu(p).sum() == 0:
        raise ValueError("no two-photon detection is possible")
    gamma = normalize_pairs(p)
    return CorrelationMatrix(gamma), two_photon_density(gamma)
