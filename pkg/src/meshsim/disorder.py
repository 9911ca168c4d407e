"""Fabrication disorder: seeded sampling of coupler imbalance and shifter loss.

Coupler transitivities follow a normal distribution truncated to ``[0, 1]``;
shifter losses a normal distribution truncated to ``[0, 1)``. Truncation is by
rejection (resampling), never by clamping.

Every instance draws from its own stream, derived from ``(master_seed,
instance_index)`` through :class:`numpy.random.SeedSequence`, so ensembles do not
depend on execution order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterator

import numpy as np

from .mesh import Address, MeshTopology, MziPhysical

UINT64_MASK = (1 << 64) - 1

# stream tags keep unrelated random draws of one instance independent
STREAM_FABRICATION = 0
STREAM_PHASE_DISORDER = 1
STREAM_START_POINTS = 2
STREAM_SHOTS = 3


@dataclass(frozen=True)
class DisorderModel:
    coupler_mean: float = 0.5
    coupler_std: float = 0.043
    loss_mean: float = 0.0516
    loss_std: float = 0.0284

    def __post_init__(self):
        for name in ("coupler_mean", "loss_mean"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("coupler_std", "loss_std"):
            v = getattr(self, name)
            if not v >= 0.0:
                raise ValueError(f"{name} must be non-negative, got {v}")
        if self.loss_mean >= 1.0 and self.loss_std == 0.0:
            raise ValueError("loss_mean must be below 1 when loss_std is 0")

    @classmethod
    def ideal(cls) -> "DisorderModel":
        """Balanced couplers, no loss."""
        return cls(0.5, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class InstanceSeed:
    master_seed: int
    instance_index: int = 0

    def __post_init__(self):
        if self.instance_index < 0:
            raise ValueError("instance_index must be non-negative")


def instance_rng(seed: InstanceSeed, stream: int = STREAM_FABRICATION) -> np.random.Generator:
    """Generator for one instance: ``SeedSequence([master_seed mod 2**64, index, stream])``."""
    ss = np.random.SeedSequence([seed.master_seed & UINT64_MASK, seed.instance_index, stream])
    return np.random.default_rng(ss)


def _truncated_normal(rng: np.random.Generator, mean: float, std: float, lo: float, hi: float, hi_open: bool):
    if std == 0.0:
        return float(mean)
    while True:
        x = rng.normal(mean, std)
        if x >= lo and (x < hi if hi_open else x <= hi):
            return float(x)


def sample_coupler_transitivity(model: DisorderModel, rng: np.random.Generator) -> float:
    return _truncated_normal(rng, model.coupler_mean, model.coupler_std, 0.0, 1.0, hi_open=False)


def sample_shifter_loss(model: DisorderModel, rng: np.random.Generator) -> float:
    return _truncated_normal(rng, model.loss_mean, model.loss_std, 0.0, 1.0, hi_open=True)


def _batch(rng, mean, std, size, lo, hi, hi_open):
    # one draw per entry in C order, then rejected entries redrawn in that same order
    if std == 0.0:
        return np.full(size, float(mean))
    out = rng.normal(mean, std, size=size)
    flat = out.reshape(-1)
    bad = np.flatnonzero((flat < lo) | ((flat >= hi) if hi_open else (flat > hi)))
    for k in bad:
        flat[k] = _truncated_normal(rng, mean, std, lo, hi, hi_open)
    return out


def sample_couplers(model: DisorderModel, rng: np.random.Generator, size) -> np.ndarray:
    return _batch(rng, model.coupler_mean, model.coupler_std, size, 0.0, 1.0, False)


def sample_losses(model: DisorderModel, rng: np.random.Generator, size) -> np.ndarray:
    return _batch(rng, model.loss_mean, model.loss_std, size, 0.0, 1.0, True)


@dataclass(frozen=True, eq=False)
class MeshInstance:
    """A sampled chip: topology plus per-MZI physical parameters.

    ``t`` has shape ``(n_mzis, 2)`` and ``gamma`` shape ``(n_mzis, 4)``, both in
    the topology's canonical address order.
    """

    topology: MeshTopology
    t: np.ndarray
    gamma: np.ndarray
    seed: InstanceSeed | None = field(default=None)

    def __post_init__(self):
        n = self.topology.n_mzis
        t = np.asarray(self.t, dtype=float).reshape(n, 2)
        g = np.asarray(self.gamma, dtype=float).reshape(n, 4)
        if np.any((t < 0) | (t > 1)) or np.any((g < 0) | (g >= 1)):
            raise ValueError("physical parameters out of range")
        t.flags.writeable = False
        g.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "gamma", g)

    @classmethod
    def ideal(cls, topology: MeshTopology) -> "MeshInstance":
        n = topology.n_mzis
        return cls(topology, np.full((n, 2), 0.5), np.zeros((n, 4)))

    def physical(self, address: Address) -> MziPhysical:
        k = self.topology.index[tuple(address)]
        return MziPhysical(*self.t[k], *self.gamma[k])

    def items(self) -> Iterator:
        for a in self.topology.addresses:
            yield a, self.physical(a)

    def as_dict(self) -> Dict[Address, MziPhysical]:
        return dict(self.items())

    def __eq__(self, other):
        if not isinstance(other, MeshInstance):
            return NotImplemented
        return (
            self.topology == other.topology
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.gamma, other.gamma)
        )

    __hash__ = None


def sample_mesh_instance(model: DisorderModel, topology: MeshTopology, seed: InstanceSeed) -> MeshInstance:
    """Sample every MZI of ``topology`` independently.

    Canonical draw order: layer, then position, then ``t1, t2, gamma1..gamma4``.
    All six values of every MZI are drawn in one pass in that order, with the
    coupler and loss distributions mapped from the same standard-normal stream;
    out-of-range draws are then resampled in the same order.
    """
    rng = instance_rng(seed, STREAM_FABRICATION)
    n = topology.n_mzis
    z = rng.standard_normal((n, 6))
    vals = np.empty((n, 6))
    vals[:, :2] = model.coupler_mean + model.coupler_std * z[:, :2]
    vals[:, 2:] = model.loss_mean + model.loss_std * z[:, 2:]
    bad = np.zeros((n, 6), dtype=bool)
    bad[:, :2] = (vals[:, :2] < 0.0) | (vals[:, :2] > 1.0)
    bad[:, 2:] = (vals[:, 2:] < 0.0) | (vals[:, 2:] >= 1.0)
    flat = vals.reshape(-1)
    for k in np.flatnonzero(bad):
        if k % 6 < 2:
            flat[k] = sample_coupler_transitivity(model, rng)
        else:
            flat[k] = sample_shifter_loss(model, rng)
    t, g = vals[:, :2], vals[:, 2:]
    return MeshInstance(topology, t, g, seed)
