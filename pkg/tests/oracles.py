"""Independent reference implementations used by several test modules."""

import itertools

import numpy as np


def symmetrized(n_modes, modes):
    """Normalized symmetric tensor-product vector for photons in ``modes``."""
    vec = np.zeros([n_modes] * len(modes), dtype=complex)
    for perm in itertools.permutations(modes):
        vec[perm] += 1
    vec = vec.ravel()
    return vec / np.linalg.norm(vec)


def tensor_amplitude(u, inp, out):
    """<out| U |in> by evolving the full tensor-product space (no permanents)."""
    n = u.shape[0]
    big = u
    for _ in range(len(inp) - 1):
        big = np.kron(big, u)
    return symmetrized(n, out).conj() @ big @ symmetrized(n, inp)


def dual_rail_transform(u, pairs):
    """Post-selected computational-basis transform from the tensor-product oracle."""
    states = [
        [pairs[q][(k >> (len(pairs) - 1 - q)) & 1] for q in range(len(pairs))]
        for k in range(2 ** len(pairs))
    ]
    return np.array([[tensor_amplitude(u, sorted(i), sorted(o)) for i in states] for o in states])


def hs_fidelity(v, v0):
    return abs(np.vdot(v, v0)) ** 2 / (np.vdot(v, v).real * np.vdot(v0, v0).real)


def textbook_ipea_iteration(phase, omega):
    """H.Rz(omega).C-phase.H on (ancilla, system) written out gate by gate."""
    h = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
    eye = np.eye(2)
    rz = np.diag([1, np.exp(1j * omega)])
    p1 = np.diag([0, 1])
    controlled = np.kron(eye - p1, eye) + np.kron(p1, np.diag([1, np.exp(1j * phase)]))
    return np.kron(h, eye) @ controlled @ np.kron(rz, eye) @ np.kron(h, eye)
