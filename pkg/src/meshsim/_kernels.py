"""Compiled inner loops for program evaluation (one or two photons, dual rail).

Shapes used throughout:
    n       MZIs in the region, stored layer by layer (``bounds`` delimits layers)
    N       modes in the region
    k       modes carrying the computational basis (``modes``)
    d       basis states; state j has photons in columns ``i1[j]`` and ``i2[j]``
"""

import numpy as np
from numba import njit


@njit(cache=True)
def mzi_stack(theta, phi, c1, c2, amp):
    n = theta.shape[0]
    m = np.empty((n, 2, 2), dtype=np.complex128)
    s1 = np.empty((n, 2, 2), dtype=np.complex128)
    s2 = np.empty((n, 2, 2), dtype=np.complex128)
    for i in range(n):
        e1 = amp[i, 0] * np.exp(1j * theta[i])
        e3 = amp[i, 2] * np.exp(1j * phi[i])
        for q in range(2):
            s1[i, 0, q] = e1 * c1[i, 0, q]
            s1[i, 1, q] = amp[i, 1] * c1[i, 1, q]
            s2[i, 0, q] = e3 * c2[i, 0, q]
            s2[i, 1, q] = amp[i, 3] * c2[i, 1, q]
        for p in range(2):
            for q in range(2):
                m[i, p, q] = s2[i, p, 0] * s1[i, 0, q] + s2[i, p, 1] * s1[i, 1, q]
    return m, s1, s2


@njit(cache=True)
def propagate(m, tops, bounds, n_modes, modes):
    """States before every layer and after the last: shape ``(L + 1, N, k)``."""
    n_layers = bounds.shape[0] - 1
    k = modes.shape[0]
    states = np.zeros((n_layers + 1, n_modes, k), dtype=np.complex128)
    for c in range(k):
        states[0, modes[c], c] = 1.0
    for l in range(n_layers):
        states[l + 1] = states[l]
        x = states[l + 1]
        for i in range(bounds[l], bounds[l + 1]):
            a = tops[i]
            for c in range(k):
                x0 = x[a, c]
                x1 = x[a + 1, c]
                x[a, c] = m[i, 0, 0] * x0 + m[i, 0, 1] * x1
                x[a + 1, c] = m[i, 1, 0] * x0 + m[i, 1, 1] * x1
    return states


@njit(cache=True)
def output_block(states, modes):
    k = modes.shape[0]
    last = states.shape[0] - 1
    y = np.empty((k, k), dtype=np.complex128)
    for o in range(k):
        for c in range(k):
            y[o, c] = states[last, modes[o], c]
    return y


@njit(cache=True)
def post_selected(y, i1, i2, two_photons):
    d = i1.shape[0]
    v = np.empty((d, d), dtype=np.complex128)
    for j in range(d):
        for q in range(d):
            if two_photons:
                v[j, q] = y[i1[j], i1[q]] * y[i2[j], i2[q]] + y[i1[j], i2[q]] * y[i2[j], i1[q]]
            else:
                v[j, q] = y[i1[j], i1[q]]
    return v


@njit(cache=True)
def residual(v, v0):
    """Real-stacked ``vh - <v0, vh> v0`` with ``vh = v / |v|``; ``|residual|^2 = 1 - F``."""
    flat = v.ravel()
    norm = np.sqrt(np.sum(np.abs(flat) ** 2))
    vh = flat / norm
    ov = np.sum(np.conj(v0) * vh)
    r = vh - ov * v0
    out = np.empty(2 * r.shape[0])
    out[: r.shape[0]] = r.real
    out[r.shape[0] :] = r.imag
    return out


@njit(cache=True)
def transform_jacobian(m, s1, s2, states, tops, bounds, modes, i1, i2, two_photons, free_cols):
    """Derivative of the flattened post-selected transform, shape ``(d * d, n_free)``."""
    n = m.shape[0]
    n_modes = states.shape[1]
    k = modes.shape[0]
    n_layers = bounds.shape[0] - 1
    y = output_block(states, modes)

    # derivative blocks: theta scales the top row of s1, phi the top row of m
    dth = np.empty((n, 2, 2), dtype=np.complex128)
    dph = np.empty((n, 2, 2), dtype=np.complex128)
    for i in range(n):
        for p in range(2):
            for q in range(2):
                dth[i, p, q] = s2[i, p, 0] * 1j * s1[i, 0, q]
        for q in range(2):
            dph[i, 0, q] = 1j * m[i, 0, q]
            dph[i, 1, q] = 0.0

    dy = np.empty((2 * n, k, k), dtype=np.complex128)
    r = np.zeros((k, n_modes), dtype=np.complex128)
    for o in range(k):
        r[o, modes[o]] = 1.0
    for l in range(n_layers - 1, -1, -1):
        x = states[l]
        for i in range(bounds[l], bounds[l + 1]):
            a = tops[i]
            for o in range(k):
                for c in range(k):
                    acc_t = 0j
                    acc_p = 0j
                    for p in range(2):
                        for q in range(2):
                            w = r[o, a + p] * x[a + q, c]
                            acc_t += dth[i, p, q] * w
                            acc_p += dph[i, p, q] * w
                    dy[i, o, c] = acc_t
                    dy[n + i, o, c] = acc_p
            for o in range(k):
                r0 = r[o, a]
                r1 = r[o, a + 1]
                r[o, a] = r0 * m[i, 0, 0] + r1 * m[i, 1, 0]
                r[o, a + 1] = r0 * m[i, 0, 1] + r1 * m[i, 1, 1]

    d = i1.shape[0]
    nf = free_cols.shape[0]
    dv = np.empty((d * d, nf), dtype=np.complex128)
    for f in range(nf):
        g = dy[free_cols[f]]
        for j in range(d):
            for q in range(d):
                if two_photons:
                    val = (
                        g[i1[j], i1[q]] * y[i2[j], i2[q]]
                        + y[i1[j], i1[q]] * g[i2[j], i2[q]]
                        + g[i1[j], i2[q]] * y[i2[j], i1[q]]
                        + y[i1[j], i2[q]] * g[i2[j], i1[q]]
                    )
                else:
                    val = g[i1[j], i1[q]]
                dv[j * d + q, f] = val
    return dv


@njit(cache=True)
def residual_jacobian(v, dv, v0):
    """Derivative of :func:`residual` given the transform ``v`` and its derivative ``dv``."""
    flat = v.ravel()
    norm = np.sqrt(np.sum(np.abs(flat) ** 2))
    vh = flat / norm
    dd = flat.shape[0]
    nf = dv.shape[1]
    out = np.empty((2 * dd, nf))
    for f in range(nf):
        col = dv[:, f]
        proj = np.sum(np.conj(vh) * col).real
        dvh = (col - vh * proj) / norm
        ov = np.sum(np.conj(v0) * dvh)
        dr = dvh - v0 * ov
        out[:dd, f] = dr.real
        out[dd:, f] = dr.imag
    return out


@njit(cache=True)
def damped_step(jac, r, lam, scale):
    """Solve ``(J^T J + lam diag(scale)) dx = -J^T r`` by Cholesky.

    Written as explicit loops so the floating-point operation order is fixed,
    which keeps optimizer trajectories bit-reproducible across processes.
    Returns ``(dx, g, predicted)`` with ``g = J^T r`` and the predicted
    decrease of ``|r|^2``.
    """
    m, n = jac.shape
    a = np.zeros((n, n))
    g = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for k in range(m):
            acc += jac[k, i] * r[k]
        g[i] = acc
        for j in range(i + 1):
            acc = 0.0
            for k in range(m):
                acc += jac[k, i] * jac[k, j]
            a[i, j] = acc
    h = a.copy()
    for i in range(n):
        h[i, i] += lam * scale[i]
    # in-place lower Cholesky factor
    for j in range(n):
        s = h[j, j]
        for k in range(j):
            s -= h[j, k] * h[j, k]
        if s <= 0.0:
            s = 1e-300
        h[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            s = h[i, j]
            for k in range(j):
                s -= h[i, k] * h[j, k]
            h[i, j] = s / h[j, j]
    y = np.empty(n)
    for i in range(n):
        s = -g[i]
        for k in range(i):
            s -= h[i, k] * y[k]
        y[i] = s / h[i, i]
    dx = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= h[k, i] * dx[k]
        dx[i] = s / h[i, i]
    # predicted decrease: -(2 g.dx + dx^T A dx)
    quad = 0.0
    for i in range(n):
        row = 0.0
        for j in range(n):
            row += (a[i, j] if j <= i else a[j, i]) * dx[j]
        quad += dx[i] * row
    lin = 0.0
    for i in range(n):
        lin += g[i] * dx[i]
    return dx, g, -(2.0 * lin + quad)


@njit(cache=True)
def sum_squares(r):
    acc = 0.0
    for i in range(r.shape[0]):
        acc += r[i] * r[i]
    return acc


@njit(cache=True)
def column_squares(jac):
    m, n = jac.shape
    out = np.zeros(n)
    for i in range(m):
        for j in range(n):
            out[j] += jac[i, j] * jac[i, j]
    return out
