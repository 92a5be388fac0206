"""Fused elementwise kernels for jet activations.

Arrays are viewed as ``(C, N)``: channel 0 values, channels ``1..C-2``
first derivatives, channel ``C-1`` the Laplacian.  The numpy versions are
the reference; the numba versions are used when numba is importable.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None


def tanh_fwd_np(Z, t):
    s1 = 1.0 - t * t
    s2 = -2.0 * t * s1
    out = np.empty_like(Z)
    out[0] = t
    out[1:-1] = s1 * Z[1:-1]
    out[-1] = s1 * Z[-1] + s2 * np.einsum("kn,kn->n", Z[1:-1], Z[1:-1])
    return out


def tanh_bwd_np(Z, t, G):
    s1 = 1.0 - t * t
    s2 = -2.0 * t * s1
    s3 = (6.0 * t * t - 2.0) * s1
    z1, zs = Z[1:-1], Z[-1]
    q = np.einsum("kn,kn->n", z1, z1)
    gs = G[-1]
    gz = np.empty_like(Z)
    gz[0] = G[0] * s1 + s2 * np.einsum("kn,kn->n", G[1:-1], z1) + gs * (s2 * zs + s3 * q)
    gz[1:-1] = G[1:-1] * s1 + 2.0 * gs * s2 * z1
    gz[-1] = gs * s1
    return gz


def _tanh_fwd_nb(Z, t_arr):
    # t_arr = tanh(Z[0]) comes from numpy, whose SIMD tanh beats a scalar loop.
    C, N = Z.shape
    out = np.empty_like(Z)
    for i in range(N):
        t = t_arr[i]
        s1 = 1.0 - t * t
        s2 = -2.0 * t * s1
        q = 0.0
        for k in range(1, C - 1):
            zk = Z[k, i]
            q += zk * zk
            out[k, i] = s1 * zk
        out[0, i] = t
        out[C - 1, i] = s1 * Z[C - 1, i] + s2 * q
    return out


def _tanh_bwd_nb(Z, t_arr, G):
    C, N = Z.shape
    gz = np.empty_like(Z)
    for i in range(N):
        t = t_arr[i]
        s1 = 1.0 - t * t
        s2 = -2.0 * t * s1
        s3 = (6.0 * t * t - 2.0) * s1
        gs = G[C - 1, i]
        q = 0.0
        acc = 0.0
        for k in range(1, C - 1):
            zk = Z[k, i]
            q += zk * zk
            acc += G[k, i] * zk
            gz[k, i] = G[k, i] * s1 + 2.0 * gs * s2 * zk
        gz[0, i] = G[0, i] * s1 + s2 * acc + gs * (s2 * Z[C - 1, i] + s3 * q)
        gz[C - 1, i] = gs * s1
    return gz


def _tanh_value_bwd_nb(t, g):
    out = np.empty_like(t)
    for i in range(t.size):
        out[i] = g[i] * (1.0 - t[i] * t[i])
    return out


if njit is not None:
    tanh_fwd = njit(cache=True)(_tanh_fwd_nb)
    tanh_bwd = njit(cache=True)(_tanh_bwd_nb)
    tanh_value_bwd = njit(cache=True)(_tanh_value_bwd_nb)
else:  # pragma: no cover
    tanh_fwd, tanh_bwd = tanh_fwd_np, tanh_bwd_np

    def tanh_value_bwd(t, g):
        return g * (1.0 - t * t)
