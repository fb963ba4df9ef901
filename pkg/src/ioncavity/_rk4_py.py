"""Pure-Python fixed-step RK4 time loop (fallback for the compiled kernel)."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def rk4_csr(indptr, indices, data, W, n_int, y0, dt, n_steps, sample_every, checkpoint_every):
    n = len(y0)
    L = sp.csr_matrix((np.asarray(data, dtype=complex), np.asarray(indices), np.asarray(indptr)),
                      shape=(n, n))
    W = np.ascontiguousarray(W, dtype=complex)
    w_int = W[:n_int]
    n_samples = n_steps // sample_every + 1
    n_chk = (n_samples - 1) // checkpoint_every + 1
    obs = np.zeros((n_samples, W.shape[0]), dtype=complex)
    ints = np.zeros((n_samples, n_int), dtype=complex)
    chk = np.zeros((n_chk, n), dtype=complex)

    y = np.array(y0, dtype=complex)
    acc = np.zeros(n_int, dtype=complex)
    obs[0] = W @ y
    chk[0] = y
    c = 1
    h2, h6 = 0.5 * dt, dt / 6.0
    for step in range(1, n_steps + 1):
        k1 = L @ y
        y2 = y + h2 * k1
        k2 = L @ y2
        y3 = y + h2 * k2
        k3 = L @ y3
        y4 = y + dt * k3
        k4 = L @ y4
        if n_int:
            acc += h6 * (w_int @ y + 2.0 * (w_int @ y2) + 2.0 * (w_int @ y3) + w_int @ y4)
        y = y + h6 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if step % sample_every == 0:
            s = step // sample_every
            obs[s] = W @ y
            ints[s] = acc
            if s % checkpoint_every == 0:
                chk[c] = y
                c += 1
    return obs, ints, chk, y
