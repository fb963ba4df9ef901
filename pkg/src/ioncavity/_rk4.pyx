# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Fixed-step RK4 time loop for y' = L y with L in CSR form.

Compiled twin of :func:`ioncavity._rk4_py.rk4_csr`; both share the signature
and return layout.
"""
import numpy as np
cimport numpy as cnp

ctypedef double complex cplx


cdef inline void _matvec(const cnp.int64_t[::1] indptr, const cnp.int32_t[::1] indices, const cplx[::1] data,
                         const cplx[::1] x, cplx[::1] out, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef cplx acc
    for i in range(n):
        acc = 0
        for k in range(indptr[i], indptr[i + 1]):
            acc = acc + data[k] * x[indices[k]]
        out[i] = acc


cdef inline void _dot_rows(const cplx[:, ::1] W, const cplx[::1] x, cplx[::1] out,
                           Py_ssize_t nrows, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t r, j
    cdef cplx acc
    for r in range(nrows):
        acc = 0
        for j in range(n):
            acc = acc + W[r, j] * x[j]
        out[r] = acc


def rk4_csr(indptr, indices, data, W, Py_ssize_t n_int, y0, double dt, Py_ssize_t n_steps,
            Py_ssize_t sample_every, Py_ssize_t checkpoint_every):
    cdef const cnp.int64_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const cnp.int32_t[::1] ix = np.ascontiguousarray(indices, dtype=np.int32)
    cdef const cplx[::1] dv = np.ascontiguousarray(data, dtype=np.complex128)
    cdef const cplx[:, ::1] w = np.ascontiguousarray(W, dtype=np.complex128)
    cdef Py_ssize_t n = y0.shape[0]
    cdef Py_ssize_t nw = w.shape[0]
    cdef Py_ssize_t n_samples = n_steps // sample_every + 1
    cdef Py_ssize_t n_chk = (n_samples - 1) // checkpoint_every + 1

    obs_arr = np.zeros((n_samples, nw), dtype=np.complex128)
    int_arr = np.zeros((n_samples, n_int), dtype=np.complex128)
    chk_arr = np.zeros((n_chk, n), dtype=np.complex128)
    cdef cplx[:, ::1] obs = obs_arr
    cdef cplx[:, ::1] ints = int_arr
    cdef cplx[:, ::1] chk = chk_arr

    y_arr = np.array(y0, dtype=np.complex128)
    cdef cplx[::1] y = y_arr
    cdef cplx[::1] k1 = np.empty(n, dtype=np.complex128)
    cdef cplx[::1] k2 = np.empty(n, dtype=np.complex128)
    cdef cplx[::1] k3 = np.empty(n, dtype=np.complex128)
    cdef cplx[::1] k4 = np.empty(n, dtype=np.complex128)
    cdef cplx[::1] tmp = np.empty(n, dtype=np.complex128)
    cdef cplx[::1] wtmp = np.empty(max(nw, 1), dtype=np.complex128)
    cdef cplx[::1] acc = np.zeros(max(n_int, 1), dtype=np.complex128)

    cdef Py_ssize_t step, i, r, s = 0, c = 0
    cdef double h2 = 0.5 * dt, h6 = dt / 6.0

    with nogil:
        _dot_rows(w, y, wtmp, nw, n)
        for r in range(nw):
            obs[0, r] = wtmp[r]
        for i in range(n):
            chk[0, i] = y[i]
        c = 1
        for step in range(1, n_steps + 1):
            _matvec(ip, ix, dv, y, k1, n)
            # integrand at the stage states: W y, W y2, W y3, W y4
            _dot_rows(w, y, wtmp, n_int, n)
            for r in range(n_int):
                acc[r] = acc[r] + h6 * wtmp[r]
            for i in range(n):
                tmp[i] = y[i] + h2 * k1[i]
            _matvec(ip, ix, dv, tmp, k2, n)
            _dot_rows(w, tmp, wtmp, n_int, n)
            for r in range(n_int):
                acc[r] = acc[r] + 2.0 * h6 * wtmp[r]
            for i in range(n):
                tmp[i] = y[i] + h2 * k2[i]
            _matvec(ip, ix, dv, tmp, k3, n)
            _dot_rows(w, tmp, wtmp, n_int, n)
            for r in range(n_int):
                acc[r] = acc[r] + 2.0 * h6 * wtmp[r]
            for i in range(n):
                tmp[i] = y[i] + dt * k3[i]
            _matvec(ip, ix, dv, tmp, k4, n)
            _dot_rows(w, tmp, wtmp, n_int, n)
            for r in range(n_int):
                acc[r] = acc[r] + h6 * wtmp[r]
            for i in range(n):
                y[i] = y[i] + h6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if step % sample_every == 0:
                s = step // sample_every
                _dot_rows(w, y, wtmp, nw, n)
                for r in range(nw):
                    obs[s, r] = wtmp[r]
                for r in range(n_int):
                    ints[s, r] = acc[r]
                if s % checkpoint_every == 0:
                    for i in range(n):
                        chk[c, i] = y[i]
                    c = c + 1
    return obs_arr, int_arr, chk_arr, y_arr
