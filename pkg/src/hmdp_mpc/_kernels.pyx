# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled feasibility screen for candidate ego sequences."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def sequence_feasibility(const double[:, ::1] ego_x, const long long[:, ::1] ego_lane,
                         const double[:, ::1] sa_x, const double[:, ::1] tight,
                         const long long[:, ::1] sa_lane, double d_safe):
    cdef Py_ssize_t N = ego_x.shape[0], H = ego_x.shape[1], M = sa_x.shape[0]
    cdef Py_ssize_t n, m, j
    cdef double mu, req
    flags = np.ones(N, dtype=np.uint8)
    cdef unsigned char[::1] out = flags
    with nogil:
        for n in range(N):
            for m in range(M):
                for j in range(H):
                    if ego_lane[n, j] != sa_lane[m, j]:
                        continue
                    mu = ego_x[n, j] - sa_x[m, j]
                    req = d_safe + tight[m, j]
                    if mu < 0:
                        mu = -mu
                    elif mu == 0:
                        out[n] = 0
                        break
                    if mu < req:
                        out[n] = 0
                        break
                if not out[n]:
                    break
    return flags.view(np.bool_)
