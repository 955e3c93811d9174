# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled profiled least-squares kernels; same API as ``_kernels_py``."""
import numpy as np
from libc.math cimport sqrt, fabs, INFINITY
from scipy.linalg.cython_blas cimport dgemv, dgemm

NAME = "cython"

cdef double PIVOT_TOL = 1e-13


cdef int _factor(double[:, ::1] Phi, int r) noexcept nogil:
    """In-place lower Cholesky of the r x r matrix; returns 0 on failure."""
    cdef int i, j, l
    cdef double s, scale = 0.0
    for i in range(r):
        if Phi[i, i] > scale:
            scale = Phi[i, i]
    if scale <= 0.0:
        return 0
    for j in range(r):
        s = Phi[j, j]
        for l in range(j):
            s -= Phi[j, l] * Phi[j, l]
        if s <= PIVOT_TOL * scale:
            return 0
        Phi[j, j] = sqrt(s)
        for i in range(j + 1, r):
            s = Phi[i, j]
            for l in range(j):
                s -= Phi[i, l] * Phi[j, l]
            Phi[i, j] = s / Phi[j, j]
    return 1


cdef void _chol_solve(double[:, ::1] L, int r, double* rhs) noexcept nogil:
    cdef int i, l
    cdef double s
    for i in range(r):
        s = rhs[i]
        for l in range(i):
            s -= L[i, l] * rhs[l]
        rhs[i] = s / L[i, i]
    for i in range(r - 1, -1, -1):
        s = rhs[i]
        for l in range(i + 1, r):
            s -= L[l, i] * rhs[l]
        rhs[i] = s / L[i, i]


cdef int _profile(const double[:, ::1] X, const double[:, ::1] Y, const double[::1] beta,
                  int k, double[::1] f, double[:, ::1] Ft, double[:, ::1] B,
                  double[:, ::1] Phi, double[:, ::1] G, double[::1] tmp) noexcept nogil:
    """f = X beta, Ft = F', B = Y'F (stored (k+1) x q), G = Gamma' ((k+1) x q)."""
    cdef int N = X.shape[0], p = X.shape[1], n = Y.shape[0], q = Y.shape[1]
    cdef int r = k + 1, a, b, i, j
    cdef double one = 1.0, zero = 0.0, s
    cdef int inc = 1
    # f = X beta: X is row-major N x p == column-major p x N
    dgemv(b"T", &p, &N, &one, <double*>&X[0, 0], &p, <double*>&beta[0], &inc,
          &zero, &f[0], &inc)
    for a in range(r):
        for i in range(n):
            Ft[a, i] = f[i + k - a]
    for a in range(r):
        for b in range(a + 1):
            s = 0.0
            for i in range(n):
                s += Ft[a, i] * Ft[b, i]
            Phi[a, b] = s
            Phi[b, a] = s
    # B stored r x q row-major == column-major q x r == Y_c (q x n) * Ft_c (n x r)
    dgemm(b"N", b"N", &q, &r, &n, &one, <double*>&Y[0, 0], &q, &Ft[0, 0], &n,
          &zero, &B[0, 0], &q)
    if not _factor(Phi, r):
        return 0
    for j in range(q):
        for a in range(r):
            G[a, j] = B[a, j]
    for j in range(q):
        for a in range(r):
            tmp[a] = G[a, j]
        _chol_solve(Phi, r, &tmp[0])
        for a in range(r):
            G[a, j] = tmp[a]
    return 1


def g1_value(const double[:, ::1] X, const double[:, ::1] Y, const double[::1] beta,
             int k, double yy):
    cdef int n = Y.shape[0], q = Y.shape[1], r = k + 1, a, j
    cdef double[::1] f = np.empty(X.shape[0])
    cdef double[:, ::1] Ft = np.empty((r, n))
    cdef double[:, ::1] B = np.empty((r, q))
    cdef double[:, ::1] Phi = np.empty((r, r))
    cdef double[:, ::1] G = np.empty((r, q))
    cdef double s = 0.0
    if not _profile(X, Y, beta, k, f, Ft, B, Phi, G, np.empty(r)):
        return INFINITY
    for a in range(r):
        for j in range(q):
            s += G[a, j] * B[a, j]
    s = (yy - s) / n
    return s if s > 0.0 else 0.0


def g1_value_grad(const double[:, ::1] X, const double[:, ::1] Y, const double[::1] beta,
                  int k, double yy):
    cdef int N = X.shape[0], p = X.shape[1], n = Y.shape[0], q = Y.shape[1]
    cdef int r = k + 1, a, b, i, j
    cdef double[::1] f = np.empty(N)
    cdef double[:, ::1] Ft = np.empty((r, n))
    cdef double[:, ::1] B = np.empty((r, q))
    cdef double[:, ::1] Phi = np.empty((r, r))
    Gamma_t = np.empty((r, q))
    cdef double[:, ::1] G = Gamma_t
    cdef double s = 0.0, one = 1.0, zero = 0.0, alpha
    cdef int inc = 1
    if not _profile(X, Y, beta, k, f, Ft, B, Phi, G, np.empty(r)):
        return INFINITY, np.full(p, np.nan), None
    for a in range(r):
        for j in range(q):
            s += G[a, j] * B[a, j]
    s = (yy - s) / n
    value = s if s > 0.0 else 0.0
    # W' (r x n) = Gamma' Y' - (Gamma'Gamma) F'
    cdef double[:, ::1] Wt = np.empty((r, n))
    dgemm(b"T", b"N", &n, &r, &q, &one, <double*>&Y[0, 0], &q, &G[0, 0], &q,
          &zero, &Wt[0, 0], &n)
    cdef double[:, ::1] GG = np.empty((r, r))
    for a in range(r):
        for b in range(r):
            s = 0.0
            for j in range(q):
                s += G[a, j] * G[b, j]
            GG[a, b] = s
    for a in range(r):
        for b in range(r):
            s = GG[a, b]
            for i in range(n):
                Wt[a, i] -= s * Ft[b, i]
    cdef double[::1] wt = np.zeros(N)
    for a in range(r):
        for i in range(n):
            wt[i + k - a] += Wt[a, i]
    grad = np.empty(p)
    cdef double[::1] gv = grad
    alpha = -2.0 / n
    dgemv(b"N", &p, &N, &alpha, <double*>&X[0, 0], &p, &wt[0], &inc, &zero, &gv[0], &inc)
    return value, grad, np.ascontiguousarray(Gamma_t.T)


def soft_threshold(v, double gamma):
    cdef const double[::1] x = np.ascontiguousarray(v, dtype=float).ravel()
    out = np.empty(x.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t i
    cdef double xi
    for i in range(x.shape[0]):
        xi = x[i]
        if xi > gamma:
            o[i] = xi - gamma
        elif xi < -gamma:
            o[i] = xi + gamma
        else:
            o[i] = 0.0
    return out.reshape(np.shape(v))


def prox_point(const double[::1] beta, const double[::1] g, double eta, double lam):
    cdef Py_ssize_t i, p = beta.shape[0]
    cdef double thr = lam * eta, v, nrm = 0.0
    out = np.empty(p)
    cdef double[::1] o = out
    for i in range(p):
        v = beta[i] - eta * g[i]
        if v > thr:
            v -= thr
        elif v < -thr:
            v += thr
        else:
            v = 0.0
        o[i] = v
        nrm += v * v
    if nrm == 0.0:
        return None
    nrm = sqrt(nrm)
    for i in range(p):
        o[i] /= nrm
    return out
