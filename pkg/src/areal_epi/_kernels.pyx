# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-cell negative-binomial kernels.

Mirrors ``_kernels_py`` function for function; the package picks this module
at import when it is built.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport lgamma, log, log1p, exp, sqrt

cnp.import_array()

cdef double STIRLING_K = 1e4
cdef double PSI_POISSON = 1e-300
QMAX = np.iinfo(np.int64).max
cdef long long C_QMAX = 9223372036854775807


cdef inline double _stirling_tail(double x) nogil:
    cdef double x2 = x * x
    return 1.0 / (12.0 * x) - 1.0 / (360.0 * x * x2) + 1.0 / (1260.0 * x * x2 * x2)


cdef inline double _log_rising_ratio(double y, double k) nogil:
    if k < STIRLING_K:
        return lgamma(y + k) - lgamma(k) - y * log(k)
    return (y + k - 0.5) * log1p(y / k) - y + _stirling_tail(y + k) - _stirling_tail(k)


def log_rising_ratio(y, k):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] yy, kk, out
    ya, ka = np.broadcast_arrays(np.asarray(y, dtype=np.float64), np.asarray(k, dtype=np.float64))
    shape = ya.shape
    yy = np.ascontiguousarray(ya.ravel())
    kk = np.ascontiguousarray(ka.ravel())
    out = np.empty(yy.shape[0])
    cdef Py_ssize_t i
    for i in range(yy.shape[0]):
        out[i] = _log_rising_ratio(yy[i], kk[i])
    return out.reshape(shape)


def nb_terms(y, mu, psi):
    """Per-cell ``(loglik, d/dmu, d2/dmu2, 1/var)`` of the NB(mu, psi) density."""
    ya = np.asarray(y, dtype=np.float64)
    shape = ya.shape
    cdef cnp.ndarray[cnp.float64_t, ndim=1] yy = np.ascontiguousarray(ya.ravel())
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mm = np.ascontiguousarray(
        np.asarray(mu, dtype=np.float64).ravel())
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pp = np.ascontiguousarray(
        np.broadcast_to(np.asarray(psi, dtype=np.float64), shape).ravel())
    cdef Py_ssize_t n = yy.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ll = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sc = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] hs = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] fi = np.empty(n)
    cdef double yi, m, p, pm, lp, k, var
    with nogil:
        for i in range(n):
            yi = yy[i]
            m = mm[i]
            p = pp[i]
            pm = p * m
            lp = log1p(pm)
            if p <= PSI_POISSON:
                ll[i] = yi * log(m) - lgamma(yi + 1.0) - m
            else:
                k = 1.0 / p
                ll[i] = (yi * log(m) - lgamma(yi + 1.0)
                         + _log_rising_ratio(yi, k) - (k + yi) * lp)
            var = m * (1.0 + pm)
            sc[i] = (yi - m) / var
            hs[i] = -yi / (m * m) + p * (1.0 + p * yi) / ((1.0 + pm) * (1.0 + pm))
            fi[i] = 1.0 / var
    return ll.reshape(shape), sc.reshape(shape), hs.reshape(shape), fi.reshape(shape)


cdef long long _quantile1(double mu, double psi, double q) nogil:
    cdef double lq, lpmf, lcdf, step_const, y, a
    cdef long long yi
    if q <= 0.0:
        return 0
    if q >= 1.0:
        return C_QMAX
    lq = log(q)
    step_const = log(mu) - log1p(psi * mu)
    if psi <= PSI_POISSON:
        lpmf = -mu
    else:
        lpmf = -log1p(psi * mu) / psi
    lcdf = lpmf
    yi = 0
    while lcdf < lq:
        y = <double>yi
        lpmf = lpmf + log1p(psi * y) + step_const - log(y + 1.0)
        # log-sum-exp accumulation keeps far-tail starts from underflowing
        if lpmf > lcdf:
            a = lpmf
            lcdf = a + log1p(exp(lcdf - a))
        else:
            lcdf = lcdf + log1p(exp(lpmf - lcdf))
        yi += 1
        if lpmf < -745.0 and y > mu:
            # remaining mass is below double resolution
            return C_QMAX
    return yi


def nb_quantile(mu, psi, q):
    """Smallest integer y with NB cdf(y; mu, psi) >= q, by exact pmf summation."""
    ma = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    shape = ma.shape
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mm = np.ascontiguousarray(ma.ravel())
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pp = np.ascontiguousarray(
        np.broadcast_to(np.asarray(psi, dtype=np.float64), shape).ravel())
    cdef cnp.ndarray[cnp.float64_t, ndim=1] qq = np.ascontiguousarray(
        np.broadcast_to(np.asarray(q, dtype=np.float64), shape).ravel())
    cdef Py_ssize_t n = mm.shape[0], i
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(n, dtype=np.int64)
    with nogil:
        for i in range(n):
            out[i] = _quantile1(mm[i], pp[i], qq[i])
    return out.reshape(shape)
