# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-node likelihood kernels; same contract as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, expm1, tanh, fabs, INFINITY
from scipy.special.cython_special cimport log_ndtr, log_expit

cnp.import_array()

DEF LN2 = 0.6931471805599453
DEF HALF_LOG_2PI = 0.9189385332046727

cdef enum:
    NORMAL = 0
    LOGISTIC = 1
    GUMBEL = 2
    GOMPERTZ = 3


cdef inline double _log1mexp(double x) nogil:
    if x > -LN2:
        return log(-expm1(x))
    return log1p(-exp(x))


cdef inline double _log_cdf(int kind, double t) nogil:
    if kind == NORMAL:
        return log_ndtr(t)
    if kind == LOGISTIC:
        return log_expit(t)
    if kind == GUMBEL:
        return -exp(-t)
    return log(-expm1(-exp(t)))


cdef inline double _log_sf(int kind, double t) nogil:
    if kind == NORMAL:
        return log_ndtr(-t)
    if kind == LOGISTIC:
        return log_expit(-t)
    if kind == GUMBEL:
        return log(-expm1(-exp(-t)))
    return -exp(t)


cdef inline double _log_pdf(int kind, double t) nogil:
    cdef double a
    if kind == NORMAL:
        return -0.5 * t * t - HALF_LOG_2PI
    if kind == LOGISTIC:
        a = fabs(t)
        return -a - 2.0 * log1p(exp(-a))
    if kind == GUMBEL:
        return -t - exp(-t)
    return t - exp(t)


cdef inline double _score(int kind, double t) nogil:
    if kind == NORMAL:
        return -t
    if kind == LOGISTIC:
        return -tanh(0.5 * t)
    if kind == GUMBEL:
        return expm1(-t)
    return -expm1(t)


def obs_terms(family, continuous, has_hi, has_lo, tau_hi, tau_lo, logjac, eta, double floor=-745.0):
    cdef const cnp.int64_t[::1] fam = np.ascontiguousarray(family, dtype=np.int64)
    cdef const cnp.uint8_t[::1] cont = np.ascontiguousarray(continuous, dtype=np.uint8)
    cdef const cnp.uint8_t[::1] hhi = np.ascontiguousarray(has_hi, dtype=np.uint8)
    cdef const cnp.uint8_t[::1] hlo = np.ascontiguousarray(has_lo, dtype=np.uint8)
    cdef const double[::1] thi = np.ascontiguousarray(tau_hi, dtype=np.float64)
    cdef const double[::1] tlo = np.ascontiguousarray(tau_lo, dtype=np.float64)
    cdef const double[::1] jac = np.ascontiguousarray(logjac, dtype=np.float64)
    cdef const double[:, ::1] e = np.ascontiguousarray(eta, dtype=np.float64)
    cdef Py_ssize_t n = e.shape[0], ng = e.shape[1], o, g
    ll_arr = np.empty((n, ng))
    dhi_arr = np.zeros((n, ng))
    dlo_arr = np.zeros((n, ng))
    cdef double[:, ::1] ll = ll_arr
    cdef double[:, ::1] dhi = dhi_arr
    cdef double[:, ::1] dlo = dlo_arr
    cdef int kind
    cdef double a, b, lp, sa, sb, ca, cb, va, vb
    with nogil:
        for o in range(n):
            kind = <int>fam[o]
            for g in range(ng):
                va = 0.0
                vb = 0.0
                if cont[o]:
                    b = e[o, g] - tlo[o]
                    lp = _log_pdf(kind, b) + jac[o]
                    vb = _score(kind, b)
                elif hhi[o] and hlo[o]:
                    a = e[o, g] - thi[o]
                    b = e[o, g] - tlo[o]
                    if b > 0:
                        sb = _log_sf(kind, b)
                        sa = _log_sf(kind, a)
                        lp = sb + _log1mexp(sa - sb)
                    else:
                        ca = _log_cdf(kind, a)
                        cb = _log_cdf(kind, b)
                        lp = ca + _log1mexp(cb - ca)
                    va = exp(_log_pdf(kind, a) - lp)
                    vb = -exp(_log_pdf(kind, b) - lp)
                elif hlo[o]:
                    b = e[o, g] - tlo[o]
                    lp = _log_sf(kind, b)
                    vb = -exp(_log_pdf(kind, b) - lp)
                else:
                    a = e[o, g] - thi[o]
                    lp = _log_cdf(kind, a)
                    va = exp(_log_pdf(kind, a) - lp)
                if not (lp > floor):
                    lp = floor
                    va = 0.0
                    vb = 0.0
                ll[o, g] = lp
                dhi[o, g] = va
                dlo[o, g] = vb
    return ll_arr, dhi_arr, dlo_arr


def cluster_posterior(ll, starts, log_weights):
    cdef const double[:, ::1] l = np.ascontiguousarray(ll, dtype=np.float64)
    cdef const cnp.int64_t[::1] st = np.ascontiguousarray(starts, dtype=np.int64)
    cdef const double[::1] lw = np.ascontiguousarray(log_weights, dtype=np.float64)
    cdef Py_ssize_t nc = st.shape[0] - 1, ng = l.shape[1], c, o, g
    post_arr = np.empty((nc, ng))
    lse_arr = np.empty(nc)
    cdef double[:, ::1] post = post_arr
    cdef double[::1] lse = lse_arr
    cdef double mx, tot, v
    with nogil:
        for c in range(nc):
            for g in range(ng):
                v = lw[g]
                for o in range(st[c], st[c + 1]):
                    v += l[o, g]
                post[c, g] = v
            mx = -INFINITY
            for g in range(ng):
                if post[c, g] > mx:
                    mx = post[c, g]
            tot = 0.0
            for g in range(ng):
                v = exp(post[c, g] - mx)
                post[c, g] = v
                tot += v
            for g in range(ng):
                post[c, g] /= tot
            lse[c] = mx + log(tot)
    return lse_arr, post_arr
