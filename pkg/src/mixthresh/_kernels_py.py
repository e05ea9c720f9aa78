"""NumPy implementation of the per-node likelihood kernels.

Used when the compiled extension is unavailable or disabled with
``MIXTHRESH_PURE_PYTHON=1``. Both implementations share one contract:

``obs_terms`` returns, for every observation o and quadrature node g,

* ``ll[o, g]``: log-density of y_o given the node's linear predictor
  ``eta[o, g]``, floored at ``floor``;
* ``d_hi[o, g]``, ``d_lo[o, g]``: derivatives of ``ll`` with respect to
  the upper argument ``eta - tau_hi`` and lower argument ``eta - tau_lo``.

``cluster_posterior`` reduces the node log-densities per cluster to the
log of the quadrature sum and the normalized node weights.
"""

from __future__ import annotations

import math

import numpy as np

from .families import log_cdf, log_pdf, log_sf, score

LOG_FLOOR = -745.0
_LN2 = math.log(2.0)


def _log1mexp(x):
    """log(1 - exp(x)) for x <= 0."""
    with np.errstate(divide="ignore", invalid="ignore", under="ignore"):
        return np.where(x > -_LN2, np.log(-np.expm1(x)), np.log1p(-np.exp(x)))


def _discrete(kind, has_hi, has_lo, t_hi, t_lo):
    ll = np.empty_like(t_lo)
    d_hi = np.zeros_like(t_lo)
    d_lo = np.zeros_like(t_lo)
    both = has_hi & has_lo
    lo_only = has_lo & ~has_hi
    hi_only = has_hi & ~has_lo
    with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
        if both.any():
            a, b = t_hi[both], t_lo[both]
            upper = b > 0
            lp = np.empty_like(a)
            sb, sa = log_sf(kind, b[upper]), log_sf(kind, a[upper])
            lp[upper] = sb + _log1mexp(sa - sb)
            ca, cb = log_cdf(kind, a[~upper]), log_cdf(kind, b[~upper])
            lp[~upper] = ca + _log1mexp(cb - ca)
            ll[both] = lp
            d_hi[both] = np.exp(log_pdf(kind, a) - lp)
            d_lo[both] = -np.exp(log_pdf(kind, b) - lp)
        if lo_only.any():
            b = t_lo[lo_only]
            lp = log_sf(kind, b)
            ll[lo_only] = lp
            d_lo[lo_only] = -np.exp(log_pdf(kind, b) - lp)
        if hi_only.any():
            a = t_hi[hi_only]
            lp = log_cdf(kind, a)
            ll[hi_only] = lp
            d_hi[hi_only] = np.exp(log_pdf(kind, a) - lp)
    return ll, d_hi, d_lo


def obs_terms(family, continuous, has_hi, has_lo, tau_hi, tau_lo, logjac, eta, floor=LOG_FLOOR):
    n, g = eta.shape
    ll = np.empty((n, g))
    d_hi = np.zeros((n, g))
    d_lo = np.zeros((n, g))
    for kind in np.unique(family):
        fam = family == kind
        cont = fam & continuous
        if cont.any():
            t = eta[cont] - tau_lo[cont, None]
            ll[cont] = log_pdf(kind, t) + logjac[cont, None]
            d_lo[cont] = score(kind, t)
        disc = fam & ~continuous
        if disc.any():
            e = eta[disc]
            hh = np.broadcast_to(has_hi[disc, None], e.shape)
            hl = np.broadcast_to(has_lo[disc, None], e.shape)
            th = np.where(hh, e - np.where(has_hi[disc], tau_hi[disc], 0.0)[:, None], 0.0)
            tl = np.where(hl, e - np.where(has_lo[disc], tau_lo[disc], 0.0)[:, None], 0.0)
            a, b, c = _discrete(kind, hh, hl, th, tl)
            ll[disc], d_hi[disc], d_lo[disc] = a, b, c
    bad = ~(ll > floor)
    if bad.any():
        ll[bad] = floor
        d_hi[bad] = 0.0
        d_lo[bad] = 0.0
    return ll, d_hi, d_lo


def cluster_posterior(ll, starts, log_weights):
    s = np.add.reduceat(ll, starts[:-1], axis=0) + log_weights[None, :]
    mx = s.max(axis=1)
    post = np.exp(s - mx[:, None])
    tot = post.sum(axis=1)
    post /= tot[:, None]
    return mx + np.log(tot), post
