"""Exact generalized inverse-Gaussian variates.

Density ``f(x; lam, chi, psi) ∝ x^(lam-1) exp(-(chi/x + psi*x)/2)`` on x > 0.

The sampler reduces to the two-parameter form ``x^(lam-1) exp(-w/2 (x + 1/x))``
with ``w = sqrt(chi*psi)`` and ``lam >= 0`` and then uses one of three
rejection schemes (Hörmann & Leydold, 2014):

* ratio-of-uniforms with mode shift when ``lam > 2`` or ``w > 3``;
* ratio-of-uniforms without shift when ``lam >= 1 - 2.25 w^2`` or ``w > 0.2``;
* a three-piece table-mountain hat otherwise (``lam < 1``, small ``w``).

Rejection runs in vectorized batches, so drawing many variates at once is cheap.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ParameterError

__all__ = ["sample_gig", "gig_mode"]

_ZTOL = 10 * np.finfo(float).eps


def gig_mode(lam: float, omega: float) -> float:
    """Mode of ``x^(lam-1) exp(-omega/2 (x + 1/x))``."""
    if lam >= 1.0:
        return (math.sqrt((lam - 1.0) ** 2 + omega * omega) + (lam - 1.0)) / omega
    return omega / (math.sqrt((1.0 - lam) ** 2 + omega * omega) + (1.0 - lam))


def _log_kernel(x, lam, omega):
    return (lam - 1.0) * np.log(x) - 0.5 * omega * (x + 1.0 / x)


def _fill(size, rng, propose):
    """Run ``propose(m, rng) -> accepted array`` until ``size`` draws are collected."""
    out = np.empty(size)
    filled = 0
    m = max(size, 16)
    while filled < size:
        acc = propose(m, rng)
        take = min(acc.size, size - filled)
        out[filled:filled + take] = acc[:take]
        filled += take
        # acceptance is at least ~0.5 for every scheme; oversample modestly
        m = max(16, int(1.3 * (size - filled) / max(acc.size / m, 0.05)))
    return out


def _rou_noshift(size, lam, omega, rng):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = gig_mode(lam, omega)
    nc = t * math.log(xm) - s * (xm + 1.0 / xm)
    ym = ((lam + 1.0) + math.sqrt((lam + 1.0) ** 2 + omega * omega)) / omega
    um = math.exp(0.5 * (lam + 1.0) * math.log(ym) - s * (ym + 1.0 / ym) - nc)

    def propose(m, rng):
        u = um * rng.random(m)
        v = 1.0 - rng.random(m)  # (0, 1]
        x = u / v
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = (x > 0) & (np.log(v) <= t * np.log(x) - s * (x + 1.0 / x) - nc)
        return x[ok]

    return _fill(size, rng, propose)


def _rou_shift(size, lam, omega, rng):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = gig_mode(lam, omega)
    nc = t * math.log(xm) - s * (xm + 1.0 / xm)

    # roots of the cubic locating the extremes of (x - xm) sqrt(f(x))
    a = -(2.0 * (lam + 1.0) / omega + xm)
    b = 2.0 * (lam - 1.0) * xm / omega - 1.0
    c = xm
    p = b - a * a / 3.0
    q = 2.0 * a ** 3 / 27.0 - a * b / 3.0 + c
    fi = math.acos(-q / (2.0 * math.sqrt(-(p ** 3) / 27.0)))
    fak = 2.0 * math.sqrt(-p / 3.0)
    y1 = fak * math.cos(fi / 3.0) - a / 3.0
    y2 = fak * math.cos(fi / 3.0 + 4.0 / 3.0 * math.pi) - a / 3.0
    uplus = (y1 - xm) * math.exp(t * math.log(y1) - s * (y1 + 1.0 / y1) - nc)
    uminus = (y2 - xm) * math.exp(t * math.log(y2) - s * (y2 + 1.0 / y2) - nc)

    def propose(m, rng):
        u = uminus + rng.random(m) * (uplus - uminus)
        v = 1.0 - rng.random(m)
        x = u / v + xm
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = (x > 0) & (np.log(v) <= t * np.log(x) - s * (x + 1.0 / x) - nc)
        return x[ok]

    return _fill(size, rng, propose)


def _table_mountain(size, lam, omega, rng):
    # only valid for 0 <= lam < 1 and omega <= 1
    xm = gig_mode(lam, omega)
    x0 = omega / (1.0 - lam)
    k0 = math.exp((lam - 1.0) * math.log(xm) - 0.5 * omega * (xm + 1.0 / xm))
    A0 = k0 * x0
    if x0 >= 2.0 / omega:
        k1 = 0.0
        A1 = 0.0
        k2 = x0 ** (lam - 1.0)
        A2 = k2 * 2.0 * math.exp(-omega * x0 / 2.0) / omega
    else:
        k1 = math.exp(-omega)
        A1 = (k1 * math.log(2.0 / (omega * omega)) if lam == 0.0
              else k1 / lam * ((2.0 / omega) ** lam - x0 ** lam))
        k2 = (2.0 / omega) ** (lam - 1.0)
        A2 = k2 * 2.0 * math.exp(-1.0) / omega
    Atot = A0 + A1 + A2
    left = max(x0, 2.0 / omega)

    def propose(m, rng):
        v = Atot * rng.random(m)
        x = np.empty(m)
        hx = np.empty(m)
        r0 = v <= A0
        x[r0] = x0 * v[r0] / A0
        hx[r0] = k0
        v1 = v - A0
        r1 = ~r0 & (v1 <= A1)
        if np.any(r1):
            if lam == 0.0:
                x[r1] = omega * np.exp(math.exp(omega) * v1[r1])
                hx[r1] = k1 / x[r1]
            else:
                x[r1] = (x0 ** lam + lam / k1 * v1[r1]) ** (1.0 / lam)
                hx[r1] = k1 * x[r1] ** (lam - 1.0)
        r2 = ~r0 & ~r1
        if np.any(r2):
            v2 = v1[r2] - A1
            arg = math.exp(-omega / 2.0 * left) - omega / (2.0 * k2) * v2
            x[r2] = -2.0 / omega * np.log(np.maximum(arg, np.finfo(float).tiny))
            hx[r2] = k2 * np.exp(-omega / 2.0 * x[r2])
        u = rng.random(m) * hx
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = (x > 0) & np.isfinite(x) & (np.log(u) <= _log_kernel(x, lam, omega))
        return x[ok]

    return _fill(size, rng, propose)


def _standard_gig(size, lam, omega, rng):
    """Draws from ``x^(lam-1) exp(-omega/2 (x+1/x))`` for ``lam >= 0``."""
    if lam > 2.0 or omega > 3.0:
        return _rou_shift(size, lam, omega, rng)
    if lam >= 1.0 - 2.25 * omega * omega or omega > 0.2:
        return _rou_noshift(size, lam, omega, rng)
    return _table_mountain(size, lam, omega, rng)


def sample_gig(lam: float, chi: float, psi: float, rng=None, size=None):
    """Draw from GIG(lam, chi, psi).

    Parameters
    ----------
    lam : float
        Index parameter (any real).
    chi, psi : float
        Positive concentration parameters.
    rng : numpy.random.Generator, optional
    size : int, optional
        Number of draws; a scalar float is returned when omitted.
    """
    if not (chi > 0 and psi > 0) or not all(map(math.isfinite, (lam, chi, psi))):
        raise ParameterError(f"GIG needs finite chi > 0 and psi > 0 (got chi={chi}, psi={psi})")
    rng = np.random.default_rng() if rng is None else rng
    n = 1 if size is None else int(size)
    omega = math.sqrt(chi * psi)
    alpha = math.sqrt(chi / psi)
    a = abs(lam)

    if omega < _ZTOL:
        # degenerate limits: gamma (lam > 0) or inverse gamma (lam < 0)
        if lam > 0:
            out = rng.gamma(lam, 2.0 / psi, size=n)
        elif lam < 0:
            out = 1.0 / rng.gamma(-lam, 2.0 / chi, size=n)
        else:
            raise ParameterError("GIG with lam = 0 needs chi * psi > 0")
    else:
        y = _standard_gig(n, a, omega, rng)
        out = alpha * y if lam >= 0 else alpha / y
    return float(out[0]) if size is None else out
