"""Compiled inner loops for the two-sided Brownian bridge series.

All enclosures here are interval-valued: the endpoint arguments of the
bridge may be given as intervals ``[alo, ahi]`` and ``[blo, bhi]`` (pass
equal ends for a point), and the returned pair brackets the stay-in-band
probability for every endpoint choice in those intervals. Truncation of
the infinite series is certified with a geometric tail bound.
"""

import math

import numba
import numpy as np

MAX_TERMS = 200_000


@numba.njit(cache=True)
def _series_tail(c, j):
    # Sum over i >= j of 4 exp(-c i^2), dominated by a geometric series.
    if j == 0:
        return np.inf
    q = 1.0 - math.exp(-2.0 * c * j)
    if q <= 0.0:
        return np.inf
    return 4.0 * math.exp(-c * j * j) / q


@numba.njit(cache=True)
def gamma_enclosure(L, U, r, alo, ahi, blo, bhi, tol):
    """Bracket P(L < min W < max W < U) for a bridge W(0)=a, W(r)=b.

    Returns (lower, upper, terms_used).
    """
    if not (U > L):
        return 0.0, 0.0, 0
    if ahi <= L or alo >= U or bhi <= L or blo >= U:
        return 0.0, 0.0, 0
    clipped = alo <= L or ahi >= U or blo <= L or bhi >= U
    alo = max(alo, L)
    ahi = min(ahi, U)
    blo = max(blo, L)
    bhi = min(bhi, U)

    if L == -np.inf and U == np.inf:
        lo, hi = 1.0, 1.0
        if clipped:
            lo = 0.0
        return lo, hi, 0
    if L == -np.inf:
        # one-sided: 1 - exp(-2 (U-a)(U-b) / r)
        pmin = (U - ahi) * (U - bhi)
        pmax = (U - alo) * (U - blo)
        lo = 1.0 - math.exp(-2.0 * pmin / r)
        hi = 1.0 - math.exp(-2.0 * pmax / r)
        if clipped:
            lo = 0.0
        return lo, hi, 1
    if U == np.inf:
        pmin = (alo - L) * (blo - L)
        pmax = (ahi - L) * (bhi - L)
        lo = 1.0 - math.exp(-2.0 * pmin / r)
        hi = 1.0 - math.exp(-2.0 * pmax / r)
        if clipped:
            lo = 0.0
        return lo, hi, 1

    D = U - L
    c = 2.0 * D * D / r
    s_lo = 0.0  # lower end of sum_j (sigma_j - tau_j)
    s_hi = 0.0
    best_lo = 0.0
    best_hi = 1.0
    j = 0
    while j < MAX_TERMS:
        j += 1
        Dj = D * j
        # sigma_j, first exponential: factors are >= D(j-1) >= 0 on the band
        p_lo = Dj + L - ahi
        p_hi = Dj + L - alo
        q_lo = Dj + L - bhi
        q_hi = Dj + L - blo
        sig_lo = math.exp(-2.0 / r * p_hi * q_hi)
        sig_hi = math.exp(-2.0 / r * p_lo * q_lo)
        # sigma_j, second exponential
        p_lo = Dj - U + alo
        p_hi = Dj - U + ahi
        q_lo = Dj - U + blo
        q_hi = Dj - U + bhi
        sig_lo += math.exp(-2.0 / r * p_hi * q_hi)
        sig_hi += math.exp(-2.0 / r * p_lo * q_lo)
        # tau_j
        k = 2.0 * Dj / r
        tau_lo = math.exp(-k * (Dj + ahi - blo)) + math.exp(-k * (Dj + bhi - alo))
        tau_hi = math.exp(-k * (Dj + alo - bhi)) + math.exp(-k * (Dj + blo - ahi))
        s_lo += sig_lo - tau_hi
        s_hi += sig_hi - tau_lo
        tail = _series_tail(c, j)
        lo = 1.0 - s_hi - tail
        hi = 1.0 - s_lo + tail
        # running intersection keeps the bracket nested in terms_used
        if lo > best_lo:
            best_lo = lo
        if hi < best_hi:
            best_hi = hi
        if tail <= 0.5 * tol:
            break
    if best_hi > 1.0:
        best_hi = 1.0
    if best_lo < 0.0:
        best_lo = 0.0
    if best_lo > best_hi:
        # only reachable through rounding when the true value sits at 0 or 1
        m = 0.5 * (best_lo + best_hi)
        best_lo = m
        best_hi = m
    if clipped:
        best_lo = 0.0
    return best_lo, best_hi, j


@numba.njit(cache=True)
def band_event_enclosure(Ld, Lu, Ud, Uu, r, alo, ahi, blo, bhi, tol):
    """Bracket P(min in [Ld, Lu], max in [Ud, Uu]) by inclusion-exclusion."""
    t = 0.25 * tol
    g1l, g1h, _ = gamma_enclosure(Ld, Uu, r, alo, ahi, blo, bhi, t)
    g2l, g2h, _ = gamma_enclosure(Lu, Uu, r, alo, ahi, blo, bhi, t)
    g3l, g3h, _ = gamma_enclosure(Ld, Ud, r, alo, ahi, blo, bhi, t)
    g4l, g4h, _ = gamma_enclosure(Lu, Ud, r, alo, ahi, blo, bhi, t)
    lo = g1l - g2h - g3h + g4l
    hi = g1h - g2l - g3l + g4h
    return max(lo, 0.0), min(max(hi, 0.0), 1.0)


@numba.njit(cache=True)
def _mul(al, ah, bl, bh):
    # product of non-negative intervals
    return al * bl, ah * bh


@numba.njit(cache=True)
def rho_enclosure(Ld, Lu, Ud, Uu, s, l, a, b, xlo, xhi, tol):
    """Bracket the probability that a bridge a -> b on [0, l], pinned to x
    at time s, has its minimum in [Ld, Lu] and maximum in [Ud, Uu], for all
    x in [xlo, xhi]."""
    t = 0.125 * tol
    r2 = l - s
    out_lo = 0.0
    out_hi = 0.0
    for k in range(4):
        if k == 0:
            lo_b, up_b, sign = Ld, Uu, 1.0
        elif k == 1:
            lo_b, up_b, sign = Lu, Uu, -1.0
        elif k == 2:
            lo_b, up_b, sign = Ld, Ud, -1.0
        else:
            lo_b, up_b, sign = Lu, Ud, 1.0
        g1l, g1h, _ = gamma_enclosure(lo_b, up_b, s, a, a, xlo, xhi, t)
        if g1h == 0.0:
            continue
        g2l, g2h, _ = gamma_enclosure(lo_b, up_b, r2, xlo, xhi, b, b, t)
        pl, ph = _mul(g1l, g1h, g2l, g2h)
        if sign > 0:
            out_lo += pl
            out_hi += ph
        else:
            out_lo -= ph
            out_hi -= pl
    return max(out_lo, 0.0), min(max(out_hi, 0.0), 1.0)


@numba.njit(cache=True)
def lipschitz_series(D, r, rel_tol):
    """K(L, U, r) = (8D/r) sum_j j exp(-2 D^2 (j-1)^2 / r) with a certified tail."""
    c = 2.0 * D * D / r
    total = 0.0
    j = 0
    while j < MAX_TERMS:
        j += 1
        total += j * math.exp(-c * (j - 1) * (j - 1))
        # tail sum_{i >= j} (i+1) e^{-c i^2} <= e^{-c j^2} (j+1) / (1 - e^{-2cj}) / (1 - e^{-2cj})
        q = 1.0 - math.exp(-2.0 * c * j)
        if q > 0.0:
            tail = (j + 1) * math.exp(-c * j * j) / (q * q)
            if tail <= rel_tol * total:
                total += tail
                break
    return 8.0 * D / r * total


@numba.njit(cache=True)
def bridge_oracle_paths(L, U, r, a, b, n_paths, n_steps, seed):
    """Monte Carlo stay-in-band estimate for a Brownian bridge on a grid.

    Each step is conditioned on its endpoints through the single-barrier
    crossing probabilities, so the per-path value is the conditional
    survival probability given the grid values. Returns (mean, std_error).
    """
    np.random.seed(seed)
    h = r / n_steps
    acc = 0.0
    acc2 = 0.0
    for p in range(n_paths):
        x = a
        surv = 1.0
        if not (L < a < U and L < b < U):
            surv = 0.0
        t = 0.0
        for k in range(n_steps):
            if surv == 0.0:
                break
            rem = r - t
            if k == n_steps - 1:
                y = b
            else:
                mean = x + (b - x) * h / rem
                var = h * (rem - h) / rem
                y = mean + math.sqrt(var) * np.random.standard_normal()
            if y <= L or y >= U:
                surv = 0.0
                break
            pu = math.exp(-2.0 * (U - x) * (U - y) / h)
            pl = math.exp(-2.0 * (x - L) * (y - L) / h)
            f = 1.0 - pu - pl
            if f < 0.0:
                f = 0.0
            surv *= f
            x = y
            t += h
        acc += surv
        acc2 += surv * surv
    mean = acc / n_paths
    var = acc2 / n_paths - mean * mean
    if var < 0.0:
        var = 0.0
    return mean, math.sqrt(var / n_paths)
