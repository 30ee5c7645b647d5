"""Band probabilities of Brownian bridges and the increment density factors.

``gamma`` is the probability that a Brownian bridge from ``a`` to ``b`` over
a time span ``r`` stays strictly inside ``(L, U)``. It is an alternating
infinite series; every evaluation here returns a certified bracket
(``SeriesBounds``) so callers can compare against uniforms without bias.
Values are exact modulo IEEE double rounding; truncation is the only
controlled error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import _kernels


class InvalidBandError(ValueError):
    pass


@dataclass(frozen=True)
class BridgeGeometry:
    r: float
    a: float
    b: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"bridge duration must be positive, got {self.r}")


@dataclass(frozen=True)
class Band:
    """Minimum bracket ``[L_low, L_up]`` and maximum bracket ``[U_low, U_up]``."""

    L_low: float
    L_up: float
    U_low: float
    U_up: float

    def __post_init__(self):
        if not (self.L_low < self.L_up <= self.U_low < self.U_up):
            raise InvalidBandError(f"band levels out of order: {self}")

    def shifted(self, by: float) -> "Band":
        return Band(self.L_low - by, self.L_up - by, self.U_low - by, self.U_up - by)


@dataclass(frozen=True)
class BandDensityParams:
    """Parameters of the conditional increment density.

    ``s`` is the elapsed time to the query point, ``l`` the length of the
    layer interval and ``v`` the increment over the whole interval, all
    relative to the left endpoint.
    """

    band: Band
    s: float
    l: float
    v: float

    def __post_init__(self):
        if not (0 < self.s < self.l):
            raise ValueError(f"need 0 < s < l, got s={self.s}, l={self.l}")
        if not (self.band.L_low < self.v < self.band.U_up):
            raise ValueError(f"endpoint increment {self.v} outside the band")


@dataclass(frozen=True)
class SeriesBounds:
    lower: float
    upper: float
    terms_used: int

    @property
    def mid(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower


def _check_band(L: float, U: float, tol: float | None = None) -> None:
    if not U > L:
        raise InvalidBandError(f"need U > L, got L={L}, U={U}")
    if tol is not None and not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")


def gamma_bounds(L: float, U: float, geom: BridgeGeometry, tol: float = 1e-12) -> SeriesBounds:
    """Certified bracket of width <= tol for the bridge stay-in-band probability.

    Returns exactly ``[0, 0]`` when either endpoint lies outside the open band.
    """
    _check_band(L, U, tol)
    lo, hi, n = _kernels.gamma_enclosure(
        float(L), float(U), geom.r, geom.a, geom.a, geom.b, geom.b, float(tol)
    )
    return SeriesBounds(lo, hi, int(n))


def gamma(L: float, U: float, geom: BridgeGeometry, tol: float = 1e-12) -> float:
    return gamma_bounds(L, U, geom, tol).mid


def gamma_interval(L, U, r, a_range, b_range, tol=1e-12) -> SeriesBounds:
    """Enclosure of gamma over all endpoints in ``a_range`` x ``b_range``."""
    _check_band(L, U, tol)
    if not r > 0:
        raise ValueError("r must be positive")
    lo, hi, n = _kernels.gamma_enclosure(
        float(L), float(U), float(r), float(a_range[0]), float(a_range[1]),
        float(b_range[0]), float(b_range[1]), float(tol),
    )
    return SeriesBounds(lo, hi, int(n))


def pi_density(x: float, p: BandDensityParams) -> float:
    """Unnormalized Gaussian factor of the increment density, in (0, 1]."""
    mean = p.s / p.l * p.v
    var = p.s * (p.l - p.s) / p.l
    return math.exp(-0.5 * (x - mean) ** 2 / var)


def pi_range(x_lo: float, x_hi: float, p: BandDensityParams) -> tuple[float, float]:
    """Exact range of ``pi_density`` over ``[x_lo, x_hi]`` (it is unimodal)."""
    mean = p.s / p.l * p.v
    lo = min(pi_density(x_lo, p), pi_density(x_hi, p))
    if x_lo <= mean <= x_hi:
        hi = 1.0
    else:
        hi = max(pi_density(x_lo, p), pi_density(x_hi, p))
    return lo, hi


def rho_bounds(x: float, p: BandDensityParams, tol: float = 1e-12) -> SeriesBounds:
    return rho_interval(x, x, p, tol)


def rho_interval(x_lo: float, x_hi: float, p: BandDensityParams, tol: float = 1e-12) -> SeriesBounds:
    """Enclosure of the extrema-in-band probability over ``x in [x_lo, x_hi]``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    b = p.band
    lo, hi = _kernels.rho_enclosure(
        b.L_low, b.L_up, b.U_low, b.U_up, p.s, p.l, 0.0, p.v,
        float(x_lo), float(x_hi), float(tol),
    )
    return SeriesBounds(lo, hi, 0)


def rho(x: float, p: BandDensityParams, tol: float = 1e-12) -> float:
    """Point value of rho, clamped to [0, 1] (it is a probability)."""
    return rho_bounds(x, p, tol).mid


def lipschitz_gamma(L: float, U: float, r: float) -> float:
    """Lipschitz constant of gamma in either endpoint (tail <= 1e-12 relative)."""
    _check_band(L, U)
    if not r > 0:
        raise ValueError("r must be positive")
    return float(_kernels.lipschitz_series(U - L, r, 1e-12))


@dataclass(frozen=True)
class DensityConstants:
    c_pi: float
    K_pi: float
    c_rho: float
    K_rho: float


def density_constants(p: BandDensityParams) -> DensityConstants:
    """Bounds and Lipschitz constants of pi and rho on the band support."""
    b = p.band
    s, l, v = p.s, p.l, p.v
    K_pi = max(abs(b.U_up * l - s * v), abs(b.L_low * l - s * v)) / (s * (l - s))

    def pair(lo, hi):
        return 2.0 * lipschitz_gamma(lo, hi, s) * lipschitz_gamma(lo, hi, l - s) * (hi - lo)

    K_rho = pair(b.L_low, b.U_up) + pair(b.L_up, b.U_up) + pair(b.L_low, b.U_low)
    if b.U_low > b.L_up:
        K_rho += pair(b.L_up, b.U_low)
    c_rho = K_rho * (b.U_up - b.L_low)
    return DensityConstants(c_pi=1.0, K_pi=K_pi, c_rho=c_rho, K_rho=K_rho)


def bridge_min_cdf(level: float, geom: BridgeGeometry) -> float:
    """P(min of the bridge <= level); 1 above min(a, b)."""
    if level >= min(geom.a, geom.b):
        return 1.0
    return math.exp(-2.0 * (level - geom.a) * (level - geom.b) / geom.r)


def bridge_max_cdf(level: float, geom: BridgeGeometry) -> float:
    """P(max of the bridge < level); 0 below max(a, b)."""
    if level <= max(geom.a, geom.b):
        return 0.0
    return 1.0 - math.exp(-2.0 * (level - geom.a) * (level - geom.b) / geom.r)


def bridge_min_quantile(u: float, geom: BridgeGeometry) -> float:
    """Inverse of ``bridge_min_cdf``: the level whose CDF value is ``u``."""
    a, b = geom.a, geom.b
    return 0.5 * ((a + b) - math.sqrt((a - b) ** 2 - 2.0 * geom.r * math.log(u)))
