"""Intersection layers: exact, refinable brackets around a Brownian path.

A layer stores the path values at the ends of a dyadic interval together
with an interval known to contain the path minimum over the interval and
one known to contain the maximum. Layers are created and refined by
sampling from exact conditional laws; every Bernoulli decision whose
probability is an infinite series is made lazily against certified
brackets from ``bridge_math``.
"""

from __future__ import annotations

import bisect as _bisect
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr, ndtri

from . import _kernels
from .bridge_math import BridgeGeometry, bridge_min_cdf, bridge_min_quantile
from .skorokhod import Polyline

DEFAULT_DECISION_BUDGET = 1_000_000
ROOT_CELL = 0.5  # width of the root extrema cells, below 2**-0.5

# Series tolerances tried in turn. The series converges like exp(-c j^2), so
# tight tolerances are cheap; the last entries only matter for near-ties.
_TOLS = (1e-12, 1e-15, 1e-18, 1e-40, 1e-300)


class DecisionBudgetExceeded(RuntimeError):
    """A lazy decision could not separate its uniform from the bracket."""


class FrozenLayerError(RuntimeError):
    """Refinement attempted on a layer the sampler has already conditioned on."""


@dataclass(frozen=True, slots=True)
class IntersectionLayer:
    level: int
    index: int
    b_left: float
    b_right: float
    L_low: float
    L_up: float
    U_low: float
    U_up: float

    @property
    def t_left(self) -> float:
        return (self.index - 1) * 2.0 ** -self.level

    @property
    def t_right(self) -> float:
        return self.index * 2.0 ** -self.level

    @property
    def r(self) -> float:
        return 2.0 ** -self.level

    @property
    def height(self) -> float:
        return self.U_up - self.L_low

    @property
    def min_width(self) -> float:
        return self.L_up - self.L_low

    @property
    def max_width(self) -> float:
        return self.U_up - self.U_low

    def check(self) -> None:
        lo, hi = min(self.b_left, self.b_right), max(self.b_left, self.b_right)
        ok = (self.L_low < self.L_up <= lo and hi <= self.U_low < self.U_up
              and 1 <= self.index <= 2 ** self.level)
        if not ok:
            raise AssertionError(f"layer invariants broken: {self}")

    def row(self) -> str:
        return (f"{self.level}\t{self.index}\t{self.b_left!r}\t{self.b_right!r}\t"
                f"{self.L_low!r}\t{self.L_up!r}\t{self.U_low!r}\t{self.U_up!r}")


@dataclass
class LazyDecision:
    """One uniform compared against a quantity known through brackets.

    ``bracket(tol)`` returns a certified enclosure of a signed quantity h;
    the decision is ``h > 0``. Probability comparisons ``u < p`` use
    ``h = p - u``; ratio comparisons ``u < A / (A + B)`` use
    ``h = (1 - u) A - u B`` so no division enters the certificate.
    """

    u: float
    budget: int = DEFAULT_DECISION_BUDGET
    refinements: int = 0
    last: tuple[float, float] = (-math.inf, math.inf)

    def positive(self, bracket) -> bool:
        for tol in _TOLS:
            if self.refinements >= self.budget:
                break
            self.refinements += 1
            lo, hi = bracket(tol)
            self.last = (lo, hi)
            if lo > 0:
                return True
            if hi < 0:
                return False
        raise DecisionBudgetExceeded(
            f"uniform {self.u!r} not separated from bracket {self.last} "
            f"after {self.refinements} refinements")


def _event(Ld, Lu, Ud, Uu, r, a, b, tol):
    return _kernels.band_event_enclosure(Ld, Lu, Ud, Uu, r, a, a, b, b, tol)


def init_root(rng: np.random.Generator, budget: int = DEFAULT_DECISION_BUDGET) -> IntersectionLayer:
    """Level-0 layer on (0, 1] drawn from the exact joint law."""
    b = float(rng.standard_normal())
    geom = BridgeGeometry(1.0, 0.0, b)
    lo_end, hi_end = min(0.0, b), max(0.0, b)

    u = float(rng.random())
    while u == 0.0:
        u = float(rng.random())
    m = bridge_min_quantile(u, geom)
    k = math.floor((lo_end - m) / ROOT_CELL)
    Lu = lo_end - k * ROOT_CELL
    Ld = Lu - ROOT_CELL
    p_min = bridge_min_cdf(Lu, geom) - bridge_min_cdf(Ld, geom)

    # max given min cell, by lazy inversion of its conditional CDF
    dec = LazyDecision(float(rng.random()), budget)
    k = 0
    while True:
        top = hi_end + (k + 1) * ROOT_CELL

        def h(tol, top=top):
            g1 = _kernels.gamma_enclosure(Ld, top, 1.0, 0.0, 0.0, b, b, 0.5 * tol)
            g2 = _kernels.gamma_enclosure(Lu, top, 1.0, 0.0, 0.0, b, b, 0.5 * tol)
            # P(min in cell, max < top) - u P(min in cell)
            return g1[0] - g2[1] - dec.u * p_min, g1[1] - g2[0] - dec.u * p_min

        if dec.positive(h):
            break
        k += 1
    layer = IntersectionLayer(0, 1, 0.0, b, Ld, Lu, hi_end + k * ROOT_CELL, top)
    layer.check()
    return layer


def locate_extrema(layer: IntersectionLayer, target_width: float, rng: np.random.Generator,
                   budget: int = DEFAULT_DECISION_BUDGET, which: str = "both") -> IntersectionLayer:
    """Halve the extrema intervals until each is narrower than ``target_width``."""
    if not target_width > 0:
        raise ValueError("target_width must be positive")
    Ld, Lu, Ud, Uu = layer.L_low, layer.L_up, layer.U_low, layer.U_up
    r, a, b = layer.r, layer.b_left, layer.b_right
    while which in ("both", "min") and Lu - Ld >= target_width:
        mid = 0.5 * (Ld + Lu)
        dec = LazyDecision(float(rng.random()), budget)

        def h(tol, mid=mid, Ld=Ld, Lu=Lu):
            lo1, hi1 = _event(Ld, mid, Ud, Uu, r, a, b, tol)
            lo2, hi2 = _event(mid, Lu, Ud, Uu, r, a, b, tol)
            return (1 - dec.u) * lo1 - dec.u * hi2, (1 - dec.u) * hi1 - dec.u * lo2

        if dec.positive(h):
            Lu = mid
        else:
            Ld = mid
    while which in ("both", "max") and Uu - Ud >= target_width:
        mid = 0.5 * (Ud + Uu)
        dec = LazyDecision(float(rng.random()), budget)

        def h(tol, mid=mid, Ud=Ud, Uu=Uu):
            lo1, hi1 = _event(Ld, Lu, mid, Uu, r, a, b, tol)
            lo2, hi2 = _event(Ld, Lu, Ud, mid, r, a, b, tol)
            return (1 - dec.u) * lo1 - dec.u * hi2, (1 - dec.u) * hi1 - dec.u * lo2

        if dec.positive(h):
            Ud = mid
        else:
            Uu = mid
    return replace(layer, L_low=Ld, L_up=Lu, U_low=Ud, U_up=Uu)


def sample_midpoint(layer: IntersectionLayer, rng: np.random.Generator,
                    budget: int = DEFAULT_DECISION_BUDGET) -> float:
    """Path value at the interval midpoint given the layer.

    Proposes from the free bridge marginal truncated to the layer range and
    thins by the probability that both halves keep the layer's extrema.
    """
    Ld, Lu, Ud, Uu = layer.L_low, layer.L_up, layer.U_low, layer.U_up
    a, b, r = layer.b_left, layer.b_right, layer.r
    mu = 0.5 * (a + b)
    sd = 0.5 * math.sqrt(r)
    p_lo = float(ndtr((Ld - mu) / sd))
    p_hi = float(ndtr((Uu - mu) / sd))
    while True:
        x = mu + sd * float(ndtri(p_lo + (p_hi - p_lo) * rng.random()))
        if not Ld < x < Uu:
            continue
        dec = LazyDecision(float(rng.random()), budget)

        def h(tol, x=x):
            lo, hi = _kernels.rho_enclosure(Ld, Lu, Ud, Uu, 0.5 * r, r, a, b, x, x, tol)
            return lo - dec.u, hi - dec.u

        if dec.positive(h):
            return x


def _min_options(Ld, Lu, end):
    # child minimum inside the parent's min interval, or strictly above it
    opts = []
    if Ld < end:
        opts.append((Ld, min(Lu, end)))
    else:
        opts.append(None)
    opts.append((Lu, end) if Lu < end else None)
    return opts


def _max_options(Ud, Uu, end):
    opts = []
    if end < Uu:
        opts.append((max(Ud, end), Uu))
    else:
        opts.append(None)
    opts.append((end, Ud) if end < Ud else None)
    return opts


# (which child takes the parent's extreme interval): in/in, in/out, out/in
_SPLITS = ((0, 0), (0, 1), (1, 0))


def bisect(layer: IntersectionLayer, rng: np.random.Generator,
           budget: int = DEFAULT_DECISION_BUDGET) -> tuple[IntersectionLayer, IntersectionLayer]:
    """Split a layer at its midpoint into two layers one level deeper."""
    a, b, r = layer.b_left, layer.b_right, layer.r
    h = 0.5 * r
    x = sample_midpoint(layer, rng, budget)
    lo1, lo2 = min(a, x), min(x, b)
    hi1, hi2 = max(a, x), max(x, b)
    mins = (_min_options(layer.L_low, layer.L_up, lo1), _min_options(layer.L_low, layer.L_up, lo2))
    maxs = (_max_options(layer.U_low, layer.U_up, hi1), _max_options(layer.U_low, layer.U_up, hi2))

    configs = []
    for m1, m2 in _SPLITS:
        for M1, M2 in _SPLITS:
            c1 = (mins[0][m1], maxs[0][M1])
            c2 = (mins[1][m2], maxs[1][M2])
            if None in c1 or None in c2:
                continue
            configs.append((c1, c2))

    def weights(tol):
        w = np.empty((len(configs), 2))
        for k, (c1, c2) in enumerate(configs):
            l1, u1 = _event(c1[0][0], c1[0][1], c1[1][0], c1[1][1], h, a, x, tol)
            l2, u2 = _event(c2[0][0], c2[0][1], c2[1][0], c2[1][1], h, x, b, tol)
            w[k] = (l1 * l2, u1 * u2)
        return w

    pick = _categorical(float(rng.random()), weights, budget)
    (mn1, mx1), (mn2, mx2) = configs[pick]
    level, j = layer.level + 1, 2 * layer.index - 1
    target = 2.0 ** (-(level + 1) / 2)
    left = IntersectionLayer(level, j, a, x, mn1[0], mn1[1], mx1[0], mx1[1])
    right = IntersectionLayer(level, j + 1, x, b, mn2[0], mn2[1], mx2[0], mx2[1])
    left = locate_extrema(left, target, rng, budget)
    right = locate_extrema(right, target, rng, budget)
    left.check()
    right.check()
    return left, right


def _categorical(u: float, weights, budget: int) -> int:
    """Index k with S_{<k} <= u S < S_{<=k}, decided on certified brackets."""
    refinements = 0
    for tol in _TOLS:
        if refinements >= budget:
            break
        refinements += 1
        w = weights(tol)
        cum_lo = np.cumsum(w[:, 0])
        cum_hi = np.cumsum(w[:, 1])
        rest_lo = cum_lo[-1] - cum_lo
        rest_hi = cum_hi[-1] - cum_hi
        # h_k = (1-u) S_{<=k} - u S_{>k}, increasing in k
        h_lo = (1 - u) * cum_lo - u * rest_hi
        h_hi = (1 - u) * cum_hi - u * rest_lo
        for k in range(len(w)):
            if h_lo[k] > 0 and (k == 0 or h_hi[k - 1] < 0):
                return k
            if h_hi[k] >= 0:
                break
    raise DecisionBudgetExceeded(f"categorical draw u={u!r} not separated")


@dataclass
class LayerSet:
    """Time-ordered layers tiling (0, 1] for one coordinate."""

    layers: list[IntersectionLayer]
    rng: np.random.Generator
    budget: int = DEFAULT_DECISION_BUDGET
    frozen_after: float | None = None
    log: list[tuple[str, float, float]] = field(default_factory=list)

    @classmethod
    def new(cls, rng: np.random.Generator, budget: int = DEFAULT_DECISION_BUDGET) -> "LayerSet":
        return cls([init_root(rng, budget)], rng, budget)

    def __len__(self) -> int:
        return len(self.layers)

    def find(self, t: float) -> int:
        """Index of the layer whose interval (t_left, t_right] contains t."""
        rights = [l.t_right for l in self.layers]
        k = _bisect.bisect_left(rights, t)
        if t <= 0 or k == len(self.layers):
            raise ValueError(f"time {t} outside (0, 1]")
        return k

    def _guard(self, layer: IntersectionLayer, op: str) -> None:
        self.log.append((op, layer.t_left, layer.t_right))
        if self.frozen_after is not None and layer.t_right > self.frozen_after:
            raise FrozenLayerError(
                f"{op} touches ({layer.t_left}, {layer.t_right}] after freezing at {self.frozen_after}")

    def split(self, k: int) -> None:
        layer = self.layers[k]
        self._guard(layer, "bisect")
        self.layers[k : k + 1] = bisect(layer, self.rng, self.budget)

    def tighten(self, k: int, factor: float = 0.5) -> None:
        """Shrink the minimum interval of one layer below ``factor`` times its width."""
        layer = self.layers[k]
        self._guard(layer, "locate")
        target = factor * layer.min_width
        self.layers[k] = locate_extrema(layer, target, self.rng, self.budget, which="min")

    def max_level(self) -> int:
        return max(l.level for l in self.layers)

    def polyline(self) -> Polyline:
        t = np.array([0.0] + [l.t_right for l in self.layers])
        v = np.array([self.layers[0].b_left] + [l.b_right for l in self.layers])
        return Polyline(t, v)

    def covering(self, time_range) -> list[int]:
        t0, t1 = time_range
        return [k for k, l in enumerate(self.layers) if l.t_right > t0 and l.t_left < t1]

    def dump(self) -> str:
        head = "level\tj\tb_left\tb_right\tL_low\tL_up\tU_low\tU_up"
        return "\n".join([head] + [l.row() for l in self.layers]) + "\n"


def refine_to_level(ls: LayerSet, n: int, time_range=(0.0, 1.0)) -> LayerSet:
    """Bisect every layer meeting ``time_range`` until it sits at level ``n``."""
    if n < 0:
        raise ValueError("level must be non-negative")
    k = 0
    t0, t1 = time_range
    while k < len(ls.layers):
        layer = ls.layers[k]
        if layer.t_right > t0 and layer.t_left < t1 and layer.level < n:
            ls.split(k)
        else:
            k += 1
    return ls


def polyline(ls: LayerSet) -> Polyline:
    return ls.polyline()


def epsilon(ls: LayerSet, time_range=(0.0, 1.0)) -> float:
    """Largest layer height ``U_up - L_low`` among layers meeting ``time_range``."""
    ks = ls.covering(time_range)
    if not ks:
        raise ValueError(f"no layers meet {time_range}")
    return max(ls.layers[k].height for k in ks)


def envelope_area(ls: LayerSet) -> float:
    """Integral over (0, 1] of the gap between the upper and lower envelopes."""
    return float(sum(l.height * l.r for l in ls.layers))
