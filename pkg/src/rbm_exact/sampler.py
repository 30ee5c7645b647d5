"""Unbiased sampling of reflected Brownian motion at a fixed time.

Outline for one sample, in internal time where the query sits at 1/3:

1. Grow intersection layers for every coordinate, bisecting the layer J that
   contains the query time (in lockstep across coordinates) until the path
   provably cannot reach the boundary between the left end of J and the
   query time. On that stretch the reflected path moves exactly like the
   free path, so Y(T) = Y(T_left) + (B(T) - B(T_left)).
2. Propose the increment uniformly over a range covering its support,
   shifted by an estimate of Y(T_left).
3. Accept with probability pi * rho of the true increment, deciding each
   comparison only once refinements of the layers on [0, T_left] certify
   it. Layers meeting (T_left, 1] are frozen after step 1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from . import rng as rngmod
from .bridge_math import Band, BandDensityParams, pi_range
from .layers import DEFAULT_DECISION_BUDGET, DecisionBudgetExceeded, LayerSet, _TOLS
from .skorokhod import Polyline, ReflectionSpec, SkorokhodSolution, reflect, regulator_bracket

TAU = 1.0 / 3.0

ACCEPTED = "accepted"
BUDGET_EXHAUSTED = "budget_exhausted"


class BudgetExhausted(RuntimeError):
    pass


def rescale_time(T: float) -> tuple[float, float]:
    """Brownian scaling factor c with T = c * tau and the internal time tau."""
    if not 0 < T <= 1:
        raise ValueError(f"query time must lie in (0, 1], got {T}")
    return 3.0 * T, TAU


@dataclass(frozen=True)
class SamplerConfig:
    spec: ReflectionSpec
    T: float = TAU
    y0: np.ndarray | float = 0.0
    seed: int = 0
    max_level: int = 22
    max_attempts: int = 100_000
    decision_budget: int = DEFAULT_DECISION_BUDGET
    max_rounds: int = 20_000
    max_refine_level: int = 48
    proposal: str = "envelope"
    envelope_bins: int = 64

    def __post_init__(self):
        y0 = np.broadcast_to(np.asarray(self.y0, dtype=float), (self.spec.d,)).copy()
        object.__setattr__(self, "y0", y0)
        rescale_time(self.T)
        if np.any(y0 < 0):
            raise ValueError("start point must be non-negative")
        for name in ("max_level", "max_attempts", "decision_budget", "max_rounds",
                     "max_refine_level"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class _Bracket:
    lo: np.ndarray
    hi: np.ndarray
    refine: list = field(default_factory=list)  # (coord, layer index) pairs

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo


class PathState:
    """Layer sets for all coordinates plus the regulator bracket machinery."""

    def __init__(self, sets: list[LayerSet], spec: ReflectionSpec, y0: np.ndarray, max_level: int):
        self.sets = sets
        self.spec = spec
        self.y0 = y0
        self.max_level = max_level
        self.refinements = 0

    @property
    def d(self) -> int:
        return len(self.sets)

    def bracket(self, t_end: float) -> _Bracket:
        """Certified bounds on Y(t_end) from the layers covering [0, t_end]."""
        if t_end == 0.0:
            return _Bracket(self.y0.copy(), self.y0.copy())
        d, QT = self.d, self.spec.Q.T
        per = []
        grid = np.array([0.0])
        for ls in self.sets:
            ks = [l for l in ls.layers if l.t_right <= t_end]
            a = np.array([(l.t_left, l.t_right, l.L_low, l.L_up, l.b_right, l.level) for l in ks])
            per.append(a)
            grid = np.union1d(grid, a[:, 1])
        K = len(grid) - 1
        cell_lower = np.empty((d, K))
        evidence, starts, ends, owner = [], [], [], []
        for i, a in enumerate(per):
            e = np.searchsorted(grid, a[:, 1])
            s = np.searchsorted(grid, a[:, 0])
            own = np.searchsorted(a[:, 1], grid[1:])
            cell_lower[i] = a[own, 2]
            evidence.append((np.concatenate([e, e]), np.concatenate([e, s]),
                             np.concatenate([a[:, 4], a[:, 3]])))
            starts.append(s)
            ends.append(e)
            owner.append(own)
        rb = regulator_bracket(grid, cell_lower, evidence, self.spec, self.y0)
        B_end = np.array([a[-1, 4] for a in per])
        Llo, Lhi = rb.L_lo[:, -1], rb.L_hi[:, -1]
        base = self.y0 + B_end
        lo = base + Llo - QT @ Lhi
        hi = base + Lhi - QT @ Llo
        # absorb rounding in the sums above
        slack = 4 * np.finfo(float).eps * (np.abs(base) + Lhi + QT @ Lhi + 1.0)
        out = _Bracket(lo - slack, hi + slack)
        out.refine = self._relevant(grid, rb, cell_lower, starts, ends, owner, per)
        return out

    def _relevant(self, grid, rb, cell_lower, starts, ends, owner, per):
        """Layers whose coarseness limits the bracket at the final time.

        A cell of coordinate i matters for a demanded time e when its upper
        regulator term can exceed the certified lower regulator at e. The
        final time is demanded with weight 1; wherever a cell of i matters
        with weight w, each coordinate j feeding i is demanded at that
        cell's end and at the start of i's layer with weight w * Q[j, i],
        the factor by which j's error reaches i. Layers are scored by
        weight times the gap they can shrink themselves.
        """
        d, QT, K = self.d, self.spec.Q.T, len(grid) - 1
        g_hi = QT @ rb.L_hi
        hi_term = -self.y0[:, None] - cell_lower + g_hi[:, 1:]
        W = np.zeros((d, K + 1))
        W[:, K] = 1.0
        first = np.arange(1, K + 1)
        last = [np.searchsorted(rb.L_lo[i], hi_term[i], side="left") - 1 for i in range(d)]
        wcell = np.zeros((d, K))
        for _ in range(200):
            changed = False
            for i in range(d):
                wcell[i] = _range_max(W[i], first, last[i])
                for j in np.nonzero(QT[i] > 0)[0]:
                    c = wcell[i] * QT[i, j]
                    c[c < 1e-9] = 0.0
                    new = W[j].copy()
                    np.maximum.at(new, first, c)
                    np.maximum.at(new, starts[i][owner[i]], c)
                    if np.any(new > W[j]):
                        W[j] = new
                        changed = True
            if not changed:
                break

        scores = []
        growth, lweight = [], []
        for i in range(d):
            a = per[i]
            lw = np.zeros(len(a))
            np.maximum.at(lw, owner[i], wcell[i])
            gr = g_hi[i, ends[i]] - g_hi[i, starts[i]]
            splittable = a[:, 5] < self.max_level
            scores.append(lw * ((a[:, 3] - a[:, 2]) + np.where(splittable, gr, 0.0)))
            growth.append(gr)
            lweight.append(lw)
        # growth of the coupling term across a layer is removed by splitting
        # the feeding coordinate where its layers are the coarser ones
        for i in range(d):
            cells = np.nonzero(wcell[i] > 0)[0]
            li = owner[i][cells]
            v = (lweight[i] * growth[i])[li]
            keep = v > 0
            cells, li, v = cells[keep], li[keep], v[keep]
            for j in np.nonzero(QT[i] > 0)[0]:
                lj = owner[j][cells]
                ok = (per[j][lj, 5] <= per[i][li, 5]) & (per[j][lj, 5] < self.max_level)
                np.maximum.at(scores[j], lj[ok], v[ok])
        top = max((sc.max() if len(sc) else 0.0) for sc in scores)
        if not top > 0:
            return []
        return [(i, int(k)) for i in range(d) for k in np.nonzero(scores[i] >= 0.5 * top)[0]]

    def refine(self, br: _Bracket) -> bool:
        """Refine the layers flagged by ``br``; False if nothing is left to refine."""
        if not br.refine:
            return False
        by_coord: dict[int, list[int]] = {}
        for i, k in br.refine:
            by_coord.setdefault(i, []).append(k)
        for i, ks in by_coord.items():
            ls = self.sets[i]
            # right to left so indices of pending layers stay valid
            for k in sorted(ks, reverse=True):
                if ls.layers[k].level < self.max_level:
                    ls.split(k)
                else:
                    ls.tighten(k)
                self.refinements += 1
        return True


@dataclass
class StrongApproxOutput:
    state: PathState
    N: int
    T_left: float
    T_right: float
    y_left_lo: np.ndarray
    y_left_hi: np.ndarray
    params: list[BandDensityParams]
    b_left: np.ndarray
    freeze_mark: list[int]
    _envelopes: dict = field(default_factory=dict, repr=False)

    @property
    def Ydelta(self) -> np.ndarray:
        """Estimate of Y(T_left) used to centre the proposal."""
        return 0.5 * (self.y_left_lo + self.y_left_hi)

    @property
    def delta(self) -> np.ndarray:
        """Per-coordinate bound on |Y(T_left) - Ydelta|."""
        return 0.5 * (self.y_left_hi - self.y_left_lo)

    @property
    def layer_sets(self) -> list[LayerSet]:
        return self.state.sets

    def envelope(self, i: int, bins: int) -> Envelope:
        key = (i, bins, self.y_left_lo[i], self.y_left_hi[i])
        env = self._envelopes.get(key)
        if env is None:
            env = build_envelope(self.params[i], self.delta[i], bins)
            self._envelopes[key] = env
        return env

    def epsilon(self) -> float:
        """Largest height of layer J across coordinates."""
        return max(p.band.U_up - p.band.L_low for p in self.params)

    def reflected_polyline(self, tol: float | None = None) -> SkorokhodSolution:
        """Reflect the interpolated layer path (diagnostics only)."""
        polys = [ls.polyline() for ls in self.state.sets]
        grid = polys[0].t
        for p in polys[1:]:
            grid = np.union1d(grid, p.t)
        X = Polyline(grid, np.hstack([p.on_grid(grid) for p in polys]))
        return reflect(X, self.state.spec, self.state.y0, tol=tol or 1e-3 * self.epsilon())


def _range_max(w: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """max(w[lo[k] : hi[k] + 1]) for each k, 0 where the range is empty."""
    out = np.zeros(len(lo))
    ok = hi >= lo
    if not np.any(ok):
        return out
    lo, hi = lo[ok], hi[ok]
    table = [w]
    span = 1
    while 2 * span <= len(w):
        prev = table[-1]
        table.append(np.maximum(prev[:-span], prev[span:]))
        span *= 2
    length = hi - lo + 1
    p = np.floor(np.log2(length)).astype(int)
    res = np.zeros(len(lo))
    for q in np.unique(p):
        m = p == q
        t = table[q]
        res[m] = np.maximum(t[lo[m]], t[hi[m] - (1 << q) + 1])
    out[ok] = res
    return out


def _layer_J(state: PathState, tau: float):
    return [ls.layers[ls.find(tau)] for ls in state.sets]


def strong_approx(config: SamplerConfig, sample_index: int = 0) -> StrongApproxOutput:
    """Refine until the boundary is certainly out of reach on (T_left, tau]."""
    c, tau = rescale_time(config.T)
    y0 = config.y0 / np.sqrt(c)
    d = config.spec.d
    sets = [LayerSet.new(rngmod.stream(config.seed, sample_index, i, rngmod.LAYERS),
                         config.decision_budget) for i in range(d)]
    state = PathState(sets, config.spec, y0, max(config.max_level, config.max_refine_level))
    for ls in sets:
        ls.split(ls.find(tau))
    rounds = 0
    while True:
        Js = _layer_J(state, tau)
        t_left = Js[0].t_left
        br = state.bracket(t_left)
        drop = np.array([J.L_low - J.b_left for J in Js])
        if np.all(br.lo + drop > 0):
            break
        certain_fail = np.any(br.hi + drop <= 0)
        need = (~certain_fail) and np.any(br.width > 0.25 * np.abs(drop))
        rounds += 1
        if rounds > config.max_rounds:
            raise BudgetExhausted("refinement rounds exhausted in the boundary guard")
        if need and state.refine(br):
            continue
        if Js[0].level >= config.max_level:
            raise BudgetExhausted(f"guard not met at level {config.max_level}")
        for ls in sets:
            ls.split(ls.find(tau))
            state.refinements += 1

    Js = _layer_J(state, tau)
    t_left, t_right = Js[0].t_left, Js[0].t_right
    params = []
    for J in Js:
        band = Band(J.L_low, J.L_up, J.U_low, J.U_up).shifted(J.b_left)
        params.append(BandDensityParams(band, tau - t_left, J.r, J.b_right - J.b_left))
    for ls in sets:
        ls.frozen_after = t_left
    return StrongApproxOutput(
        state=state, N=Js[0].level, T_left=t_left, T_right=t_right,
        y_left_lo=br.lo, y_left_hi=br.hi, params=params,
        b_left=np.array([J.b_left for J in Js]), freeze_mark=[len(ls.log) for ls in sets],
    )


@dataclass(frozen=True)
class Proposal:
    """Proposed increment ``Ztilde`` and the local bounds used to thin it.

    ``c_pi`` and ``c_rho`` bound pi and rho over every increment compatible
    with ``Ztilde`` and the current bracket on Y(T_left).
    """

    Ztilde: np.ndarray
    Z: np.ndarray
    c_pi: np.ndarray
    c_rho: np.ndarray


@dataclass(frozen=True)
class Envelope:
    """Piecewise-constant bounds of pi and rho over bins of the proposal range."""

    edges: np.ndarray
    c_pi: np.ndarray
    c_rho: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        return np.diff(self.edges) * self.c_pi * self.c_rho


def build_envelope(p: BandDensityParams, delta: float, bins: int, tol: float = 1e-12) -> Envelope:
    """Certified bin-wise sup of pi and rho for a proposal centred on Ydelta.

    With |Y(T_left) - Ydelta| <= delta, the increment behind a proposal
    ``Ztilde`` in a bin lies in the bin widened by delta on both sides.
    """
    b = p.band
    edges = np.linspace(b.L_low - delta, b.U_up + delta, bins + 1)
    c_pi = np.empty(bins)
    c_rho = np.empty(bins)
    for k in range(bins):
        x_lo, x_hi = edges[k] - delta, edges[k + 1] + delta
        c_pi[k] = pi_range(x_lo, x_hi, p)[1]
        c_rho[k] = _kernels.rho_enclosure(b.L_low, b.L_up, b.U_low, b.U_up, p.s, p.l, 0.0, p.v,
                                          x_lo, x_hi, tol)[1]
    return Envelope(edges, c_pi, c_rho)


def propose(out: StrongApproxOutput, rng: np.random.Generator, method: str = "envelope",
            bins: int = 64) -> Proposal:
    """Draw one proposal.

    ``uniform`` spreads ``Ztilde`` evenly over (L_low - delta, U_up + delta)
    with global bounds c_pi = c_rho = 1; ``envelope`` draws from the
    piecewise-constant density proportional to the bin-wise bounds.
    """
    d = len(out.params)
    delta = out.delta
    if method == "uniform":
        lo = np.array([p.band.L_low for p in out.params]) - delta
        hi = np.array([p.band.U_up for p in out.params]) + delta
        Zt = lo + (hi - lo) * rng.random(d)
        return Proposal(Zt, out.Ydelta + Zt, np.ones(d), np.ones(d))
    if method != "envelope":
        raise ValueError(f"unknown proposal method {method!r}")
    Zt, cp, cr = np.empty(d), np.empty(d), np.empty(d)
    for i, p in enumerate(out.params):
        env = out.envelope(i, bins)
        w = env.weights
        k = int(np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right"))
        k = min(k, len(w) - 1)
        Zt[i] = env.edges[k] + (env.edges[k + 1] - env.edges[k]) * rng.random()
        cp[i], cr[i] = env.c_pi[k], env.c_rho[k]
    return Proposal(Zt, out.Ydelta + Zt, cp, cr)


REJECT = "reject"
ACCEPT = "accept"


def _coord_verdict(v1, v2, x_lo, x_hi, p: BandDensityParams, tol: float):
    """True/False when the comparison is certain for every x in the range, else None."""
    b = p.band
    pl, ph = pi_range(x_lo, x_hi, p)
    if v1 >= ph:
        return False
    rl, rh = _kernels.rho_enclosure(b.L_low, b.L_up, b.U_low, b.U_up, p.s, p.l, 0.0, p.v,
                                    x_lo, x_hi, tol)
    if v2 >= rh:
        return False
    if v1 < pl and v2 < rl:
        return True
    return None


def rejection_step(out: StrongApproxOutput, proposal: Proposal, config: SamplerConfig,
                   rng: np.random.Generator) -> str:
    """Accept or reject one proposal, refining Y(T_left) only as far as needed."""
    d = len(out.params)
    V1 = rng.random(d)
    V2 = rng.random(d)
    state = out.state
    rounds = 0
    while True:
        pending = False
        for i in range(d):
            x_lo = proposal.Z[i] - out.y_left_hi[i]
            x_hi = proposal.Z[i] - out.y_left_lo[i]
            verdict = None
            exact = out.y_left_hi[i] == out.y_left_lo[i]
            for tol in (_TOLS if exact else _TOLS[:1]):
                verdict = _coord_verdict(V1[i] * proposal.c_pi[i], V2[i] * proposal.c_rho[i],
                                         x_lo, x_hi, out.params[i], tol)
                if verdict is not None:
                    break
            if verdict is False:
                return REJECT
            if verdict is None:
                pending = True
        if not pending:
            return ACCEPT
        rounds += 1
        if rounds > config.max_rounds:
            raise BudgetExhausted("refinement rounds exhausted in the accept/reject step")
        if not state.refine(state.bracket(out.T_left)):
            raise BudgetExhausted("bracket cannot be refined further")
        br = state.bracket(out.T_left)
        # brackets only ever shrink; intersect to keep them nested
        out.y_left_lo = np.maximum(out.y_left_lo, br.lo)
        out.y_left_hi = np.minimum(out.y_left_hi, br.hi)


@dataclass
class SampleResult:
    value: np.ndarray
    attempts: int
    max_level_reached: int
    status: str
    N: int = 0
    refinements: int = 0


def sample(config: SamplerConfig, sample_index: int = 0) -> SampleResult:
    """Draw one exact sample of Y(T) (or report an exhausted budget)."""
    return sample_with_trace(config, sample_index)[0]


def sample_with_trace(config: SamplerConfig,
                      sample_index: int = 0) -> tuple[SampleResult, StrongApproxOutput | None]:
    """Like ``sample`` but also hands back the layer state for auditing."""
    c, _ = rescale_time(config.T)
    nan = np.full(config.spec.d, np.nan)
    try:
        out = strong_approx(config, sample_index)
    except (BudgetExhausted, DecisionBudgetExceeded):
        return SampleResult(nan, 0, config.max_level, BUDGET_EXHAUSTED), None
    prng = rngmod.stream(config.seed, sample_index, config.spec.d, rngmod.PROPOSAL)

    def level():
        return max(ls.max_level() for ls in out.state.sets)

    attempts = 0
    try:
        while attempts < config.max_attempts:
            attempts += 1
            prop = propose(out, prng, config.proposal, config.envelope_bins)
            if rejection_step(out, prop, config, prng) == ACCEPT:
                value = np.sqrt(c) * prop.Z
                if np.any(value < -1e-9):
                    warnings.warn(f"accepted value {value} is negative (sample {sample_index})")
                return SampleResult(value, attempts, level(), ACCEPTED, N=out.N,
                                    refinements=out.state.refinements), out
    except (BudgetExhausted, DecisionBudgetExceeded):
        pass
    return SampleResult(nan, attempts, level(), BUDGET_EXHAUSTED, N=out.N,
                        refinements=out.state.refinements), out
