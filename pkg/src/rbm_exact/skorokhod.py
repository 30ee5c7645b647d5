"""Skorokhod problem on the orthant for Harrison-Reiman reflection matrices.

Given a driving path X, a substochastic routing matrix Q (R = I - Q^T) and a
start point y0 >= 0, find the pair (Y, L) with

    Y = y0 + X + R L,  Y >= 0,  L non-decreasing from 0,  int Y_i dL_i = 0.

For piecewise-linear X the solution is piecewise linear. The regulator is
the fixed point of

    L_i(t) = sup_{s <= t} ( -y0_i - X_i(s) + (Q^T L)_i(s) )^+

which we iterate on exact polyline algebra (running maxima insert their
crossing breakpoints). ``regulator_bracket`` solves the same fixed point
when X is only known through per-cell lower bounds and attained-value
evidence, giving certified lower/upper regulators.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReflectionSpec:
    Q: np.ndarray
    alpha: float
    alpha_upper: float

    @property
    def d(self) -> int:
        return self.Q.shape[0]

    @property
    def R(self) -> np.ndarray:
        return np.eye(self.d) - self.Q.T

    @property
    def K(self) -> float:
        """Lipschitz constant of the Skorokhod map in the uniform metric."""
        return 1.0 / (1.0 - self.alpha_upper)


def validate_spec(Q) -> ReflectionSpec:
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValueError(f"routing matrix must be square, got shape {Q.shape}")
    if np.any(Q < 0):
        raise ValueError("routing matrix has negative entries")
    if np.any(Q.sum(axis=1) > 1.0 + 1e-12):
        raise ValueError("routing matrix is not substochastic (row sum > 1)")
    d = Q.shape[0]
    alpha = float(np.max(np.abs(np.linalg.eigvals(Q)))) if d else 0.0
    # Collatz-Wielandt: alpha <= max_i (Qx)_i / x_i for any x > 0.
    # Iterating with I + Q keeps x positive and aperiodic.
    x = np.ones(d)
    upper = np.inf
    for _ in range(2000):
        y = Q @ x
        upper = min(upper, float(np.max(y / x)))
        if upper <= alpha * (1 + 1e-12) + 1e-15:
            break
        x = x + y
        x /= x.max()
    upper = max(upper, alpha)
    if upper >= 1.0 - 1e-12:
        raise ValueError(f"spectral radius {alpha} of Q is not below 1")
    return ReflectionSpec(Q=Q, alpha=alpha, alpha_upper=upper)


@dataclass(frozen=True)
class Polyline:
    """Continuous piecewise-linear path on [0, t_end] with d coordinates."""

    t: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "v", v)
        if t.ndim != 1 or len(t) < 1 or v.shape[0] != len(t):
            raise ValueError("breakpoints and values do not line up")
        if t[0] != 0.0:
            raise ValueError("first breakpoint must be 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("breakpoints must be strictly increasing")

    @property
    def d(self) -> int:
        return self.v.shape[1]

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        out = np.stack([np.interp(s, self.t, self.v[:, i]) for i in range(self.d)], axis=-1)
        return out

    def at(self, s: float) -> np.ndarray:
        return self(np.array([s]))[0]

    def coord(self, i: int) -> "Polyline":
        return Polyline(self.t, self.v[:, i : i + 1])

    def on_grid(self, grid: np.ndarray) -> np.ndarray:
        return np.stack([np.interp(grid, self.t, self.v[:, i]) for i in range(self.d)], axis=1)

    def restrict(self, t_end: float) -> "Polyline":
        keep = self.t < t_end
        t = np.append(self.t[keep], t_end)
        return Polyline(t, np.vstack([self.v[keep], self.at(t_end)]))

    def sup_distance(self, other: "Polyline") -> np.ndarray:
        """Per-coordinate sup distance (exact: differences peak at breakpoints)."""
        grid = np.union1d(self.t, other.t)
        return np.max(np.abs(self.on_grid(grid) - other.on_grid(grid)), axis=0)

    def simplified(self) -> "Polyline":
        """Drop interior breakpoints where all coordinates keep the same slope."""
        if len(self.t) < 3:
            return self
        slope = np.diff(self.v, axis=0) / np.diff(self.t)[:, None]
        same = np.all(slope[1:] == slope[:-1], axis=1)
        keep = np.ones(len(self.t), dtype=bool)
        keep[1:-1] = ~same
        return Polyline(self.t[keep], self.v[keep])


def stack(polys: list[Polyline]) -> Polyline:
    grid = polys[0].t
    for p in polys[1:]:
        grid = np.union1d(grid, p.t)
    return Polyline(grid, np.hstack([p.on_grid(grid) for p in polys]))


def running_sup(p: Polyline, floor: float = -np.inf) -> Polyline:
    """Exact running maximum ``max(floor, sup_{s<=t} p(s))`` of a 1-d polyline."""
    if p.d != 1:
        raise ValueError("running_sup works on one coordinate")
    t, v = p.t, p.v[:, 0]
    M = np.maximum.accumulate(np.maximum(v, floor))
    if len(t) == 1:
        return Polyline(t, M)
    prev = M[:-1]
    # a crossing sits inside segment k when it starts below the running max
    # and ends above it
    cross = (v[1:] > prev) & (v[:-1] < prev)
    if not np.any(cross):
        return Polyline(t, M).simplified()
    k = np.nonzero(cross)[0]
    frac = (prev[k] - v[k]) / (v[k + 1] - v[k])
    tc = t[k] + frac * (t[k + 1] - t[k])
    ok = (tc > t[k]) & (tc < t[k + 1])
    k, tc = k[ok], tc[ok]
    t_all = np.concatenate([t, tc])
    v_all = np.concatenate([M, prev[k]])
    order = np.argsort(t_all, kind="stable")
    return Polyline(t_all[order], v_all[order]).simplified()


@dataclass(frozen=True)
class SkorokhodSolution:
    Y: Polyline
    L: Polyline
    err_bound: float
    iterations: int = 0


def reflect_1d(X: Polyline, y0: float) -> SkorokhodSolution:
    """Closed-form one-dimensional reflection at 0."""
    if X.d != 1:
        raise ValueError("reflect_1d needs a one-dimensional path")
    y0 = float(np.asarray(y0).reshape(-1)[0])
    L = running_sup(Polyline(X.t, -y0 - X.v), floor=0.0)
    grid = np.union1d(X.t, L.t)
    Y = Polyline(grid, y0 + X.on_grid(grid) + L.on_grid(grid))
    return SkorokhodSolution(Y=Y, L=Polyline(grid, L.on_grid(grid)), err_bound=0.0)


def _error_from_step(spec: ReflectionSpec, step: np.ndarray) -> float:
    # e_L <= Q^T (I - Q^T)^{-1} step componentwise; Y picks up (I - Q^T) of it
    QT = spec.Q.T
    inv = np.linalg.inv(np.eye(spec.d) - QT)
    eL = QT @ (inv @ step)
    eY = eL + QT @ eL
    return float(np.max(eY))


def reflect(X: Polyline, spec: ReflectionSpec, y0, tol: float = 1e-10,
            max_iter: int = 10_000) -> SkorokhodSolution:
    """Solve the Skorokhod problem for a piecewise-linear driving path."""
    y0 = np.broadcast_to(np.asarray(y0, dtype=float), (spec.d,))
    if X.d != spec.d:
        raise ValueError(f"path has {X.d} coordinates, spec has {spec.d}")
    if np.any(y0 < 0):
        raise ValueError("start point must be non-negative")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if spec.d == 1:
        sol = reflect_1d(X, y0[0])
        q = spec.Q[0, 0]
        if q == 0:
            return sol
        L = Polyline(sol.L.t, sol.L.v / (1.0 - q))
        return SkorokhodSolution(Y=sol.Y, L=L, err_bound=0.0)

    QT = spec.Q.T
    Ls = [Polyline(np.array([0.0]), np.zeros(1)) for _ in range(spec.d)]
    err = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        new = []
        for i in range(spec.d):
            grid = X.t
            for j in range(spec.d):
                if QT[i, j] != 0:
                    grid = np.union1d(grid, Ls[j].t)
            f = -y0[i] - np.interp(grid, X.t, X.v[:, i])
            for j in range(spec.d):
                if QT[i, j] != 0:
                    f = f + QT[i, j] * _interp_flat(grid, Ls[j])
            new.append(running_sup(Polyline(grid, f), floor=0.0))
        step = np.array([_sup_dist_1d(a, b) for a, b in zip(new, Ls)])
        Ls = new
        err = _error_from_step(spec, step)
        if err <= tol:
            break
    else:
        raise SolverError(f"Picard iteration did not reach tol={tol} in {max_iter} steps")

    L = stack(Ls)
    grid = np.union1d(X.t, L.t)
    Lg = L.on_grid(grid)
    Y = Polyline(grid, y0 + X.on_grid(grid) + Lg @ spec.R.T)
    return SkorokhodSolution(Y=Y.simplified(), L=Polyline(grid, Lg).simplified(),
                             err_bound=0.0 if err == 0 else err, iterations=it)


def _interp_flat(grid, p: Polyline):
    # L is held constant past its last breakpoint
    return np.interp(grid, p.t, p.v[:, 0])


def _sup_dist_1d(a: Polyline, b: Polyline) -> float:
    grid = np.union1d(a.t, b.t)
    return float(np.max(np.abs(_interp_flat(grid, a) - _interp_flat(grid, b))))


@dataclass
class ConditionReport:
    violations: list[str] = field(default_factory=list)
    min_Y: float = np.inf
    max_identity_gap: float = 0.0
    complementarity: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return not self.violations


def check_conditions(sol: SkorokhodSolution, X: Polyline, spec: ReflectionSpec, y0,
                     tol: float) -> ConditionReport:
    """Audit nonnegativity, monotone regulator, complementarity and the identity."""
    y0 = np.broadcast_to(np.asarray(y0, dtype=float), (spec.d,))
    rep = ConditionReport()
    grid = np.union1d(np.union1d(sol.Y.t, sol.L.t), X.t)
    Y = sol.Y.on_grid(grid)
    Lg = sol.L.on_grid(grid)
    Xg = X.on_grid(grid)

    rep.min_Y = float(Y.min())
    if rep.min_Y < -tol:
        rep.violations.append(f"a) Y dips to {rep.min_Y:.3e} below -tol")
    if np.any(np.abs(Lg[0]) > tol):
        rep.violations.append("b) L(0) != 0")
    dL = np.diff(Lg, axis=0)
    if np.any(dL < -tol):
        rep.violations.append(f"b) L decreases by {-dL.min():.3e}")
    # exact integral of a linear Y against a linear L on each segment
    comp = np.sum(np.maximum(dL, 0.0) * 0.5 * (Y[1:] + Y[:-1]), axis=0)
    rep.complementarity = comp
    total = np.maximum(1.0, Lg[-1])
    if np.any(comp > tol * total):
        rep.violations.append(f"c) complementarity integral {comp.max():.3e} exceeds tol")
    gap = np.abs(Y - (y0 + Xg + Lg @ spec.R.T))
    rep.max_identity_gap = float(gap.max())
    if rep.max_identity_gap > tol:
        rep.violations.append(f"identity Y = y0 + X + RL off by {rep.max_identity_gap:.3e}")
    return rep


@dataclass(frozen=True)
class RegulatorBracket:
    """Certified lower and upper regulators on a time grid (shape d x (K+1))."""

    t: np.ndarray
    L_lo: np.ndarray
    L_hi: np.ndarray
    iterations: int


def regulator_bracket(t: np.ndarray, cell_lower: np.ndarray, evidence: list, spec: ReflectionSpec,
                      y0, max_iter: int = 100_000) -> RegulatorBracket:
    """Bracket the regulator when the driving path is known only coarsely.

    ``cell_lower[i, k]`` bounds X_i from below on the cell (t[k], t[k+1]].
    ``evidence[i]`` is a triple of arrays (end, start, value): X_i is at most
    ``value`` somewhere in (t[start], t[end]] (a point value when
    start == end). The true regulator lies between the returned arrays at
    every grid time; every iterate is itself a valid bound, so stopping
    early never breaks the certificate.
    """
    d = spec.d
    y0 = np.broadcast_to(np.asarray(y0, dtype=float), (d,))
    K = len(t) - 1
    QT = spec.Q.T
    coupled = bool(np.any(QT != 0))

    m = np.maximum(0.0, (-y0[:, None] - cell_lower).max(axis=1)) if K else np.zeros(d)
    top = np.linalg.solve(np.eye(d) - QT, m)
    L_hi = np.zeros((d, K + 1))
    L_hi[:, 1:] = top[:, None]
    L_lo = np.zeros((d, K + 1))

    it = 0
    for it in range(1, max_iter + 1):
        g_hi = QT @ L_hi
        g_lo = QT @ L_lo
        new_hi = np.zeros_like(L_hi)
        new_lo = np.zeros_like(L_lo)
        for i in range(d):
            term = -y0[i] - cell_lower[i] + g_hi[i, 1:]
            new_hi[i, 1:] = np.maximum.accumulate(np.maximum(term, 0.0))
            end, start, val = evidence[i]
            lo_term = np.full(K + 1, 0.0)
            np.maximum.at(lo_term, end, -y0[i] - val + g_lo[i, start])
            new_lo[i] = np.maximum.accumulate(lo_term)
        new_hi = np.minimum(new_hi, L_hi)
        new_lo = np.maximum(new_lo, L_lo)
        done = np.array_equal(new_hi, L_hi) and np.array_equal(new_lo, L_lo)
        L_hi, L_lo = new_hi, new_lo
        if done or not coupled:
            break
    return RegulatorBracket(t=t, L_lo=L_lo, L_hi=L_hi, iterations=it)


def to_csv(sol: SkorokhodSolution) -> str:
    """CSV with columns t, y_1..y_d, l_1..l_d on the merged breakpoint grid."""
    grid = np.union1d(sol.Y.t, sol.L.t)
    Y = sol.Y.on_grid(grid)
    L = sol.L.on_grid(grid)
    d = Y.shape[1]
    buf = io.StringIO()
    buf.write(",".join(["t"] + [f"y_{i + 1}" for i in range(d)] + [f"l_{i + 1}" for i in range(d)]) + "\n")
    for k in range(len(grid)):
        row = [grid[k], *Y[k], *L[k]]
        buf.write(",".join(repr(float(x)) for x in row) + "\n")
    return buf.getvalue()


def from_csv(text: str) -> SkorokhodSolution:
    lines = [ln for ln in text.strip().splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    d = (len(header) - 1) // 2
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    t = data[:, 0]
    return SkorokhodSolution(Y=Polyline(t, data[:, 1 : 1 + d]), L=Polyline(t, data[:, 1 + d :]),
                             err_bound=0.0)
