"""Optimal sampling design for averaging-based duty-cycle estimation.

The averaging MSE is convex in the inter-sample time vector, so the
best schedule for a fixed sample count N and window T solves a KKT
system.  Its structure: the middle intervals are uniform, the two
spanning the k-th and (N-k)-th samples are equal and shorter, and as
T shrinks the first and last k-1 intervals collapse to zero, stacking
k coinciding samples on each edge.  This module solves that system,
computes the matching optimal weighting sequence for weighted
averaging, and builds the analytic Hessian used to certify convexity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError
from .estimators import WeightVector
from .accuracy import ErrorReport, mse_avg, _digest
from .traffic import SampleSchedule, TrafficParams


@dataclass(frozen=True)
class ScheduleSolution:
    """Solution of the optimal-schedule system.

    ``k_regime`` counts coinciding samples stacked on each edge (1
    means none coincide); ``t_a`` is the edge interval and ``t_b`` the
    interior one.  When all mass sits on the middle interval(s),
    ``t_a`` is half the window and ``t_b`` is zero.
    """

    schedule: SampleSchedule
    k_regime: int
    t_a: float
    t_b: float
    mse_at_optimum: float


@dataclass(frozen=True)
class HessianMatrix:
    """Symmetric (N-1)x(N-1) second-derivative matrix of the averaging MSE."""

    entries: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.entries, dtype=float)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise DomainError("Hessian must be square")
        scale = np.max(np.abs(h)) or 1.0
        if np.max(np.abs(h - h.T)) > 1e-12 * scale:
            raise DomainError("Hessian must be symmetric")
        h.setflags(write=False)
        object.__setattr__(self, "entries", h)

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0])


def _regime_bracket(n: int, k: int, c: float) -> tuple:
    """Window range (lo, hi] in which edge-stack size k is optimal.

    Brackets tile (0, inf): regime k starts where regime k's edge
    interval hits zero and ends where it equals the interior one.
    """
    n_hat = n - 2 * k - 1
    lo = n_hat * c * math.log((k + 1) / k) if n_hat > 0 else 0.0
    hi = math.inf if k == 1 else (n - 2 * k + 1) * c * math.log(k / (k - 1))
    return lo, hi


def optimal_schedule(params: TrafficParams, n: int, t_window: float) -> ScheduleSolution:
    """MSE-minimizing inter-sample times for N samples in a window T.

    Scans edge-stack sizes k for the regime whose bracket contains T,
    then solves the edge/interior coupling by a bracketed root in the
    interior decay factor (tolerance 1e-12 on the factor).  On a
    bracket boundary both adjacent regimes solve the system; the
    smaller k is returned.
    """
    if n < 3:
        raise DomainError("schedule optimization needs at least three samples")
    if t_window <= 0.0:
        raise DomainError("t_window must be positive")
    u, lf = params.u, params.lambda_f
    c = u / lf
    r = lf / u
    t = float(t_window)
    for k in range(1, n // 2 + 1):
        if 2 * k == n:
            # all mass on the single middle interval
            lo, hi = _regime_bracket(n, k, c)
            if not t <= hi:
                continue
            times = [0.0] * (n - 1)
            times[n // 2 - 1] = t
            sched = SampleSchedule(tuple(times))
            return ScheduleSolution(sched, k, t / 2.0, 0.0, mse_avg(params, sched).mse)
        lo, hi = _regime_bracket(n, k, c)
        if not lo <= t <= hi:
            continue
        n_hat = n - 2 * k - 1
        if n_hat == 0:
            t_a, t_b = t / 2.0, 0.0
        else:
            # stationarity in y = log(interior decay); the y domain keeps
            # very long windows (decay underflowing 1e-300) solvable
            def stationarity(y):
                return ((n_hat + 2) * y - 2.0 * math.log(k)
                        - 2.0 * math.log1p(-math.exp(y)) + r * t)

            y_hi = math.log(k / (k + 1.0))
            if stationarity(y_hi) <= 0.0:
                y = y_hi  # window sits exactly on the regime boundary
            else:
                y_lo = (-r * t - 2.0 * abs(math.log(k)) - 20.0) / (n_hat + 2)
                y = brentq(stationarity, min(y_lo, y_hi - 1.0), y_hi, xtol=1e-15)
            t_b = -y / r
            t_a = max((t - n_hat * t_b) / 2.0, 0.0)  # exact budget split
        times = [0.0] * (n - 1)
        times[k - 1] = t_a
        times[n - k - 1] = t_a
        for i in range(k, n - k - 1):
            times[i] = t_b
        sched = SampleSchedule(tuple(times))
        return ScheduleSolution(sched, k, t_a, t_b, mse_avg(params, sched).mse)
    raise DomainError("no regime bracket contained the window; unreachable")


def optimal_schedule_mse(params: TrafficParams, n: int, t_window: float) -> ErrorReport:
    """MSE at the optimal schedule (direct evaluation, the authoritative path)."""
    sol = optimal_schedule(params, n, t_window)
    return ErrorReport(sol.mse_at_optimum, "closed_form",
                       _digest(params, N=n, T=float(t_window)))


def optimal_schedule_mse_formula(params: TrafficParams, n: int,
                                 t_window: float) -> float:
    """MSE at the optimal schedule via the published piecewise expression.

    Kept separate from the direct evaluation so the two can be checked
    against each other; the direct evaluation wins on disagreement.
    """
    sol = optimal_schedule(params, n, t_window)
    u, lf = params.u, params.lambda_f
    k = sol.k_regime
    coef = 2.0 * u * (1.0 - u) / (n * n)
    if k == n // 2:
        if n % 2 == 0:
            e = math.exp(-lf * t_window / u)
            return coef * (n / 2.0 + (n * n * (e + 1.0) - 2.0 * n) / 4.0)
        e1 = math.exp(-lf * t_window / u)
        e2 = math.exp(-lf * t_window / (2.0 * u))
        return coef * (n / 2.0 + (n - 1) * ((n - 1) * e1 + 4.0 * e2 + (n - 3)) / 4.0)
    gb = math.exp(-lf * sol.t_b / u)
    omg = 1.0 - gb
    return coef * (n / 2.0
                   + (gb + k * (k - 1) * omg * omg) / (omg * omg)
                   + gb * (n - 2 * k) * omg / (omg * omg))


def optimal_weights(params: TrafficParams, n: int, t_c: float) -> WeightVector:
    """Minimum-MSE averaging weights for uniform sampling at spacing t_c.

    Edge samples carry weight 1/(N(1-g)+2g) and interior ones
    (1-g)/(N(1-g)+2g); they sum to one by construction and collapse to
    uniform weights as the correlation dies.
    """
    if n < 2:
        raise DomainError("need at least two samples")
    if t_c <= 0.0:
        raise DomainError("t_c must be positive")
    x = params.lambda_f * t_c / params.u
    g = math.exp(-x)
    one_minus_g = -math.expm1(-x)
    denom = n * one_minus_g + 2.0 * g
    edge = 1.0 / denom
    interior = one_minus_g / denom
    return WeightVector((edge,) + (interior,) * (n - 2) + (edge,) if n > 2
                        else (edge, edge))


def _pair_run_sums(params: TrafficParams, schedule: SampleSchedule) -> np.ndarray:
    """S[a, b] = sum over runs i<=a, j>=b of the decay of run i..j.

    Interval indices are 0-based; entries with a <= b feed the
    gradient diagonal and the Hessian upper triangle.  Exponents are
    all non-positive, so nothing can overflow.
    """
    ts = np.asarray(schedule.inter_sample_times)
    m = ts.size
    r = params.lambda_f / params.u
    cum = np.concatenate([[0.0], np.cumsum(ts)])
    # decay of the contiguous run covering intervals i..j (i <= j);
    # the i > j wedge is masked before exponentiation so nothing overflows
    expo = cum[None, 1:] - cum[:-1, None]       # [i, j] = cum[j+1] - cum[i]
    expo[np.tril_indices(m, k=-1)] = math.inf
    run = np.exp(-r * expo)
    return np.cumsum(np.cumsum(run[:, ::-1], axis=1)[:, ::-1], axis=0)


def mse_gradient(params: TrafficParams, schedule: SampleSchedule) -> np.ndarray:
    """Gradient of the averaging MSE with respect to each inter-sample time."""
    n = schedule.n_samples
    if n < 2:
        raise DomainError("need at least two samples")
    u = params.u
    coef = 2.0 * u * (1.0 - u) / (n * n) * (params.lambda_f / u)
    s = _pair_run_sums(params, schedule)
    return -coef * np.diag(s)


def mse_hessian(params: TrafficParams, schedule: SampleSchedule) -> HessianMatrix:
    """Analytic Hessian of the averaging MSE in the inter-sample times.

    Entry (a, b) with a <= b sums the decays of all contiguous runs
    covering both intervals; the matrix is positive semidefinite,
    which is what makes the schedule optimization convex.
    """
    n = schedule.n_samples
    if n < 3:
        raise DomainError("the Hessian needs at least three samples")
    u = params.u
    coef = 2.0 * u * (1.0 - u) / (n * n) * (params.lambda_f / u) ** 2
    s = _pair_run_sums(params, schedule)
    h = coef * np.triu(s)
    h = h + np.triu(h, k=1).T
    return HessianMatrix(h)


def kkt_residuals(params: TrafficParams, solution: ScheduleSolution) -> dict:
    """First-order optimality residuals of a schedule solution.

    Returns the worst stationarity violation over positive intervals,
    the most negative implied multiplier on zero intervals (dual
    feasibility), and the largest complementary-slackness product.
    """
    ts = np.asarray(solution.schedule.inter_sample_times)
    grad = mse_gradient(params, solution.schedule)
    positive = ts > 0.0
    if not positive.any():
        raise DomainError("schedule has no positive interval")
    mu = -float(np.mean(grad[positive]))
    stationarity = float(np.max(np.abs(grad[positive] + mu)))
    upsilon = np.where(positive, 0.0, grad + mu)
    dual_min = float(np.min(upsilon)) if (~positive).any() else 0.0
    comp_slack = float(np.max(np.abs(upsilon * ts)))
    return {"stationarity": stationarity, "dual_min": dual_min,
            "complementary_slackness": comp_slack}
