"""Closed-form error expressions, their asymptotes, and exact oracles.

Every estimator in this package has a matching accuracy expression
here: mean squared error for the averaging family, Cramer-Rao bounds
(reciprocal Fisher information) for the ML estimators, and the fixed
window asymptotes that sample correlation imposes.  Exhaustive
enumeration oracles compute the same quantities with no algebra
beyond the chain rule, so closed forms can be checked to near machine
precision at small N.

All expressions share the correlation decay factor
``g = exp(-lambda_f t / u)`` between samples ``t`` seconds apart;
products of decay factors are evaluated as exponentials of summed
exponents to avoid underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._bitseq import all_bit_sequences, sequence_probabilities, transition_count_matrix
from .errors import DomainError, EnumerationLimitError, InfeasibleError
from .traffic import SampleSchedule, SampleStream, SensingModel, TrafficParams

ENUM_MAX_N = 20          # exhaustive true-sequence enumeration guard
ENUM_MAX_N_SENSED = 12   # pairwise (true x sensed) enumeration guard
FISHER_MAX_N = 12        # Fisher enumeration guard
FD_STEP = 1e-6           # central difference step for the Fisher oracle


@dataclass(frozen=True)
class ErrorReport:
    """An MSE value plus the provenance that produced it."""

    mse: float
    source: str  # closed_form | asymptote | oracle_enumeration | monte_carlo
    config_digest: str = ""

    def __post_init__(self):
        if self.mse < 0.0:
            raise DomainError(f"mse must be >= 0, got {self.mse}")

    @property
    def rms(self) -> float:
        return math.sqrt(self.mse)


@dataclass(frozen=True)
class FisherInfo:
    """Fisher information of one scalar parameter."""

    value: float
    parameter: str  # u | lambda_f | lambda_n

    def __post_init__(self):
        if not self.value > 0.0:
            raise DomainError(f"Fisher information must be positive, got {self.value}")

    @property
    def crb(self) -> float:
        return 1.0 / self.value


def _digest(params: TrafficParams, **kw) -> str:
    parts = [f"u={params.u:g}", f"lambda_f={params.lambda_f:g}"]
    parts += [f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}" for k, v in kw.items()]
    return " ".join(parts)


def _sensing_excess(params: TrafficParams, sensing: SensingModel) -> float:
    """Numerator of the per-sample MSE penalty a sensing channel adds."""
    c = sensing.require_invertible()
    u = params.u
    return (u * sensing.p_m * (1.0 - sensing.p_m)
            + (1.0 - u) * sensing.p_f * (1.0 - sensing.p_f)) / (c * c)


# ---------------------------------------------------------------------------
# averaging estimator

def _correlation_pair_sum(params: TrafficParams, inter_times) -> float:
    """Sum over ordered sample pairs a<b of exp(-lambda_f (t_b - t_a)/u).

    Running recursion: with A_b the sum of decay factors from sample b
    back to every earlier sample, A_{b+1} = (A_b + 1) g_b.  O(N).
    """
    r = params.lambda_f / params.u
    total = 0.0
    trailing = 0.0
    for t in inter_times:
        trailing = (trailing + 1.0) * math.exp(-r * t)
        total += trailing
    return total


def mse_avg(params: TrafficParams, schedule: SampleSchedule) -> ErrorReport:
    """MSE of plain averaging on an arbitrary schedule.

    The binomial term u(1-u)/N plus twice the correlation pair sum
    scaled by u(1-u)/N^2; coinciding samples contribute decay 1.
    """
    n = schedule.n_samples
    u = params.u
    s = _correlation_pair_sum(params, schedule.inter_sample_times)
    mse = u * (1.0 - u) / n + 2.0 * u * (1.0 - u) * s / (n * n)
    return ErrorReport(mse, "closed_form", _digest(params, N=n, T=schedule.window))


def mse_avg_decrement(params: TrafficParams, schedule_plus: SampleSchedule) -> float:
    """Drop in averaging MSE contributed by the newest sample.

    ``schedule_plus`` is the N+1-sample schedule whose last entry is
    the newly appended interval; returns V_N - V_{N+1} through the
    published recurrence.  The direct difference of two mse_avg calls
    is the authoritative value and agrees to 1e-12.
    """
    ts = schedule_plus.inter_sample_times
    n = len(ts)  # the old sample count
    if n < 1:
        raise DomainError("need the appended interval, so at least two samples")
    v_n = mse_avg(params, SampleSchedule(ts[:-1], schedule_plus.start_offset)).mse
    r = params.lambda_f / params.u
    u = params.u
    tail = 0.0
    prod = 1.0
    for t in reversed(ts):
        prod *= math.exp(-r * t)
        tail += prod
    return ((2 * n + 1) * v_n - u * (1.0 - u) * (1.0 + 2.0 * tail)) / (n + 1) ** 2


def mse_avg_decrement_max(params: TrafficParams, schedule: SampleSchedule) -> float:
    """Largest achievable MSE drop from one extra sample (placed far away)."""
    n = schedule.n_samples
    v_n = mse_avg(params, schedule).mse
    u = params.u
    return (v_n * (2 * n + 1) - u * (1.0 - u)) / (n + 1) ** 2


def mse_avg_uniform(params: TrafficParams, n: int, t_window: float,
                    form: str = "closed") -> ErrorReport:
    """MSE of averaging on a uniform N-sample schedule of length T.

    ``form`` selects the geometric-series closed form ("closed") or
    the direct lag sum ("sum"); the two agree to 1e-12 and the closed
    form is the production path.
    """
    if n < 2:
        raise DomainError("uniform MSE needs at least two samples")
    if t_window <= 0.0:
        raise DomainError("t_window must be positive")
    u = params.u
    t_u = t_window / (n - 1)
    x = params.lambda_f * t_u / u
    g = math.exp(-x)
    if form == "sum":
        i = np.arange(1, n)
        corr = float(np.sum(np.exp(-x * i) * (n - i)))
        mse = 2.0 * u * (1.0 - u) / (n * n) * (n / 2.0 + corr)
    elif form == "closed":
        one_minus_g = -math.expm1(-x)
        mse = (2.0 * u * (1.0 - u) * g * (g ** n - n * (g - 1.0) - 1.0)
               / (n * n * one_minus_g ** 2) + u * (1.0 - u) / n)
    else:
        raise DomainError(f"unknown form {form!r}")
    return ErrorReport(mse, "closed_form", _digest(params, N=n, T=float(t_window)))


def mse_avg_uniform_asymptote(params: TrafficParams, t_window: float) -> ErrorReport:
    """Large-N limit of the uniform averaging MSE at fixed window T.

    2 u(1-u) (e^-eta + eta - 1) / eta^2 with eta = T lambda_f / u; the
    floor sample correlation imposes no matter how densely one samples.
    """
    if t_window <= 0.0:
        raise DomainError("t_window must be positive")
    u = params.u
    eta = t_window * params.lambda_f / u
    mse = 2.0 * u * (1.0 - u) * (math.expm1(-eta) + eta) / (eta * eta)
    return ErrorReport(mse, "asymptote", _digest(params, T=float(t_window)))


def required_samples(params: TrafficParams, t_window: float, beta: float) -> int:
    """Smallest N whose uniform-averaging MSE is within beta of the floor."""
    if not beta > 1.0:
        raise InfeasibleError("beta must exceed 1; the asymptote itself is unreachable")
    target = beta * mse_avg_uniform_asymptote(params, t_window).mse

    def ok(n):
        return mse_avg_uniform(params, n, t_window).mse <= target

    hi = 2
    while not ok(hi):
        hi *= 2
        if hi > 10 ** 12:
            raise InfeasibleError("no feasible sample count found")
    lo = max(2, hi // 2)
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo


def mse_avg_corrected(params: TrafficParams, schedule: SampleSchedule,
                      sensing: SensingModel) -> ErrorReport:
    """MSE of bias-corrected averaging under sensing errors.

    The perfect-sensing MSE plus a schedule-independent penalty that
    decays as 1/N, so sensing errors wash out with enough samples.
    """
    base = mse_avg(params, schedule).mse
    excess = _sensing_excess(params, sensing) / schedule.n_samples
    return ErrorReport(base + excess, "closed_form",
                       _digest(params, N=schedule.n_samples, T=schedule.window,
                               p_f=sensing.p_f, p_m=sensing.p_m))


# ---------------------------------------------------------------------------
# weighted averaging

def mse_weighted(params: TrafficParams, t_c: float, weights,
                 sensing: SensingModel = None) -> ErrorReport:
    """MSE of (bias-corrected) weighted averaging at uniform spacing t_c.

    u(1-u) [sum w_i^2 + 2 sum_j g^j sum_i w_i w_{i+j}] plus, under a
    sensing channel, the per-sample penalty scaled by sum w_i^2.
    With uniform weights this reduces to the uniform averaging MSE.
    """
    w = weights.array if hasattr(weights, "array") else np.asarray(weights, dtype=float)
    if abs(w.sum() - 1.0) > 1e-9:
        raise DomainError(f"weights must sum to 1, got {w.sum()!r}")
    if t_c <= 0.0:
        raise DomainError("t_c must be positive")
    n = w.size
    u = params.u
    x = params.lambda_f * t_c / u
    corr = float(w @ w)
    for j in range(1, n):
        lag = float(w[: n - j] @ w[j:])
        if lag != 0.0:
            corr += 2.0 * math.exp(-x * j) * lag
    mse = u * (1.0 - u) * corr
    kw = dict(N=n, t_c=float(t_c))
    if sensing is not None and not sensing.is_perfect:
        mse += _sensing_excess(params, sensing) * float(w @ w)
        kw.update(p_f=sensing.p_f, p_m=sensing.p_m)
    return ErrorReport(mse, "closed_form", _digest(params, **kw))


def mse_weighted_optimal(params: TrafficParams, n: int, t_c: float,
                         sensing: SensingModel = None) -> ErrorReport:
    """MSE of weighted averaging with the optimal weighting sequence.

    u(1-u)(1+g) / (N(1-g) + 2g); the sensing penalty adds
    excess * (2 + (N-2)(1-g)^2) / (N(1-g) + 2g)^2 and vanishes as N
    grows at fixed spacing.
    """
    if n < 2:
        raise DomainError("need at least two samples")
    if t_c <= 0.0:
        raise DomainError("t_c must be positive")
    u = params.u
    x = params.lambda_f * t_c / u
    g = math.exp(-x)
    one_minus_g = -math.expm1(-x)
    denom = n * one_minus_g + 2.0 * g
    mse = u * (1.0 - u) * (1.0 + g) / denom
    kw = dict(N=n, t_c=float(t_c))
    if sensing is not None and not sensing.is_perfect:
        mse += (_sensing_excess(params, sensing)
                * (2.0 + (n - 2) * one_minus_g ** 2) / (denom * denom))
        kw.update(p_f=sensing.p_f, p_m=sensing.p_m)
    return ErrorReport(mse, "closed_form", _digest(params, **kw))


def mse_weighted_asymptote(params: TrafficParams, t_window: float,
                           sensing: SensingModel = None) -> ErrorReport:
    """Large-N floor of optimally weighted averaging at fixed window T.

    u(1-u) / (1 + lambda_f T / (2u)); a sensing channel does not move
    it, since the per-sample penalty vanishes as N grows.
    """
    if t_window <= 0.0:
        raise DomainError("t_window must be positive")
    if sensing is not None:
        sensing.require_invertible()
    u = params.u
    mse = u * (1.0 - u) / (1.0 + params.lambda_f * t_window / (2.0 * u))
    return ErrorReport(mse, "asymptote", _digest(params, T=float(t_window)))


# ---------------------------------------------------------------------------
# Fisher information and Cramer-Rao bounds

def fisher_u(params: TrafficParams, n: int, t_c: float) -> FisherInfo:
    """Fisher information for the duty cycle, off-rate known, N uniform samples."""
    if n < 2:
        raise DomainError("need at least two samples")
    if t_c <= 0.0:
        raise DomainError("t_c must be positive")
    u = params.u
    x = params.lambda_f * t_c
    g = math.exp(-x / u)
    m1 = g * g * x * (n - 1) * (1 - u) * (x * (1 - u) * (1 + g) - 2 * u * (1 - 2 * u) * (1 - g))
    m2 = g ** 3 * u * u * (u * (u - 1) * (3 * n - 2) + (n - 1))
    m3 = -(g * g) * u * u * (u * (u - 1) * (7 * n - 4) + (2 * n - 1))
    m4 = g * u * u * (n * (5 * u * u - 5 * u + 1) + 2 * u * (1 - u))
    m5 = n * u ** 3 * (1 - u)
    crb = ((1 - g) * (g + u - g * u) * (g * u - u + 1) * u ** 3 * (1 - u)
           / (m1 + m2 + m3 + m4 + m5))
    return FisherInfo(1.0 / crb, "u")


def crb_u(params: TrafficParams, n: int, t_c: float) -> ErrorReport:
    """Cramer-Rao lower bound on the MSE of any unbiased duty-cycle estimator."""
    info = fisher_u(params, n, t_c)
    return ErrorReport(info.crb, "closed_form", _digest(params, N=n, t_c=float(t_c)))


def crb_u_asymptote(params: TrafficParams, t_window: float) -> ErrorReport:
    """Large-N floor of the duty-cycle CR bound: u(1-u) / (1 + lambda_f T / u).

    Half the window buys the same floor as optimal weighting, which is
    what knowing the off-rate is worth.
    """
    if t_window <= 0.0:
        raise DomainError("t_window must be positive")
    u = params.u
    mse = u * (1.0 - u) / (1.0 + params.lambda_f * t_window / u)
    return ErrorReport(mse, "asymptote", _digest(params, T=float(t_window)))


def fisher_lambda_f(params: TrafficParams, n: int, t_c: float) -> FisherInfo:
    """Fisher information for the off-rate, duty cycle known; scales as N-1."""
    if n < 2:
        raise DomainError("need at least two samples")
    if t_c <= 0.0:
        raise DomainError("t_c must be positive")
    u = params.u
    g = math.exp(-params.lambda_f * t_c / u)
    crb = (u * (1 - g) * (g + u * (1 - g) ** 2 * (1 - u))
           / ((g * t_c) ** 2 * (1 - u) * (1 + g) * (n - 1)))
    return FisherInfo(1.0 / crb, "lambda_f")


def crb_lambda_f(params: TrafficParams, n: int, t_c: float) -> ErrorReport:
    info = fisher_lambda_f(params, n, t_c)
    return ErrorReport(info.crb, "closed_form", _digest(params, N=n, t_c=float(t_c)))


def crb_lambda_f_asymptote(params: TrafficParams, t_window: float) -> ErrorReport:
    """Large-N floor of the off-rate CR bound: lambda_f / (2 T (1-u))."""
    if t_window <= 0.0:
        raise DomainError("t_window must be positive")
    mse = params.lambda_f / (2.0 * t_window * (1.0 - params.u))
    return ErrorReport(mse, "asymptote", _digest(params, T=float(t_window)))


def fisher_lambda_n(params: TrafficParams, n: int, t_c: float) -> FisherInfo:
    """Fisher information for the on-rate: u^2/(1-u)^2 times the off-rate's."""
    base = fisher_lambda_f(params, n, t_c)
    u = params.u
    return FisherInfo(u * u / (1.0 - u) ** 2 * base.value, "lambda_n")


def crb_lambda_n(params: TrafficParams, n: int, t_c: float) -> ErrorReport:
    info = fisher_lambda_n(params, n, t_c)
    return ErrorReport(info.crb, "closed_form", _digest(params, N=n, t_c=float(t_c)))


def crb_lambda_n_asymptote(params: TrafficParams, t_window: float) -> ErrorReport:
    """Large-N floor of the on-rate CR bound: lambda_n / (2 T u)."""
    if t_window <= 0.0:
        raise DomainError("t_window must be positive")
    mse = params.lambda_n / (2.0 * t_window * params.u)
    return ErrorReport(mse, "asymptote", _digest(params, T=float(t_window)))


# ---------------------------------------------------------------------------
# exhaustive oracles

def _sensed_sequence_distribution(pz: np.ndarray, seqs: np.ndarray,
                                  sensing: SensingModel) -> np.ndarray:
    """P(sensed sequence) for every sensed sequence, by pair enumeration.

    Contracts the (true x sensed) channel matrix built from popcounts;
    memory and time are O(4^N), which the caller guards.
    """
    n = seqs.shape[1]
    codes = (seqs.astype(np.uint32) << np.arange(n, dtype=np.uint32)).sum(axis=1)
    ones = np.bitwise_count(codes).astype(np.int64)
    match = np.bitwise_count(codes[:, None] & codes[None, :]).astype(np.int16)
    # row index: true sequence, column index: sensed sequence
    m3 = match
    m2 = ones[:, None] - m3                    # mis-detections
    m0 = ones[None, :] - m3                    # false alarms
    m1 = (n - ones)[:, None] - m0              # quiet reads kept quiet
    pow_pf = sensing.p_f ** np.arange(n + 1)
    pow_pfc = (1.0 - sensing.p_f) ** np.arange(n + 1)
    pow_pm = sensing.p_m ** np.arange(n + 1)
    pow_pmc = (1.0 - sensing.p_m) ** np.arange(n + 1)
    s = pow_pf[m0]
    s *= pow_pfc[m1]
    s *= pow_pm[m2]
    s *= pow_pmc[m3]
    return pz @ s


def oracle_mse_enumeration(params: TrafficParams, schedule: SampleSchedule,
                           estimator, sensing: SensingModel = None) -> ErrorReport:
    """Exact MSE of any estimator by enumerating every bit sequence.

    ``estimator`` maps a SampleStream to an Estimate; its raw
    (unclamped) value enters the second moment, from which u^2 is
    subtracted.  With a sensing model the full error channel is
    enumerated pairwise.  Cost guards: N <= 20 plain, N <= 12 sensed.
    """
    n = schedule.n_samples
    if n > ENUM_MAX_N:
        raise EnumerationLimitError(
            f"refusing to enumerate 2^{n} sequences (guard is N <= {ENUM_MAX_N})")
    if sensing is not None and not sensing.is_perfect and n > ENUM_MAX_N_SENSED:
        raise EnumerationLimitError(
            f"refusing the sensed pair enumeration at N={n} "
            f"(guard is N <= {ENUM_MAX_N_SENSED})")
    seqs = all_bit_sequences(n)
    pz = sequence_probabilities(seqs, schedule.inter_sample_times, params)
    sensed = sensing is not None
    noisy = sensed and not sensing.is_perfect
    weights = _sensed_sequence_distribution(pz, seqs, sensing) if noisy else pz
    second_moment = 0.0
    for row, p in zip(seqs, weights):
        if p == 0.0:
            continue
        stream = SampleStream(tuple(int(b) for b in row), schedule, sensed=sensed)
        second_moment += p * estimator(stream).raw ** 2
    mse = second_moment - params.u ** 2
    return ErrorReport(max(mse, 0.0), "oracle_enumeration",
                       _digest(params, N=n, sensed=int(sensed)))


def _loglik_from_counts(first: np.ndarray, counts: np.ndarray, u: float,
                        lambda_f: float, t_c: float) -> np.ndarray:
    """Vectorized chain log-likelihood given per-sequence sufficient stats."""
    g = math.exp(-lambda_f * t_c / u)
    p00 = (1.0 - u) + u * g
    p11 = u + (1.0 - u) * g
    logp = np.log(np.array([p00, 1.0 - p00, 1.0 - p11, p11]))
    start = np.where(first == 1, math.log(u), math.log(1.0 - u))
    return start + counts @ logp


def oracle_fisher_enumeration(params: TrafficParams, n: int, t_c: float,
                              parameter: str = "u", step: float = FD_STEP) -> FisherInfo:
    """Exact Fisher information by enumeration and numeric differentiation.

    Scores are central differences of the chain log-likelihood (step
    1e-6), so the result is independent of any analytic score algebra.
    Refused above N = 12.
    """
    if n > FISHER_MAX_N:
        raise EnumerationLimitError(
            f"refusing Fisher enumeration at N={n} (guard is N <= {FISHER_MAX_N})")
    if n < 2:
        raise DomainError("need at least two samples")
    if parameter not in ("u", "lambda_f", "lambda_n"):
        raise DomainError(f"unknown parameter {parameter!r}")
    seqs = all_bit_sequences(n)
    pz = sequence_probabilities(seqs, np.full(n - 1, t_c), params)
    first = seqs[:, 0].astype(np.int64)
    counts = transition_count_matrix(seqs)
    u, lf = params.u, params.lambda_f

    if parameter == "u":
        hi = _loglik_from_counts(first, counts, u + step, lf, t_c)
        lo = _loglik_from_counts(first, counts, u - step, lf, t_c)
    elif parameter == "lambda_f":
        hi = _loglik_from_counts(first, counts, u, lf + step, t_c)
        lo = _loglik_from_counts(first, counts, u, lf - step, t_c)
    else:
        # perturb lambda_n at fixed u; lambda_f = u lambda_n / (1-u)
        ln = params.lambda_n
        hi = _loglik_from_counts(first, counts, u, u * (ln + step) / (1.0 - u), t_c)
        lo = _loglik_from_counts(first, counts, u, u * (ln - step) / (1.0 - u), t_c)
    score = (hi - lo) / (2.0 * step)
    info = float(np.sum(pz * score * score))
    return FisherInfo(info, parameter)


def oracle_score_mean(params: TrafficParams, n: int, t_c: float,
                      parameter: str = "u", step: float = FD_STEP) -> float:
    """Mean of the numeric score over the enumeration (zero in theory)."""
    if n > FISHER_MAX_N:
        raise EnumerationLimitError(
            f"refusing Fisher enumeration at N={n} (guard is N <= {FISHER_MAX_N})")
    seqs = all_bit_sequences(n)
    pz = sequence_probabilities(seqs, np.full(n - 1, t_c), params)
    first = seqs[:, 0].astype(np.int64)
    counts = transition_count_matrix(seqs)
    u, lf = params.u, params.lambda_f
    if parameter == "u":
        hi = _loglik_from_counts(first, counts, u + step, lf, t_c)
        lo = _loglik_from_counts(first, counts, u - step, lf, t_c)
    else:
        hi = _loglik_from_counts(first, counts, u, lf + step, t_c)
        lo = _loglik_from_counts(first, counts, u, lf - step, t_c)
    score = (hi - lo) / (2.0 * step)
    return float(np.sum(pz * score))
