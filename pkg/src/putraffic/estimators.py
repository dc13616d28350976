"""Point estimators of the duty cycle and the on/off rates.

Four families: plain sample averaging, bias-corrected averaging under
sensing errors, weighted averaging, and maximum likelihood (scored on
the Markov structure of uniformly spaced samples).  The ML likelihood
under sensing errors is evaluated with a two-state forward recursion,
mathematically identical to summing over all 2^N true sequences but
O(N); the literal exponential sum is kept as a guarded oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from ._bitseq import all_bit_sequences, sequence_probabilities
from .errors import DomainError, EnumerationLimitError, NoSolutionError
from .traffic import (
    SampleStream,
    SensingModel,
    TrafficParams,
    transition_matrix,
    transition_prob,
)

_BOUNDARY_PAD = 1e-12


@dataclass(frozen=True)
class TransitionCounts:
    """Adjacent-sample transition counts of a uniformly sampled stream."""

    n0: int  # 0 -> 0
    n1: int  # 0 -> 1
    n2: int  # 1 -> 0
    n3: int  # 1 -> 1
    first_sample: int

    def __post_init__(self):
        if min(self.n0, self.n1, self.n2, self.n3) < 0:
            raise DomainError("transition counts must be non-negative")
        if abs(self.n1 - self.n2) > 1:
            raise DomainError("0->1 and 1->0 counts can differ by at most 1")
        if self.first_sample not in (0, 1):
            raise DomainError("first_sample must be a bit")

    @property
    def n_samples(self) -> int:
        return self.n0 + self.n1 + self.n2 + self.n3 + 1


@dataclass(frozen=True)
class WeightVector:
    """Averaging weights w_1..w_N, normalized to sum to one."""

    weights: tuple

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if not w:
            raise DomainError("weight vector must be non-empty")
        s = sum(w)
        if abs(s - 1.0) > 1e-12:
            raise DomainError(f"weights must sum to 1, got {s!r}")
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, n: int) -> "WeightVector":
        return cls((1.0 / n,) * n)

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.weights)


@dataclass(frozen=True)
class Estimate:
    """An estimator output.

    ``value`` is clamped to the admissible range ([0,1] for duty
    cycles, >= 0 for rates); ``raw`` keeps the unclamped number so
    error statistics can be computed on the estimator as defined.
    """

    value: float
    raw: float
    estimator_id: str
    converged: bool = True
    log_likelihood: float = None


def _duty_estimate(raw: float, estimator_id: str, converged: bool = True,
                   log_likelihood: float = None) -> Estimate:
    return Estimate(min(1.0, max(0.0, raw)), raw, estimator_id, converged, log_likelihood)


def avg_estimate(stream: SampleStream) -> Estimate:
    """Plain averaging estimator: the sample mean of the bits."""
    if len(stream) == 0:
        raise DomainError("cannot estimate from an empty stream")
    raw = float(np.mean(stream.bits))
    return _duty_estimate(raw, "avg")


def avg_estimate_corrected(stream: SampleStream, sensing: SensingModel) -> Estimate:
    """Bias-corrected averaging under a known sensing-error channel.

    value = (mean(sensed bits) - p_f) / (1 - p_f - p_m); unbiased for
    the duty cycle whenever p_f + p_m != 1.
    """
    if len(stream) == 0:
        raise DomainError("cannot estimate from an empty stream")
    if not stream.sensed:
        raise DomainError("bias correction expects a sensed stream")
    denom = sensing.require_invertible()
    raw = (-sensing.p_f + float(np.mean(stream.bits))) / denom
    return _duty_estimate(raw, "avg_corrected")


def weighted_estimate(stream: SampleStream, weights: WeightVector,
                      sensing: SensingModel = None) -> Estimate:
    """Weighted averaging, optionally bias-corrected for sensing errors."""
    if len(weights) != len(stream):
        raise DomainError(
            f"weight length {len(weights)} does not match stream length {len(stream)}"
        )
    dot = float(weights.array @ stream.bits)
    if sensing is None:
        return _duty_estimate(dot, "weighted")
    if not stream.sensed:
        raise DomainError("bias correction expects a sensed stream")
    denom = sensing.require_invertible()
    return _duty_estimate((-sensing.p_f + dot) / denom, "weighted_corrected")


def count_transitions(stream: SampleStream) -> TransitionCounts:
    """Tally 0->0, 0->1, 1->0, 1->1 transitions of a uniform stream."""
    if not stream.schedule.is_uniform:
        raise DomainError("transition counts assume a uniform schedule")
    bits = stream.bits
    a, b = bits[:-1], bits[1:]
    n0 = int(np.sum((a == 0) & (b == 0)))
    n1 = int(np.sum((a == 0) & (b == 1)))
    n2 = int(np.sum((a == 1) & (b == 0)))
    n3 = int(np.sum((a == 1) & (b == 1)))
    return TransitionCounts(n0, n1, n2, n3, int(bits[0]))


def log_likelihood_u(counts: TransitionCounts, u: float, lambda_f: float,
                     t_c: float) -> float:
    """Log-likelihood of the observed transitions at a candidate duty cycle.

    The chain factorizes into the stationary first-sample term and the
    four transition probabilities raised to their counts.  Boundary
    candidates get -inf.
    """
    if not 0.0 < u < 1.0:
        return -math.inf
    p = TrafficParams(u=u, lambda_f=lambda_f)
    terms = (
        (1 if counts.first_sample == 1 else 0, u),
        (1 if counts.first_sample == 0 else 0, 1.0 - u),
        (counts.n0, transition_prob(0, 0, t_c, p)),
        (counts.n1, transition_prob(0, 1, t_c, p)),
        (counts.n2, transition_prob(1, 0, t_c, p)),
        (counts.n3, transition_prob(1, 1, t_c, p)),
    )
    ll = 0.0
    for n, prob in terms:
        if n == 0:
            continue
        if prob <= 0.0:
            return -math.inf
        ll += n * math.log(prob)
    return ll


def log_likelihood_lambda_f(counts: TransitionCounts, lambda_f: float, u: float,
                            t_c: float) -> float:
    """Log-likelihood of the observed transitions at a candidate rate."""
    if lambda_f <= 0.0:
        return -math.inf
    return log_likelihood_u(counts, u, lambda_f, t_c)


def _refine_maximum(objective, grid: np.ndarray, lo: float, hi: float):
    """Coarse-grid argmax followed by bounded scalar refinement."""
    vals = np.array([objective(x) for x in grid])
    i = int(np.argmax(vals))
    left = grid[i - 1] if i > 0 else lo
    right = grid[i + 1] if i < grid.size - 1 else hi
    res = minimize_scalar(lambda x: -objective(x), bounds=(left, right),
                          method="bounded", options={"xatol": 1e-10})
    x = float(res.x)
    converged = bool(res.success)
    # a maximizer pinned against the admissible range is reported, not trusted
    if x - lo < 1e-9 or hi - x < 1e-9:
        converged = False
    return x, float(-res.fun), converged


def ml_estimate_u(stream: SampleStream, lambda_f_known: float,
                  t_c: float = None) -> Estimate:
    """Maximum-likelihood duty cycle with the off-rate known.

    The score equation has no closed form; a 0.01-step grid locates
    the global maximum and bounded refinement sharpens it to 1e-9.
    Streams with no transitions pin the likelihood to a boundary and
    come back flagged unconverged.
    """
    counts = count_transitions(stream)
    if t_c is None:
        t_c = stream.schedule.t_c
    if counts.n1 == 0 and counts.n2 == 0:
        return _duty_estimate(float(counts.first_sample), "ml_u", converged=False)
    grid = np.arange(0.01, 1.0, 0.01)
    u, ll, ok = _refine_maximum(
        lambda x: log_likelihood_u(counts, x, lambda_f_known, t_c),
        grid, _BOUNDARY_PAD, 1.0 - _BOUNDARY_PAD)
    return _duty_estimate(u, "ml_u", converged=ok, log_likelihood=ll)


# ---------------------------------------------------------------------------
# likelihood under sensing errors

def _emission_probs(sensing: SensingModel, obs: int) -> np.ndarray:
    """P(read obs | true state) for true state 0 and 1."""
    if obs == 1:
        return np.array([sensing.p_f, 1.0 - sensing.p_m])
    return np.array([1.0 - sensing.p_f, sensing.p_m])


def forward_log_likelihood(observed, params: TrafficParams, t_c: float,
                           sensing: SensingModel) -> float:
    """Log-probability of a sensed bit sequence, by forward recursion.

    Runs the scaled forward pass of the hidden two-state chain in
    O(N); agrees with the exhaustive sum over all true sequences.
    """
    obs = np.asarray(observed, dtype=np.int8)
    P = transition_matrix(t_c, params)
    alpha = np.array([1.0 - params.u, params.u]) * _emission_probs(sensing, obs[0])
    c = alpha.sum()
    if c <= 0.0:
        return -math.inf
    alpha /= c
    ll = math.log(c)
    for z in obs[1:]:
        alpha = (alpha @ P) * _emission_probs(sensing, z)
        c = alpha.sum()
        if c <= 0.0:
            return -math.inf
        alpha /= c
        ll += math.log(c)
    return ll


def enumerated_log_likelihood(observed, params: TrafficParams, t_c: float,
                              sensing: SensingModel, max_n: int = 20) -> float:
    """Oracle: the sensed-sequence likelihood as a literal 2^N sum.

    Sums P(true sequence) * P(observed | true sequence) over every
    true bit sequence.  Exponential cost, refused beyond ``max_n``.
    """
    obs = np.asarray(observed, dtype=np.int8)
    n = obs.size
    if n > max_n:
        raise EnumerationLimitError(
            f"refusing to enumerate 2^{n} sequences (guard is n <= {max_n})")
    seqs = all_bit_sequences(n)
    pz = sequence_probabilities(seqs, np.full(n - 1, t_c), params)
    n3 = (seqs * obs).sum(axis=1)     # true 1 read as 1 (no mis-detection)
    n_true1 = seqs.sum(axis=1)
    n_obs1 = int(obs.sum())
    m2 = n_true1 - n3                 # mis-detections
    m0 = n_obs1 - n3                  # false alarms
    m1 = (n - n_true1) - m0           # quiet reads that stayed quiet
    s = (np.power(sensing.p_f, m0) * np.power(1.0 - sensing.p_f, m1)
         * np.power(sensing.p_m, m2) * np.power(1.0 - sensing.p_m, n3))
    total = float(np.sum(pz * s))
    return math.log(total) if total > 0.0 else -math.inf


def ml_estimate_u_noisy(stream: SampleStream, lambda_f_known: float,
                        t_c: float = None, sensing: SensingModel = None) -> Estimate:
    """ML duty cycle from sensed samples, off-rate known.

    Maximizes the forward-recursion likelihood over u; with a perfect
    channel this is exactly the noiseless estimator, so that case is
    delegated to it.
    """
    if sensing is None:
        raise DomainError("a sensing model is required")
    if sensing.is_perfect:
        return ml_estimate_u(stream, lambda_f_known, t_c)
    if not stream.sensed:
        raise DomainError("noisy ML expects a sensed stream")
    if not stream.schedule.is_uniform:
        raise DomainError("noisy ML assumes a uniform schedule")
    if t_c is None:
        t_c = stream.schedule.t_c
    obs = stream.bits

    def objective(u):
        return forward_log_likelihood(obs, TrafficParams(u=u, lambda_f=lambda_f_known),
                                      t_c, sensing)

    grid = np.arange(0.01, 1.0, 0.01)
    u, ll, ok = _refine_maximum(objective, grid, _BOUNDARY_PAD, 1.0 - _BOUNDARY_PAD)
    return _duty_estimate(u, "ml_u_noisy", converged=ok, log_likelihood=ll)


# ---------------------------------------------------------------------------
# rate estimation

def ml_estimate_lambda_f(counts: TransitionCounts, u_known: float,
                         t_c: float) -> Estimate:
    """Closed-form ML of the off-rate with the duty cycle known.

    The score equation in the per-step decay factor x is the quadratic
    A x^2 + B x + C = 0 with
        A = u(1-u)(N-1),
        B = -2A + (N-1) - (1-u) n0 - u n3,
        C = A - u n0 - (1-u) n3,
    and the admissible root gives lambda_f = -(u/t_c) log x.
    """
    if not 0.0 < u_known < 1.0:
        raise DomainError("u_known must lie in (0, 1)")
    if counts.n_samples < 2:
        raise DomainError("need at least two samples")
    if t_c <= 0.0:
        raise DomainError("t_c must be positive")
    u = u_known
    nm1 = counts.n_samples - 1
    A = (u - u * u) * nm1
    B = -2.0 * A + nm1 - (1.0 - u) * counts.n0 - u * counts.n3
    C = A - u * counts.n0 - (1.0 - u) * counts.n3
    disc = B * B - 4.0 * A * C
    if disc < 0.0:
        raise NoSolutionError(f"negative discriminant for counts {counts}")
    x = (-B + math.sqrt(disc)) / (2.0 * A)
    # absorb float noise at the boundaries before rejecting
    if 0.0 < x < 1.0 or abs(x) < 4e-16:
        x = min(max(x, 1e-300), 1.0 - 1e-16)
    else:
        raise NoSolutionError(
            f"score equation root {x!r} outside (0, 1); counts {counts} are degenerate")
    lam = -(u / t_c) * math.log(x)
    ll = log_likelihood_lambda_f(counts, lam, u, t_c)
    return Estimate(max(lam, 0.0), lam, "ml_lambda_f", True, ll)


def ml_estimate_lambda_n(counts: TransitionCounts, u_known: float,
                         t_c: float) -> Estimate:
    """ML of the on-rate: lambda_n = (1-u) lambda_f / u by invariance."""
    est = ml_estimate_lambda_f(counts, u_known, t_c)
    raw = (1.0 - u_known) * est.raw / u_known
    return Estimate(max(raw, 0.0), raw, "ml_lambda_n", est.converged, est.log_likelihood)


def ml_estimate_rate_noisy(stream: SampleStream, u_known: float,
                           t_c: float = None, sensing: SensingModel = None,
                           rate_range: tuple = (0.01, 10.0),
                           parameter: str = "lambda_f") -> Estimate:
    """ML of an on/off rate from sensed samples, duty cycle known.

    Maximizes the forward likelihood over the requested rate inside
    ``rate_range`` (geometric coarse grid, then bounded refinement).
    A perfect channel reduces to the closed-form estimators.
    """
    if parameter not in ("lambda_f", "lambda_n"):
        raise DomainError(f"unknown rate parameter {parameter!r}")
    if sensing is None:
        raise DomainError("a sensing model is required")
    if sensing.is_perfect:
        counts = count_transitions(stream)
        tcv = stream.schedule.t_c if t_c is None else t_c
        if parameter == "lambda_f":
            return ml_estimate_lambda_f(counts, u_known, tcv)
        return ml_estimate_lambda_n(counts, u_known, tcv)
    if not stream.sensed:
        raise DomainError("noisy ML expects a sensed stream")
    if not stream.schedule.is_uniform:
        raise DomainError("noisy ML assumes a uniform schedule")
    if t_c is None:
        t_c = stream.schedule.t_c
    lo, hi = rate_range
    if not 0.0 < lo < hi:
        raise DomainError(f"invalid rate search interval {rate_range}")
    obs = stream.bits

    def objective(lam):
        if parameter == "lambda_f":
            p = TrafficParams(u=u_known, lambda_f=lam)
        else:
            p = TrafficParams(u=u_known, lambda_n=lam)
        return forward_log_likelihood(obs, p, t_c, sensing)

    grid = np.geomspace(lo, hi, 101)
    lam, ll, ok = _refine_maximum(objective, grid, lo, hi)
    est_id = "ml_lambda_f_noisy" if parameter == "lambda_f" else "ml_lambda_n_noisy"
    return Estimate(max(lam, 0.0), lam, est_id, converged=ok, log_likelihood=ll)
