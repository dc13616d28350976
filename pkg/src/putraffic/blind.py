"""Blind estimation of the traffic parameters from live sampling.

Two adaptive procedures drive a sample source:

* Algorithm I estimates the duty cycle with the off-rate known.  It
  probes at a fixed interval until the state toggles, keeps probing
  until an initial sample budget is met, then stretches the interval
  to ``u_hat * alpha / lambda_f`` so each new sample buys a chosen
  fraction of the largest possible error decrease.  It stops on a
  sample budget, a window budget, or when the worst case (over all
  duty cycles) of the averaging MSE for the realized schedule drops
  below a target.

* Algorithm II estimates duty cycle and both rates jointly with
  uniform sampling.  It stops when the worst-case duty-cycle error
  (over all duty cycles, at the slowest admissible rate) and the rate
  CR bound (at the fastest admissible rate, for whichever rate
  diverges slower at the current duty-cycle estimate) both meet their
  targets.

Sources are pluggable: a trajectory-backed simulator, a Markov
stepper that draws each sample from the exact transition law, or a
replay of a recorded stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import substream
from .accuracy import crb_lambda_f
from .errors import DomainError, PuTrafficError, SourceExhaustedError
from .traffic import SampleStream, SensingModel, TrafficParams, transition_prob

SAFETY_CAP = 10 ** 7
_U_GRID = np.arange(0.01, 0.995, 0.01)  # worst-case grid; endpoints excluded


class SafetyCapExceeded(PuTrafficError):
    """An algorithm failed to terminate within the global sample cap."""


# ---------------------------------------------------------------------------
# sample sources

class TrajectorySampler:
    """Samples a simulated realization, extending it on demand."""

    def __init__(self, params: TrafficParams, seed, sensing: SensingModel = None):
        self.params = params
        self.sensing = sensing
        proc_ss, sense_ss = np.random.SeedSequence(seed).spawn(2)
        self._rng = np.random.default_rng(proc_ss)
        self._sense_rng = np.random.default_rng(sense_ss)
        self.time = 0.0
        self._state = 1 if self._rng.random() < params.u else 0
        self._next_switch = self._draw_sojourn()

    def _draw_sojourn(self) -> float:
        rate = self.params.lambda_n if self._state == 1 else self.params.lambda_f
        return -math.log1p(-self._rng.random()) / rate

    def next_sample(self, dt: float):
        if dt < 0.0:
            raise DomainError("cannot sample in the past")
        self.time += dt
        while self._next_switch <= self.time:
            self._state ^= 1
            self._next_switch += self._draw_sojourn()
        bit = self._state
        if self.sensing is not None:
            p_flip = self.sensing.p_m if bit == 1 else self.sensing.p_f
            if self._sense_rng.random() < p_flip:
                bit ^= 1
        return self.time, bit


class MarkovSampler:
    """Samples the chain restricted to the sample instants.

    The sampled bits of the on/off process form a Markov chain in the
    requested offsets, so drawing each bit from the two-state
    transition law reproduces the exact joint distribution of any
    sampling pattern without simulating the continuous path.  One
    uniform is consumed per sample (the first decides the stationary
    initial state), which the batched runners replicate draw for draw.
    """

    def __init__(self, params: TrafficParams, seed=None, sensing: SensingModel = None,
                 rng: np.random.Generator = None):
        self.params = params
        self.sensing = sensing
        self._rng = rng if rng is not None else np.random.default_rng(seed)
        self._sense_rng = None
        if sensing is not None:
            self._sense_rng = np.random.default_rng(
                np.random.SeedSequence(seed).spawn(1)[0] if seed is not None else None)
        self.time = None
        self._state = None

    def next_sample(self, dt: float):
        if self._state is None:
            self.time = 0.0
            self._state = 1 if self._rng.random() < self.params.u else 0
        else:
            if dt < 0.0:
                raise DomainError("cannot sample in the past")
            self.time += dt
            p_on = transition_prob(self._state, 1, dt, self.params)
            self._state = 1 if self._rng.random() < p_on else 0
        bit = self._state
        if self.sensing is not None:
            p_flip = self.sensing.p_m if bit == 1 else self.sensing.p_f
            if self._sense_rng.random() < p_flip:
                bit ^= 1
        return self.time, bit


class ReplaySampler:
    """Replays a recorded stream; the requested offsets are ignored."""

    def __init__(self, stream: SampleStream):
        self._times = stream.schedule.sample_times
        self._bits = stream.values
        self._idx = 0

    def next_sample(self, dt: float):
        if self._idx >= len(self._bits):
            raise SourceExhaustedError("replayed stream has no more samples")
        out = (float(self._times[self._idx]), int(self._bits[self._idx]))
        self._idx += 1
        return out


def simulated_source(params: TrafficParams, seed, sensing: SensingModel = None,
                     kind: str = "trajectory"):
    """Build a live sample source of the requested kind."""
    if kind == "trajectory":
        return TrajectorySampler(params, seed, sensing)
    if kind == "markov":
        return MarkovSampler(params, seed, sensing)
    raise DomainError(f"unknown source kind {kind!r}")


# ---------------------------------------------------------------------------
# configs and traces

@dataclass(frozen=True)
class AlgoIConfig:
    """Knobs of the adaptive-interval duty-cycle estimator."""

    t0: float            # initial inter-sample time, s
    n0: int              # initial sample budget at spacing t0
    alpha: float         # interval stretch: next dt = u_hat * alpha / lambda_f
    n_th: int = None     # stop at this many samples
    t_th: float = None   # stop once the window reaches this length, s
    v_th: float = None   # stop once the worst-case MSE drops below this

    def __post_init__(self):
        if self.t0 <= 0.0 or self.n0 < 1 or self.alpha <= 0.0:
            raise DomainError("need t0 > 0, n0 >= 1, alpha > 0")
        if self.n_th is None and self.t_th is None and self.v_th is None:
            raise DomainError("at least one termination criterion is required")


@dataclass(frozen=True)
class AlgoIIConfig:
    """Knobs of the joint duty-cycle and rate estimator."""

    t0: float              # uniform inter-sample time, s
    v_u_th: float          # target MSE in the duty cycle
    v_lambda_th: float     # target MSE in the selected rate
    lambda_min: float      # slowest admissible rate
    lambda_max: float      # fastest admissible rate

    def __post_init__(self):
        if self.t0 <= 0.0 or self.v_u_th <= 0.0 or self.v_lambda_th <= 0.0:
            raise DomainError("need t0 > 0 and positive error targets")
        if not 0.0 < self.lambda_min < self.lambda_max:
            raise DomainError("need 0 < lambda_min < lambda_max")


@dataclass
class EstimationTrace:
    """Per-sample record of one algorithm run."""

    sample_times: list = field(default_factory=list)
    samples: list = field(default_factory=list)
    estimates: list = field(default_factory=list)  # dicts, one per sample
    terminated_by: str = ""
    total_window: float = 0.0
    total_samples: int = 0
    toggle_samples: int = 0        # samples spent waiting for the first toggle
    window_after_toggle: float = 0.0

    def to_csv(self, path) -> None:
        lines = ["idx,time,bit,u_hat,lf_hat,ln_hat,worst_mse_u,worst_mse_rate"]
        for i, (t, b, est) in enumerate(
                zip(self.sample_times, self.samples, self.estimates), start=1):
            cells = [str(i), repr(t), str(b)]
            for key in ("u_hat", "lf_hat", "ln_hat", "worst_mse_u", "worst_mse_rate"):
                v = est.get(key)
                cells.append("" if v is None else repr(v))
            lines.append(",".join(cells))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


class _WorstCaseDutyTracker:
    """Worst case over duty cycles of the averaging MSE on a live schedule.

    Maintains, per grid duty cycle, the running pair sum of decay
    factors so each appended interval costs O(grid).
    """

    def __init__(self, lambda_f: float, grid: np.ndarray = _U_GRID):
        self.lambda_f = lambda_f
        self.grid = grid
        self._rate = lambda_f / grid
        self._trailing = np.zeros(grid.size)
        self._pairs = np.zeros(grid.size)
        self.n = 0

    def append(self, dt: float) -> None:
        if self.n == 0:
            self.n = 1
            return
        self._trailing = (self._trailing + 1.0) * np.exp(-self._rate * dt)
        self._pairs += self._trailing
        self.n += 1

    def worst(self) -> float:
        g = self.grid
        v = g * (1.0 - g) / self.n + 2.0 * g * (1.0 - g) * self._pairs / self.n ** 2
        return float(v.max())


def _worst_duty_mse_uniform(n: int, t_c: float, lambda_f: float,
                            grid: np.ndarray = _U_GRID) -> float:
    """Worst case over duty cycles of the uniform averaging MSE."""
    if n < 2:
        return 0.25
    x = lambda_f * t_c / grid
    g = np.exp(-x)
    one_minus_g = -np.expm1(-x)
    v = (2.0 * grid * (1.0 - grid) * g * (g ** n - n * (g - 1.0) - 1.0)
         / (n * n * one_minus_g ** 2) + grid * (1.0 - grid) / n)
    return float(v.max())


def _rate_bound_at(u_hat: float, n: int, t_c: float, lambda_max: float) -> float:
    """CR bound on the branch-selected rate at the current duty estimate.

    Rates below one half of the duty range are judged through the
    off-rate bound, above through the on-rate bound; both evaluate at
    the fastest admissible rate, where the bound is largest.
    """
    if n < 2:
        return math.inf
    uh = min(max(u_hat, 1e-3), 1.0 - 1e-3)
    if u_hat <= 0.5:
        p = TrafficParams(u=uh, lambda_f=lambda_max)
        return crb_lambda_f(p, n, t_c).mse
    # on-rate bound at lambda_n = lambda_max, mirrored through the
    # state relabeling symmetry
    p = TrafficParams(u=1.0 - uh, lambda_f=lambda_max)
    return crb_lambda_f(p, n, t_c).mse


# ---------------------------------------------------------------------------
# Algorithm I

def run_algorithm_I(source, cfg: AlgoIConfig, lambda_f_known: float) -> EstimationTrace:
    """Adaptive-interval blind estimation of the duty cycle.

    Follows the three sampling phases exactly: fixed spacing until the
    sampled state toggles, fixed spacing until ``n0`` samples, then
    ``u_hat * alpha / lambda_f``.  Budget checks run after every
    sample; the target-MSE check runs in the adaptive phase.
    """
    if lambda_f_known <= 0.0:
        raise DomainError("lambda_f_known must be positive")
    trace = EstimationTrace()
    tracker = _WorstCaseDutyTracker(lambda_f_known) if cfg.v_th is not None else None
    ones = 0
    n = 0
    t_start = None

    def take(dt: float):
        nonlocal ones, n
        t, bit = source.next_sample(dt)
        if n >= SAFETY_CAP:
            raise SafetyCapExceeded(f"no termination within {SAFETY_CAP} samples")
        n += 1
        ones += bit
        if tracker is not None:
            tracker.append(dt)
        trace.sample_times.append(t)
        trace.samples.append(bit)
        return t, bit

    def window() -> float:
        return trace.sample_times[-1] - t_start

    def record(worst=None):
        trace.estimates.append({"u_hat": ones / n, "worst_mse_u": worst})

    def budget_hit() -> str:
        if cfg.n_th is not None and n >= cfg.n_th:
            return "max_samples"
        if cfg.t_th is not None and window() >= cfg.t_th:
            return "max_window"
        return ""

    # first sample, then fixed-interval probing until the state toggles
    t, bit = take(0.0)
    t_start = t
    record()
    reason = budget_hit()
    while not reason and (ones == 0 or ones == n):
        take(cfg.t0)
        record()
        reason = budget_hit()
    # fixed-interval probing until the initial budget
    while not reason and n < cfg.n0:
        take(cfg.t0)
        record()
        reason = budget_hit()
    # adaptive phase
    while not reason:
        if cfg.v_th is not None:
            worst = tracker.worst()
            if trace.estimates:
                trace.estimates[-1]["worst_mse_u"] = worst
            if worst < cfg.v_th:
                reason = "target_mse"
                break
        take(ones / n * cfg.alpha / lambda_f_known)
        record()
        reason = budget_hit()
    trace.terminated_by = reason
    trace.total_samples = n
    trace.total_window = window()
    trace.toggle_samples = next(
        (i + 1 for i, e in enumerate(trace.estimates) if 0.0 < e["u_hat"] < 1.0), n)
    trace.window_after_toggle = (trace.sample_times[-1]
                                 - trace.sample_times[trace.toggle_samples - 1])
    return trace


# ---------------------------------------------------------------------------
# Algorithm II

def run_algorithm_II(source, cfg: AlgoIIConfig) -> EstimationTrace:
    """Joint blind estimation of duty cycle and rates, uniform sampling.

    Stops at the first sample where the worst-case duty-cycle MSE (at
    the slowest admissible rate) and the branch-selected rate CR bound
    (at the fastest) are both below target.  Ties at a duty estimate
    of exactly one half take the off-rate branch.
    """
    from .estimators import TransitionCounts, ml_estimate_lambda_f, ml_estimate_lambda_n
    from .errors import NoSolutionError

    trace = EstimationTrace()
    ones = 0
    n = 0
    trans = [0, 0, 0, 0]  # 00, 01, 10, 11
    prev_bit = None
    t_start = None

    def take():
        nonlocal ones, n, prev_bit
        t, bit = source.next_sample(0.0 if n == 0 else cfg.t0)
        if n >= SAFETY_CAP:
            raise SafetyCapExceeded(f"no termination within {SAFETY_CAP} samples")
        n += 1
        ones += bit
        if prev_bit is not None:
            trans[2 * prev_bit + bit] += 1
        prev_bit = bit
        trace.sample_times.append(t)
        trace.samples.append(bit)
        return t, bit

    t, _ = take()
    t_start = t
    trace.estimates.append({"u_hat": ones / n})
    while ones == 0 or ones == n:
        take()
        trace.estimates.append({"u_hat": ones / n})

    while True:
        u_hat = ones / n
        worst_u = _worst_duty_mse_uniform(n, cfg.t0, cfg.lambda_min)
        worst_rate = _rate_bound_at(u_hat, n, cfg.t0, cfg.lambda_max)
        lf_hat = ln_hat = None
        counts = TransitionCounts(trans[0], trans[1], trans[2], trans[3],
                                  trace.samples[0])
        try:
            lf_hat = ml_estimate_lambda_f(counts, u_hat, cfg.t0).raw
            ln_hat = ml_estimate_lambda_n(counts, u_hat, cfg.t0).raw
        except (NoSolutionError, DomainError):
            pass
        trace.estimates[-1].update(
            u_hat=u_hat, lf_hat=lf_hat, ln_hat=ln_hat,
            worst_mse_u=worst_u, worst_mse_rate=worst_rate)
        if worst_u < cfg.v_u_th and worst_rate < cfg.v_lambda_th:
            trace.terminated_by = "target_mse"
            break
        take()
        trace.estimates.append({"u_hat": ones / n})

    trace.total_samples = n
    trace.total_window = trace.sample_times[-1] - t_start
    trace.toggle_samples = next(
        (i + 1 for i, e in enumerate(trace.estimates) if 0.0 < e["u_hat"] < 1.0), n)
    trace.window_after_toggle = (trace.sample_times[-1]
                                 - trace.sample_times[trace.toggle_samples - 1])
    return trace


# ---------------------------------------------------------------------------
# batched runners
#
# Lockstep-vectorized execution of many independent runs.  Each run
# draws from its own counter-keyed substream in the same order as a
# MarkovSampler seeded with that key, so a batched run reproduces the
# per-run path exactly whatever the batch layout.

_REASONS = {"target_mse": 0, "max_samples": 1, "max_window": 2}


class _SubstreamBank:
    """One uniform per run per call, drawn from per-run streams in chunks."""

    def __init__(self, base_seed, grid_idx: int, runs: int, chunk: int = 512):
        self._gens = [substream(base_seed, grid_idx, r) for r in range(runs)]
        self._chunk = chunk
        self._buf = np.empty((runs, 0))
        self._pos = 0

    def next_column(self) -> np.ndarray:
        if self._pos >= self._buf.shape[1]:
            self._buf = np.stack([g.random(self._chunk) for g in self._gens])
            self._pos = 0
        col = self._buf[:, self._pos]
        self._pos += 1
        return col


def run_algorithm_I_batch(params: TrafficParams, cfg: AlgoIConfig,
                          lambda_f_known: float, runs: int, base_seed,
                          grid_idx: int = 0) -> dict:
    """Run many independent Algorithm I instances in lockstep.

    Returns final per-run arrays: u_hat, n_samples, window, reason
    (0 target_mse, 1 max_samples, 2 max_window).  Exactly equivalent
    to run_algorithm_I driven by a MarkovSampler on the same substream.
    """
    u, lf = params.u, params.lambda_f
    bank = _SubstreamBank(base_seed, grid_idx, runs)
    active = np.ones(runs, bool)
    z = np.zeros(runs, np.int8)
    first = np.zeros(runs, np.int8)
    toggled = np.zeros(runs, bool)
    ones = np.zeros(runs, np.int64)
    window = np.zeros(runs)
    out_u = np.full(runs, np.nan)
    out_n = np.zeros(runs, np.int64)
    out_w = np.full(runs, np.nan)
    out_r = np.full(runs, -1, np.int8)
    track = cfg.v_th is not None
    if track:
        rate_grid = lambda_f_known / _U_GRID
        trailing = np.zeros((runs, _U_GRID.size))
        pairs = np.zeros((runs, _U_GRID.size))
    n_count = 0

    def finish(mask, reason):
        idx = np.flatnonzero(active) if mask is None else mask
        out_u[idx] = ones[idx] / n_count
        out_n[idx] = n_count
        out_w[idx] = window[idx]
        out_r[idx] = _REASONS[reason]
        active[idx] = False

    while active.any():
        if n_count >= SAFETY_CAP:
            raise SafetyCapExceeded(f"no termination within {SAFETY_CAP} samples")
        idx = np.flatnonzero(active)
        if n_count > 0 and track:
            phase3 = toggled[idx] & (n_count >= cfg.n0)
            if phase3.any():
                g = _U_GRID
                v = (g * (1.0 - g) / n_count
                     + 2.0 * g * (1.0 - g) * pairs[idx] / n_count ** 2)
                hit = phase3 & (v.max(axis=1) < cfg.v_th)
                if hit.any():
                    finish(idx[hit], "target_mse")
                    idx = idx[~hit]
                    if idx.size == 0:
                        continue
        u_col = bank.next_column()[idx]
        if n_count == 0:
            z[idx] = (u_col < u).astype(np.int8)
            first[idx] = z[idx]
        else:
            phase3 = toggled[idx] & (n_count >= cfg.n0)
            dt = np.where(phase3, ones[idx] / n_count * cfg.alpha / lambda_f_known,
                          cfg.t0)
            g = np.exp(-lf * dt / u)
            p_on = np.where(z[idx] == 1, u + (1.0 - u) * g,
                            1.0 - ((1.0 - u) + u * g))
            z[idx] = (u_col < p_on).astype(np.int8)
            toggled[idx] |= z[idx] != first[idx]
            window[idx] += dt
            if track:
                trailing[idx] = (trailing[idx] + 1.0) * np.exp(
                    -dt[:, None] * rate_grid[None, :])
                pairs[idx] += trailing[idx]
        ones[idx] += z[idx]
        n_count += 1
        if cfg.n_th is not None and n_count >= cfg.n_th:
            finish(idx, "max_samples")
            continue
        if cfg.t_th is not None:
            over = window[idx] >= cfg.t_th
            if over.any():
                finish(idx[over], "max_window")
    return {"u_hat": out_u, "n_samples": out_n, "window": out_w, "reason": out_r}


def _rate_bound_vector(u_hat: np.ndarray, n: int, t_c: float,
                       lambda_max: float) -> np.ndarray:
    """Vectorized branch-selected rate CR bound at the duty estimates."""
    uh = np.clip(np.where(u_hat <= 0.5, u_hat, 1.0 - u_hat), 1e-3, 1.0 - 1e-3)
    g = np.exp(-lambda_max * t_c / uh)
    return (uh * (1.0 - g) * (g + uh * (1.0 - g) ** 2 * (1.0 - uh))
            / ((g * t_c) ** 2 * (1.0 - uh) * (1.0 + g) * (n - 1)))


def run_algorithm_II_batch(params: TrafficParams, cfg: AlgoIIConfig, runs: int,
                           base_seed, grid_idx: int = 0) -> dict:
    """Run many independent Algorithm II instances in lockstep.

    The duty-cycle bound depends only on the sample count, so its
    crossing is found once; runs then terminate at the first count
    past it where their branch-selected rate bound also meets target.
    Returns u_hat, lf_hat, ln_hat, n_samples, window per run.
    """
    u, lf = params.u, params.lambda_f
    t0 = cfg.t0
    g0 = math.exp(-lf * t0 / u)
    p_on0 = 1.0 - ((1.0 - u) + u * g0)
    p_on1 = u + (1.0 - u) * g0

    lo, hi = 2, 4
    while _worst_duty_mse_uniform(hi, t0, cfg.lambda_min) >= cfg.v_u_th:
        hi *= 2
        if hi > SAFETY_CAP:
            raise SafetyCapExceeded("duty-cycle target unreachable within the cap")
    lo = hi // 2
    while lo < hi:
        mid = (lo + hi) // 2
        if _worst_duty_mse_uniform(mid, t0, cfg.lambda_min) < cfg.v_u_th:
            hi = mid
        else:
            lo = mid + 1
    n_duty = max(lo, 2)

    bank = _SubstreamBank(base_seed, grid_idx, runs)
    z = np.zeros(runs, np.int8)
    first = np.zeros(runs, np.int8)
    toggled = np.zeros(runs, bool)
    ones = np.zeros(runs, np.int64)
    trans00 = np.zeros(runs, np.int64)
    trans11 = np.zeros(runs, np.int64)
    active = np.ones(runs, bool)
    out_u = np.full(runs, np.nan)
    out_n = np.zeros(runs, np.int64)
    n_count = 0

    def step(idx):
        nonlocal n_count
        u_col = bank.next_column()[idx]
        if n_count == 0:
            z[idx] = (u_col < u).astype(np.int8)
            first[idx] = z[idx]
        else:
            p_on = np.where(z[idx] == 1, p_on1, p_on0)
            znew = (u_col < p_on).astype(np.int8)
            trans00[idx] += ((z[idx] == 0) & (znew == 0))
            trans11[idx] += ((z[idx] == 1) & (znew == 1))
            z[idx] = znew
            toggled[idx] |= znew != first[idx]
        ones[idx] += z[idx]
        n_count += 1

    all_idx = np.arange(runs)
    while n_count < n_duty:
        step(all_idx)
    while active.any():
        if n_count >= SAFETY_CAP:
            raise SafetyCapExceeded(f"no termination within {SAFETY_CAP} samples")
        idx = np.flatnonzero(active)
        u_hat = ones[idx] / n_count
        rate_ok = _rate_bound_vector(u_hat, n_count, t0, cfg.lambda_max) < cfg.v_lambda_th
        done = toggled[idx] & rate_ok
        if done.any():
            sel = idx[done]
            out_u[sel] = ones[sel] / n_count
            out_n[sel] = n_count
            active[sel] = False
            idx = idx[~done]
        if idx.size:
            step(idx)

    # branch-selected rate estimates from the final counts
    n_arr = out_n.astype(float)
    uh = out_u
    a = (uh - uh * uh) * (n_arr - 1)
    b = -2.0 * a + (n_arr - 1) - (1.0 - uh) * trans00 - uh * trans11
    c = a - uh * trans00 - (1.0 - uh) * trans11
    with np.errstate(invalid="ignore", divide="ignore"):
        disc = b * b - 4.0 * a * c
        x = (-b + np.sqrt(np.maximum(disc, 0.0))) / (2.0 * a)
        valid = (disc >= 0.0) & (x > 0.0) & (x < 1.0)
        lf_hat = np.where(valid, -(uh / t0) * np.log(np.clip(x, 1e-300, 1.0)), np.nan)
        ln_hat = np.where(valid, (1.0 - uh) * lf_hat / uh, np.nan)
    return {
        "u_hat": out_u, "n_samples": out_n, "window": (out_n - 1) * t0,
        "lf_hat": lf_hat, "ln_hat": ln_hat, "n_duty": n_duty,
    }
