"""On/off channel-occupancy process model.

The channel alternates between off (0) and on (1) with independent
exponentially distributed sojourns: off-times have rate ``lambda_f``
(mean off-time ``1/lambda_f``), on-times have rate ``lambda_n``.  The
long-run fraction of time on (the duty cycle) is
``u = lambda_f / (lambda_f + lambda_n)``, and the state seen at two
instants ``t`` apart decorrelates as ``exp(-lambda_f t / u)``.

This module holds the ground-truth side of the toolkit: parameters,
state transition probabilities, stationary sample correlations,
trajectory generation, schedule-driven sampling, sensing-error
corruption, and a line-oriented text serialization used by the CLI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, UndefinedEstimatorError

_REL_TOL = 1e-12


@dataclass(frozen=True)
class TrafficParams:
    """Ground-truth process parameters.

    Construct from any two of (u, lambda_f, lambda_n); the third is
    derived from u = lambda_f / (lambda_f + lambda_n).  Supplying all
    three is allowed if they are consistent to 1e-12 relative.
    """

    u: float = None  # duty cycle, in (0, 1)
    lambda_f: float = None  # off-time rate, 1/s
    lambda_n: float = None  # on-time rate, 1/s

    def __post_init__(self):
        u, lf, ln = self.u, self.lambda_f, self.lambda_n
        given = sum(x is not None for x in (u, lf, ln))
        if given < 2:
            raise DomainError("need at least two of (u, lambda_f, lambda_n)")
        if u is None:
            u = lf / (lf + ln)
        elif lf is None:
            if not 0.0 < u < 1.0:
                raise DomainError(f"duty cycle must lie in (0, 1), got {u}")
            lf = u * ln / (1.0 - u)
        elif ln is None:
            if not 0.0 < u < 1.0:
                raise DomainError(f"duty cycle must lie in (0, 1), got {u}")
            ln = lf * (1.0 - u) / u
        else:
            expected = lf / (lf + ln)
            if abs(u - expected) > _REL_TOL * max(abs(u), abs(expected)):
                raise DomainError(
                    f"inconsistent parameters: u={u} but lambda_f/(lambda_f+lambda_n)={expected}"
                )
        if not 0.0 < u < 1.0:
            raise DomainError(f"duty cycle must lie in (0, 1), got {u}")
        if lf <= 0.0 or ln <= 0.0:
            raise DomainError(f"rates must be positive, got lambda_f={lf}, lambda_n={ln}")
        object.__setattr__(self, "u", float(u))
        object.__setattr__(self, "lambda_f", float(lf))
        object.__setattr__(self, "lambda_n", float(ln))

    @property
    def mean_off_time(self) -> float:
        return 1.0 / self.lambda_f

    @property
    def mean_on_time(self) -> float:
        return 1.0 / self.lambda_n

    @property
    def relaxation_rate(self) -> float:
        """Total switching rate lambda_f + lambda_n == lambda_f / u."""
        return self.lambda_f + self.lambda_n

    def decay(self, t) -> float:
        """Correlation decay factor exp(-lambda_f t / u) for time offset t."""
        return np.exp(-self.lambda_f * np.asarray(t, dtype=float) / self.u)


@dataclass(frozen=True)
class SampleSchedule:
    """A sampling schedule given by inter-sample times T_1..T_{N-1}.

    The first sample is taken at ``start_offset`` (default 0); sample
    n+1 follows sample n after ``inter_sample_times[n-1]`` seconds.
    Zero entries encode coinciding samples, i.e. a sample counted with
    integer weight > 1.
    """

    inter_sample_times: tuple = ()
    start_offset: float = 0.0

    def __post_init__(self):
        ts = tuple(float(t) for t in self.inter_sample_times)
        if any(not math.isfinite(t) or t < 0.0 for t in ts):
            raise DomainError("inter-sample times must be finite and >= 0")
        if not math.isfinite(self.start_offset) or self.start_offset < 0.0:
            raise DomainError("start_offset must be finite and >= 0")
        object.__setattr__(self, "inter_sample_times", ts)
        object.__setattr__(self, "start_offset", float(self.start_offset))

    @classmethod
    def uniform(cls, n: int, t_window: float = None, t_c: float = None,
                start_offset: float = 0.0) -> "SampleSchedule":
        """Uniform schedule of n samples from a window length or a spacing."""
        if n < 1:
            raise DomainError("need at least one sample")
        if (t_window is None) == (t_c is None):
            raise DomainError("give exactly one of t_window or t_c")
        if n == 1:
            return cls((), start_offset)
        if t_c is None:
            t_c = t_window / (n - 1)
        return cls((t_c,) * (n - 1), start_offset)

    @property
    def n_samples(self) -> int:
        return len(self.inter_sample_times) + 1

    @property
    def window(self) -> float:
        """Total observation window length (first to last sample)."""
        return float(sum(self.inter_sample_times))

    @property
    def sample_times(self) -> np.ndarray:
        """Absolute sample times, length n_samples."""
        return self.start_offset + np.concatenate(
            [[0.0], np.cumsum(self.inter_sample_times)]
        )

    @property
    def is_uniform(self) -> bool:
        ts = self.inter_sample_times
        if len(ts) <= 1:
            return True
        t0 = ts[0]
        return all(abs(t - t0) <= _REL_TOL * max(abs(t), abs(t0)) for t in ts)

    @property
    def t_c(self) -> float:
        """Constant inter-sample time of a uniform schedule."""
        if not self.is_uniform:
            raise DomainError("schedule is not uniform")
        if len(self.inter_sample_times) == 0:
            raise DomainError("single-sample schedule has no spacing")
        return self.inter_sample_times[0]


@dataclass(frozen=True)
class SampleStream:
    """Binary occupancy observations aligned to a schedule."""

    values: tuple  # bits z_1..z_N (true) or sensed readings
    schedule: SampleSchedule
    sensed: bool = False  # True once a sensing-error channel was applied

    def __post_init__(self):
        vals = tuple(int(v) for v in self.values)
        if any(v not in (0, 1) for v in vals):
            raise DomainError("stream values must be bits")
        if len(vals) != self.schedule.n_samples:
            raise DomainError(
                f"stream length {len(vals)} does not match schedule "
                f"sample count {self.schedule.n_samples}"
            )
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def bits(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.int8)


@dataclass(frozen=True)
class SensingModel:
    """Per-sample independent sensing error channel."""

    p_f: float = 0.0  # false alarm: reads 1 when the channel is 0
    p_m: float = 0.0  # mis-detection: reads 0 when the channel is 1

    def __post_init__(self):
        for name, p in (("p_f", self.p_f), ("p_m", self.p_m)):
            if not 0.0 <= p <= 1.0:
                raise DomainError(f"{name} must lie in [0, 1], got {p}")

    @property
    def is_perfect(self) -> bool:
        return self.p_f == 0.0 and self.p_m == 0.0

    @property
    def bias_denominator(self) -> float:
        """1 - p_f - p_m, the slope relating E[sensed bit] to u."""
        return 1.0 - self.p_f - self.p_m

    def require_invertible(self) -> float:
        """Return the bias denominator, rejecting p_f + p_m == 1."""
        d = self.bias_denominator
        if abs(d) < 1e-12:
            raise UndefinedEstimatorError(
                "bias correction undefined: p_f + p_m = 1 makes the sensed "
                "mean independent of the duty cycle"
            )
        return d


PERFECT_SENSING = SensingModel(0.0, 0.0)


@dataclass(frozen=True)
class Trajectory:
    """A continuous realization stored as its switch epochs.

    ``switch_times`` are the strictly increasing instants in
    (0, horizon) at which the state flips; the state on [0, first
    switch) is ``initial_state``.  Event storage keeps sampling at
    arbitrary times exact.
    """

    initial_state: int
    switch_times: np.ndarray
    horizon: float

    def __post_init__(self):
        st = np.asarray(self.switch_times, dtype=float)
        if st.ndim != 1:
            raise DomainError("switch_times must be one-dimensional")
        if st.size and (np.any(np.diff(st) <= 0.0) or st[0] <= 0.0 or st[-1] >= self.horizon):
            raise DomainError("switch times must be strictly increasing within (0, horizon)")
        if self.initial_state not in (0, 1):
            raise DomainError("initial_state must be a bit")
        if not self.horizon > 0.0:
            raise DomainError("horizon must be positive")
        st.setflags(write=False)
        object.__setattr__(self, "switch_times", st)
        object.__setattr__(self, "horizon", float(self.horizon))

    def states_at(self, times) -> np.ndarray:
        """State at each requested time (switches at t count as done)."""
        times = np.asarray(times, dtype=float)
        if times.size and (times.min() < 0.0 or times.max() > self.horizon):
            raise DomainError("query times must lie within [0, horizon]")
        flips = np.searchsorted(self.switch_times, times, side="right")
        return ((self.initial_state + flips) % 2).astype(np.int8)

    def state_at(self, t: float) -> int:
        return int(self.states_at([t])[0])

    def time_on(self) -> float:
        """Total time spent in state 1 over [0, horizon]."""
        edges = np.concatenate([[0.0], self.switch_times, [self.horizon]])
        durations = np.diff(edges)
        states = (self.initial_state + np.arange(durations.size)) % 2
        return float(durations[states == 1].sum())


def transition_prob(x: int, y: int, t: float, params: TrafficParams) -> float:
    """Probability that the state is y a time t after it was x.

    The two rows each sum to one exactly: the off->on and on->off
    entries are computed as complements.
    """
    if x not in (0, 1) or y not in (0, 1):
        raise DomainError("states must be bits")
    t = float(t)
    if not t >= 0.0:
        raise DomainError(f"time offset must be >= 0, got {t}")
    g = math.exp(-params.lambda_f * t / params.u)
    if x == 0:
        p00 = (1.0 - params.u) + params.u * g
        return p00 if y == 0 else 1.0 - p00
    p11 = params.u + (1.0 - params.u) * g
    return p11 if y == 1 else 1.0 - p11


def transition_matrix(t, params: TrafficParams) -> np.ndarray:
    """2x2 transition matrix (rows: from-state, cols: to-state).

    Accepts a scalar or an array of time offsets; offsets are stacked
    on leading axes.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0):
        raise DomainError("time offsets must be >= 0")
    g = np.exp(-params.lambda_f * t / params.u)
    p00 = (1.0 - params.u) + params.u * g
    p11 = params.u + (1.0 - params.u) * g
    out = np.empty(t.shape + (2, 2))
    out[..., 0, 0] = p00
    out[..., 0, 1] = 1.0 - p00
    out[..., 1, 1] = p11
    out[..., 1, 0] = 1.0 - p11
    return out


def stationary_correlation(j, params: TrafficParams, t_c: float):
    """E[z_i z_{i+j}] for stationary samples spaced t_c seconds apart.

    Equals u at lag 0 and decays geometrically to u^2:
    R[j] = u * g^j + u^2 * (1 - g^j) with g = exp(-lambda_f t_c / u).
    """
    if t_c <= 0.0:
        raise DomainError("t_c must be positive")
    j = np.asarray(j)
    if np.any(j < 0):
        raise DomainError("lag must be >= 0")
    u = params.u
    gj = np.exp(-params.lambda_f * t_c * j / u)
    out = u * gj + u * u * (1.0 - gj)
    return float(out) if out.ndim == 0 else out


def sensed_correlation(j, params: TrafficParams, t_c: float, sensing: SensingModel):
    """E[sensed_i sensed_{i+j}] with independent per-sample errors.

    Obtained from the true-sample correlation by conditioning on the
    four error outcomes of the pair; reduces to the true correlation
    when sensing is perfect.
    """
    r = stationary_correlation(j, params, t_c)
    c = 1.0 - sensing.p_m - sensing.p_f
    return r * c * c + 2.0 * params.u * sensing.p_f * c + sensing.p_f ** 2


def generate_trajectory(params: TrafficParams, horizon: float, seed) -> Trajectory:
    """Draw a stationary realization on [0, horizon].

    The initial state is Bernoulli(u) (stationary start) and sojourns
    are exponential via inverse CDF on a seeded uniform generator, so
    the result is a pure function of (params, horizon, seed).
    """
    if not horizon > 0.0:
        raise DomainError("horizon must be positive")
    rng = np.random.default_rng(seed)
    state = 1 if rng.random() < params.u else 0
    initial = state
    rates = (params.lambda_f, params.lambda_n)  # rate of leaving state 0 / state 1
    switches = []
    t = 0.0
    while True:
        # inverse-CDF exponential; log1p keeps tiny uniforms exact
        t += -math.log1p(-rng.random()) / rates[state]
        if t >= horizon:
            break
        switches.append(t)
        state ^= 1
    return Trajectory(initial, np.asarray(switches), horizon)


def sample_trajectory(traj: Trajectory, schedule: SampleSchedule) -> SampleStream:
    """Read the trajectory at the schedule's sample times."""
    times = schedule.sample_times
    if times[-1] > traj.horizon:
        raise DomainError(
            f"schedule reaches {times[-1]:g} s beyond the trajectory horizon {traj.horizon:g} s"
        )
    return SampleStream(tuple(traj.states_at(times)), schedule, sensed=False)


def corrupt(stream: SampleStream, sensing: SensingModel, seed) -> SampleStream:
    """Apply the sensing-error channel to a true stream.

    Each 1 flips with probability p_m and each 0 with probability p_f,
    independently; deterministic given the seed.
    """
    if stream.sensed:
        raise DomainError("stream already went through a sensing channel")
    rng = np.random.default_rng(seed)
    bits = stream.bits
    flips = rng.random(bits.size)
    p_flip = np.where(bits == 1, sensing.p_m, sensing.p_f)
    out = np.where(flips < p_flip, 1 - bits, bits)
    return SampleStream(tuple(int(b) for b in out), stream.schedule, sensed=True)


# ---------------------------------------------------------------------------
# line-oriented text serialization (used by the harness CLI)

def _format_header(kind: str, meta: dict) -> list:
    lines = [f"# putraffic {kind} v1"]
    for k, v in meta.items():
        lines.append(f"# {k}={v}")
    return lines


def _parse_header(lines: Iterable[str]) -> dict:
    meta = {}
    for line in lines:
        body = line[1:].strip()
        if "=" not in body:
            continue
        k, v = body.split("=", 1)
        meta[k.strip()] = v.strip()
    return meta


def save_trajectory(traj: Trajectory, path, params: TrafficParams = None, seed=None) -> None:
    """Write `time,state` rows; the first row carries the initial state."""
    meta = {"horizon": repr(traj.horizon), "initial_state": traj.initial_state}
    if params is not None:
        meta.update(u=repr(params.u), lambda_f=repr(params.lambda_f),
                    lambda_n=repr(params.lambda_n))
    if seed is not None:
        meta["seed"] = seed
    lines = _format_header("trajectory", meta)
    state = traj.initial_state
    lines.append(f"0.0,{state}")
    for t in traj.switch_times:
        state ^= 1
        lines.append(f"{t!r},{state}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_trajectory(path) -> tuple:
    """Read a trajectory file; returns (Trajectory, header metadata)."""
    text = Path(path).read_text().splitlines()
    meta = _parse_header(l for l in text if l.startswith("#"))
    rows = [l for l in text if l and not l.startswith("#")]
    times, states = zip(*(r.split(",") for r in rows))
    states = [int(s) for s in states]
    switch_times = np.asarray([float(t) for t in times[1:]])
    traj = Trajectory(states[0], switch_times, float(meta["horizon"]))
    return traj, meta


def save_stream(stream: SampleStream, path, params: TrafficParams = None, seed=None) -> None:
    """Write `t_n,z_n` rows; the schedule is carried in the header."""
    meta = {
        "n": len(stream),
        "sensed": int(stream.sensed),
        "start_offset": repr(stream.schedule.start_offset),
        "inter_sample_times": ",".join(repr(t) for t in stream.schedule.inter_sample_times),
    }
    if params is not None:
        meta.update(u=repr(params.u), lambda_f=repr(params.lambda_f),
                    lambda_n=repr(params.lambda_n))
    if seed is not None:
        meta["seed"] = seed
    lines = _format_header("stream", meta)
    for t, z in zip(stream.schedule.sample_times, stream.values):
        lines.append(f"{t!r},{z}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_stream(path) -> tuple:
    """Read a stream file; returns (SampleStream, header metadata)."""
    text = Path(path).read_text().splitlines()
    meta = _parse_header(l for l in text if l.startswith("#"))
    rows = [l for l in text if l and not l.startswith("#")]
    times, bits = zip(*(r.split(",") for r in rows))
    if meta.get("inter_sample_times", "") != "":
        inter = tuple(float(x) for x in meta["inter_sample_times"].split(","))
    else:
        ts = np.asarray([float(t) for t in times])
        inter = tuple(np.diff(ts)) if ts.size > 1 else ()
    sched = SampleSchedule(inter, float(meta.get("start_offset", times[0])))
    stream = SampleStream(tuple(int(b) for b in bits), sched,
                          sensed=bool(int(meta.get("sensed", 0))))
    return stream, meta
