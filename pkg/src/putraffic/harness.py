"""Monte Carlo experiment engine and figure presets.

An :class:`ExperimentSpec` names a grid of traffic / sampling /
sensing configurations, the estimators to run, and a replicate count.
:func:`run_experiment` simulates every grid point with per-replicate
counter-keyed substreams (serial, blocked, and parallel execution all
consume identical randomness), applies the estimators to the raw
(unclamped) values, and reports Monte Carlo RMS with a batch-means
standard error next to whatever closed form, CR bound, or enumeration
oracle applies.

Presets reproduce the reference experiment configurations at desk
scale; results serialize to a fixed-header CSV and a plotting-tool
friendly ``x y yerr`` block format.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import accuracy, blind, design
from ._rng import substream
from .errors import DomainError
from .estimators import WeightVector
from .traffic import SampleSchedule, SensingModel, TrafficParams

CSV_HEADER = "u,lambda_f,lambda_n,N,T,Pf,Pm,estimator,mc_rms,mc_se,cf_rms,crb_rms,oracle_rms"
_BATCHES = 20          # batch-means groups for the RMS standard error
_BLOCK = 16384         # replicate block size for simulation
_ORACLE_ROW_MAX_N = 10  # attach the enumeration oracle column up to this N


@dataclass(frozen=True)
class ResultRow:
    u: float
    lambda_f: float
    lambda_n: float
    n: float
    t: float
    p_f: float
    p_m: float
    estimator: str
    mc_rms: float = None
    mc_se: float = None
    cf_rms: float = None
    crb_rms: float = None
    oracle_rms: float = None


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentSpec:
    """A reproducible experiment: grid x estimators x replicates."""

    kind: str
    u_values: tuple = ()
    lambda_f_values: tuple = ()
    n_values: tuple = ()
    t_values: tuple = ()
    p_values: tuple = ((0.0, 0.0),)   # (p_f, p_m) pairs
    estimators: tuple = ("avg_uniform",)
    replicates: int = 1000
    seed: int = 0
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.replicates < 1:
            raise DomainError("replicates must be >= 1")
        if self.kind in ("rms_vs_N", "rms_vs_u", "sensing_impact", "custom"):
            for name in ("u_values", "lambda_f_values", "n_values", "t_values"):
                if not getattr(self, name):
                    raise DomainError(f"{name} must be non-empty for kind {self.kind!r}")
            if not self.estimators:
                raise DomainError("estimators must be non-empty")


# ---------------------------------------------------------------------------
# batched simulation

def simulate_streams(params: TrafficParams, dts, reps: int, seed, grid_idx: int,
                     sensing: SensingModel = None, rep_offset: int = 0):
    """Simulate `reps` sample streams over the given inter-sample times.

    The sampled process is Markov at the sample instants, so each bit
    is drawn from the exact two-state transition law; the continuous
    trajectory never needs to be materialized.  Replicate r consumes
    row r of a (reps, N [+ N]) uniform table drawn from its own
    substream: N chain uniforms, then N sensing uniforms.
    Returns (true bits, sensed bits or None), each (reps, N) int8.
    """
    dts = np.asarray(dts, dtype=float)
    n = dts.size + 1
    cols = n + (n if sensing is not None else 0)
    uni = np.empty((reps, cols))
    for i in range(reps):
        uni[i] = substream(seed, grid_idx, rep_offset + i).random(cols)
    u, lf = params.u, params.lambda_f
    z = np.empty((reps, n), np.int8)
    z[:, 0] = uni[:, 0] < u
    for k in range(dts.size):
        g = math.exp(-lf * dts[k] / u)
        p01 = 1.0 - ((1.0 - u) + u * g)
        p11 = u + (1.0 - u) * g
        p_on = np.where(z[:, k] == 1, p11, p01)
        z[:, k + 1] = uni[:, k + 1] < p_on
    if sensing is None:
        return z, None
    flip = np.where(z == 1, sensing.p_m, sensing.p_f)
    zt = np.where(uni[:, n:] < flip, 1 - z, z).astype(np.int8)
    return z, zt


def _batch_counts(z: np.ndarray):
    """Per-row transition counts (rows, 4) ordered 00, 01, 10, 11."""
    a, b = z[:, :-1], z[:, 1:]
    return np.stack([
        np.sum((a == 0) & (b == 0), axis=1),
        np.sum((a == 0) & (b == 1), axis=1),
        np.sum((a == 1) & (b == 0), axis=1),
        np.sum((a == 1) & (b == 1), axis=1),
    ], axis=1)


def _grid_loglik(counts: np.ndarray, first: np.ndarray, u_grid: np.ndarray,
                 lambda_f: float, t_c: float) -> np.ndarray:
    """(rows, grid) chain log-likelihood over a duty-cycle grid."""
    g = np.exp(-lambda_f * t_c / u_grid)
    p00 = (1.0 - u_grid) + u_grid * g
    p11 = u_grid + (1.0 - u_grid) * g
    logp = np.log(np.stack([p00, 1.0 - p00, 1.0 - p11, p11]))  # (4, grid)
    ll = counts.astype(float) @ logp
    ll += np.where(first[:, None] == 1, np.log(u_grid), np.log(1.0 - u_grid))
    return ll


def _parabolic_argmax(xs: np.ndarray, ll: np.ndarray) -> np.ndarray:
    """Per-row grid argmax refined by a parabola through the neighbors."""
    i = np.argmax(ll, axis=1)
    i = np.clip(i, 1, ll.shape[1] - 2)
    rows = np.arange(ll.shape[0])
    lm, l0, lp = ll[rows, i - 1], ll[rows, i], ll[rows, i + 1]
    denom = lm - 2.0 * l0 + lp
    shift = np.where(np.abs(denom) > 0.0, 0.5 * (lm - lp) / np.where(denom == 0.0, 1.0, denom), 0.0)
    shift = np.clip(shift, -1.0, 1.0)
    step = xs[1] - xs[0]
    return xs[i] + shift * step


def _batch_ml_u(z: np.ndarray, lambda_f: float, t_c: float) -> np.ndarray:
    """ML duty-cycle estimates for every row (grid + parabolic refine)."""
    counts = _batch_counts(z)
    first = z[:, 0].astype(np.int64)
    u_grid = np.arange(0.001, 1.0, 0.001)
    out = np.empty(z.shape[0])
    blk = max(1, (_BLOCK * 64) // u_grid.size)
    for s in range(0, z.shape[0], blk):
        sl = slice(s, min(s + blk, z.shape[0]))
        ll = _grid_loglik(counts[sl], first[sl], u_grid, lambda_f, t_c)
        out[sl] = _parabolic_argmax(u_grid, ll)
    degenerate = (counts[:, 1] + counts[:, 2]) == 0
    out[degenerate] = first[degenerate]
    return out


def _batch_ml_lambda(z: np.ndarray, u_known: float, t_c: float,
                     which: str = "lambda_f") -> np.ndarray:
    """Closed-form rate ML for every row; degenerate rows come back NaN."""
    counts = _batch_counts(z)
    n = z.shape[1]
    u = u_known
    a = (u - u * u) * (n - 1)
    b = -2.0 * a + (n - 1) - (1.0 - u) * counts[:, 0] - u * counts[:, 3]
    c = a - u * counts[:, 0] - (1.0 - u) * counts[:, 3]
    with np.errstate(invalid="ignore", divide="ignore"):
        disc = b * b - 4.0 * a * c
        x = (-b + np.sqrt(np.maximum(disc, 0.0))) / (2.0 * a)
        valid = (disc >= 0.0) & (x > 0.0) & (x < 1.0)
        lam = np.where(valid, -(u / t_c) * np.log(np.clip(x, 1e-300, 1.0)), np.nan)
    if which == "lambda_n":
        lam = (1.0 - u) * lam / u
    return lam


def _forward_loglik_batch(zt: np.ndarray, params: TrafficParams, t_c: float,
                          sensing: SensingModel) -> np.ndarray:
    """Scaled forward recursion over all rows at once; (rows,) log-likelihoods."""
    u, lf = params.u, params.lambda_f
    g = math.exp(-lf * t_c / u)
    p00 = (1.0 - u) + u * g
    p11 = u + (1.0 - u) * g
    e1 = np.array([sensing.p_f, 1.0 - sensing.p_m])     # P(read 1 | state)
    e0 = 1.0 - e1
    a0 = (1.0 - u) * np.where(zt[:, 0] == 1, e1[0], e0[0])
    a1 = u * np.where(zt[:, 0] == 1, e1[1], e0[1])
    c = a0 + a1
    ll = np.log(c)
    a0, a1 = a0 / c, a1 / c
    for k in range(1, zt.shape[1]):
        obs1 = zt[:, k] == 1
        b0 = (a0 * p00 + a1 * (1.0 - p11)) * np.where(obs1, e1[0], e0[0])
        b1 = (a0 * (1.0 - p00) + a1 * p11) * np.where(obs1, e1[1], e0[1])
        c = b0 + b1
        ll += np.log(c)
        a0, a1 = b0 / c, b1 / c
    return ll


def _batch_ml_u_noisy(zt: np.ndarray, lambda_f: float, t_c: float,
                      sensing: SensingModel) -> np.ndarray:
    u_grid = np.arange(0.01, 1.0, 0.01)
    ll = np.empty((zt.shape[0], u_grid.size))
    for j, ug in enumerate(u_grid):
        ll[:, j] = _forward_loglik_batch(zt, TrafficParams(u=float(ug), lambda_f=lambda_f),
                                         t_c, sensing)
    return np.clip(_parabolic_argmax(u_grid, ll), 0.0, 1.0)


def _batch_ml_lambda_noisy(zt: np.ndarray, u_known: float, t_c: float,
                           sensing: SensingModel, rate_range=(0.05, 5.0),
                           grid_size: int = 96, which: str = "lambda_f") -> np.ndarray:
    lam_grid = np.geomspace(rate_range[0], rate_range[1], grid_size)
    ll = np.empty((zt.shape[0], lam_grid.size))
    for j, lam in enumerate(lam_grid):
        ll[:, j] = _forward_loglik_batch(zt, TrafficParams(u=u_known, lambda_f=float(lam)),
                                         t_c, sensing)
    # refine in log-rate, where the grid is equispaced
    lam = np.exp(_parabolic_argmax(np.log(lam_grid), ll))
    if which == "lambda_n":
        lam = (1.0 - u_known) * lam / u_known
    return lam


# ---------------------------------------------------------------------------
# per-grid-point evaluation

def _rms_and_se(errors_sq: np.ndarray):
    """RMS and its batch-means standard error from per-replicate squared errors."""
    errors_sq = errors_sq[np.isfinite(errors_sq)]
    if errors_sq.size == 0:
        return None, None
    mse = float(np.mean(errors_sq))
    rms = math.sqrt(mse)
    k = min(_BATCHES, errors_sq.size)
    batches = np.array_split(errors_sq, k)
    means = np.array([b.mean() for b in batches])
    se_mse = float(np.std(means, ddof=1) / math.sqrt(k)) if k > 1 else 0.0
    se_rms = se_mse / (2.0 * rms) if rms > 0 else 0.0
    return rms, se_rms


_ESTIMATOR_NEEDS_SENSING = {"avg_corrected", "weighted_opt_corrected",
                            "ml_u_noisy", "ml_lambda_f_noisy"}


def _estimator_rows(spec: ExperimentSpec, grid_idx: int, point: dict) -> list:
    """All estimator rows for one grid point of an estimator-grid experiment."""
    params = TrafficParams(u=point["u"], lambda_f=point["lambda_f"])
    n, t = point["n"], point["t"]
    p_f, p_m = point["p_f"], point["p_m"]
    sensing = SensingModel(p_f, p_m)
    noisy = not sensing.is_perfect
    t_c = t / (n - 1)
    rows = []
    reduced = max(1, spec.replicates // spec.options.get("ml_noisy_divisor", 10))
    for est in spec.estimators:
        reps = reduced if est in ("ml_u_noisy", "ml_lambda_f_noisy") else spec.replicates
        dts = np.full(n - 1, t_c)
        if est == "avg_opt_schedule":
            dts = np.asarray(design.optimal_schedule(params, n, t).schedule.inter_sample_times)
        weights = design.optimal_weights(params, n, t_c).array \
            if est.startswith("weighted_opt") else None
        errors_sq = np.empty(reps)
        truth = params.u
        for s in range(0, reps, _BLOCK):
            blk = slice(s, min(s + _BLOCK, reps))
            m = blk.stop - blk.start
            need_sensed = est in _ESTIMATOR_NEEDS_SENSING
            z, zt = simulate_streams(params, dts, m, spec.seed, grid_idx,
                                     sensing if need_sensed else None, rep_offset=blk.start)
            if est in ("avg_uniform", "avg_opt_schedule"):
                vals = z.mean(axis=1)
            elif est == "avg_corrected":
                vals = (zt.mean(axis=1) - p_f) / sensing.require_invertible()
            elif est == "weighted_opt":
                vals = z @ weights
            elif est == "weighted_opt_corrected":
                vals = ((zt @ weights) - p_f) / sensing.require_invertible()
            elif est == "ml_u":
                vals = _batch_ml_u(z, params.lambda_f, t_c)
            elif est == "ml_u_noisy":
                vals = _batch_ml_u_noisy(zt, params.lambda_f, t_c, sensing)
            elif est == "ml_lambda_f":
                vals = _batch_ml_lambda(z, params.u, t_c)
                truth = params.lambda_f
            elif est == "ml_lambda_f_noisy":
                vals = _batch_ml_lambda_noisy(
                    zt, params.u, t_c, sensing,
                    rate_range=spec.options.get("rate_range", (0.05, 5.0)))
                truth = params.lambda_f
            else:
                raise DomainError(f"unknown estimator tag {est!r}")
            errors_sq[blk] = (vals - truth) ** 2
        mc_rms, mc_se = _rms_and_se(errors_sq)
        rows.append(_finish_row(params, n, t, sensing, est, mc_rms, mc_se, t_c))
    return rows


def _finish_row(params, n, t, sensing, est, mc_rms, mc_se, t_c) -> ResultRow:
    """Attach whichever closed-form / CRB / oracle columns apply."""
    cf = crb = oracle = None
    noisy = not sensing.is_perfect
    sched = SampleSchedule.uniform(n, t_window=t)
    try:
        if est == "avg_uniform":
            cf = accuracy.mse_avg_uniform(params, n, t).rms
        elif est == "avg_opt_schedule":
            cf = design.optimal_schedule_mse(params, n, t).rms
        elif est == "avg_corrected":
            cf = accuracy.mse_avg_corrected(params, sched, sensing).rms
        elif est == "weighted_opt":
            cf = accuracy.mse_weighted_optimal(params, n, t_c).rms
        elif est == "weighted_opt_corrected":
            cf = accuracy.mse_weighted_optimal(params, n, t_c, sensing).rms
        elif est == "ml_u":
            crb = accuracy.crb_u(params, n, t_c).rms
        elif est == "ml_lambda_f":
            crb = accuracy.crb_lambda_f(params, n, t_c).rms
        elif est == "ml_lambda_f_noisy":
            crb = accuracy.crb_lambda_f(params, n, t_c).rms  # perfect-sensing reference
    except DomainError:
        pass
    if n <= _ORACLE_ROW_MAX_N and est == "avg_uniform" and not noisy:
        from .estimators import avg_estimate
        oracle = accuracy.oracle_mse_enumeration(params, sched, avg_estimate).rms
    return ResultRow(params.u, params.lambda_f, params.lambda_n, float(n), float(t),
                     sensing.p_f, sensing.p_m, est, mc_rms, mc_se, cf, crb, oracle)


def _bound_rows(spec: ExperimentSpec, grid_idx: int, point: dict) -> list:
    """Asymptote rows: closed-form floors as functions of the window."""
    params = TrafficParams(u=point["u"], lambda_f=point["lambda_f"])
    t = point["t"]
    rows = []
    dense_n = spec.options.get("dense_n", 2000)
    for est in spec.estimators:
        if est == "avg_uniform":
            cf = accuracy.mse_avg_uniform_asymptote(params, t).rms
        elif est == "weighted_opt":
            cf = accuracy.mse_weighted_asymptote(params, t).rms
        elif est == "ml_u":
            cf = accuracy.crb_u_asymptote(params, t).rms
        elif est == "ml_lambda_f":
            cf = accuracy.crb_lambda_f_asymptote(params, t).rms
        elif est == "ml_lambda_n":
            cf = accuracy.crb_lambda_n_asymptote(params, t).rms
        elif est == "avg_opt_schedule":
            # no closed-form floor; evaluated at a dense sample count
            cf = design.optimal_schedule_mse(params, dense_n, t).rms
        else:
            raise DomainError(f"unknown bound tag {est!r}")
        rows.append(ResultRow(params.u, params.lambda_f, params.lambda_n,
                              math.nan, float(t), 0.0, 0.0, est, cf_rms=cf))
    return rows


def _algo1_rows(spec: ExperimentSpec, grid_idx: int, point: dict) -> list:
    params = TrafficParams(u=point["u"], lambda_f=point["lambda_f"])
    opt = spec.options
    cfg = blind.AlgoIConfig(
        t0=point.get("t0", opt.get("t0", 1.0)),
        n0=opt.get("n0", 5),
        alpha=point.get("alpha", opt.get("alpha", 5.0)),
        n_th=point.get("n_th", opt.get("n_th")),
        t_th=opt.get("t_th"),
        v_th=opt.get("v_th"),
    )
    res = blind.run_algorithm_I_batch(params, cfg, params.lambda_f,
                                      spec.replicates, spec.seed, grid_idx)
    rms, se = _rms_and_se((res["u_hat"] - params.u) ** 2)
    if cfg.v_th is not None:
        cf = math.sqrt(cfg.v_th)
    elif cfg.n_th is not None:
        cf = math.sqrt(params.u * (1.0 - params.u) / cfg.n_th)
    else:
        cf = None
    rows = [ResultRow(params.u, params.lambda_f, params.lambda_n,
                      float(np.mean(res["n_samples"])), float(np.mean(res["window"])),
                      0.0, 0.0, f"algo1_a{cfg.alpha:g}_t{cfg.t0:g}",
                      mc_rms=rms, mc_se=se, cf_rms=cf)]
    if cfg.n_th is not None:
        # fixed-interval reference at the same sample budget
        ref = accuracy.mse_avg_uniform(params, cfg.n_th, (cfg.n_th - 1) * cfg.t0).rms
        rows.append(ResultRow(params.u, params.lambda_f, params.lambda_n,
                              float(cfg.n_th), (cfg.n_th - 1) * cfg.t0, 0.0, 0.0,
                              f"uniform_ref_t{cfg.t0:g}", cf_rms=ref))
    return rows


def _algo2_rows(spec: ExperimentSpec, grid_idx: int, point: dict) -> list:
    params = TrafficParams(u=point["u"], lambda_f=point["lambda_f"])
    opt = spec.options
    cfg = blind.AlgoIIConfig(
        t0=opt.get("t0", 0.05), v_u_th=opt.get("v_u_th", 0.01),
        v_lambda_th=opt.get("v_lambda_th", 0.01),
        lambda_min=opt.get("lambda_min", 0.1), lambda_max=opt.get("lambda_max", 1.0),
    )
    res = blind.run_algorithm_II_batch(params, cfg, spec.replicates, spec.seed, grid_idx)
    rms_u, se_u = _rms_and_se((res["u_hat"] - params.u) ** 2)
    on_branch = res["u_hat"] > 0.5
    rate_err = np.where(on_branch, res["ln_hat"] - params.lambda_n,
                        res["lf_hat"] - params.lambda_f)
    rms_r, se_r = _rms_and_se(rate_err ** 2)
    n_mean = float(np.mean(res["n_samples"]))
    t_mean = float(np.mean(res["window"]))
    return [
        ResultRow(params.u, params.lambda_f, params.lambda_n, n_mean, t_mean,
                  0.0, 0.0, "algo2_u", mc_rms=rms_u, mc_se=se_u,
                  cf_rms=math.sqrt(cfg.v_u_th)),
        ResultRow(params.u, params.lambda_f, params.lambda_n, n_mean, t_mean,
                  0.0, 0.0, "algo2_rate", mc_rms=rms_r, mc_se=se_r,
                  cf_rms=math.sqrt(cfg.v_lambda_th)),
    ]


def _grid_points(spec: ExperimentSpec) -> list:
    pts = []
    if spec.kind in ("rms_vs_N", "rms_vs_u", "sensing_impact", "custom"):
        for u in spec.u_values:
            for lf in spec.lambda_f_values:
                for n in spec.n_values:
                    for t in spec.t_values:
                        for p_f, p_m in spec.p_values:
                            pts.append({"u": u, "lambda_f": lf, "n": int(n),
                                        "t": float(t), "p_f": p_f, "p_m": p_m})
    elif spec.kind == "asymptote_vs_T":
        for u in spec.u_values:
            for lf in spec.lambda_f_values:
                for t in spec.t_values:
                    pts.append({"u": u, "lambda_f": lf, "t": float(t)})
    elif spec.kind == "algo1_constrained_N":
        for u in spec.u_values:
            for lf in spec.lambda_f_values:
                for alpha in spec.options.get("alpha_values", (5.0,)):
                    for t0 in spec.options.get("t0_values", (10.0,)):
                        for n_th in spec.options.get("n_th_values", (100,)):
                            pts.append({"u": u, "lambda_f": lf, "alpha": alpha,
                                        "t0": t0, "n_th": n_th})
    elif spec.kind == "algo1_target_error":
        for u in spec.u_values:
            for lf in spec.lambda_f_values:
                for alpha in spec.options.get("alpha_values", (5.0,)):
                    pts.append({"u": u, "lambda_f": lf, "alpha": alpha})
    elif spec.kind == "algo2_joint":
        for u in spec.u_values:
            for lf in spec.lambda_f_values:
                pts.append({"u": u, "lambda_f": lf})
    else:
        raise DomainError(f"unknown experiment kind {spec.kind!r}")
    return pts


_KIND_DISPATCH = {
    "rms_vs_N": _estimator_rows,
    "rms_vs_u": _estimator_rows,
    "sensing_impact": _estimator_rows,
    "custom": _estimator_rows,
    "asymptote_vs_T": _bound_rows,
    "algo1_constrained_N": _algo1_rows,
    "algo1_target_error": _algo1_rows,
    "algo2_joint": _algo2_rows,
}


def _point_task(args):
    spec, grid_idx, point = args
    return grid_idx, _KIND_DISPATCH[spec.kind](spec, grid_idx, point)


def run_experiment(spec: ExperimentSpec) -> ResultTable:
    """Run every grid point and assemble the result table.

    Deterministic for a fixed (spec, seed).  Grid points run in
    parallel worker processes when PUTRAFFIC_THREADS asks for more
    than one; rows are keyed by grid index, so the assembled table is
    identical either way.
    """
    points = _grid_points(spec)
    tasks = [(spec, gi, pt) for gi, pt in enumerate(points)]
    workers = int(os.environ.get("PUTRAFFIC_THREADS", "1") or "1")
    results = {}
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for gi, rows in pool.map(_point_task, tasks):
                results[gi] = rows
    else:
        for task in tasks:
            gi, rows = _point_task(task)
            results[gi] = rows
    table = ResultTable(metadata={
        "kind": spec.kind, "replicates": spec.replicates, "seed": spec.seed,
        **{f"opt_{k}": v for k, v in sorted(spec.options.items())
           if isinstance(v, (int, float, str))},
    })
    for gi in range(len(points)):
        table.rows.extend(results[gi])
    return table


# ---------------------------------------------------------------------------
# serialization

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    return repr(v) if isinstance(v, float) else str(v)


def emit_csv(table: ResultTable, path) -> None:
    lines = [f"# {k}={v}" for k, v in sorted(table.metadata.items())]
    lines.append(CSV_HEADER)
    for r in table.rows:
        lines.append(",".join(_fmt(v) for v in (
            r.u, r.lambda_f, r.lambda_n, r.n, r.t, r.p_f, r.p_m, r.estimator,
            r.mc_rms, r.mc_se, r.cf_rms, r.crb_rms, r.oracle_rms)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> ResultTable:
    text = Path(path).read_text().splitlines()
    meta = {}
    rows = []
    for line in text:
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k.strip()] = v.strip()
            continue
        if not line or line == CSV_HEADER:
            continue
        cells = line.split(",")
        f = lambda s: None if s == "" else float(s)
        rows.append(ResultRow(f(cells[0]), f(cells[1]), f(cells[2]), f(cells[3]),
                              f(cells[4]), f(cells[5]), f(cells[6]), cells[7],
                              f(cells[8]), f(cells[9]), f(cells[10]), f(cells[11]),
                              f(cells[12])))
    return ResultTable(rows, meta)


_SWEEP_AXIS = {"rms_vs_N": "n", "sensing_impact": "n", "rms_vs_u": "u",
               "asymptote_vs_T": "t", "algo1_constrained_N": "n",
               "algo1_target_error": "u", "algo2_joint": "u", "custom": "n"}


def curve_key(row: ResultRow, axis: str) -> str:
    """Label grouping rows of one curve (everything but the sweep axis)."""
    parts = [row.estimator]
    if axis != "u":
        parts.append(f"u={row.u:g}")
    parts.append(f"lf={row.lambda_f:g}")
    if axis not in ("n", "t") and not math.isnan(row.n):
        parts.append(f"N={row.n:g}")
    if row.p_f or row.p_m:
        parts.append(f"Pf={row.p_f:g},Pm={row.p_m:g}")
    return " ".join(parts)


def emit_plotdata(table: ResultTable, path) -> None:
    """Write per-curve `x y yerr` blocks separated by blank lines.

    The y column prefers the Monte Carlo RMS and falls back to the
    closed form; a second block per curve carries the closed-form /
    CRB reference when both exist.
    """
    axis = _SWEEP_AXIS.get(table.metadata.get("kind", "custom"), "n")
    curves = {}
    for r in table.rows:
        curves.setdefault(curve_key(r, axis), []).append(r)
    blocks = []
    for label, rows in curves.items():
        rows = sorted(rows, key=lambda r: getattr(r, axis))
        mc = [(getattr(r, axis), r.mc_rms, r.mc_se or 0.0) for r in rows
              if r.mc_rms is not None]
        ref = [(getattr(r, axis), r.cf_rms if r.cf_rms is not None else r.crb_rms, 0.0)
               for r in rows if (r.cf_rms is not None or r.crb_rms is not None)]
        if mc:
            blocks.append(f"# curve: {label} (mc)\n"
                          + "\n".join(f"{x!r} {y!r} {e!r}" for x, y, e in mc))
        if ref:
            blocks.append(f"# curve: {label} (ref)\n"
                          + "\n".join(f"{x!r} {y!r} {e!r}" for x, y, e in ref))
    Path(path).write_text("\n\n".join(blocks) + "\n")


# ---------------------------------------------------------------------------
# presets

def _preset_fig_rms_vs_n(replicates=None, seed=0, **over) -> ExperimentSpec:
    return ExperimentSpec(
        kind="rms_vs_N", u_values=(0.3, 0.6), lambda_f_values=(0.4, 0.9),
        n_values=tuple(over.get("n_values", range(40, 151, 10))), t_values=(50.0,),
        estimators=("avg_uniform", "avg_opt_schedule", "weighted_opt", "ml_u"),
        replicates=replicates or 100_000, seed=seed,
        options={"note": "closed-form comparison preset"})


def _preset_fig_asymptote_vs_t(replicates=None, seed=0, **over) -> ExperimentSpec:
    return ExperimentSpec(
        kind="asymptote_vs_T",
        u_values=(0.3, 0.6), lambda_f_values=(0.9, 0.4),
        t_values=tuple(over.get("t_values", range(10, 101, 10))),
        estimators=("avg_uniform", "avg_opt_schedule", "weighted_opt", "ml_u"),
        replicates=replicates or 1, seed=seed)


def _preset_fig_rms_vs_u(replicates=None, seed=0, **over) -> ExperimentSpec:
    return ExperimentSpec(
        kind="rms_vs_u",
        u_values=tuple(over.get("u_values", np.round(np.arange(0.05, 0.96, 0.05), 2))),
        lambda_f_values=(0.1, 0.5, 1.0, 2.0), n_values=(100,), t_values=(100.0,),
        estimators=("avg_uniform", "ml_u"),
        replicates=replicates or 100_000, seed=seed)


def _preset_fig_rms_lambda_vs_n(replicates=None, seed=0, **over) -> ExperimentSpec:
    return ExperimentSpec(
        kind="rms_vs_N", u_values=(0.3, 0.6), lambda_f_values=(0.4, 0.9),
        n_values=tuple(over.get("n_values", range(40, 151, 10))), t_values=(50.0,),
        estimators=("ml_lambda_f",),
        replicates=replicates or 10_000, seed=seed,
        options={"note": "rate estimation preset"})


def _preset_fig_sensing_impact(replicates=None, seed=0, **over) -> ExperimentSpec:
    return ExperimentSpec(
        kind="sensing_impact", u_values=(0.3,), lambda_f_values=(0.9,),
        n_values=tuple(over.get("n_values", range(40, 151, 10))), t_values=(50.0,),
        p_values=((0.0, 0.0), (0.05, 0.05), (0.1, 0.1)),
        estimators=("avg_corrected", "weighted_opt_corrected", "ml_u_noisy"),
        replicates=replicates or 20_000, seed=seed,
        options={"ml_noisy_divisor": 20,
                 "note": "noisy-ML rows run replicates/ml_noisy_divisor replicates"})


def _preset_algo1_constrained_n(replicates=None, seed=0, **over) -> ExperimentSpec:
    return ExperimentSpec(
        kind="algo1_constrained_N", u_values=(0.6,), lambda_f_values=(0.9,),
        replicates=replicates or 10_000, seed=seed,
        options={"n0": 5, "alpha_values": (1.0, 2.0, 5.0), "t0_values": (1.0, 10.0),
                 "n_th_values": tuple(over.get("n_th_values", range(20, 101, 20)))})


def _preset_algo1_target_error(replicates=None, seed=0, **over) -> ExperimentSpec:
    return ExperimentSpec(
        kind="algo1_target_error",
        u_values=tuple(over.get("u_values", np.round(np.arange(0.1, 0.91, 0.1), 1))),
        lambda_f_values=(0.9,),
        replicates=replicates or 10_000, seed=seed,
        options={"n0": 50, "t0": 0.05, "v_th": 0.01, "alpha_values": (1.0, 2.0, 5.0)})


def _preset_algo2_joint(replicates=None, seed=0, **over) -> ExperimentSpec:
    return ExperimentSpec(
        kind="algo2_joint",
        u_values=tuple(over.get("u_values", np.round(np.arange(0.1, 0.91, 0.1), 1))),
        lambda_f_values=(0.1, 0.5, 0.9),
        replicates=replicates or 10_000, seed=seed,
        options={"t0": 0.05, "v_u_th": 0.01, "v_lambda_th": 0.01,
                 "lambda_min": 0.1, "lambda_max": 1.0})


PRESETS = {
    "fig_rms_vs_N": _preset_fig_rms_vs_n,
    "fig_asymptote_vs_T": _preset_fig_asymptote_vs_t,
    "fig_rms_vs_u": _preset_fig_rms_vs_u,
    "fig_rms_lambda_vs_N": _preset_fig_rms_lambda_vs_n,
    "fig_sensing_impact": _preset_fig_sensing_impact,
    "algo1_constrained_N": _preset_algo1_constrained_n,
    "algo1_target_error": _preset_algo1_target_error,
    "algo2_joint": _preset_algo2_joint,
}


def build_preset(name: str, replicates=None, seed=0, **over) -> ExperimentSpec:
    if name not in PRESETS:
        raise DomainError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return PRESETS[name](replicates=replicates, seed=seed, **over)


# ---------------------------------------------------------------------------
# verification suites (closed forms against exhaustive oracles)

@dataclass(frozen=True)
class CheckResult:
    name: str
    checks: int
    worst: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance


def _rel_err(a: float, b: float) -> float:
    scale = max(abs(a), abs(b), 1e-300)
    return abs(a - b) / scale


def verify_mse_suite(max_n: int = 12, configs: int = 200, seed: int = 0,
                     tol: float = 1e-10) -> list:
    """Closed-form MSE expressions against the enumeration oracle."""
    from .estimators import avg_estimate, avg_estimate_corrected, weighted_estimate
    rng = np.random.default_rng(seed)
    per = max(1, configs // 4)
    worst = {"mse_avg": 0.0, "mse_avg_uniform": 0.0, "mse_avg_corrected": 0.0,
             "mse_weighted": 0.0}
    for _ in range(per):
        params = TrafficParams(u=rng.uniform(0.05, 0.95), lambda_f=rng.uniform(0.1, 2.0))
        n = int(rng.integers(2, max_n + 1))
        sched = SampleSchedule(tuple(rng.uniform(0.05, 2.0, n - 1)))
        worst["mse_avg"] = max(worst["mse_avg"], _rel_err(
            accuracy.mse_avg(params, sched).mse,
            accuracy.oracle_mse_enumeration(params, sched, avg_estimate).mse))
        t_c = rng.uniform(0.05, 2.0)
        usched = SampleSchedule.uniform(n, t_c=t_c)
        worst["mse_avg_uniform"] = max(worst["mse_avg_uniform"], _rel_err(
            accuracy.mse_avg_uniform(params, n, (n - 1) * t_c).mse,
            accuracy.oracle_mse_enumeration(params, usched, avg_estimate).mse))
        sensing = SensingModel(rng.uniform(0.01, 0.2), rng.uniform(0.01, 0.2))
        worst["mse_avg_corrected"] = max(worst["mse_avg_corrected"], _rel_err(
            accuracy.mse_avg_corrected(params, sched, sensing).mse,
            accuracy.oracle_mse_enumeration(
                params, sched, lambda st: avg_estimate_corrected(st, sensing),
                sensing).mse))
        w = rng.uniform(0.2, 1.0, n)
        w = WeightVector(tuple(w / w.sum()))
        use_sensing = rng.random() < 0.5
        sm = sensing if use_sensing else None
        worst["mse_weighted"] = max(worst["mse_weighted"], _rel_err(
            accuracy.mse_weighted(params, t_c, w, sm).mse,
            accuracy.oracle_mse_enumeration(
                params, usched, lambda st: weighted_estimate(st, w, sm), sm).mse))
    return [CheckResult(k, per, v, tol) for k, v in worst.items()]


def verify_fisher_suite(max_n: int = 10, configs: int = 100, seed: int = 0,
                        tol: float = 1e-6) -> list:
    """Fisher information closed forms against the numeric-score oracle."""
    rng = np.random.default_rng(seed)
    per = max(1, configs // 2)
    worst_u = worst_lf = 0.0
    for _ in range(per):
        params = TrafficParams(u=rng.uniform(0.1, 0.9), lambda_f=rng.uniform(0.1, 2.0))
        n = int(rng.integers(2, max_n + 1))
        t_c = rng.uniform(0.1, 2.0)
        worst_u = max(worst_u, _rel_err(
            accuracy.fisher_u(params, n, t_c).value,
            accuracy.oracle_fisher_enumeration(params, n, t_c, "u").value))
        worst_lf = max(worst_lf, _rel_err(
            accuracy.fisher_lambda_f(params, n, t_c).value,
            accuracy.oracle_fisher_enumeration(params, n, t_c, "lambda_f").value))
    return [CheckResult("fisher_u", per, worst_u, tol),
            CheckResult("fisher_lambda_f", per, worst_lf, tol)]


def verify_likelihood_suite(max_n: int = 12, configs: int = 100, seed: int = 0,
                            tol: float = 1e-10) -> list:
    """Forward-recursion likelihood against the literal exponential sum."""
    from .estimators import enumerated_log_likelihood, forward_log_likelihood
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(configs):
        params = TrafficParams(u=rng.uniform(0.05, 0.95), lambda_f=rng.uniform(0.1, 2.0))
        n = int(rng.integers(2, max_n + 1))
        t_c = rng.uniform(0.05, 2.0)
        sensing = SensingModel(rng.uniform(0.0, 0.3), rng.uniform(0.0, 0.3))
        obs = (rng.random(n) < 0.5).astype(int)
        a = forward_log_likelihood(obs, params, t_c, sensing)
        b = enumerated_log_likelihood(obs, params, t_c, sensing)
        worst = max(worst, _rel_err(math.exp(a), math.exp(b)))
    return [CheckResult("forward_vs_enumerated_likelihood", configs, worst, tol)]


def verify_consistency_suite(configs: int = 100, seed: int = 0) -> list:
    """Published simplifications against their direct evaluations."""
    rng = np.random.default_rng(seed)
    worst_dec = worst_forms = worst_opt = 0.0
    for _ in range(configs):
        params = TrafficParams(u=rng.uniform(0.1, 0.9), lambda_f=rng.uniform(0.1, 2.0))
        n = int(rng.integers(2, 12))
        sched_plus = SampleSchedule(tuple(rng.uniform(0.05, 2.0, n)))
        direct = (accuracy.mse_avg(params, SampleSchedule(sched_plus.inter_sample_times[:-1])).mse
                  - accuracy.mse_avg(params, sched_plus).mse)
        worst_dec = max(worst_dec, abs(direct - accuracy.mse_avg_decrement(params, sched_plus)))
        t = rng.uniform(1.0, 50.0)
        worst_forms = max(worst_forms, _rel_err(
            accuracy.mse_avg_uniform(params, n + 1, t).mse,
            accuracy.mse_avg_uniform(params, n + 1, t, form="sum").mse))
        n_opt = int(rng.integers(3, 12))
        t_opt = rng.uniform(0.05, 5.0) * n_opt * params.u / params.lambda_f
        worst_opt = max(worst_opt, abs(
            design.optimal_schedule_mse(params, n_opt, t_opt).mse
            - design.optimal_schedule_mse_formula(params, n_opt, t_opt)))
    return [CheckResult("decrement_vs_direct_difference", configs, worst_dec, 1e-12),
            CheckResult("uniform_mse_two_forms", configs, worst_forms, 1e-12),
            CheckResult("optimal_schedule_formula_vs_direct", configs, worst_opt, 1e-9)]


VERIFY_SUITES = {
    "oracle": verify_mse_suite,
    "fisher": verify_fisher_suite,
    "likelihood": verify_likelihood_suite,
    "consistency": verify_consistency_suite,
}
