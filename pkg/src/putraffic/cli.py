"""Command line front end.

Subcommands: simulate, estimate, bound, design, blind, figure,
verify.  Flags can be preloaded from a flat ``key = value`` config
file (--config); explicit flags win.  Exit codes: 0 success, 2
validation/usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from . import accuracy, blind, design, harness, traffic
from .errors import DomainError, PuTrafficError
from .traffic import SampleSchedule, SensingModel, TrafficParams


def _params_from(args) -> TrafficParams:
    return TrafficParams(u=args.u, lambda_f=args.lambda_f,
                         lambda_n=getattr(args, "lambda_n", None))


def _sensing_from(args) -> SensingModel:
    return SensingModel(getattr(args, "pf", 0.0) or 0.0,
                        getattr(args, "pm", 0.0) or 0.0)


def _cmd_simulate(args) -> int:
    params = _params_from(args)
    traj = traffic.generate_trajectory(params, args.horizon, args.seed)
    wrote = []
    if args.trajectory:
        traffic.save_trajectory(traj, args.trajectory, params, args.seed)
        wrote.append(args.trajectory)
    if args.stream:
        if args.n is None:
            raise DomainError("--n is required to sample a stream")
        if args.t_c is not None:
            sched = SampleSchedule.uniform(args.n, t_c=args.t_c,
                                           start_offset=args.start_offset)
        elif args.t_window is not None:
            sched = SampleSchedule.uniform(args.n, t_window=args.t_window,
                                           start_offset=args.start_offset)
        else:
            raise DomainError("give --t-c or --t-window for the schedule")
        stream = traffic.sample_trajectory(traj, sched)
        sensing = _sensing_from(args)
        if not sensing.is_perfect:
            stream = traffic.corrupt(stream, sensing, args.seed + 1)
        traffic.save_stream(stream, args.stream, params, args.seed)
        wrote.append(args.stream)
    print(f"simulated horizon={args.horizon}s switches={traj.switch_times.size}"
          + (f" wrote {' '.join(wrote)}" if wrote else ""))
    return 0


def _cmd_estimate(args) -> int:
    from . import estimators as est
    stream, meta = traffic.load_stream(args.stream)
    sensing = _sensing_from(args)
    t_c = args.t_c
    if args.estimator == "avg":
        result = est.avg_estimate(stream)
    elif args.estimator == "avg_corrected":
        result = est.avg_estimate_corrected(stream, sensing)
    elif args.estimator == "weighted_opt":
        params = TrafficParams(u=args.u, lambda_f=args.lambda_f)
        w = design.optimal_weights(params, len(stream), t_c or stream.schedule.t_c)
        result = est.weighted_estimate(stream, w,
                                       None if sensing.is_perfect else sensing)
    elif args.estimator == "ml_u":
        result = est.ml_estimate_u(stream, args.lambda_f, t_c)
    elif args.estimator == "ml_u_noisy":
        result = est.ml_estimate_u_noisy(stream, args.lambda_f, t_c, sensing)
    elif args.estimator == "ml_lambda_f":
        result = est.ml_estimate_lambda_f(est.count_transitions(stream), args.u,
                                          t_c or stream.schedule.t_c)
    elif args.estimator == "ml_lambda_n":
        result = est.ml_estimate_lambda_n(est.count_transitions(stream), args.u,
                                          t_c or stream.schedule.t_c)
    elif args.estimator in ("ml_lambda_f_noisy", "ml_lambda_n_noisy"):
        lo, hi = (float(x) for x in args.rate_range.split(","))
        which = "lambda_f" if args.estimator == "ml_lambda_f_noisy" else "lambda_n"
        result = est.ml_estimate_rate_noisy(stream, args.u, t_c, sensing,
                                            (lo, hi), which)
    else:
        raise DomainError(f"unknown estimator {args.estimator!r}")
    print(f"estimator={result.estimator_id} value={result.value!r} "
          f"raw={result.raw!r} converged={result.converged}")
    return 0


def _cmd_bound(args) -> int:
    params = _params_from(args)
    sensing = _sensing_from(args)
    n, t = args.n, args.t
    t_c = args.t_c
    if t_c is None and n is not None and t is not None and n > 1:
        t_c = t / (n - 1)
    f = args.formula
    if f == "required_samples":
        print(accuracy.required_samples(params, t, args.beta))
        return 0
    if f == "mse_avg_uniform":
        out = accuracy.mse_avg_uniform(params, n, t)
    elif f == "mse_avg_uniform_asymptote":
        out = accuracy.mse_avg_uniform_asymptote(params, t)
    elif f == "mse_avg_corrected":
        out = accuracy.mse_avg_corrected(params, SampleSchedule.uniform(n, t_window=t),
                                         sensing)
    elif f == "mse_weighted_opt":
        out = accuracy.mse_weighted_optimal(params, n, t_c,
                                            None if sensing.is_perfect else sensing)
    elif f == "mse_weighted_asymptote":
        out = accuracy.mse_weighted_asymptote(params, t)
    elif f == "mse_opt_schedule":
        out = design.optimal_schedule_mse(params, n, t)
    elif f == "crb_u":
        out = accuracy.crb_u(params, n, t_c)
    elif f == "crb_u_asymptote":
        out = accuracy.crb_u_asymptote(params, t)
    elif f == "crb_lambda_f":
        out = accuracy.crb_lambda_f(params, n, t_c)
    elif f == "crb_lambda_f_asymptote":
        out = accuracy.crb_lambda_f_asymptote(params, t)
    elif f == "crb_lambda_n":
        out = accuracy.crb_lambda_n(params, n, t_c)
    elif f == "crb_lambda_n_asymptote":
        out = accuracy.crb_lambda_n_asymptote(params, t)
    else:
        raise DomainError(f"unknown formula {f!r}")
    print(repr(out.rms))
    return 0


def _cmd_design(args) -> int:
    params = _params_from(args)
    if args.what == "schedule":
        sol = design.optimal_schedule(params, args.n, args.t)
        times = " ".join(repr(x) for x in sol.schedule.inter_sample_times)
        print(f"k={sol.k_regime} t_a={sol.t_a!r} t_b={sol.t_b!r} "
              f"rms={math.sqrt(sol.mse_at_optimum)!r}")
        print(times)
    elif args.what == "weights":
        w = design.optimal_weights(params, args.n, args.t_c)
        rep = accuracy.mse_weighted_optimal(params, args.n, args.t_c)
        print(f"rms={rep.rms!r}")
        print(" ".join(repr(x) for x in w.weights))
    else:
        raise DomainError(f"unknown design target {args.what!r}")
    return 0


def _cmd_blind(args) -> int:
    if args.source == "replay":
        stream, _ = traffic.load_stream(args.stream)
        source = blind.ReplaySampler(stream)
    else:
        params = _params_from(args)
        sensing = _sensing_from(args)
        source = blind.simulated_source(
            params, args.seed, None if sensing.is_perfect else sensing,
            kind="trajectory" if args.source == "sim" else "markov")
    if args.algorithm == 1:
        cfg = blind.AlgoIConfig(t0=args.t0, n0=args.n0, alpha=args.alpha,
                                n_th=args.n_th, t_th=args.t_th, v_th=args.v_th)
        trace = blind.run_algorithm_I(source, cfg, args.lambda_f)
    else:
        cfg = blind.AlgoIIConfig(t0=args.t0, v_u_th=args.v_u_th,
                                 v_lambda_th=args.v_lambda_th,
                                 lambda_min=args.lambda_min, lambda_max=args.lambda_max)
        trace = blind.run_algorithm_II(source, cfg)
    last = trace.estimates[-1]
    extras = "".join(
        f" {k}={last[k]!r}" for k in ("u_hat", "lf_hat", "ln_hat")
        if last.get(k) is not None)
    print(f"terminated_by={trace.terminated_by} samples={trace.total_samples} "
          f"window={trace.total_window!r} window_after_toggle="
          f"{trace.window_after_toggle!r}{extras}")
    if args.trace:
        trace.to_csv(args.trace)
        print(f"wrote {args.trace}")
    return 0


def _cmd_figure(args) -> int:
    spec = harness.build_preset(args.preset, replicates=args.replicates,
                                seed=args.seed)
    table = harness.run_experiment(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{args.preset}.csv"
    dat_path = out / f"{args.preset}.dat"
    harness.emit_csv(table, csv_path)
    harness.emit_plotdata(table, dat_path)
    wrote = [str(csv_path), str(dat_path)]
    if not args.no_plot:
        from .plotting import render_table
        png_path = out / f"{args.preset}.png"
        render_table(table, png_path, title=args.preset)
        wrote.append(str(png_path))
    print("wrote " + " ".join(wrote))
    return 0


def _cmd_verify(args) -> int:
    suites = (list(harness.VERIFY_SUITES) if args.suite == "all" else [args.suite])
    ok = True
    for name in suites:
        if name not in harness.VERIFY_SUITES:
            raise DomainError(f"unknown suite {name!r}")
        kwargs = {"seed": args.seed}
        if name in ("oracle", "fisher", "likelihood"):
            kwargs["configs"] = args.configs
            if args.max_n is not None:
                kwargs["max_n"] = args.max_n
        else:
            kwargs["configs"] = args.configs
        for check in harness.VERIFY_SUITES[name](**kwargs):
            status = "PASS" if check.passed else "FAIL"
            ok &= check.passed
            print(f"{status} {check.name}: worst={check.worst:.3e} "
                  f"tol={check.tolerance:.0e} ({check.checks} configs)")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="putraffic",
                                description="on/off channel-occupancy estimation toolkit")
    p.add_argument("--config", help="flat key = value file of flag defaults")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--u", type=float)
        sp.add_argument("--lambda-f", type=float, dest="lambda_f")
        sp.add_argument("--lambda-n", type=float, dest="lambda_n")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--pf", type=float, default=0.0)
        sp.add_argument("--pm", type=float, default=0.0)

    sp = sub.add_parser("simulate", help="generate a trajectory and optionally a stream")
    common(sp)
    sp.add_argument("--horizon", type=float, required=True)
    sp.add_argument("--trajectory", help="write the trajectory here")
    sp.add_argument("--stream", help="sample and write a stream here")
    sp.add_argument("--n", type=int)
    sp.add_argument("--t-c", type=float, dest="t_c")
    sp.add_argument("--t-window", type=float, dest="t_window")
    sp.add_argument("--start-offset", type=float, default=0.0, dest="start_offset")
    sp.set_defaults(func=_cmd_simulate)

    sp = sub.add_parser("estimate", help="run an estimator on a stream file")
    common(sp)
    sp.add_argument("--stream", required=True)
    sp.add_argument("--estimator", required=True)
    sp.add_argument("--t-c", type=float, dest="t_c")
    sp.add_argument("--rate-range", default="0.01,10.0", dest="rate_range")
    sp.set_defaults(func=_cmd_estimate)

    sp = sub.add_parser("bound", help="evaluate a closed form, CR bound, or asymptote")
    common(sp)
    sp.add_argument("--formula", required=True)
    sp.add_argument("--n", type=int)
    sp.add_argument("--t", type=float, dest="t", help="observation window, s")
    sp.add_argument("--t-c", type=float, dest="t_c")
    sp.add_argument("--beta", type=float)
    sp.set_defaults(func=_cmd_bound)

    sp = sub.add_parser("design", help="optimal sampling schedule or weights")
    common(sp)
    sp.add_argument("--what", required=True, choices=("schedule", "weights"))
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--t", type=float)
    sp.add_argument("--t-c", type=float, dest="t_c")
    sp.set_defaults(func=_cmd_design)

    sp = sub.add_parser("blind", help="run a blind estimation algorithm")
    common(sp)
    sp.add_argument("--algorithm", type=int, required=True, choices=(1, 2))
    sp.add_argument("--source", default="sim", choices=("sim", "markov", "replay"))
    sp.add_argument("--stream", help="recorded stream for --source replay")
    sp.add_argument("--t0", type=float, default=1.0)
    sp.add_argument("--n0", type=int, default=5)
    sp.add_argument("--alpha", type=float, default=5.0)
    sp.add_argument("--n-th", type=int, dest="n_th")
    sp.add_argument("--t-th", type=float, dest="t_th")
    sp.add_argument("--v-th", type=float, dest="v_th")
    sp.add_argument("--v-u-th", type=float, default=0.01, dest="v_u_th")
    sp.add_argument("--v-lambda-th", type=float, default=0.01, dest="v_lambda_th")
    sp.add_argument("--lambda-min", type=float, default=0.1, dest="lambda_min")
    sp.add_argument("--lambda-max", type=float, default=1.0, dest="lambda_max")
    sp.add_argument("--trace", help="write the per-sample trace CSV here")
    sp.set_defaults(func=_cmd_blind)

    sp = sub.add_parser("figure", help="run an experiment preset")
    sp.add_argument("preset", choices=sorted(harness.PRESETS))
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="figures")
    sp.add_argument("--no-plot", action="store_true", dest="no_plot")
    sp.set_defaults(func=_cmd_figure)

    sp = sub.add_parser("verify", help="run oracle agreement suites")
    sp.add_argument("--suite", default="all",
                    choices=sorted(harness.VERIFY_SUITES) + ["all"])
    sp.add_argument("--max-n", type=int, dest="max_n")
    sp.add_argument("--configs", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=_cmd_verify)
    return p


def _load_config(path: str) -> dict:
    cfg = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line or "=" not in line:
            continue
        k, v = (s.strip() for s in line.split("=", 1))
        cfg[k.replace("-", "_")] = v
    return cfg


def _apply_config(parser: argparse.ArgumentParser, argv: list) -> list:
    """Load --config defaults into every subparser; flags still win."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    cfg = _load_config(argv[idx + 1])
    for action in parser._subparsers._group_actions[0].choices.values():
        for act in action._actions:
            if act.dest in cfg:
                val = cfg[act.dest]
                if act.type is not None:
                    val = act.type(val)
                elif isinstance(act.const, bool) or isinstance(act.default, bool):
                    val = val.lower() in ("1", "true", "yes")
                action.set_defaults(**{act.dest: val})
    return argv[:idx] + argv[idx + 2:]


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PuTrafficError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc.strerror}: {getattr(exc, 'filename', '')}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
