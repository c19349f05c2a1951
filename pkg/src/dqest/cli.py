"""Command-line interface: ``dqest {estimate,truth,variance,simulate,rolldq}``.

Exit codes: 0 success, 2 bad input, 3 computational failure, 4 violated
model assumption.  JSON output has sorted keys and floats printed with 17
significant digits so that runs can be diffed byte for byte.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from . import __version__, asymvar, simharness, tsboot
from .dqcore import IndexKind, LossSample, estimate
from .elliptical import EllipticalModel, equicorr_sigma
from .errors import AssumptionViolated, DqError

EXIT_OK, EXIT_INPUT, EXIT_COMPUTE, EXIT_ASSUMPTION = 0, 2, 3, 4
INDEX_CHOICES = [k.value for k in IndexKind]


class InputError(Exception):
    pass


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    s = format(x, ".17g")
    if not any(ch in s for ch in ".e"):
        s += ".0"
    return s


def dumps_canonical(obj) -> str:
    """JSON text with sorted keys and 17-significant-digit floats."""
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        items = sorted((str(k), v) for k, v in obj.items())
        return "{" + ",".join(json.dumps(k) + ":" + dumps_canonical(v) for k, v in items) + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(dumps_canonical(v) for v in obj) + "]"
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return json.dumps(obj.value)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _provenance(args, seed):
    import scipy

    cfg = {k: v for k, v in vars(args).items() if k not in ("func",)}
    return {"dqest": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "seed": seed, "config": cfg}


def _seed(args):
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get("DQEST_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise InputError(f"DQEST_SEED must be an integer, got {env!r}") from None


def _model(args):
    n = args.n
    nu = args.nu if args.family == "t" else None
    try:
        # nu <= 2 is kept so that truth values work; variances then exit with code 4
        return EllipticalModel.relaxed(args.family, np.zeros(n), equicorr_sigma(n, args.r), nu)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _read_loss_csv(path):
    try:
        fh = sys.stdin if path == "-" else open(path, newline="")
    except OSError as exc:
        raise InputError(str(exc)) from None
    with fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if len(rows) < 3:
        raise InputError("loss CSV needs a header and at least two rows")
    header = [h.strip() for h in rows[0]]
    skip = 1 if header and header[0].lower() == "date" else 0
    body = []
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise InputError(f"line {i}: expected {len(header)} fields, got {len(r)}")
        try:
            vals = [float(c) for c in r[skip:]]
        except ValueError:
            raise InputError(f"line {i}: non-numeric cell") from None
        if not all(math.isfinite(v) for v in vals):
            raise InputError(f"line {i}: non-finite value")
        body.append(vals)
    return header[skip:], np.array(body)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if isinstance(v, float) and not math.isfinite(v) else (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in r])
    return buf.getvalue()


def _emit(args, payload, csv_header=None, csv_rows=None):
    if args.output == "csv":
        if csv_header is None:
            flat = {k: v for k, v in payload.items() if isinstance(v, (int, float, str, np.floating))}
            csv_header, csv_rows = ["key", "value"], sorted(flat.items())
        sys.stdout.write(_csv_text(csv_header, csv_rows))
    else:
        sys.stdout.write(dumps_canonical(payload) + "\n")


def _var_payload(res: asymvar.AsymVariance):
    return {
        "sigma2": res.sigma2,
        "a_vec": res.a_vec,
        "cov_mat": res.cov_mat,
        "c_const": res.c_const,
        "lag_window": res.lag_window,
        "floored": res.floored,
    }


# --- subcommands --------------------------------------------------------------


def cmd_estimate(args):
    names, x = _read_loss_csv(args.input)
    est = estimate(LossSample(x), args.alpha, args.index)
    out = {
        "index": est.index_kind.value,
        "alpha": est.alpha,
        "value": est.value,
        "threshold": est.threshold,
        "marginal_stats": dict(zip(names, est.marginal_stats.tolist())),
        "n_obs": int(x.shape[0]),
    }
    if est.minimizer is not None:
        out["minimizer"] = est.minimizer
    return out, None, None


def cmd_truth(args):
    model = _model(args)
    kinds = [IndexKind(args.index)] if args.index else list(IndexKind)
    vals = {k.value: simharness.true_value(model, k, args.alpha) for k in kinds}
    out = {"family": args.family, "n": args.n, "r": args.r, "alpha": args.alpha, "values": vals, "k_sigma": model.k}
    if args.family == "t":
        out["nu"] = args.nu
    return out, ["index", "value"], sorted(vals.items())


def _data_variance(args, x):
    kind = IndexKind(args.index)
    mixing = args.max_lag is not None
    lag = None if args.max_lag is None or args.max_lag < 0 else args.max_lag
    if kind.is_dr:
        m = "var" if kind is IndexKind.DR_VAR else "es"
        if mixing:
            lr = lag if lag is not None else asymvar.default_max_lag(x.shape[0])
            return asymvar.sigma2_dr(LossSample(x), args.alpha, m, max_lag=lr)
        return asymvar.sigma2_dr(LossSample(x), args.alpha, m)
    fn = {
        IndexKind.DQ_VAR: (asymvar.sigma2_dq_var_iid, asymvar.sigma2_dq_var_mixing),
        IndexKind.DQ_ES: (asymvar.sigma2_dq_es_iid, asymvar.sigma2_dq_es_mixing),
        IndexKind.DQ_EX: (asymvar.sigma2_dq_ex_iid, asymvar.sigma2_dq_ex_mixing),
    }[kind]
    if mixing:
        return fn[1](LossSample(x), args.alpha, max_lag=lag)
    return fn[0](LossSample(x), args.alpha)


def cmd_variance(args):
    if args.input:
        _, x = _read_loss_csv(args.input)
        res = _data_variance(args, x)
        src = {"source": "data", "n_obs": int(x.shape[0])}
    else:
        if args.max_lag is not None:
            raise InputError("--max-lag needs --input (a time-ordered loss sample)")
        model = _model(args)
        model.require_finite_variance()
        res = simharness.theory_sigma2(model, args.index, args.alpha, cov_method=args.cov_method, seed=_seed(args))
        src = {"source": "model", "family": args.family, "n": args.n, "r": args.r}
        if args.family == "t":
            src["nu"] = args.nu
    out = dict(_var_payload(res), index=args.index, alpha=args.alpha, **src)
    return out, ["key", "value"], [("sigma2", res.sigma2), ("lag_window", res.lag_window)]


def cmd_simulate(args):
    seed = _seed(args)
    _model(args).require_finite_variance()
    nu = args.nu if args.family == "t" else None
    base = dict(estimator=args.index, family=args.family, n=args.n, r=args.r, nu=nu, alpha=args.alpha,
                n_samples=args.samples, n_reps=args.reps, seed=seed)
    if args.shift_sweep:
        grid = _grid(args.shift_sweep)
        model = _model(args)
        rows = simharness.run_dr_shift_sweep(model, args.alpha, grid, n_samples=args.samples, seed=seed)
        keys = sorted(rows[0])
        return {"shift_sweep": rows}, keys, [[r[k] for k in keys] for r in rows]
    if args.sweep:
        spec = simharness.ExperimentSpec(**base, vary=args.sweep, grid=tuple(_grid(args.grid)))
        curve = simharness.run_variance_curve(spec)
        return ({"param": curve.param, "index": args.index, "values": curve.values, "sigma2": curve.sigma2},
                [curve.param, "sigma2"], [[v, s] for v, s in zip(curve.values, curve.sigma2)])
    spec = simharness.ExperimentSpec(**base)
    workers = args.threads if args.threads is not None else (os.cpu_count() or 1)
    res = simharness.run_histogram_experiment(spec, workers=min(workers, spec.n_reps))
    counts, edges = res.histogram()
    out = dict(res.summary(), estimates=res.estimates, histogram={"counts": counts, "edges": edges},
               failures=[list(f) for f in res.failures])
    return out, ["rep", "estimate"], [[i, v] for i, v in enumerate(res.estimates)]


def cmd_rolldq(args):
    try:
        dates, x, tickers, dropped = tsboot.read_panel_csv(args.input, from_prices=args.from_prices)
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from None
    if dropped:
        print(f"dqest: dropped {dropped} unaligned rows", file=sys.stderr)
    try:
        cfg = tsboot.RollingConfig(window=args.window, step=args.step, boot_reps=args.boot_reps, ci_level=args.ci,
                                   alpha=args.alpha, index_kind=args.index, calendar_step=args.calendar_step)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if x.shape[0] < cfg.window + 1:
        raise InputError(f"panel has {x.shape[0]} rows, needs more than the window ({cfg.window})")
    try:
        series = tsboot.rolling_dq_with_ci(x, cfg, _seed(args), dates)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    rows = list(series.rows())
    out = {
        "index": series.index_kind.value,
        "alpha": series.alpha,
        "tickers": tickers,
        "n_dropped_rows": dropped,
        "windows": [dict(zip(tsboot.DqSeries.COLUMNS, r), params=p) for r, p in zip(rows, series.params)],
        "failures": [list(f) for f in series.failures],
    }
    return out, list(tsboot.DqSeries.COLUMNS), rows


def _grid(text):
    try:
        vals = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise InputError(f"bad grid {text!r}") from None
    if not vals:
        raise InputError("empty grid")
    return vals


# --- parser -------------------------------------------------------------------


def _alpha_arg(s):
    v = float(s)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--alpha", type=_alpha_arg, default=0.1)
    common.add_argument("--output", choices=["json", "csv"], default="json")
    common.add_argument("--seed", type=int, default=None, help="master seed (default: $DQEST_SEED or 0)")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--family", choices=["normal", "t"], default="normal")
    model.add_argument("--nu", type=float, default=3.0)
    model.add_argument("--n", type=int, default=5)
    model.add_argument("--r", type=float, default=0.3)

    p = argparse.ArgumentParser(prog="dqest", description="Diversification quotient estimation and inference.")
    p.add_argument("--version", action="version", version=f"dqest {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("estimate", parents=[common], help="point estimate from a loss CSV")
    s.add_argument("--input", required=True, help="CSV with a header row; '-' reads stdin")
    s.add_argument("--index", choices=INDEX_CHOICES, default="dq-var")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("truth", parents=[common, model], help="population values for an elliptical model")
    s.add_argument("--index", choices=INDEX_CHOICES, default=None)
    s.set_defaults(func=cmd_truth)

    s = sub.add_parser("variance", parents=[common, model], help="asymptotic variance, model- or data-based")
    s.add_argument("--index", choices=INDEX_CHOICES, default="dq-var")
    s.add_argument("--input", default=None, help="loss CSV for the plug-in estimate")
    s.add_argument("--max-lag", type=int, default=None,
                   help="long-run covariance lags for time-ordered data (-1 for floor(N^(1/3)))")
    s.add_argument("--cov-method", choices=["quad", "mc"], default="quad")
    s.set_defaults(func=cmd_variance)

    s = sub.add_parser("simulate", parents=[common, model], help="Monte Carlo experiments")
    s.add_argument("--index", choices=INDEX_CHOICES, default="dq-var")
    s.add_argument("--samples", type=int, default=5000)
    s.add_argument("--reps", type=int, default=2000)
    s.add_argument("--threads", type=int, default=None, help="worker processes (default: available CPUs)")
    s.add_argument("--sweep", choices=["alpha", "r", "n", "nu"], default=None)
    s.add_argument("--grid", default=None, help="comma-separated values for --sweep")
    s.add_argument("--shift-sweep", default=None, help="comma-separated eps values for the DR shift sweep")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("rolldq", parents=[common], help="rolling DQ with bootstrap intervals")
    s.add_argument("--input", required=True, help="panel CSV date,TICKER1,...")
    s.add_argument("--index", choices=["dq-var", "dq-es", "dq-ex"], default="dq-var")
    s.add_argument("--window", type=int, default=500)
    s.add_argument("--step", type=int, default=21)
    s.add_argument("--boot-reps", type=int, default=500)
    s.add_argument("--ci", type=float, default=0.95)
    s.add_argument("--from-prices", action="store_true")
    s.add_argument("--calendar-step", action="store_true", help="step at the first row of each month")
    s.set_defaults(func=cmd_rolldq)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate" and args.sweep and not args.grid:
            raise InputError("--sweep needs --grid")
        if getattr(args, "n", 1) < 1:
            raise InputError("--n must be positive")
        payload, hdr, rows = args.func(args)
        payload["provenance"] = _provenance(args, _seed(args))
        _emit(args, payload, hdr, rows)
        return EXIT_OK
    except InputError as exc:
        print(f"dqest: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except AssumptionViolated as exc:
        print(f"dqest: assumption violated: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except DqError as exc:
        print(f"dqest: computation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except ValueError as exc:
        print(f"dqest: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
