"""Command-line interface: pricing, convergence studies, smiles, hedging
and calibration, with CSV/JSON reports and rendered figures.

Exit codes: 0 success, 2 input validation, 3 numerical failure, 4 IO.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .calibration import CalibrationProblem, calibrate, implied_smile
from .errors import NumericalError, ValidationError, VixVolterraError
from .hedging import (cir_two_swap_hedge, frechet_delta_mc,
                      volterra_single_swap_hedge)
from .lognormal import (DiscretizationGrid, McConfig,
                        ToyModel, VixPayoff, convergence_study,
                        price_vix_option_mc, toy_hedge_ratio)
from .marketdata import (load_model_config, load_quotes, persist_result)
from .modulated import (CirModulator, LevyOuModulator, ModulatedModel,
                        approximate_price_fourier,
                        price_vix_option_mc_modulated)


def _positive_int(text):
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vixvolterra",
        description="VIX option pricing in (modulated) Gaussian-Volterra "
                    "volatility models")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, paths_default=50_000):
        p.add_argument("--model", required=True, help="model config JSON")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=1234)
        p.add_argument("--paths", type=_positive_int, default=paths_default)
        p.add_argument("--n", type=_positive_int, default=90)
        p.add_argument("--scheme", choices=("rectangle", "trapezoid"),
                       default="trapezoid")
        p.add_argument("--kappa", type=float, default=None,
                       help="grid exponent (default 2 trapezoid, 1 rectangle)")
        p.add_argument("--workers", type=_positive_int,
                       default=os.cpu_count() or 1)
        p.add_argument("--no-control-variate", action="store_true")
        p.add_argument("--no-plot", action="store_true")

    p = sub.add_parser("price", help="price one VIX option by Monte Carlo")
    common(p)
    p.add_argument("--strike", type=float, required=True)
    p.add_argument("--payoff", choices=("call", "put", "future"),
                   default="call")
    p.add_argument("--engine", choices=("mc", "fourier"), default="mc")

    p = sub.add_parser("convergence",
                       help="discretisation error of the MC schemes")
    common(p)
    p.add_argument("--strike", type=float, default=0.1)
    p.add_argument("--n-list", type=_float_list, default=[5, 10, 20, 40, 80])
    p.add_argument("--reference-n", type=_positive_int, default=2000)

    p = sub.add_parser("smile", help="model implied-volatility smile")
    common(p, paths_default=100_000)
    p.add_argument("--strikes", type=_float_list, default=None,
                   help="absolute strikes, comma separated")
    p.add_argument("--moneyness", type=_float_list,
                   default=[0.8, 1.2, 7],
                   help="lo,hi,count relative to the model future")
    p.add_argument("--engine", choices=("mc", "fourier"), default="mc")

    p = sub.add_parser("calibrate", help="fit the modulated model to quotes")
    common(p, paths_default=20_000)
    p.add_argument("--quotes", required=True, help="quote CSV path")
    p.add_argument("--mode", choices=("per_slice", "per_slice_fixed_curve",
                                      "joint"), default="per_slice")
    p.add_argument("--engine", choices=("fourier", "mc"), default="fourier")
    p.add_argument("--multistart", type=_positive_int, default=5)
    p.add_argument("--start", default=None,
                   help="JSON dict of starting parameter values")

    p = sub.add_parser("hedge", help="hedge ratios for a VIX option")
    common(p, paths_default=20_000)
    p.add_argument("--strike", type=float, required=True)
    p.add_argument("--date", type=float, default=None,
                   help="curve date for the sensitivity density")
    p.add_argument("--swap-windows", type=_float_list, default=None,
                   help="s1,e1,s2,e2 for the CIR two-swap hedge")
    return parser


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def _digest(command, args, extra_files=()):
    skip = {"out", "workers", "no_plot"}
    payload = {"command": command,
               "args": {k: v for k, v in sorted(vars(args).items())
                        if k not in skip and not callable(v)}}
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    h = hashlib.sha256(blob)
    for path in extra_files:
        with open(path, "rb") as handle:
            h.update(handle.read())
    return h.hexdigest()


def _write_manifest(out_dir, command, args, extra_files, wall_time):
    manifest = {
        "command": command,
        "config_digest": _digest(command, args, extra_files),
        "seed": args.seed,
        "versions": {
            "vixvolterra": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "wall_time_s": wall_time,
    }
    path = os.path.join(out_dir, "run_manifest.json")
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _write_json(payload, out_dir, name):
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return path


def _write_csv(rows, header, out_dir, name):
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v
                             for v in row])
    return path


def _emit(payload, args, command, extra_files=(), wall_time=0.0):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(payload, args.out, f"{command}.json")
        _write_manifest(args.out, command, args, extra_files, wall_time)
    print(text)


def _mc_config(args):
    kappa = args.kappa
    if kappa is None:
        kappa = 2.0 if args.scheme == "trapezoid" else 1.0
    return McConfig(paths=args.paths, seed=args.seed,
                    use_control_variate=not args.no_control_variate,
                    scheme=args.scheme, workers=args.workers), kappa


def _modulated_model(bundle, horizon):
    return ModulatedModel(bundle.kernel, bundle.modulator, bundle.curve,
                          horizon)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_price(args):
    tic = time.perf_counter()
    bundle = load_model_config(args.model)
    if args.strike < 0.0:
        raise ValidationError("strike must be nonnegative")
    config, kappa = _mc_config(args)
    payoff = VixPayoff(args.payoff, args.strike)
    grid = DiscretizationGrid(bundle.maturity, bundle.window, args.n, kappa)
    if args.engine == "fourier":
        if not bundle.is_modulated:
            raise ValidationError("the Fourier engine needs a modulated model")
        model = _modulated_model(bundle, bundle.maturity + bundle.window)
        value = approximate_price_fourier(model, 0.0, bundle.maturity,
                                          bundle.window, args.strike,
                                          args.payoff)
        payload = {"estimate": float(value), "std_error": 0.0,
                   "engine": "fourier", "n": None, "scheme": None,
                   "seed": args.seed, "control_variate_offset": 0.0}
    else:
        if bundle.is_modulated:
            model = _modulated_model(bundle, bundle.maturity + bundle.window)
            mc = price_vix_option_mc_modulated(model, grid, config, payoff)
        else:
            mc = price_vix_option_mc(bundle.kernel, bundle.curve, grid,
                                     config, payoff)
        payload = {"estimate": mc.estimate, "std_error": mc.std_error,
                   "engine": "mc", "n": mc.n, "scheme": mc.scheme,
                   "seed": mc.seed,
                   "control_variate_offset": mc.control_variate_offset}
    _emit(payload, args, "price", extra_files=(args.model,),
          wall_time=time.perf_counter() - tic)
    return 0


def cmd_convergence(args):
    tic = time.perf_counter()
    bundle = load_model_config(args.model)
    if bundle.is_modulated:
        raise ValidationError(
            "convergence studies target the pure Gaussian-Volterra model")
    n_list = [int(n) for n in args.n_list]
    if args.reference_n <= max(n_list):
        raise ValidationError("--reference-n must exceed every ladder n")
    config, kappa = _mc_config(args)
    payoff = VixPayoff.call(args.strike)
    result = convergence_study(
        bundle.kernel, bundle.curve, bundle.maturity, bundle.window,
        n_list, args.reference_n, args.scheme, kappa, config, payoff)

    rows = [(r.n, r.price, r.std_error, r.abs_error, *r.error_ci,
             int(r.used_in_fit)) for r in result.rows]
    payload = {
        "scheme": result.scheme, "kappa": result.kappa,
        "reference_n": result.reference_n,
        "reference_price": result.reference_price,
        "reference_std_error": result.reference_std_error,
        "slope": result.slope,
        "seed": args.seed,
    }
    if result.slope is None:
        payload["note"] = "slope omitted: fewer than two usable error points"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_csv(rows,
                   ("n", "price", "std_error", "abs_error",
                    "error_ci_lo", "error_ci_hi", "used_in_fit"),
                   args.out, "convergence.csv")
        if not args.no_plot:
            from .plots import convergence_figure
            convergence_figure(result,
                               os.path.join(args.out, "convergence.png"))
    _emit(payload, args, "convergence", extra_files=(args.model,),
          wall_time=time.perf_counter() - tic)
    return 0


def cmd_smile(args):
    tic = time.perf_counter()
    bundle = load_model_config(args.model)
    config, _ = _mc_config(args)
    if bundle.is_modulated:
        model = _modulated_model(bundle, bundle.maturity + bundle.window)
        future = approximate_price_fourier(model, 0.0, bundle.maturity,
                                           bundle.window, 0.0, "future") \
            if args.engine == "fourier" else None
    else:
        if args.engine == "fourier":
            raise ValidationError("the Fourier engine needs a modulated model")
        model = (bundle.kernel, bundle.curve)
        future = None

    if args.strikes:
        strikes = np.asarray(args.strikes, dtype=float)
    else:
        lo, hi, count = args.moneyness
        if future is None:
            from .lognormal import price_from_samples, sample_vix_squared
            grid = DiscretizationGrid(bundle.maturity, bundle.window,
                                      args.n, 2.0)
            if bundle.is_modulated:
                from .modulated import sample_vix_squared_modulated
                samples = sample_vix_squared_modulated(model, grid, config)
            else:
                samples = sample_vix_squared(bundle.kernel, bundle.curve,
                                             grid, config)
            future = price_from_samples(samples, VixPayoff.future()).estimate
        strikes = future * np.linspace(lo, hi, int(count))

    points = implied_smile(model, bundle.maturity, strikes, bundle.window,
                           engine=args.engine, config=config, grid_n=args.n)
    fut_out = future
    if fut_out is None:
        fut_out = float("nan")
    rows = [(p.strike, p.price, p.implied_vol, p.flag) for p in points]
    vols = [p.implied_vol for p in points if p.flag == "ok"]
    payload = {
        "future": fut_out,
        "strikes": [p.strike for p in points],
        "implied_vols": [p.implied_vol for p in points],
        "vol_spread": (max(vols) - min(vols)) if vols else None,
        "seed": args.seed, "engine": args.engine,
    }
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_csv(rows, ("strike", "price", "implied_vol", "flag"),
                   args.out, "smile.csv")
        if not args.no_plot:
            from .plots import smile_figure
            smile_figure(points, fut_out, os.path.join(args.out, "smile.png"))
    _emit(payload, args, "smile", extra_files=(args.model,),
          wall_time=time.perf_counter() - tic)
    return 0


def _calibration_table(result):
    lines = ["maturity_days | lambda  Lambda  a       gamma0  xi0     | error"]
    lines.append("-" * len(lines[0]))
    if result.mode == "joint":
        groups = {m: result.params for m in sorted(result.per_maturity_rmse)}
    else:
        groups = result.params
    for mat in sorted(result.per_maturity_rmse):
        p = groups[mat]
        xi0 = p.get("xi0", float("nan"))
        lines.append(
            f"{mat:>13} | {p['lambda']:<7.4g} {p['Lambda']:<7.4g} "
            f"{p['a']:<7.4g} {p['gamma0']:<7.4g} {xi0:<7.4g} "
            f"| {result.per_maturity_rmse[mat]:.6f}")
    return "\n".join(lines) + "\n"


def cmd_calibrate(args):
    tic = time.perf_counter()
    bundle = load_model_config(args.model)
    quotes = load_quotes(args.quotes, bundle.conventions)
    start = json.loads(args.start) if args.start else {}
    problem = CalibrationProblem(
        quotes=quotes, mode=args.mode, pricing_engine=args.engine,
        kernel=bundle.kernel,
        curve=bundle.curve if args.mode != "per_slice" else None,
        conventions=bundle.conventions, start=start,
        multistart=args.multistart, seed=args.seed,
        mc_config=McConfig(paths=args.paths, seed=args.seed,
                           scheme=args.scheme, workers=args.workers),
        mc_grid_n=args.n)
    result = calibrate(problem)
    payload = {
        "mode": result.mode,
        "params": result.params if result.mode == "joint" else
        {str(k): v for k, v in result.params.items()},
        "per_maturity_rmse": {str(k): v
                              for k, v in result.per_maturity_rmse.items()},
        "iterations": result.iterations,
        "objective": result.objective,
        "seed": args.seed,
    }
    extra = (args.model, args.quotes)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        persist_result(result, os.path.join(args.out, "calibration.json"),
                       kind="CalibrationResult")
        with open(os.path.join(args.out, "calibration_table.txt"), "w",
                  encoding="utf-8", newline="\n") as handle:
            handle.write(_calibration_table(result))
        if not args.no_plot:
            fits = {}
            conv = bundle.conventions
            from .black import black_implied_vol
            from .errors import ArbitrageError
            for mat in sorted(quotes):
                params = result.params if result.mode == "joint" \
                    else result.params[mat]
                years = conv.years(mat)
                modulator = LevyOuModulator(params["lambda"],
                                            params["Lambda"], params["a"],
                                            params["gamma0"])
                from .curves import ForwardVarianceCurve
                curve = ForwardVarianceCurve.flat(params["xi0"]) \
                    if "xi0" in params else bundle.curve
                model = ModulatedModel(problem.kernel, modulator, curve,
                                       years + conv.window_years + 1e-9)
                strikes = np.array([q.strike for q in quotes[mat]])
                pts = implied_smile(model, years, strikes, conv.window_years,
                                    engine="fourier")
                market_vols = []
                future = approximate_price_fourier(model, 0.0, years,
                                                   conv.window_years, 0.0,
                                                   "future")
                for q in quotes[mat]:
                    try:
                        market_vols.append(black_implied_vol(
                            q.mid_price, future, q.strike, years))
                    except (ArbitrageError, NumericalError):
                        market_vols.append(float("nan"))
                fits[mat] = {
                    "strikes": strikes,
                    "model_prices": [p.price for p in pts],
                    "model_vols": [p.implied_vol for p in pts],
                    "market_vols": market_vols,
                }
            from .plots import calibration_figure
            calibration_figure(quotes, fits,
                               os.path.join(args.out, "calibration.png"))
    _emit(payload, args, "calibrate", extra_files=extra,
          wall_time=time.perf_counter() - tic)
    return 0


def _toy_from_config(path):
    with open(path, encoding="utf-8") as handle:
        cfg = json.load(handle)
    toy = cfg.get("toy")
    if toy is None:
        return None, None
    slope = float(toy.get("variance_slope", 0.01))
    model = ToyModel(float(toy["forward_variance"]),
                     lambda t: slope * t)
    return model, float(toy.get("maturity", cfg.get("maturity", 1.0)))


def cmd_hedge(args):
    tic = time.perf_counter()
    toy, toy_maturity = _toy_from_config(args.model)
    config_payload = None
    if toy is not None:
        ratio = toy_hedge_ratio(toy, args.strike, 0.0, toy_maturity)
        config_payload = {
            "instruments": ["instantaneous_variance_swap"],
            "weights": {"instantaneous_variance_swap": ratio},
            "residual_risk": 0.0,
            "std_errors": {},
            "seed": args.seed,
        }
        _emit(config_payload, args, "hedge", extra_files=(args.model,),
              wall_time=time.perf_counter() - tic)
        return 0

    bundle = load_model_config(args.model)
    config, kappa = _mc_config(args)
    payoff = VixPayoff.call(args.strike)
    grid = DiscretizationGrid(bundle.maturity, bundle.window, args.n, kappa)
    if bundle.is_modulated and isinstance(bundle.modulator, CirModulator):
        t_mat, window = bundle.maturity, bundle.window
        if args.swap_windows:
            vals = args.swap_windows
            if len(vals) != 4:
                raise ValidationError("--swap-windows needs s1,e1,s2,e2")
            windows = ((vals[0], vals[1]), (vals[2], vals[3]))
        else:
            windows = ((t_mat, t_mat + window),
                       (t_mat + 0.5 * window, t_mat + 1.5 * window))
        horizon = max(w[1] for w in windows) + 1e-9
        model = ModulatedModel(bundle.kernel, bundle.modulator, bundle.curve,
                               horizon)
        report = cir_two_swap_hedge(model, 0.0, t_mat, window, args.strike,
                                    windows, config, n=min(args.n, 48))
    elif bundle.is_modulated:
        raise ValidationError("hedge supports pure Volterra, CIR-modulated, "
                              "or toy models")
    else:
        report = volterra_single_swap_hedge(bundle.kernel, bundle.curve,
                                            grid, config, payoff)
        if args.date is not None:
            delta = frechet_delta_mc(bundle.kernel, bundle.curve, grid,
                                     config, payoff, args.date)
            report.std_errors["curve_delta"] = delta.std_error
            report.weights["curve_delta@" + repr(args.date)] = delta.value
    payload = {
        "instruments": list(report.instruments),
        "weights": report.weights,
        "residual_risk": report.residual_risk,
        "std_errors": report.std_errors,
        "seed": args.seed,
    }
    _emit(payload, args, "hedge", extra_files=(args.model,),
          wall_time=time.perf_counter() - tic)
    return 0


_COMMANDS = {
    "price": cmd_price,
    "convergence": cmd_convergence,
    "smile": cmd_smile,
    "calibrate": cmd_calibrate,
    "hedge": cmd_hedge,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except VixVolterraError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
