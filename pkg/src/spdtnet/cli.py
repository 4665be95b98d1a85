"""Command-line pipeline: extract, densify, fit, generate, simulate, analyze, compare, validate.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 fitting did not converge.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .model import NetworkError, TimeGrid, read_network, validate, write_network
from .params import ParamFileError, merged, default_params, read_kv, write_kv

log = logging.getLogger("spdtnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FIT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _num(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _log_run(directory: Path, command: str, args: argparse.Namespace, extra: dict | None = None):
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    cfg.update(extra or {})
    cfg["version"] = __version__
    (directory / f"{command}.run.json").write_text(json.dumps(cfg, indent=2, sort_keys=True, default=str) + "\n")


def _load_params(path) -> dict:
    return merged(default_params(), read_kv(path) if path else {})


def _read_samples(path) -> np.ndarray:
    path = Path(path)
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            try:
                values.append(int(s))
            except ValueError:
                raise NetworkError(f"{path}: expected one integer per line, got {s!r}", lineno) from None
    return np.asarray(values, dtype=np.int64)


# ---------------------------------------------------------------------------
# subcommands


def cmd_extract(args):
    from .extraction import extract_network, read_gps_csv
    if args.delta_seconds % args.step_seconds:
        raise UsageError("--delta-seconds must be a multiple of --step-seconds")
    df = read_gps_csv(args.input)
    net, users = extract_network(df, args.step_seconds, args.delta_seconds, args.radius_m, args.gap_min * 60)
    out = _out_dir(args.output)
    write_network(net, out)
    with open(out / "users.csv", "w") as fh:
        fh.writelines(f"{v},{u}\n" for v, u in enumerate(users))
    log.info("extracted %d links over %d users", net.n_links, net.n_nodes)
    _log_run(out, "extract", args)


def cmd_densify(args):
    from .extraction import densify
    net = read_network(args.network)
    dense = densify(net, np.random.default_rng(args.seed), fill_all=not args.fill_one)
    out = _out_dir(args.output)
    write_network(dense, out)
    log.info("densified %d -> %d links", net.n_links, dense.n_links)
    _log_run(out, "densify", args)


def cmd_fit(args):
    from .analysis import cip_samples
    from .fitting import CipSamples, fit_all
    if args.network:
        net = read_network(args.network)
        s = cip_samples(net)
        samples = CipSamples(s["t_a"], s["h"], s["d"], s["t_c"], s["t_d"])
        grid, delta = net.grid, net.delta
    else:
        missing = [f for f in ("ta", "h", "d", "tc") if getattr(args, f) is None]
        if missing:
            raise UsageError("fit needs --network or all of --ta --h --d --tc (missing: "
                             + ", ".join("--" + m for m in missing) + ")")
        samples = CipSamples(_read_samples(args.ta), _read_samples(args.h), _read_samples(args.d),
                             _read_samples(args.tc), _read_samples(args.td) if args.td else None)
        grid = TimeGrid(args.step_seconds)
        if args.delta_seconds % args.step_seconds:
            raise UsageError("--delta-seconds must be a multiple of --step-seconds")
        delta = args.delta_seconds // args.step_seconds
    fitted = fit_all(samples, grid, delta)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_kv(out, fitted.as_kv())
    log.info("fitted %s", fitted.as_kv())
    _log_run(out.parent, "fit", args, {"diagnostics": fitted.diagnostics})


def cmd_generate(args):
    from .generator import AdnParams, ModelParams, generate_adn, generate_network
    values = _load_params(args.params)
    for key in ("mu", "eta"):
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    if args.step_seconds is not None:
        values["step_seconds"] = args.step_seconds
    if args.delta_seconds is not None:
        values["delta_seconds"] = args.delta_seconds
        values.pop("delta_steps", None)
    step = int(values.get("step_seconds", 300))
    grid = TimeGrid(step, args.days)
    if args.mode in ("gdt", "gdh"):
        params = ModelParams.from_kv(values, args.mode, n_nodes=args.nodes, grid=grid, master_seed=args.seed)
        net = generate_network(params, link_cap=args.link_cap)
    else:
        net = generate_adn(AdnParams.from_kv(values, args.mode), args.nodes, args.days, args.seed, grid)
    out = _out_dir(args.output)
    write_network(net, out)
    log.info("generated %s", net)
    _log_run(out, "generate", args, {"resolved_params": values})


def cmd_simulate(args):
    from .diffusion import EVENT_NAMES, DiseaseParams, run_sir
    net = read_network(args.network)
    values = merged(default_params(), read_kv(args.disease) if args.disease else {})
    overrides = {}
    if args.seeds is not None:
        overrides["seeds"] = args.seeds
    if args.r_t is not None:
        overrides["r_t"] = args.r_t
    if args.sigma is not None:
        overrides["sigma"] = args.sigma
    params = DiseaseParams.from_kv(values, **overrides)
    if args.strict_tau:
        params = params.with_strict_tau()
    res = run_sir(net, params, runs=args.runs, seed=args.seed, days=args.days, log_events=args.events)
    out = _out_dir(args.output)
    summ = res.summary()
    with open(out / "daily.csv", "w") as fh:
        fh.write("day,I_p_mean,I_p_std,I_a_mean,I_a_std\n")
        for d in range(res.prevalence.shape[1]):
            fh.write(f"{d},{_num(summ['I_p_mean'][d])},{_num(summ['I_p_std'][d])},"
                     f"{_num(summ['I_a_mean'][d])},{_num(summ['I_a_std'][d])}\n")
    if args.events:
        with open(out / "events.csv", "w") as fh:
            fh.write("run,day,node,event\n")
            fh.writelines(f"{r},{d},{v},{EVENT_NAMES[e]}\n" for r, d, v, e in res.events)
    log.info("final mean cumulative infections %.1f", summ["I_a_mean"][-1])
    _log_run(out, "simulate", args, {"resolved_disease": vars(params)})


def _write_hist(path: Path, hist):
    with open(path, "w") as fh:
        fh.write("bin,proportion\n")
        fh.writelines(f"{_num(b)},{_num(p)}\n" for b, p in zip(hist.bins.tolist(), hist.proportions.tolist()))


def cmd_analyze(args):
    from .analysis import (Histogram, cip_histograms, reference_histograms, rse, static_metrics, temporal_metrics)
    from .stochastic import BoundedPowerLawParam
    net = read_network(args.network)
    out = _out_dir(args.output)
    metrics = set(args.metrics.split(","))
    unknown = metrics - {"cip", "static", "temporal"}
    if unknown:
        raise UsageError(f"unknown metric group(s): {', '.join(sorted(unknown))}")
    table: dict[str, np.ndarray] = {}
    if "cip" in metrics:
        hists = cip_histograms(net)
        for name, h in hists.items():
            _write_hist(out / f"hist_{name}.csv", h)
        v = _load_params(args.params)
        degree = (BoundedPowerLawParam(float(v["beta"]), float(v["xi"]), float(v.get("psi", 1.0)))
                  if args.degree_model == "heterogeneous" else float(v["lambda"]))
        refs = reference_histograms(net, float(v["rho"]), float(v["q"]), degree, float(v["p_c"]),
                                    float(v.get("p_b", v["rho"])))
        with open(out / "rse.csv", "w") as fh:
            fh.write("parameter,rse\n")
            fh.writelines(f"{k},{_num(rse(hists[k], refs[k]))}\n" for k in hists)
    if "static" in metrics:
        sm = static_metrics(net)
        table.update(sm.per_node_table())
        _write_hist(out / "hist_out_degree.csv", Histogram.from_integers(sm.out_degree))
        _write_hist(out / "hist_in_degree.csv", Histogram.from_integers(sm.in_degree))
        _write_hist(out / "hist_clustering.csv", Histogram.from_reals(sm.clustering, 0.01))
    if "temporal" in metrics:
        sources = None
        if args.sources and args.sources < net.n_nodes:
            sources = np.sort(np.random.default_rng(args.seed).choice(net.n_nodes, args.sources, replace=False))
            log.warning("temporal metrics from %d sampled sources are approximate", args.sources)
        tm = temporal_metrics(net, args.max_gap_days, 1, sources=sources)
        table["temporal_betweenness"] = tm.betweenness
        table["temporal_closeness"] = tm.closeness
    if table:
        with open(out / "node_metrics.csv", "w") as fh:
            fh.write("node,metric,value\n")
            for name, values in table.items():
                fh.writelines(f"{v},{name},{_num(x)}\n" for v, x in enumerate(values.tolist()))
    _log_run(out, "analyze", args)


def _read_hist(path):
    import pandas as pd
    from .analysis import Histogram
    df = pd.read_csv(path)
    if list(df.columns[:2]) != ["bin", "proportion"]:
        raise NetworkError(f"{path}: expected a bin,proportion header")
    bins = df["bin"].to_numpy()
    width = 1.0 if np.issubdtype(bins.dtype, np.integer) else float(np.round(np.min(np.diff(bins)), 12)) if len(bins) > 1 else 0.01
    return Histogram(bins, df["proportion"].to_numpy(), width)


def cmd_compare(args):
    import pandas as pd
    from .analysis import rse
    from .diffusion import apv
    if bool(args.hist) == bool(args.series):
        raise UsageError("compare needs exactly one of --hist or --series")
    lines = []
    if args.hist:
        value = rse(_read_hist(args.hist[0]), _read_hist(args.hist[1]))
        lines = ["metric,value\n", f"rse,{_num(value)}\n"]
    else:
        ref = pd.read_csv(args.series[0])
        obs = pd.read_csv(args.series[1])
        for df, p in ((ref, args.series[0]), (obs, args.series[1])):
            if args.column not in df.columns:
                raise NetworkError(f"{p}: no column {args.column!r}")
        per_day, mean = apv(ref[args.column].to_numpy(), obs[args.column].to_numpy())
        lines = ["day,apv\n"] + [f"{d},{_num(x)}\n" for d, x in enumerate(per_day)] + [f"mean,{_num(mean)}\n"]
    if args.output:
        Path(args.output).write_text("".join(lines))
    else:
        sys.stdout.write("".join(lines))


def cmd_validate(args):
    net = read_network(args.path)
    validate(net)
    print(f"{args.path}: OK ({net.n_links} links, {net.n_copies} copies)")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spdt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version",
                   version=f"spdtnet {__version__} (python {platform.python_version()}, numpy {np.__version__})")
    p.add_argument("--validate", metavar="PATH", help="validate a network and report the first violation")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("extract", help="GPS updates -> contact network")
    s.add_argument("--input", "-i", required=True)
    s.add_argument("--output", "-o", required=True)
    s.add_argument("--delta-seconds", type=int, default=10800)
    s.add_argument("--radius-m", type=float, default=20.0)
    s.add_argument("--gap-min", type=float, default=30.0)
    s.add_argument("--step-seconds", type=int, default=300)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("densify", help="fill inactive days with copied link-days")
    s.add_argument("--network", "-n", required=True)
    s.add_argument("--output", "-o", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--fill-one", action="store_true", help="fill a single random missing day per node")
    s.set_defaults(func=cmd_densify)

    s = sub.add_parser("fit", help="fit model parameters from interaction samples")
    s.add_argument("--network", "-n", help="take samples from a network instead of files")
    s.add_argument("--ta")
    s.add_argument("--h")
    s.add_argument("--d")
    s.add_argument("--tc")
    s.add_argument("--td")
    s.add_argument("--step-seconds", type=int, default=300)
    s.add_argument("--delta-seconds", type=int, default=10800)
    s.add_argument("--output", "-o", required=True, help="output key=value file")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("generate", help="generate a synthetic network")
    s.add_argument("--mode", choices=("gdt", "gdh", "bdt", "bdh"), default="gdt")
    s.add_argument("--nodes", type=int, required=True)
    s.add_argument("--days", type=int, default=7)
    s.add_argument("--step-seconds", type=int)
    s.add_argument("--delta-seconds", type=int)
    s.add_argument("--params", help="key=value parameter file layered over the shipped defaults")
    s.add_argument("--mu", type=float)
    s.add_argument("--eta", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--link-cap", type=int, default=400_000_000)
    s.add_argument("--output", "-o", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("simulate", help="Monte-Carlo SIR over a network")
    s.add_argument("--network", "-n", required=True)
    s.add_argument("--disease", help="key=value disease parameter file")
    s.add_argument("--runs", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--seeds", type=int, help="initially infectious nodes")
    s.add_argument("--r-t", type=float)
    s.add_argument("--sigma", type=float)
    s.add_argument("--strict-tau", action="store_true", help="infectious period fixed at 3 days")
    s.add_argument("--days", type=int)
    s.add_argument("--events", action="store_true", help="also write the per-run event log")
    s.add_argument("--output", "-o", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("analyze", help="network metrics and histograms")
    s.add_argument("--network", "-n", required=True)
    s.add_argument("--metrics", default="cip,static")
    s.add_argument("--params", help="parameter file for the RSE reference laws (default: shipped defaults)")
    s.add_argument("--degree-model", choices=("heterogeneous", "homogeneous"), default="heterogeneous")
    s.add_argument("--max-gap-days", type=int, default=5)
    s.add_argument("--sources", type=int, help="sample this many sources for temporal metrics")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", "-o", required=True)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("compare", help="RSE of two histograms or APV of two simulation series")
    s.add_argument("--hist", nargs=2, metavar=("OBSERVED", "REFERENCE"))
    s.add_argument("--series", nargs=2, metavar=("REFERENCE", "OBSERVED"))
    s.add_argument("--column", default="I_a_mean")
    s.add_argument("--output", "-o")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("validate", help="check a network against the data model")
    s.add_argument("path")
    s.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    from .fitting import FittingError
    from .extraction import GpsDataError
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            parser.error("--threads must be positive")
        import numba
        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    if args.validate:
        if args.command:
            parser.error("--validate cannot be combined with a subcommand")
        args.path = args.validate
        args.func = cmd_validate
    elif not args.command:
        parser.error("a subcommand is required")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"spdt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FittingError as exc:
        print(f"spdt: fitting failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (NetworkError, GpsDataError, ParamFileError) as exc:
        print(f"spdt: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"spdt: {exc.strerror}: {exc.filename}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"spdt: invalid input: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
