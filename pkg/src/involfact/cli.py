"""Command-line front end: ``involfact <command> [flags]``.

Exit codes: 0 success, 1 internal error, 2 precondition or input violation,
64 usage error.  Output is JSON (default) or CSV, to ``--out``, to
``$INVOL_OUTPUT_DIR/<command>.<format>`` when that variable is set, or to stdout.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

from . import asym, experiments, perm_core, series
from .esf import ESFParams
from .experiments import SCHEMA_VERSION, ExperimentConfig, ExperimentReport

EXIT_OK, EXIT_INTERNAL, EXIT_PRECONDITION, EXIT_USAGE = 0, 1, 2, 64
OUTPUT_ENV = "INVOL_OUTPUT_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ----------------------------------------------------------------------------
# argument helpers


def _list(conv):
    def parse(text):
        try:
            return [conv(v) for v in text.replace(";", ",").split(",") if v.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc

    return parse


def _theta_arg(text: str, exact: bool):
    if exact:
        return Fraction(text)
    return float(Fraction(text)) if "/" in text else float(text)


def _cycle_type(args) -> perm_core.CycleType:
    if (args.cycle_type is None) == (args.counts is None):
        raise ValueError("give exactly one of --cycle-type or --counts")
    if args.cycle_type is not None:
        return perm_core.CycleType.parse(args.cycle_type)
    return perm_core.CycleType.from_counts(args.counts)


def _num(x, exact: bool):
    if exact and isinstance(x, Fraction):
        return str(x)
    return float(x)


# ----------------------------------------------------------------------------
# commands returning (config, payload) where payload has scalars and optional "rows"


def cmd_compute(args):
    c = _cycle_type(args)
    return {"cycle_type": str(c), "n": c.n}, {"invol": perm_core.invol(c), "B": perm_core.big_b(c)}


def cmd_oracle(args):
    c = _cycle_type(args)
    if c.n > perm_core.BRUTE_FORCE_CAP:
        raise asym.PreconditionError([f"n={c.n} exceeds brute-force cap {perm_core.BRUTE_FORCE_CAP}"])
    p = perm_core.permutation_of_type(c)
    values = {"invol": perm_core.invol(c), "invol_hermite": perm_core.invol_hermite(c),
              "brute_force": perm_core.brute_force_invol(p)}
    values["agree"] = len(set(values.values())) == 1
    return {"cycle_type": str(c), "n": c.n}, values


def cmd_moments(args):
    theta = _theta_arg(args.theta, args.exact)
    params = ESFParams(theta)
    rows = []
    for n in args.n:
        if args.exact:
            mean, second = series.mean_invol_exact(n, params), series.second_moment_exact(n, params)
        else:
            mean, second = series.mean_invol_real(n, params), series.second_moment_real(n, params)
        rows.append({"n": n, "mean": _num(mean, args.exact), "second_moment": _num(second, args.exact)})
    payload = dict(rows[0]) if len(rows) == 1 else {}
    payload["rows"] = rows
    return {"n": args.n, "theta": str(theta), "exact": args.exact}, payload


def cmd_asym(args):
    theta = _theta_arg(args.theta, False)
    rows = []
    for n in args.n:
        row = {"n": n, "mean_asym": float(asym.mean_asym(n, theta)),
               "second_moment_asym": float(asym.second_moment_asym(n, theta, args.variant).value)}
        if args.compare:
            mean = series.mean_invol_real(n, ESFParams(theta))
            second = series.second_moment_real(n, ESFParams(theta))
            row["mean_ratio"] = float(asym.mean_asym(n, theta).value / mean)
            row["second_moment_ratio"] = float(asym.second_moment_asym(n, theta, args.variant).value / second)
        rows.append(row)
    payload = {"growth_exponents": asym.growth_exponents(theta), "rows": rows}
    config = {"n": args.n, "theta": theta, "variant": args.variant, "compare": args.compare}
    if args.xi1 is not None or args.xi2 is not None:
        if args.xi1 is None or args.xi2 is None:
            raise ValueError("--xi1 and --xi2 go together")
        for n in args.n:
            log_bound, guarantee = asym.skew_bound(n, args.xi1, args.xi2)
            payload.setdefault("skew_bound", []).append({"n": n, "log_bound": log_bound, "guarantee": guarantee})
        config.update(xi1=args.xi1, xi2=args.xi2)
    return config, payload


def cmd_mellin(args):
    theta = _theta_arg(args.theta, False)
    rows = []
    for t in args.t:
        lhs = asym.mellin_lhs(t, theta)
        exp_ = asym.mellin_expansion(t, theta, args.variant)
        rows.append({"t": t, "lhs": lhs, "expansion": exp_, "remainder": lhs - exp_,
                     "remainder_over_t": (lhs - exp_) / t})
    return {"theta": theta, "t": args.t, "variant": args.variant}, {"rows": rows}


EXPERIMENT_COMMANDS = {
    "clt": experiments.clt_experiment,
    "paths": experiments.functional_experiment,
    "membership": experiments.membership_experiment,
    "inequalities": experiments.inequality_suite,
    "compose-bias": experiments.composition_bias_experiment,
}

_CONFIG_FLAGS = ("n", "theta", "samples", "seed", "horizon_factor", "t_grid", "xi", "thetas", "chunk")


def experiment_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = {k: getattr(args, k) for k in _CONFIG_FLAGS if getattr(args, k, None) is not None}
    overrides["workers"] = args.threads
    return cfg.replace(**overrides)


def run_experiment(args) -> ExperimentReport:
    cfg = experiment_config(args)
    report = EXPERIMENT_COMMANDS[args.command](cfg)
    if args.command == "membership" and args.skew:
        xi1, xi2 = args.skew
        skew = experiments.skew_experiment(cfg, xi1, xi2)
        report.results["skew"] = skew.results
        report.config["skew"] = [xi1, xi2]
    return report


COMMANDS = {"compute": cmd_compute, "oracle": cmd_oracle, "moments": cmd_moments,
            "asym": cmd_asym, "mellin": cmd_mellin}


# ----------------------------------------------------------------------------
# parser and output


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--out", help="output file (relative paths resolve against $%s)" % OUTPUT_ENV)
    common.add_argument("--timing", action="store_true", help="include wall-clock seconds in the report")

    parser = _Parser(prog="involfact", description="Involution factorizations of random permutations.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, helptext in (("compute", "invol and B of a cycle type"),
                           ("oracle", "compare invol with the Hermite form and brute force")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--cycle-type", help='compact notation, e.g. "1^2 3"')
        p.add_argument("--counts", type=_list(int), help="count vector c_1,c_2,...")

    p = sub.add_parser("moments", parents=[common], help="E invol and E invol^2 under ESF(theta)")
    p.add_argument("--n", type=_list(int), required=True)
    p.add_argument("--theta", default="1")
    p.add_argument("--exact", action="store_true", help="rational arithmetic; theta as p/q")

    p = sub.add_parser("asym", parents=[common], help="asymptotic moments and the typical-value bound")
    p.add_argument("--n", type=_list(int), required=True)
    p.add_argument("--theta", default="1")
    p.add_argument("--variant", choices=("corrected", "published"), default="corrected")
    p.add_argument("--compare", action="store_true", help="also report ratios to the exact moments")
    p.add_argument("--xi1", type=int)
    p.add_argument("--xi2", type=int)

    p = sub.add_parser("mellin", parents=[common], help="harmonic-sum expansion check")
    p.add_argument("--theta", default="1")
    p.add_argument("--t", type=_list(float), default=[0.2, 0.1, 0.05, 0.025, 0.0125])
    p.add_argument("--variant", choices=("corrected", "published"), default="corrected")

    for name in EXPERIMENT_COMMANDS:
        p = sub.add_parser(name, parents=[common], help=f"{name} Monte Carlo experiment")
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--n", type=_list(int))
        p.add_argument("--theta", type=lambda s: float(Fraction(s)))
        p.add_argument("--samples", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--chunk", type=int)
        p.add_argument("--horizon-factor", dest="horizon_factor", type=int)
        p.add_argument("--t-grid", dest="t_grid", type=_list(float))
        p.add_argument("--xi", type=_list(int))
        p.add_argument("--thetas", type=_list(lambda s: float(Fraction(s))))
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        if name == "membership":
            p.add_argument("--skew", type=_list(int), metavar="XI1,XI2",
                           help="also run the typical-value bound check")
    return parser


def _flat_csv(config: dict, payload: dict) -> str:
    rows = payload.get("rows") or [{k: v for k, v in payload.items() if not isinstance(v, (dict, list))}]
    cols: list[str] = []
    for r in rows:
        cols += [c for c in r if c not in cols]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def render(args, config: dict | None = None, payload: dict | None = None,
           report: ExperimentReport | None = None) -> str:
    if report is not None:
        return report.to_json(timing=args.timing) if args.format == "json" else report.to_csv()
    if args.format == "csv":
        return _flat_csv(config, payload)
    doc = {"schema_version": SCHEMA_VERSION, "command": args.command,
           "config": experiments._plain(config), **experiments._plain(payload)}
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _destination(args) -> Path | None:
    env = os.environ.get(OUTPUT_ENV)
    if args.out:
        path = Path(args.out)
        return Path(env) / path if env and not path.is_absolute() else path
    if env:
        return Path(env) / f"{args.command}.{args.format}"
    return None


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        if args.command in EXPERIMENT_COMMANDS:
            text = render(args, report=run_experiment(args))
        else:
            config, payload = COMMANDS[args.command](args)
            text = render(args, config, payload)
    except (asym.PreconditionError, perm_core.CycleTypeError, series.SeriesDomainError,
            ValueError, TypeError, ZeroDivisionError) as exc:
        print(f"involfact {args.command}: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except Exception as exc:  # noqa: BLE001
        print(f"involfact {args.command}: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    dest = _destination(args)
    try:
        if dest is None:
            sys.stdout.write(text)
        else:
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_text(text)
    except OSError as exc:
        print(f"involfact {args.command}: cannot write output: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
