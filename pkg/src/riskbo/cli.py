"""Command-line interface: ``riskbo <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys

from . import harness
from .errors import RiskBOError
from .problems import get_problem


def _common(p):
    p.add_argument("--config", help="TOML experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--output", help="output file (stdout when omitted)")
    p.add_argument("--problem")
    p.add_argument("--algorithm", choices=harness.ALGORITHMS)
    p.add_argument("--budget", type=int)


def _config(args):
    return harness.load_config(args.config, seed=args.seed, output=args.output, problem=args.problem,
                               algorithm=args.algorithm, budget=args.budget)


def _emit(text, path):
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _point_csv(prefix_cols, values):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(prefix_cols)
    w.writerow([harness._fmt(v) for v in values])
    return buf.getvalue()


def cmd_run(args):
    cfg = _config(args)
    if not cfg.output:
        raise RiskBOError("run needs --output (or 'output' in the config)")
    state = harness.run(cfg)
    last = state.recommendations[-1]
    print(f"{cfg.label()}: {state.evals_used} evaluations, final gap {harness._fmt(last.gap) or 'n/a'}",
          file=sys.stderr)


def cmd_suggest(args):
    cfg = _config(args)
    state = harness.read_history(args.history, cfg)
    x, w = harness.suggest(state)
    cols = [f"x_{i + 1}" for i in range(len(x))]
    vals = list(x)
    if w is not None:
        cols += [f"w_{i + 1}" for i in range(len(w))]
        vals += list(w)
    _emit(_point_csv(cols, vals), args.output)


def cmd_recommend(args):
    cfg = _config(args)
    state = harness.read_history(args.history, cfg)
    x = harness.recommend(state)
    rec = state.recommendations[-1]
    cols = [f"x_rec_{i + 1}" for i in range(len(x))] + ["posterior_risk_estimate", "true_risk"]
    _emit(_point_csv(cols, list(x) + [rec.estimate, rec.true_risk]), args.output)


def cmd_oracle(args):
    cfg = _config(args)
    prob = get_problem(cfg.problem, alpha=cfg.alpha, risk=cfg.risk)
    rows = harness.oracle_grid(prob, args.grid)
    cols = [f"x_{i + 1}" for i in range(prob.dim_x)] + ["risk"]
    _emit(harness.write_rows(rows, cols), args.output)


def cmd_report(args):
    rows = harness.report(args.results, smooth=args.smooth)
    _emit(harness.write_rows(rows, harness.REPORT_COLUMNS), args.output)


def cmd_plot_data(args):
    rows = harness.plot_data(args.results)
    _emit(harness.write_rows(rows, harness.PLOT_COLUMNS), args.output)


def build_parser():
    parser = argparse.ArgumentParser(prog="riskbo", description="Bayesian optimization of VaR and CVaR objectives.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute one experiment")
    _common(p)
    p.set_defaults(func=cmd_run)

    for name, func, helptext in (("suggest", cmd_suggest, "emit the next candidate for a history"),
                                 ("recommend", cmd_recommend, "emit the recommended decision for a history")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--history", required=True, help="history CSV written by 'run'")
        p.set_defaults(func=func)

    p = sub.add_parser("oracle", help="brute-force risk on a decision grid")
    _common(p)
    p.add_argument("--grid", type=int, default=51, help="points per decision dimension")
    p.set_defaults(func=cmd_oracle)

    for name, func, helptext in (("report", cmd_report, "aggregate result files"),
                                 ("plot-data", cmd_plot_data, "smoothed log-gap series for plotting")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("results", nargs="+", help="result CSV files")
        if name == "report":
            p.add_argument("--smooth", action="store_true", help="window-3 moving average per run")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except RiskBOError as exc:
        print(f"riskbo: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
