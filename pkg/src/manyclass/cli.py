"""Command-line interface: data generation, comparisons, sweeps and plots.

Exit status is 0 on success, 1 on a usage or configuration error and 2 when
a training run diverged (results are still written).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import experiments as ex
from .estimators import METHODS, POSITIVE_SET_MODES
from .formats import (format_csv, read_csv, read_dataset, read_params, write_dataset,
                      write_params)
from .model import ConfigurationError
from .plot import render_svg, series_from_rows
from .trainer import TrainerConfig

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2
PANEL_METRICS = {"compare": ("exact_ll", "param_diff"), "alpha-sweep": ("exact_ll", "bias")}
TRACE_METRICS = ("exact_ll", "bias", "param_diff")
DEFAULT_COMPARE = ("exact", "sampled-bernoulli", "sampled-importance", "ranking", "blackout")

log = logging.getLogger("manyclass")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- argument types -----------------------------------------------------------

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text!r}")
    return v


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated reals, got {text!r}") from None


def _name_list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _rate_map(text):
    out = {}
    for item in _name_list(text):
        key, sep, value = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected method=rate, got {item!r}")
        try:
            out[key.strip()] = float(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad rate in {item!r}") from None
    return out


# -- parser -------------------------------------------------------------------

def _add_problem(p):
    g = p.add_argument_group("problem")
    g.add_argument("--data", help="dataset file written by gen-data")
    g.add_argument("--params", help="true-parameter file (default: DATA.params)")
    g.add_argument("--n", type=_positive_int, default=2000, help="datapoints when generating")
    g.add_argument("--d", type=_positive_int, default=100, help="input dimension when generating")
    g.add_argument("--c", type=_positive_int, default=1000, help="classes when generating")
    g.add_argument("--gen-seed", type=int, default=1, help="generation seed without --data")
    g.add_argument("--smoothing", type=float, default=1.0, help="add-lambda class-count smoothing")


def _add_trainer(p):
    g = p.add_argument_group("training")
    g.add_argument("--lr", type=float, default=TrainerConfig.learning_rate)
    g.add_argument("--momentum", type=float, default=TrainerConfig.momentum)
    g.add_argument("--minibatch", type=_positive_int, default=TrainerConfig.minibatch_size)
    g.add_argument("--iterations", type=_nonneg_int, default=TrainerConfig.iterations)
    g.add_argument("--eval-every", type=_positive_int, default=TrainerConfig.eval_every)
    g.add_argument("--seed", type=int, default=0, help="minibatch and sampler seed")
    g.add_argument("--pilot-iterations", type=_positive_int, default=200,
                   help="length of learning-rate search pilots")
    g.add_argument("--time", action="store_true", help="record wall-clock milliseconds")
    g.add_argument("--out", default="-", help="output CSV path ('-' for stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="manyclass", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    subs = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = subs.add_parser("gen-data", help="generate a realisable synthetic dataset")
    p.add_argument("--n", type=_positive_int, default=2000)
    p.add_argument("--d", type=_positive_int, default=100)
    p.add_argument("--c", type=_positive_int, default=1000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True, help="dataset path")
    p.add_argument("--params-out", help="true-parameter path (default: OUT.params)")

    p = subs.add_parser("compare", help="train several methods in lockstep")
    _add_problem(p)
    p.add_argument("--methods", type=_name_list, default=list(DEFAULT_COMPARE),
                   help=f"comma list from: {', '.join(METHODS)}")
    p.add_argument("--K", type=_positive_int, default=20, help="negatives per datapoint")
    p.add_argument("--positive-set-mode", choices=POSITIVE_SET_MODES, default=POSITIVE_SET_MODES[0])
    p.add_argument("--alpha", type=float, default=None, help="ranking threshold (default ln(C-1))")
    p.add_argument("--importance-power", type=float, default=1.0)
    p.add_argument("--noise-power", type=float, default=0.0,
                   help="frequency exponent of ranking and negative-sampling negatives")
    p.add_argument("--nce-noise-power", type=float, default=1.0)
    p.add_argument("--nce-z", type=float, default=1.0)
    p.add_argument("--blackout-power", type=float, default=1.0)
    p.add_argument("--method-lr", type=_rate_map, default={},
                   help="per-method learning rates, e.g. ranking=0.01,blackout=0.005")
    p.add_argument("--search-lr", type=_name_list, default=[],
                   help="methods whose learning rate is chosen by a pilot search")
    _add_trainer(p)

    p = subs.add_parser("alpha-sweep", help="ranking runs over several thresholds")
    _add_problem(p)
    p.add_argument("--alphas", type=_float_list, default=None,
                   help="comma list of thresholds (default 1,2,ln(C-1),9)")
    p.add_argument("--K", type=_positive_int, default=20)
    p.add_argument("--noise-power", type=float, default=0.0)
    p.add_argument("--ranking-lr", type=float, default=None,
                   help="learning rate shared by all ranking runs (default --lr)")
    p.add_argument("--search-ranking-lr", action="store_true",
                   help="choose the shared ranking rate by pilot search at alpha=ln(C-1)")
    _add_trainer(p)

    p = subs.add_parser("variance-study", help="importance vs Bernoulli estimates of Z")
    p.add_argument("--c", type=_positive_int, default=1000)
    p.add_argument("--f", type=_float_list, default=[0.05],
                   help="compute fractions in (0, 1], comma separated")
    p.add_argument("--trials", type=_positive_int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile", choices=ex.Z_PROFILES, default="sparse")
    p.add_argument("--density", type=float, default=0.01, help="nonzero share of sparse scores")
    p.add_argument("--spread", type=float, default=3.0, help="log-scale of lognormal scores")
    p.add_argument("--out", default="-")

    p = subs.add_parser("plot", help="render SVG charts from a results CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--metrics", type=_name_list, default=None,
                   help="comma list of columns (default chosen from the producing command)")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--prefix", default=None, help="file prefix (default: input file stem)")

    for sp in subs.choices.values():
        sp.add_argument("--config", help="key=value file; explicit flags take precedence")
    parser._subcommands = subs.choices
    return parser


# -- config files -------------------------------------------------------------

def read_config(path) -> list[tuple[str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigurationError(f"{path}:{n}: expected key=value")
            pairs.append((key.strip().replace("-", "_"), value.strip()))
    return pairs


def _config_defaults(sub: argparse.ArgumentParser, path) -> dict:
    actions = {a.dest: a for a in sub._actions
               if a.dest not in ("help", "config") and a.option_strings}
    out = {}
    for key, raw in read_config(path):
        a = actions.get(key)
        if a is None:
            raise ConfigurationError(
                f"unknown config key {key!r}; valid keys: {', '.join(sorted(actions))}")
        if isinstance(a, argparse._StoreTrueAction):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigurationError(f"config key {key!r} expects a boolean")
            value = raw.lower() in ("true", "1", "yes")
        else:
            try:
                value = a.type(raw) if a.type else raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigurationError(f"config key {key!r}: {exc}") from None
            if a.choices is not None and value not in a.choices:
                raise ConfigurationError(
                    f"config key {key!r}: {raw!r} not in {', '.join(map(str, a.choices))}")
        out[key] = value
    return out


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subcommands[args.command]
        sub.set_defaults(**_config_defaults(sub, args.config))
        args = parser.parse_args(argv)
    return args


# -- commands -----------------------------------------------------------------

def _emit(path, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _arg_metadata(args) -> list[tuple[str, object]]:
    meta = [("command", args.command)]
    for k, v in vars(args).items():
        if k in ("command", "verbose", "out"):
            continue
        if isinstance(v, dict):
            v = ",".join(f"{a}={r!r}" for a, r in v.items())
        elif isinstance(v, list):
            v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        meta.append((f"arg.{k}", v))
    return meta


def _load_problem(args) -> ex.SyntheticProblem:
    if args.data:
        data = read_dataset(args.data)
        W = read_params(args.params or args.data + ".params")
        if W.shape != (data.C, data.D):
            raise ConfigurationError(
                f"true parameters have shape {W.shape}, dataset needs {(data.C, data.D)}")
        return ex.SyntheticProblem(W, data, None)
    return ex.generate_synthetic(args.n, args.d, args.c, args.gen_seed)


def _trainer_cfg(args) -> TrainerConfig:
    return TrainerConfig(learning_rate=args.lr, momentum=args.momentum,
                         minibatch_size=args.minibatch, iterations=args.iterations,
                         seed=args.seed, eval_every=args.eval_every)


def _write_comparison(args, comp: ex.Comparison) -> int:
    meta = _arg_metadata(args) + sorted(comp.metadata.items(), key=lambda kv: kv[0])
    for tag, trace in comp.traces.items():
        if trace.degenerate_draws:
            meta.append((f"degenerate_draws.{tag}", trace.degenerate_draws))
        if trace.diverged:
            meta.append((f"diverged.{tag}", trace.divergence_message))
    _emit(args.out, format_csv(comp.rows(), ex.CSV_FIELDS, meta))
    if comp.any_diverged:
        bad = [t for t, tr in comp.traces.items() if tr.diverged]
        print(f"error: divergence in {', '.join(bad)}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_gen_data(args) -> int:
    prob = ex.generate_synthetic(args.n, args.d, args.c, args.seed)
    write_dataset(args.out, prob.data)
    write_params(args.params_out or args.out + ".params", prob.true_params)
    return EXIT_OK


def cmd_compare(args) -> int:
    unknown = [m for m in args.methods + args.search_lr if m not in METHODS]
    if unknown:
        raise ConfigurationError(
            f"unknown method(s) {', '.join(unknown)}; valid methods: {', '.join(METHODS)}")
    if not args.methods:
        raise ConfigurationError("--methods is empty")
    stray = [m for m in list(args.method_lr) + args.search_lr if m not in args.methods]
    if stray:
        raise ConfigurationError(f"learning-rate options name methods not run: {', '.join(stray)}")
    problem = _load_problem(args)
    cfg = _trainer_cfg(args)
    specs = []
    for m in args.methods:
        spec = ex.MethodSpec.of(
            m, K=args.K, positive_set_mode=args.positive_set_mode, ranking_threshold=args.alpha,
            importance_power=args.importance_power, noise_power=args.noise_power,
            nce_noise_power=args.nce_noise_power, nce_z=args.nce_z,
            blackout_power=args.blackout_power, learning_rate=args.method_lr.get(m))
        if m in args.search_lr:
            spec.learning_rate = ex.search_learning_rate(
                problem, spec, cfg, pilot_iterations=args.pilot_iterations,
                smoothing=args.smoothing)
        specs.append(spec)
    comp = ex.run_comparison(problem, specs, cfg, smoothing=args.smoothing, time_it=args.time)
    return _write_comparison(args, comp)


def cmd_alpha_sweep(args) -> int:
    problem = _load_problem(args)
    alphas = args.alphas if args.alphas is not None else ex.default_alphas(problem.C)
    if not alphas or any(not a > 0 for a in alphas):
        raise ConfigurationError("thresholds must be positive")
    cfg = _trainer_cfg(args)
    lr = args.ranking_lr
    if args.search_ranking_lr:
        spec = ex.MethodSpec.of("ranking", K=args.K, noise_power=args.noise_power)
        lr = ex.search_learning_rate(problem, spec, cfg, pilot_iterations=args.pilot_iterations,
                                     smoothing=args.smoothing)
    comp = ex.run_alpha_sweep(problem, alphas, cfg, K=args.K, ranking_lr=lr,
                              smoothing=args.smoothing, time_it=args.time,
                              noise_power=args.noise_power)
    return _write_comparison(args, comp)


def cmd_variance_study(args) -> int:
    rows = []
    for f in args.f:
        rows += ex.run_variance_study(args.c, f, args.trials, args.seed, args.profile,
                                      args.density, args.spread)
    _emit(args.out, format_csv(rows, ex.VARIANCE_FIELDS, _arg_metadata(args)))
    return EXIT_OK


def cmd_plot(args) -> int:
    meta, header, rows = read_csv(args.input)
    if not rows:
        raise ConfigurationError(f"{args.input}: no trace rows")
    metrics = args.metrics
    if metrics is None:
        metrics = PANEL_METRICS.get(meta.get("command"), TRACE_METRICS)
    for col in ("iteration", "method", *metrics):
        if col not in header:
            raise ConfigurationError(f"{args.input}: missing column {col!r}")
    prefix = args.prefix or os.path.splitext(os.path.basename(args.input))[0]
    os.makedirs(args.out_dir, exist_ok=True)
    for metric in metrics:
        svg = render_svg(series_from_rows(rows, metric), metric, title=prefix)
        path = os.path.join(args.out_dir, f"{prefix}_{metric}.svg")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(svg)
        print(path)
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "compare": cmd_compare,
    "alpha-sweep": cmd_alpha_sweep,
    "variance-study": cmd_variance_study,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
