"""Command-line front end.

Every subcommand prints its result to stdout.  With ``--output DIR`` the
result is also written to ``DIR`` together with ``<command>.manifest.json``
recording the resolved configuration, seeds, version and output files.

Exit codes: 0 success, 1 usage error (bad flags, malformed config, unreadable
or malformed input files), 2 computation error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import contextmanager
from dataclasses import replace
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from . import closed_forms as cf
from . import io
from .constructions import KINDS, ConstructionSpec, figure1_network, point_distribution
from .exact import (EXACT, MONTE_CARLO, DropoutConfig, EnumerationTooLarge, criterion, psi,
                    penalty_decomposition)
from .experiments import (NEGWEIGHTS_CONFIG, SCALE_CONFIG, SCALE_WEIGHT_DECAY, experiment_negweights,
                          experiment_scale)
from .invariance import (check_supermodular, invariance_suite, psi_convexity_slack,
                         random_small_network, scaling_family)
from .network import ExampleDistribution
from .training import TrainingDiverged

THREADS_ENV = "DROPOUT_RELU_MAX_THREADS"
BUILTIN_NETWORKS = {"figure1": figure1_network}

EXIT_OK, EXIT_USAGE, EXIT_COMPUTE = 0, 1, 2


class UsageError(Exception):
    pass


class ComputationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@contextmanager
def _inputs():
    """Treat validation failures while assembling inputs as usage errors."""
    try:
        yield
    except (ValueError, OSError) as e:
        raise UsageError(str(e)) from None


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


# --------------------------------------------------------------------------
# argument helpers


def _vector(v) -> np.ndarray:
    if isinstance(v, str):
        try:
            v = [float(s) for s in v.split(",") if s.strip()]
        except ValueError:
            raise ValueError(f"expected comma-separated numbers, got {v!r}") from None
    a = np.asarray(v, dtype=np.float64).reshape(-1)
    if a.size == 0:
        raise ValueError("empty vector")
    return a


def _example(text: str):
    """``X:Y`` with X comma-separated."""
    if not isinstance(text, str) or text.count(":") != 1:
        raise ValueError(f"expected X:Y with X comma-separated, got {text!r}")
    xs, y = text.split(":")
    try:
        return _vector(xs), float(y)
    except ValueError:
        raise ValueError(f"malformed example {text!r}") from None


def _network(args):
    if args.network in BUILTIN_NETWORKS:
        return BUILTIN_NETWORKS[args.network]()
    return io.load_network(args.network)


def _distribution(args) -> ExampleDistribution:
    given = [s for s in (args.dist, args.point, args.pxy) if s is not None]
    if len(given) != 1:
        raise ValueError("give exactly one of --dist FILE, --point X:Y, --pxy X:Y")
    if args.dist is not None:
        return io.load_distribution(args.dist)
    if args.point is not None:
        return point_distribution(*_example(args.point), mixture=False)
    return point_distribution(*_example(args.pxy), mixture=True)


def _dropout_config(args) -> DropoutConfig:
    return DropoutConfig(keep_probability=args.p, mode=args.mode, sample_count=args.samples,
                         seed=args.seed, enumeration_cap=args.cap, threads=args.threads)


def _threads(requested: int) -> int:
    cap = os.environ.get(THREADS_ENV)
    if cap is None:
        return requested
    try:
        cap_n = int(cap)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {cap!r}") from None
    if cap_n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {cap!r}")
    return min(requested, cap_n)


# --------------------------------------------------------------------------
# results


class _Result:
    """Named text outputs of one subcommand; the first is echoed to stdout."""

    def __init__(self):
        self.files: list[tuple[str, str]] = []

    def add(self, name: str, text: str):
        self.files.append((name, text if text.endswith("\n") else text + "\n"))
        return self


def _json_lines(records) -> str:
    return "".join(io.dumps(r) + "\n" for r in records)


def _write_outputs(command: str, args, result: _Result, seeds: dict) -> None:
    out = Path(args.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, text in result.files:
            path = out / name
            path.write_text(text)
            paths.append(str(path))
        manifest = {
            "command": command,
            "config": _resolved(args),
            "seeds": seeds,
            "version": _version(),
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "outputs": paths,
        }
        (out / f"{command}.manifest.json").write_text(io.dumps(manifest, indent=1) + "\n")
    except OSError as e:
        raise UsageError(f"cannot write to {out}: {e.strerror or e}") from None


def _resolved(args) -> dict:
    skip = {"handler", "config", "output", "command"}
    out = {}
    for k, v in vars(args).items():
        if k in skip:
            continue
        out[k] = v.tolist() if isinstance(v, np.ndarray) else v
    return out


# --------------------------------------------------------------------------
# subcommands


def cmd_construct(args):
    with _inputs():
        spec = ConstructionSpec(args.kind, K=args.K, n=args.n, d=args.d, y=args.y,
                                output_bias=args.output_bias, c_policy=args.c_policy)
        config = DropoutConfig(keep_probability=args.p, threads=args.threads)
    net = spec.build(config)
    return _Result().add("construct.json", io.dumps(io.network_to_dict(net), indent=1)), {}


def _criterion_command(name):
    def run(args):
        with _inputs():
            net, dist, config = _network(args), _distribution(args), _dropout_config(args)
        report = criterion(net, dist, config)
        seeds = {"seed": args.seed} if args.mode == MONTE_CARLO else {}
        return _Result().add(f"{name}.json", io.dumps(report.to_dict(), indent=1)), seeds
    return run


def cmd_psi(args):
    with _inputs():
        net, config = _network(args), _dropout_config(args)
        x = None if args.x is None else _vector(args.x)
        ells = range(net.input_dim + 1) if args.ell is None else [args.ell]
    rows = [{"ell": ell, "psi": psi(net, ell, config, x)} for ell in ells]
    seeds = {"seed": args.seed} if args.mode == MONTE_CARLO else {}
    return _Result().add("psi.jsonl", _json_lines(rows)), seeds


def cmd_decompose(args):
    with _inputs():
        net, x, ys = _network(args), _vector(args.x), _vector(args.y)
    rows = []
    for y in ys:
        e_sq, e, pen = penalty_decomposition(net, x, float(y), args.p, args.cap)
        rows.append({"x": x.tolist(), "y": float(y), "e_delta_sq": e_sq, "e_delta": e, "penalty": pen})
    return _Result().add("decompose.jsonl", _json_lines(rows)), {}


CLOSED_FORMS = {
    "wneg-c": (("K", "n", "d"), cf.wneg_output_scale),
    "wneg-criterion": (("K", "n", "d"), cf.wneg_criterion_formula),
    "nonneg-bound": (("K",), cf.nonnegative_lower_bound),
    "growth-weight": (("K", "n", "d", "y"), cf.growth_weight),
    "growth-moments": (("K", "n", "d", "y"), cf.growth_moments),
    "growth-l2-bound": (("K", "n", "d", "y", "lambda"), cf.growth_l2_bound),
    "wd-activation": (("lambda", "x"), cf.weight_decay_activation),
    "wd-aversion": (("lambda", "x"), cf.weight_decay_aversion),
    "j2": (("A", "lambda", "x"), cf.j2_of_activation),
}


def cmd_closed_form(args):
    params, fn = CLOSED_FORMS[args.name]
    values = {"K": args.K, "n": args.n, "d": args.d, "y": args.y, "lambda": args.lam, "A": args.A,
              "x": args.x}
    missing = [k for k in params if values[k] is None]
    if missing:
        raise UsageError(f"closed-form {args.name} needs " + ", ".join(f"--{k}" for k in missing))
    with _inputs():
        inputs = {k: (_vector(values[k]) if k == "x" else values[k]) for k in params}
        value = fn(*inputs.values())
    if isinstance(value, cf.GrowthMoments):
        value = {"mean": value.mean, "second_moment": value.second_moment, "variance": value.variance}
    shown = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in inputs.items()}
    return _Result().add("closed-form.jsonl", _json_lines([{"name": args.name, "inputs": shown,
                                                             "value": value}])), {}


def cmd_invariance_check(args):
    report = invariance_suite(args.trials, args.seed, args.p)
    rng = np.random.default_rng([args.seed, 1])
    violations, worst = 0, np.inf
    convex_violations, pen_worst = 0, np.inf
    config = DropoutConfig(keep_probability=args.p)
    for _ in range(args.trials):
        net = random_small_network(rng, nonnegative=True, nonnegative_biases=True)
        sm = check_supermodular(net, trials=10, seed=int(rng.integers(2**32)))
        violations += sm.violations
        worst = min(worst, sm.worst_slack)
        convex_violations += psi_convexity_slack(net, config) < -1e-9
        x = rng.uniform(0.0, 1.0, net.input_dim)
        y = float(rng.uniform(0.0, 2.0))
        pen_worst = min(pen_worst, criterion(net, point_distribution(x, y, mixture=False), config).penalty)
    report["supermodularity"] = {"trials": args.trials, "violations": violations,
                                 "worst_slack": float(worst), "passed": violations == 0}
    report["monotone_psi_convexity"] = {"trials": args.trials, "violations": int(convex_violations),
                                        "passed": convex_violations == 0}
    report["nonnegative_penalty"] = {"trials": args.trials, "min_penalty": float(pen_worst),
                                     "passed": bool(pen_worst >= -1e-12)}
    rows = [{"check": k, **v} for k, v in report.items()]
    result = _Result().add("invariance-check.jsonl", _json_lines(rows))
    if not all(r["passed"] for r in rows):
        failed = ", ".join(r["check"] for r in rows if not r["passed"])
        sys.stdout.write(result.files[0][1])
        raise ComputationError(f"invariance checks failed: {failed}")
    return result, {"seed": args.seed}


def cmd_wd_optimum(args):
    with _inputs():
        x = _vector(args.x)
        opt = cf.build_weight_decay_optimum(args.lam, x, args.n, args.budget_split)
    doc = {
        "lambda": args.lam, "x": x.tolist(), "activation_A": opt.activation_A,
        "output_bias": opt.output_bias, "j2": opt.j2_value, "risk": opt.risk,
        "aversion": cf.weight_decay_aversion(args.lam, x),
        "network": io.network_to_dict(opt.network),
    }
    seeds = {}
    if args.search:
        found = cf.search_weight_decay_minimum([args.lam], [x], n=max(args.n, 2),
                                               restarts=args.restarts, steps=args.steps, seed=args.seed)
        doc["search"] = {"j2": float(found.j2[0]), "risk": float(found.risk[0]),
                         "restarts": args.restarts, "steps": args.steps}
        seeds = {"seed": args.seed}
    return _Result().add("wd-optimum.json", io.dumps(doc, indent=1)), seeds


def _train_config(base, args):
    changes = {k: getattr(args, k) for k in ("max_iters", "lr_base", "lr_decay", "momentum", "init_gain")
               if getattr(args, k) is not None}
    with _inputs():
        return replace(base, **changes)


def cmd_train_negweights(args):
    config = _train_config(NEGWEIGHTS_CONFIG, args)
    reps = 1000 if args.paper_scale else args.reps
    if reps < 1:
        raise UsageError("--reps must be at least 1")
    res = experiment_negweights(reps, args.seed, config, threads=args.threads)
    cols = ("rep", "seed", "neg_dropout", "neg_plain", "outcome", "attempts")
    result = _Result().add("train-negweights.csv", io.rows_to_csv(res.rows, cols))
    result.add("train-negweights.summary.json", io.dumps({"reps": reps, **res.table()}, indent=1))
    return result, {"seed": args.seed, "rep_seeds": [args.seed, args.seed + reps - 1]}


def cmd_train_scale(args):
    config = _train_config(SCALE_CONFIG, args)
    runs = 10 if args.paper_scale else args.runs
    if runs < 1:
        raise UsageError("--runs must be at least 1")
    res = experiment_scale(runs, args.seed, config, threads=args.threads,
                           weight_decay=args.weight_decay)
    keys = ("loss_dropout", "loss_wd", "loss_none")
    result = _Result().add("train-scale.aggregate.csv", io.rows_to_csv(res.aggregate(), ("scale", *keys)))
    result.add("train-scale.csv", io.rows_to_csv(res.rows, ("run", "scale", *keys)))
    return result, {"seed": args.seed}


def cmd_family(args):
    with _inputs():
        net, dist, config = _network(args), _distribution(args), _dropout_config(args)
        ts = _vector(args.ts)
        if np.any(ts <= 0):
            raise ValueError("--ts values must be positive")
        layers = tuple(int(v) for v in _vector(args.layers))
        if len(layers) != 2 or not all(0 <= j < net.depth for j in layers):
            raise ValueError(f"--layers needs two layer indices in [0, {net.depth - 1}]")
    rows = [{"t": t, "criterion": j} for t, j in scaling_family(net, dist, ts, layers, config)]
    seeds = {"seed": args.seed} if args.mode == MONTE_CARLO else {}
    return _Result().add("family.csv", io.rows_to_csv(rows, ("t", "criterion"))), seeds


# --------------------------------------------------------------------------
# parser


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common options")
    g.add_argument("--config", metavar="FILE", help="JSON file of option values; flags win")
    g.add_argument("--output", metavar="DIR", help="also write results and a manifest to DIR")
    g.add_argument("--threads", type=int, default=1, metavar="N",
                   help=f"worker threads (capped by ${THREADS_ENV})")
    return p


def _net_source() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--network", required=True, metavar="FILE",
                   help="network JSON file, or a built-in name: " + ", ".join(BUILTIN_NETWORKS))
    return p


def _dist_source() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("distribution (exactly one)")
    g.add_argument("--dist", metavar="FILE", help="JSON array of {x, y, weight} or CSV x1..xK,y,weight")
    g.add_argument("--point", metavar="X:Y", help="point mass on one example, e.g. 1,-1:8")
    g.add_argument("--pxy", metavar="X:Y", help="half on (X, Y) and half on (0, 0)")
    return p


def _dropout_opts() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("dropout")
    g.add_argument("--p", type=float, default=0.5, help="keep probability (default 0.5)")
    g.add_argument("--mode", choices=(EXACT, MONTE_CARLO), default=EXACT)
    g.add_argument("--samples", type=int, default=100_000, help="Monte Carlo sample count")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--cap", type=int, default=26, help="largest droppable-node count to enumerate")
    return p


def _train_opts() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("training (defaults follow the experiment)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--max-iters", type=int)
    g.add_argument("--lr-base", type=float)
    g.add_argument("--lr-decay", type=float)
    g.add_argument("--momentum", type=float)
    g.add_argument("--init-gain", type=float)
    g.add_argument("--paper-scale", action="store_true", help="use the full repetition count")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dropout-relu",
                     description="Exact dropout criteria, constructions and experiments for ReLU networks.")
    parser.add_argument("--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    common, net, dist, drop, train = _common(), _net_source(), _dist_source(), _dropout_opts(), _train_opts()

    s = sub.add_parser("construct", parents=[common], help="build an explicit network as JSON")
    s.add_argument("--kind", choices=KINDS, required=True)
    s.add_argument("--K", type=int, default=2)
    s.add_argument("--n", type=int, default=2)
    s.add_argument("--d", type=int, default=2)
    s.add_argument("--y", type=float, default=1.0, help="target for uniform_growth")
    s.add_argument("--output-bias", type=float)
    s.add_argument("--c-policy", choices=("formula", "optimized"))
    s.add_argument("--p", type=float, default=0.5, help="keep probability used by c-policy optimized")
    s.set_defaults(handler=cmd_construct)

    for name, text in (("criterion", "dropout criterion, risk and penalty"),
                       ("penalty", "dropout penalty (same report as criterion)")):
        s = sub.add_parser(name, parents=[common, net, dist, drop], help=text)
        s.set_defaults(handler=_criterion_command(name))

    s = sub.add_parser("psi", parents=[common, net, drop],
                       help="mean dropout output with exactly ell inputs kept")
    s.add_argument("--ell", type=int, help="input count kept (default: every ell)")
    s.add_argument("--x", help="input point (default all ones)")
    s.set_defaults(handler=cmd_psi)

    s = sub.add_parser("decompose", parents=[common, net],
                       help="split a single-example penalty into variance and bias terms")
    s.add_argument("--x", required=True, help="input, comma-separated")
    s.add_argument("--y", required=True, help="one or more labels, comma-separated")
    s.add_argument("--p", type=float, default=0.5)
    s.add_argument("--cap", type=int, default=26)
    s.set_defaults(handler=cmd_decompose)

    s = sub.add_parser("closed-form", parents=[common], help="evaluate an analytic formula")
    s.add_argument("name", choices=sorted(CLOSED_FORMS))
    s.add_argument("--K", type=int)
    s.add_argument("--n", type=int)
    s.add_argument("--d", type=int)
    s.add_argument("--y", type=float)
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--A", type=float)
    s.add_argument("--x", help="comma-separated input")
    s.set_defaults(handler=cmd_closed_form)

    s = sub.add_parser("invariance-check", parents=[common],
                       help="randomized checks of the scale identities and structural properties")
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--p", type=float, default=0.5)
    s.set_defaults(handler=cmd_invariance_check)

    s = sub.add_parser("wd-optimum", parents=[common],
                       help="weight-decay optimum on half (x, 1) and half (0, 0)")
    s.add_argument("--lambda", dest="lam", type=float, required=True)
    s.add_argument("--x", required=True)
    s.add_argument("--n", type=int, default=1, help="hidden width")
    s.add_argument("--budget-split", choices=("even", "single"), default="even")
    s.add_argument("--search", action="store_true", help="also run a gradient-descent search")
    s.add_argument("--restarts", type=int, default=10)
    s.add_argument("--steps", type=int, default=50_000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(handler=cmd_wd_optimum)

    s = sub.add_parser("train-negweights", parents=[common, train],
                       help="count negative weights after dropout vs plain training")
    s.add_argument("--reps", type=int, default=100)
    s.set_defaults(handler=cmd_train_negweights)

    s = sub.add_parser("train-scale", parents=[common, train],
                       help="training loss vs input scale for each regularizer")
    s.add_argument("--runs", type=int, default=10)
    s.add_argument("--weight-decay", type=float, default=SCALE_WEIGHT_DECAY)
    s.set_defaults(handler=cmd_train_scale)

    s = sub.add_parser("family", parents=[common, net, dist, drop],
                       help="criterion along a layer-rescaling family (t on one layer, 1/t on another)")
    s.add_argument("--ts", default="0.25,0.5,1,2,4", help="comma-separated positive t values")
    s.add_argument("--layers", default="0,1", help="the two layer indices")
    s.set_defaults(handler=cmd_family)
    return parser


def _apply_config(parser, argv):
    """Parse with the config file's values installed as defaults, so flags win."""
    argv = sys.argv[1:] if argv is None else list(argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in choices), None)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    path = pre.parse_known_args(argv)[0].config
    if command is None or path is None:
        return parser.parse_args(argv)
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e.strerror or e}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"malformed config {path}: {e.msg} at line {e.lineno}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"malformed config {path}: expected a JSON object")
    sub = choices[command]
    # keys may be written as the flag ("lambda", "max-iters") or its dest ("lam", "max_iters")
    names = {}
    for a in sub._actions:
        if a.dest in ("help", "config"):
            continue
        names[a.dest] = a.dest
        for opt in a.option_strings:
            names[opt.lstrip("-")] = names[opt.lstrip("-").replace("-", "_")] = a.dest
    unknown = sorted(k for k in doc if k not in names)
    if unknown:
        raise UsageError(f"config {path}: unknown option(s) for {command}: "
                         + ", ".join(unknown))
    doc = {names[k]: v for k, v in doc.items()}
    required = [a for a in sub._actions if a.required and a.dest in doc]
    for a in required:
        a.required = False
    sub.set_defaults(**doc)
    try:
        args = parser.parse_args(argv)
    finally:
        for a in required:
            a.required = True
    _check_config_types(sub, args, path)
    return args


def _check_config_types(sub, args, source):
    """Config values bypass argparse conversion, so check them here."""
    for a in sub._actions:
        v = getattr(args, a.dest, None)
        if v is None:
            continue
        if a.type is int and (isinstance(v, bool) or not isinstance(v, int)):
            raise UsageError(f"config {source}: {a.dest} must be an integer, got {v!r}")
        if a.type is float and (isinstance(v, bool) or not isinstance(v, (int, float))):
            raise UsageError(f"config {source}: {a.dest} must be a number, got {v!r}")
        if a.type is float:
            setattr(args, a.dest, float(v))
        if a.choices is not None and v not in a.choices:
            raise UsageError(f"config {source}: {a.dest} must be one of {sorted(a.choices)}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        args.threads = _threads(args.threads)
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        result, seeds = args.handler(args)
        if args.output:
            _write_outputs(args.command, args, result, seeds)
        sys.stdout.write(result.files[0][1])
        return EXIT_OK
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ComputationError, EnumerationTooLarge, TrainingDiverged, ArithmeticError, ValueError) as e:
        print(f"computation error: {e}", file=sys.stderr)
        return EXIT_COMPUTE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
