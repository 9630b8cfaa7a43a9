"""Command-line interface: ``mogpc synth|train|eval|predict|gradcheck``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure
(including a failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import evaluate, predict
from .data_io import (DataError, load_dataset, load_model, normalize_dataset, normalize_fit,
                      save_dataset, save_model, synth_generate, synth_spec_from_dict)
from .gradcheck import DataTooLarge, gradient_check
from .model import ConfigError, DimensionError, KernelConfig, MCEConfig, NumericalError
from .optimize import OptimizerConfig
from .training import fit_generative_bundle, fit_mce

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
DEFAULT_INDUCING = 25


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags; this tool reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    try:
        doc = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    except OSError as e:
        raise DataError(f"{args.spec}: cannot read spec ({e.strerror})") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{args.spec}:{e.lineno}: invalid JSON ({e.msg})") from e
    if not isinstance(doc, dict):
        raise DataError(f"{args.spec}: spec must be a JSON object")
    spec = synth_spec_from_dict(doc)
    ds = synth_generate(spec)
    mpath = save_dataset(ds, args.out)
    print(f"wrote {ds.n_instances} instances in {ds.n_classes} classes to {mpath}")
    return EXIT_OK


def _print_trace(label, report):
    trace = " ".join(f"{v:.6g}" for v in report.objective_trace)
    state = "converged" if report.converged else "stopped"
    print(f"{label}: {report.iterations} iterations, {state}, "
          f"{report.wall_time:.2f}s")
    print(f"  trace: {trace}")


def cmd_train(args) -> int:
    if args.approx != "exact" and args.num_inducing is None:
        raise UsageError(f"--approx {args.approx} needs --num-inducing K "
                         f"(bare --num-inducing gives K={DEFAULT_INDUCING})")
    if args.num_inducing is not None and args.num_inducing < 1:
        raise UsageError("--num-inducing must be >= 1")
    ds = load_dataset(args.data)
    if args.mode == "mce" and ds.n_classes < 2:
        raise UsageError(f"--mode mce needs at least 2 classes, data has {ds.n_classes}")
    mce = MCEConfig(eta=args.eta, gamma1=args.gamma1, gamma2=args.gamma2)
    norm = normalize_fit(ds) if args.normalize else None
    ds = normalize_dataset(ds, norm)
    cfg = KernelConfig(n_latent=1, mode="convolved", input_dim=ds.input_dim)
    opt = OptimizerConfig(seed=args.seed)
    n_inducing = args.num_inducing if args.approx != "exact" else 0

    model, reports = fit_generative_bundle(ds, cfg, opt, args.approx, n_inducing,
                                           args.opt_inducing, norm, mce)
    for name, rep in zip(ds.class_names, reports):
        _print_trace(f"generative [{name}] log likelihood", rep)
    if args.mode == "mce":
        model, rep = fit_mce(ds, cfg, mce, opt, args.approx, init=model,
                             optimize_inducing=args.opt_inducing)
        _print_trace("mce loss", rep)
    save_model(model, args.out)
    print(f"saved {args.mode} model ({model.n_classes} classes, approx {model.approx}) "
          f"to {args.out}")
    return EXIT_OK


def _check_dims(model, ds):
    if ds.output_dim != model.output_dim or ds.input_dim != model.input_dim:
        raise DimensionError(
            f"data is {ds.input_dim}-in/{ds.output_dim}-out but the model is "
            f"{model.input_dim}-in/{model.output_dim}-out")


def cmd_eval(args) -> int:
    model = load_model(args.model)
    ds = load_dataset(args.data)
    _check_dims(model, ds)
    rep = evaluate(model, ds)
    names = list(model.class_names)
    print(f"accuracy {rep.accuracy:.4f} on {ds.n_instances} instances")
    print("confusion (rows true, columns predicted):")
    width = max(len(n) for n in names)
    print(" " * (width + 1) + " ".join(f"{n:>{width}}" for n in names))
    for name, row in zip(names, rep.confusion):
        print(f"{name:<{width}} " + " ".join(f"{c:>{width}d}" for c in row))
    if args.report:
        doc = {"accuracy": rep.accuracy,
               "class_names": names,
               "confusion": rep.confusion.tolist(),
               "per_class_accuracy": rep.per_class_accuracy.tolist(),
               "n_instances": ds.n_instances}
        Path(args.report).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        print(f"report written to {args.report}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    ds = load_dataset(args.data)
    _check_dims(model, ds)
    lines = []
    for _, inst in ds.labeled():
        pred = predict(inst, model)
        scores = "\t".join(repr(float(s)) for s in pred.scores)
        lines.append(f"{inst.source}\t{model.class_names[pred.predicted_class]}\t{scores}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {len(lines)} predictions to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _corrupt(name, grad):
    grad = np.array(grad, dtype=float)
    grad[0] = grad[0] * 1.01 + 1e-3
    return grad


def cmd_gradcheck(args) -> int:
    model = load_model(args.model)
    ds = load_dataset(args.data)
    _check_dims(model, ds)
    try:
        report = gradient_check(model, ds, step=args.step, tolerance=args.tolerance,
                                fault=_corrupt if args.inject_fault else None)
    except DataTooLarge as e:
        raise UsageError(str(e)) from e
    for line in report.lines():
        print(line)
    verdict = "passed" if report.passed else f"FAILED ({len(report.failed())} groups)"
    print(f"gradient check {verdict}; max relative error {report.max_error():.3e} "
          f"(tolerance {report.tolerance:g})")
    return EXIT_OK if report.passed else EXIT_NUMERICAL


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mogpc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset from a JSON spec")
    p.add_argument("--spec", required=True, help="generator spec (JSON)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit one MOGP per class")
    p.add_argument("--data", required=True, help="dataset directory or manifest")
    p.add_argument("--mode", choices=("gen", "mce"), default="gen")
    p.add_argument("--approx", choices=("exact", "fitc", "pitc"), default="exact")
    p.add_argument("--num-inducing", type=int, nargs="?", const=DEFAULT_INDUCING,
                   default=None, metavar="K",
                   help=f"inducing inputs per class (required for fitc/pitc; "
                        f"bare flag means {DEFAULT_INDUCING})")
    p.add_argument("--opt-inducing", action="store_true",
                   help="also optimize the inducing input locations")
    p.add_argument("--eta", type=float, default=MCEConfig.eta)
    p.add_argument("--gamma1", type=float, default=MCEConfig.gamma1)
    p.add_argument("--gamma2", type=float, default=MCEConfig.gamma2)
    p.add_argument("--normalize", action="store_true",
                   help="standardize each output with training-set statistics")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model file to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy and confusion matrix")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", help="write a JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="per-instance predictions and scores")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="predictions file (default: standard output)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="compare analytic and numerical gradients")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        code, kind, msg = EXIT_USAGE, "usage error", str(e)
    except ConfigError as e:
        code, kind, msg = EXIT_USAGE, "configuration error", str(e)
    except (DataError, DimensionError) as e:
        code, kind, msg = EXIT_DATA, "data error", str(e)
    except NumericalError as e:
        code, kind, msg = EXIT_NUMERICAL, "numerical error", str(e)
    print(f"mogpc {args.command}: {kind}: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
