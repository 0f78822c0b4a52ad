"""Command-line front end: ``fneval <command> [options]``.

Exit codes: 0 success (or the expected outcome), 1 verification failure,
2 usage error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from . import __version__, constructions
from .analysis import csize_lower_bound, error_prob_lower_bound, verify_shattering
from .core import ContractError, TransformerSpec, forward
from .harness import (EXIT_IO, EXIT_OK, EXIT_USAGE, EXIT_VERIFY_FAILED, SweepConfig, UsageError,
                      emit_report, precision_sweep, render_rows, run_probe, run_verification)
from .task import (FunctionClass, Instance, InvalidInstanceError, PresentationCase, encode,
                   oracle, read_instances)


def _write(text: str, path: Optional[str]) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _load_spec(path: str) -> TransformerSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            return TransformerSpec.from_json(fh.read())
    except (json.JSONDecodeError, ContractError, ValueError) as exc:
        raise UsageError(f"cannot load spec {path}: {exc}") from exc


def _n_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_construct(args) -> int:
    builder = constructions.default_builder(args.case, two_layer=args.two_layer)
    if args.case is PresentationCase.SAME_POS_ORDERED:
        builder = "case2"
    spec = constructions.build(builder, args.n)
    _write(spec.to_json() + "\n", args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    spec = _load_spec(args.spec) if args.spec else None
    builder = args.builder
    if builder is None and spec is None:
        builder = constructions.default_builder(args.case, two_layer=args.two_layer)
    config = SweepConfig(case=args.case, n=args.n, builder=builder or "custom",
                         function_class=FunctionClass(args.function_class), mode=args.mode,
                         count=args.sample, seed=args.seed, p=args.quantize, workers=args.workers)
    report = run_verification(config, spec=spec)
    emit_report(report, args.format, args.out, timing=not args.no_timing)
    return EXIT_OK if report.correct == report.trials else EXIT_VERIFY_FAILED


def cmd_precision_sweep(args) -> int:
    builder = constructions.default_builder(args.case, two_layer=args.two_layer)
    rows = precision_sweep(builder, args.n_list, sample=args.sample, seed=args.seed)
    fields = ("case", "n", "p_star", "csize_at_pstar", "envelope", "pass")
    if args.format == "json":
        _write(json.dumps(rows, sort_keys=True, indent=2) + "\n", args.out)
    else:
        _write(render_rows(rows, fields), args.out)
    return EXIT_OK if all(row["pass"] for row in rows) else EXIT_VERIFY_FAILED


def cmd_bounds(args) -> int:
    out = {"n": args.n, "csize_lower_bound": csize_lower_bound(args.n),
           "error_prob_lower_bound": None, "small_n_warning": None}
    if None not in (args.h, args.d, args.p):
        bound = error_prob_lower_bound(args.n, args.h, args.d, args.p)
        out.update(error_prob_lower_bound=bound.value, small_n_warning=bound.small_n_warning,
                   hdp=args.h * args.d * args.p)
    _write(json.dumps(out, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def cmd_probe(args) -> int:
    spec = _load_spec(args.spec)
    n = args.n if args.n is not None else spec.n
    report = run_probe(spec, n, random_search=args.random_search, seed=args.seed)
    if args.format == "json":
        _write(json.dumps(report.to_dict(), sort_keys=True) + "\n", args.out)
    elif report.mismatch is None:
        _write("none\n", args.out)
    else:
        mm = report.mismatch
        _write(f"mismatch {mm.label} tokens={list(mm.tokens)} expected={mm.expected} got={mm.got}\n", args.out)
    return report.exit_code


def cmd_shatter(args) -> int:
    ok = verify_shattering(args.n)
    if args.format == "json":
        _write(json.dumps({"n": args.n, "labelings": 2 ** args.n, "pass": ok}, sort_keys=True) + "\n", args.out)
    else:
        _write(f"{'pass' if ok else 'fail'} n={args.n} labelings={2 ** args.n}\n", args.out)
    return EXIT_OK if ok else EXIT_VERIFY_FAILED


def cmd_eval(args) -> int:
    if args.spec:
        spec = _load_spec(args.spec)
    else:
        if args.case is None or args.n is None:
            raise UsageError("eval needs --spec or both --case and --n")
        builder = constructions.default_builder(args.case, two_layer=args.two_layer)
        if args.case is PresentationCase.SAME_POS_ORDERED:
            builder = "case2"
        spec = constructions.build(builder, args.n)
    if args.instance:
        instances = [Instance.from_dict(json.loads(args.instance))]
    elif args.instances:
        instances = read_instances(args.instances)
    else:
        raise UsageError("eval needs --instance or --instances")
    lines = []
    all_ok = True
    for inst in instances:
        got = forward(spec, encode(inst, spec.case))
        want = oracle(inst)
        all_ok &= got == want
        lines.append(json.dumps({"instance": json.loads(inst.to_json()), "output": got,
                                 "oracle": want, "match": got == want}, sort_keys=True))
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK if all_ok else EXIT_VERIFY_FAILED


def _common(fmt: str = "json") -> argparse.ArgumentParser:
    # a fresh parent per command: argparse shares parent actions, so defaults would leak
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="base seed for sampled instances")
    common.add_argument("--workers", type=int, default=1, help="evaluation threads (0 = auto)")
    common.add_argument("--format", choices=("json", "csv", "text"), default=fmt)
    common.add_argument("--out", default=None, help="output path (default stdout)")
    return common


def build_parser() -> argparse.ArgumentParser:

    case_arg = dict(type=PresentationCase.parse, help="presentation case 1-5")

    parser = argparse.ArgumentParser(prog="fneval", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("construct", parents=[_common()], help="emit a construction as JSON")
    p.add_argument("--case", required=True, **case_arg)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--two-layer", action="store_true", help="case 5: two-layer hard construction")
    p.set_defaults(func=cmd_construct)

    p = sub.add_parser("verify", parents=[_common()], help="sweep a construction against the oracle")
    p.add_argument("--case", required=True, **case_arg)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--builder", choices=sorted(constructions.BUILDERS))
    p.add_argument("--two-layer", action="store_true")
    p.add_argument("--spec", help="verify a serialized spec instead of a builder")
    p.add_argument("--mode", choices=("exhaustive", "sampled"), default="exhaustive")
    p.add_argument("--sample", type=int, default=10_000)
    p.add_argument("--function-class", choices=("all", "perm"), default="all")
    p.add_argument("--quantize", type=int, default=None, metavar="P", help="fractional bits")
    p.add_argument("--no-timing", action="store_true", help="omit wall time for byte-stable reports")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("precision-sweep", parents=[_common("csv")], help="minimal exact precision per n")
    p.add_argument("--case", required=True, **case_arg)
    p.add_argument("--two-layer", action="store_true")
    p.add_argument("--n-list", type=_n_list, default=[2, 4, 8, 16, 32, 64])
    p.add_argument("--sample", type=int, default=10_000)
    p.set_defaults(func=cmd_precision_sweep)

    p = sub.add_parser("bounds", parents=[_common()], help="c-size and error-probability lower bounds")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--h", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--p", type=int)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("probe", parents=[_common("text")], help="run the case-5 adversarial family")
    p.add_argument("--spec", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--random-search", type=int, default=0, metavar="K")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("shatter", parents=[_common("text")], help="check the split-VC shattering witness")
    p.add_argument("--n", type=int, required=True)
    p.set_defaults(func=cmd_shatter)

    p = sub.add_parser("eval", parents=[_common()], help="evaluate single instances")
    p.add_argument("--spec")
    p.add_argument("--case", **case_arg)
    p.add_argument("--n", type=int)
    p.add_argument("--two-layer", action="store_true")
    p.add_argument("--instance", help='JSON object {"n":..,"f":[..],"pi":[..],"target":..}')
    p.add_argument("--instances", help="JSON-lines file of instances to replay")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, InvalidInstanceError, ContractError, ValueError) as exc:
        print(f"fneval: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"fneval: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
