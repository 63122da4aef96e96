"""Command-line entry point: ``python -m stochnum <command> <config> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import experiments as ex
from .config import ConfigError, load
from .dual_solver import CONVERGED

EXIT_OK, EXIT_ERROR, EXIT_MAX_ITERS, EXIT_VERDICT = 0, 1, 2, 3


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _deltas(text: str) -> list:
    return [v if v.lower() == "tv" else float(v) for v in text.replace(",", " ").split()]


def _schedule(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split("-"))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochnum", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0,
                   help="-v for progress, -vv for debug output")
    p.add_argument("--out", default=None,
                   help="output directory (overrides the config and STOCHNUM_OUTPUT_DIR)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="solve one config")
    r.add_argument("config")

    d = sub.add_parser("sweep-delta", help="one run per noise level delta")
    d.add_argument("config")
    d.add_argument("--deltas", type=_deltas, default=[0.0, 5.0, 20.0, 50.0],
                   help="comma separated; 'tv' adds the time-varying delta")
    d.add_argument("--crn", dest="crn", action="store_true", default=True,
                   help="share random numbers across runs (default)")
    d.add_argument("--no-crn", dest="crn", action="store_false")

    c = sub.add_parser("verify-convex-order", help="channel-level check of the noise ordering")
    c.add_argument("config")
    c.add_argument("--deltas", type=_floats, default=[0.0, 5.0, 20.0, 25.0, 50.0])
    c.add_argument("-M", type=int, default=5000)

    o = sub.add_parser("oracle", help="compare the dual with a brute-force primal optimum")
    o.add_argument("config")
    o.add_argument("--tol", type=float, default=None)

    t = sub.add_parser("sweep-T", help="iterations and rates against the horizon")
    t.add_argument("config")
    t.add_argument("--Ts", type=_floats, default=[0.5, 1.0, 2.0])
    t.add_argument("--fixed-n", action="store_true", help="keep n instead of scaling it with T")

    n = sub.add_parser("sweep-n", help="iterations against the number of samples")
    n.add_argument("config")
    n.add_argument("--ns", type=lambda s: [int(v) for v in _floats(s)], default=[100, 500, 2000])
    n.add_argument("--time-varying", default=None,
                   help="second config with a time-varying utility")

    u = sub.add_parser("tv-utilities", help="rate curves for U = log(lambda)/t")
    u.add_argument("config")

    b = sub.add_parser("tv-beta", help="piecewise-constant beta schedules")
    b.add_argument("config")
    b.add_argument("--schedules", nargs="+", type=_schedule,
                   default=[ex.HIGH_EARLY, ex.LOW_EARLY],
                   help="values over equal parts of [s, T], e.g. 500-100-10")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load(args.config)
        if args.out is not None:
            cfg = cfg.with_values(outputs={"directory": args.out})
        code = _dispatch(args, cfg)
    except (ConfigError, ex.OracleRefusal, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: cannot read or write {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_ERROR
    return code


def _dispatch(args, cfg) -> int:
    if args.command == "run":
        o = ex.run(cfg, progress_every=10000 if args.verbose else 0)
        rep = o.report
        print(f"{cfg.name}: {rep.status} after {rep.iterations} iterations")
        print(f"dual value {rep.dual_value:.9g} +/- {rep.dual_se:.3g}"
              f"{' (heuristic dual)' if rep.heuristic else ''}")
        print(f"summed utility {rep.summed_utility:.9g}; expected link power "
              f"{rep.policy_power:.6g} W")
        for f, ((i, d), r) in enumerate(zip(o.spec.flows.flows, rep.rates)):
            print(f"  flow {f} {i}>{d}: rate {r:.9g}")
        print(f"wrote {len(o.files)} files to {o.files[0].parent}")
        return EXIT_OK if rep.status == CONVERGED else EXIT_MAX_ITERS
    if args.command == "sweep-delta":
        study = ex.sweep_delta(cfg, args.deltas, crn=args.crn)
    elif args.command == "verify-convex-order":
        study = ex.verify_convex_order(cfg, args.deltas, M=args.M)
    elif args.command == "oracle":
        study = ex.oracle_small_instance(cfg, tol=args.tol)
    elif args.command == "sweep-T":
        study = ex.sweep_T(cfg, args.Ts, proportional_n=not args.fixed_n)
    elif args.command == "sweep-n":
        tv = load(args.time_varying) if args.time_varying else None
        study = ex.sweep_n(cfg, args.ns, tv)
    elif args.command == "tv-utilities":
        study = ex.run_time_varying_utilities(cfg)
    else:
        study = ex.run_time_varying_beta(cfg, args.schedules)
    for row in study.rows:
        print("  " + ", ".join(f"{k}={_short(v)}" for k, v in row.items()))
    for v in study.verdicts:
        print(v.line())
    if study.files:
        print(f"wrote {len(study.files)} summary files to {study.files[0].parent}")
    return EXIT_OK if study.passed else EXIT_VERDICT


def _short(v):
    return f"{v:.6g}" if isinstance(v, float) else v


if __name__ == "__main__":
    sys.exit(main())
