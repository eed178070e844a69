"""msi-lab command line: gen-data, msi, falsify, reproduce."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from .core import Controller, DataRecord, InputError, load_matrix, load_plant
from .harness import METHODS, load_config, make_engine, reproduce, run_msi, solve_options
from .sim import NoiseSpec, falsify_msi, generate_data

EXIT_OK, EXIT_NO_CERT, EXIT_INPUT, EXIT_SOLVER = 0, 2, 3, 4

log = logging.getLogger("msilab")


def _gen_data(args) -> int:
    plant = load_plant(args.plant)
    x0 = None if args.x0 is None else [float(v) for v in args.x0.split(",")]
    rec = generate_data(plant, NoiseSpec(args.dbar, seed=args.seed), args.n_samples,
                        (args.input_lo, args.input_hi), x0=x0)
    rec.to_csv(args.out)
    print(f"wrote {rec.N + 1} samples to {args.out}")
    return EXIT_OK


def _msi(args) -> int:
    overrides = {"solver": {}, "search": {}, "multiplier": {}}
    if args.backend:
        overrides["solver"]["backend"] = args.backend
    if args.strategy:
        overrides["search"]["strategy"] = args.strategy
    if args.multiplier:
        overrides["multiplier"]["kind"] = args.multiplier
    if args.max_h is not None:
        overrides["search"]["h_cap"] = args.max_h
    cfg = load_config(args.config, overrides)
    plant = load_plant(args.plant) if args.plant else None
    ctrl = None
    if args.gain:
        m = plant.m if plant is not None else 1
        ctrl = Controller.parse(args.gain, m)
    rec = Bd = None
    if args.method in ("io", "switched", "setmem"):
        if not args.data:
            raise InputError(f"--data is required for method {args.method}")
        rec = DataRecord.from_csv(args.data, d_bar=args.dbar)
        if args.bd:
            Bd = load_matrix(args.bd)
        elif plant is not None:
            Bd = plant.Bd
        else:
            raise InputError("--bd (or --plant) is required for data-driven methods")
    if args.reuse_lift and args.method != "switched":
        raise InputError("--reuse-lift only applies to --method switched")
    engine = make_engine(args.method, args.mode, rec=rec, plant=plant, Bd=Bd, d_bar=args.dbar, ctrl=ctrl,
                         mult_kind=cfg["multiplier"]["kind"], opts=solve_options(cfg), lift_path=args.reuse_lift)
    report = run_msi(engine, cfg, plant=plant if args.falsify else None, seed=args.seed)
    text = report.dumps(timing=not args.no_timing)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    print(f"h_msi = {report.h_msi} ({report.status})", file=sys.stderr)
    return report.exit_code


def _falsify(args) -> int:
    plant = load_plant(args.plant)
    ctrl = Controller.parse(args.gain, plant.m)
    ctrl.check(plant)
    if args.hbar < 1:
        raise InputError("--hbar must be at least 1")
    w = falsify_msi(plant, ctrl, args.hbar, args.depth, args.eig_tol)
    out = {"schema": 1, "h_bar": args.hbar, "depth": args.depth, "K": ctrl.K.tolist(),
           "witness": None if w is None else w.to_json()}
    text = json.dumps(out, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    msg = "no witness (not a stability proof)" if w is None else f"witness {w.sequence}, upper bound {args.hbar - 1}"
    print(msg, file=sys.stderr)
    return EXIT_OK


def _reproduce(args) -> int:
    cfg = load_config(args.config)
    for path in reproduce(args.figure, args.out_dir, cfg):
        print(path)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; argparse's own code 2 means "no certificate" here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _glue_values(argv):
    """Attach values such as "-3.75,-11.5" to their flag so they are not read as options."""
    out, it = [], iter(argv)
    for a in it:
        if a in ("--gain", "--x0"):
            nxt = next(it, None)
            out.append(a if nxt is None else f"{a}={nxt}")
        else:
            out.append(a)
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="msi-lab", description="Data-driven maximum sampling interval certificates.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-data", help="simulate one open-loop trajectory")
    g.add_argument("--plant", required=True)
    g.add_argument("--n-samples", type=int, required=True)
    g.add_argument("--dbar", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--x0", help="initial state 'a,b,...'; drawn from U[-1,1] when omitted")
    g.add_argument("--input-lo", type=float, default=-1.0)
    g.add_argument("--input-hi", type=float, default=1.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_gen_data)

    m = sub.add_parser("msi", help="search the maximum certified sampling interval")
    m.add_argument("--method", choices=METHODS, required=True)
    m.add_argument("--mode", choices=("analyze", "design"), default="analyze")
    m.add_argument("--data")
    m.add_argument("--dbar", type=float, default=0.0)
    m.add_argument("--bd")
    m.add_argument("--plant", help="plant JSON; needed by model-based methods and --falsify")
    m.add_argument("--gain")
    m.add_argument("--max-h", type=int)
    m.add_argument("--multiplier", choices=("diagonal", "quadratic"))
    m.add_argument("--strategy", choices=("exponential", "linear"))
    m.add_argument("--backend", choices=("clarabel", "scs"))
    m.add_argument("--reuse-lift", metavar="STATE_JSON")
    m.add_argument("--config")
    m.add_argument("--seed", type=int, help="recorded in the report only")
    m.add_argument("--falsify", action="store_true", help="attach a falsifier upper bound (needs --plant)")
    m.add_argument("--no-timing", action="store_true", help="omit timing fields")
    m.add_argument("--out")
    m.set_defaults(func=_msi)

    f = sub.add_parser("falsify", help="search for a destabilizing sampling sequence")
    f.add_argument("--plant", required=True)
    f.add_argument("--gain", required=True)
    f.add_argument("--hbar", type=int, required=True)
    f.add_argument("--depth", type=int, default=6)
    f.add_argument("--eig-tol", type=float, default=1e-9)
    f.add_argument("--out")
    f.set_defaults(func=_falsify)

    r = sub.add_parser("reproduce", help="regenerate figure data as CSV")
    r.add_argument("figure", choices=("fig2", "fig3", "table1"))
    r.add_argument("--out-dir", default="results")
    r.add_argument("--config")
    r.set_defaults(func=_reproduce)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(_glue_values(sys.argv[1:] if argv is None else list(argv)))
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"msi-lab: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, ValueError) as exc:
        print(f"msi-lab: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RuntimeError as exc:
        print(f"msi-lab: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
