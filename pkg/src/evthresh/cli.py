"""Command-line interface.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .io import DataError, Dataset, bundled_path, dumps, load_csv, median_annual_max, write_csv, write_json
from .pipeline import RunConfig, run_pipeline, stability_table, write_bundle
from .posterior import DEFAULT_M, SIMULATION_M
from .priors import CalibrationInputs, PriorSpec, calibrate_cauchy_scale
from .rou import SamplerError
from .simstudies import STUDY2_QUANTILES, Study1Config, model_by_name, run_study1, run_study1_mdia, run_study2
from .gp import GpParams

log = logging.getLogger("evthresh")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def parse_grid(text: str) -> tuple[float, ...]:
    """'a:b:step' (inclusive of b) or a comma-separated list."""
    try:
        if ":" in text:
            a, b, step = (float(t) for t in text.split(":"))
            if step <= 0 or b < a:
                raise ValueError
            n = int(np.floor((b - a) / step + 1e-9)) + 1
            return tuple(float(v) for v in np.round(a + step * np.arange(n), 10))
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}; use start:stop:step or a comma list") from None


def _prior(args) -> PriorSpec:
    return PriorSpec(args.prior, a=args.a, A=args.A)


def _add_prior(p, default="mdi_a"):
    p.add_argument("--prior", default=default, choices=["jeffreys", "flat", "mdi", "mdi_a", "cauchy"])
    p.add_argument("--a", type=float, default=0.6, help="MDI(a) rate")
    p.add_argument("--A", type=float, default=0.154, help="truncated Cauchy scale")


def _add_data(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--data", help="CSV file with a header row")
    g.add_argument("--bundled", choices=["north_sea", "gulf_of_mexico"], help="use a bundled synthetic dataset")
    p.add_argument("--column", default=None, help="value column name or 0-based index (default: first)")
    p.add_argument("--year-column", default=None, help="column of year labels, used to derive n_y")


def _load(args) -> Dataset:
    if args.bundled:
        return load_csv(bundled_path(args.bundled), args.column or "hs", year_column=args.year_column or "year",
                        label=args.bundled)
    return load_csv(args.data, args.column, year_column=args.year_column)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="evthresh", description="Bayesian threshold selection and averaging for extreme values")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("stability", help="MLE shape estimates and profile intervals across thresholds")
    _add_data(p)
    p.add_argument("--quantiles", type=parse_grid, default=parse_grid("0:0.95:0.05"))
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("analyze", help="full threshold-averaged predictive analysis")
    _add_data(p)
    p.add_argument("--quantiles", type=parse_grid, default=parse_grid("0:0.95:0.05"))
    _add_prior(p)
    p.add_argument("--m", type=int, default=DEFAULT_M)
    p.add_argument("--ny", type=float, default=None, help="mean observations per year")
    p.add_argument("--horizons", type=parse_grid, default=(100.0, 1000.0, 10000.0))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--excess-floor", type=int, default=50)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("simulate-priors", help="decile calibration study of predictive probabilities")
    _add_prior(p, default="mdi")
    p.add_argument("--arm", choices=["prior", "mle", "control"], default="prior")
    p.add_argument("--mdia", type=parse_grid, default=None,
                   help="MDI(a) values explored by reusing flat and MDI posterior draws")
    p.add_argument("--xi", type=float, default=0.1)
    p.add_argument("--pu", type=float, default=0.5)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--ny", type=float, default=10.0)
    p.add_argument("--horizons", type=parse_grid, default=(100.0, 1000.0, 10000.0, 100000.0))
    p.add_argument("--reps", type=int, default=None, help="default 1000, or 10000 with --full-scale")
    p.add_argument("--full-scale", action="store_true")
    p.add_argument("--m", type=int, default=SIMULATION_M)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate-thresholds", help="single versus averaged thresholds on a known model")
    p.add_argument("--model", choices=["exponential", "normal", "hybrid"], required=True)
    p.add_argument("--xi-tail", type=float, default=0.1)
    _add_prior(p)
    p.add_argument("--quantiles", type=parse_grid, default=STUDY2_QUANTILES)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--ny", type=float, default=10.0)
    p.add_argument("--reps", type=int, default=None, help="default 200, or 1000 with --full-scale")
    p.add_argument("--full-scale", action="store_true")
    p.add_argument("--m", type=int, default=SIMULATION_M)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("calibrate-prior", help="truncated Cauchy scale from medians of N-year maxima")
    p.add_argument("--m1", type=float, help="median annual maximum (or derive it with --data/--bundled)")
    p.add_argument("--m100", type=float, required=True)
    p.add_argument("--m10000", type=float, required=True)
    p.add_argument("--target", type=float, default=0.2, help="prior P(shape > xi_star)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--data")
    g.add_argument("--bundled", choices=["north_sea", "gulf_of_mexico"])
    p.add_argument("--column", default=None)
    p.add_argument("--year-column", default=None)
    return ap


def _cmd_stability(args):
    d = _load(args)
    rows = stability_table(d, args.quantiles)
    if args.out:
        write_csv(args.out, rows)
    else:
        import csv
        w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _cmd_analyze(args):
    d = _load(args)
    cfg = RunConfig(args.quantiles, _prior(args), args.m, args.horizons, args.seed, args.out,
                    args.excess_floor, args.ny)
    bundle = run_pipeline(d, cfg)
    out = write_bundle(bundle, args.out)
    best = bundle.report.records[bundle.report.best_index].threshold
    print(f"wrote {out}; best threshold: quantile {best.quantile_prob:g} (level {best.level:.6g})")


def _cmd_simulate_priors(args):
    reps = args.reps or (10000 if args.full_scale else 1000)
    arm = _prior(args) if args.arm == "prior" else args.arm
    cfg = Study1Config(arm, args.n, args.ny, args.pu, GpParams(1.0, args.xi), tuple(args.horizons), reps,
                       args.m, args.seed)
    out = Path(args.out)
    rows, payload = [], {}
    if args.mdia:
        for a, per_n in run_study1_mdia(cfg, args.mdia).items():
            for N, rep in per_n.items():
                rows += [{"arm": rep.label, "N": N, **r} for r in rep.to_rows()]
                payload.setdefault(rep.label, {})[f"{N:g}"] = rep.proportions
    else:
        for N, rep in run_study1(cfg).items():
            rows += [{"arm": rep.label, "N": N, **r} for r in rep.to_rows()]
            payload.setdefault(rep.label, {})[f"{N:g}"] = {"proportions": rep.proportions,
                                                           "n_failed": rep.n_failed}
    write_csv(out / "deciles.csv", rows)
    write_json(out / "study1.json", {"config": {"arm": cfg.arm_label, "n": cfg.n, "n_y": cfg.n_y, "p_u": cfg.p_u,
                                                "shape": args.xi, "reps": reps, "m": cfg.m, "seed": cfg.seed},
                                     "results": payload})
    print(f"wrote {out}")


def _cmd_simulate_thresholds(args):
    reps = args.reps or (1000 if args.full_scale else 200)
    model = model_by_name(args.model, args.xi_tail)
    r = run_study2(model, reps, args.n, args.ny, args.quantiles, prior=_prior(args), m=args.m, seed=args.seed)
    out = Path(args.out)
    write_csv(out / "weights.csv", r.weight_rows())
    write_csv(out / "medians.csv", r.median_rows())
    per_rep = [{"rep": i, "strategy": s, "N": float(N), "median": float(r.medians[i, si, ni])}
               for i in range(reps) for si, s in enumerate(r.strategies) for ni, N in enumerate(r.horizons)]
    write_csv(out / "medians_by_dataset.csv", per_rep)
    write_json(out / "study2.json", {"model": r.model, "reps": reps, "n_failed": r.n_failed, "seed": args.seed,
                                     "mean_weights": r.mean_weights, "best_frequencies": r.best_frequencies,
                                     "quantiles": r.quantiles, "true_medians": r.true_medians,
                                     "horizons": r.horizons})
    print(f"wrote {out}; failed datasets: {r.n_failed}")


def _cmd_calibrate(args):
    m1 = args.m1
    if m1 is None:
        if not (args.data or args.bundled):
            raise UsageError("give --m1 or a dataset with year labels")
        m1 = median_annual_max(_load(args))
    c = CalibrationInputs(m1, args.m100, args.m10000, args.target)
    xi_star, A = calibrate_cauchy_scale(c)
    sys.stdout.write(dumps({"m1_hat": m1, "ratio": c.ratio, "xi_star": xi_star, "A": A}))


COMMANDS = {
    "stability": _cmd_stability,
    "analyze": _cmd_analyze,
    "simulate-priors": _cmd_simulate_priors,
    "simulate-thresholds": _cmd_simulate_thresholds,
    "calibrate-prior": _cmd_calibrate,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # --help exits 0; parse errors exit 1
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.cmd](args)
    except (UsageError, DataError) as exc:
        print(f"evthresh: error: {exc}", file=sys.stderr)
        return 1
    except (SamplerError, ArithmeticError) as exc:
        print(f"evthresh: numerical failure: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"evthresh: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
