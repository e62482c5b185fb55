"""Command-line front end.

Subcommands: ``validate``, ``tilt``, ``saddle``, ``psi``, ``approx``, ``mc`` and
``table``.  JSON goes to standard output with full precision; ``table`` and
the optional ``--csv`` files use three significant digits.  Every document
embeds a run manifest.

Exit codes: 0 success, 1 the model or level is outside the admissible
domain, 2 input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from typing import List, Optional

import numpy as np

from . import __version__
from .errors import AffineLDPError, DimensionMismatch, LevelBelowMean, ModelFileError, \
    NumericalFailure
from .expansion import Indicator, Power, clt_tail, tail_expectation
from .mc import SimConfig, estimate, importance_sampling, plain_mc, simulate, tilted_for_level
from .model import AffineModel, load_model, model_hash, validate
from .ode import psi_derivatives
from .transform import eta_derivatives, solve_saddlepoint, solve_u_star, u_star_derivatives

EXIT_OK, EXIT_DOMAIN, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


@dataclass
class RunManifest:
    command: str
    model_hash: Optional[str]
    parameters: dict
    version: str = __version__
    seed: Optional[int] = None
    started: str = ""
    finished: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _sci(x: float) -> str:
    """Three significant digits in the ``1.53E-12`` style."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.2E}"


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _dump(doc: dict, out) -> None:
    json.dump(doc, out, indent=2, default=_json_default)
    out.write("\n")


def parse_payoff(text: str):
    """``prob``, ``plus`` or ``power:GAMMA``."""
    if text == "prob":
        return Indicator()
    if text == "plus":
        return Power(1.0)
    if text.startswith("power:"):
        try:
            return Power(float(text.split(":", 1)[1]))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"bad power payoff {text!r}") from exc
    raise argparse.ArgumentTypeError(f"unknown payoff {text!r}; use prob, plus or power:GAMMA")


def _float_list(text: str) -> List[float]:
    text = text.strip()
    if not text:
        return []
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


# ---------------------------------------------------------------------------
# commands

def cmd_validate(model: AffineModel, args) -> tuple:
    report = validate(model)
    return report.to_dict(), EXIT_OK if report.passed else EXIT_DOMAIN


def cmd_tilt(model: AffineModel, args) -> tuple:
    sol = solve_u_star(model, args.theta)
    us = u_star_derivatives(model, args.theta, args.order, sol=sol)
    eta = eta_derivatives(model, args.theta, args.order, us)
    doc = sol.to_dict()
    doc["u_star_derivs"] = [u.tolist() for u in us]
    doc["eta_derivs"] = list(eta)
    return doc, EXIT_OK


def cmd_saddle(model: AffineModel, args) -> tuple:
    return solve_saddlepoint(model, args.level, order=args.order).to_dict(), EXIT_OK


def cmd_psi(model: AffineModel, args) -> tuple:
    pack = psi_derivatives(model, args.theta, args.method, tol=args.tol,
                           tilt_feedback=not args.frozen_tilt)
    return pack.to_dict(), EXIT_OK


def _approx(model, args, level, t, functional):
    return tail_expectation(model, level, t, functional, args.order,
                            experimental=args.order >= 2,
                            tilt_feedback=not args.frozen_tilt, skew_weight=args.skew_weight)


def cmd_approx(model: AffineModel, args) -> tuple:
    res = _approx(model, args, args.level, args.time, args.payoff)
    doc = res.to_dict()
    header = ["t", "R", "regime", "value"] + [f"k{i}" for i in range(len(res.coefficients))]
    row = [_sci(res.t), _sci(res.level), res.regime, _sci(res.value)] + \
        [_sci(c) for c in res.coefficients]
    doc["csv_header"] = ",".join(header)
    doc["csv_row"] = ",".join(row)
    if args.csv:
        _write_csv(args.csv, header, [row], args._manifest)
    return doc, EXIT_OK


def _sim_config(args) -> SimConfig:
    return SimConfig(paths=args.paths, dt=args.dt, seed=args.seed,
                     antithetic=args.antithetic, events=args.events)


def cmd_mc(model: AffineModel, args) -> tuple:
    cfg = _sim_config(args)
    if args.sampler == "plain":
        est = plain_mc(model, args.level, args.time, args.payoff, cfg)
    else:
        est = importance_sampling(model, args.level, args.time, args.payoff, cfg)
    doc = est.to_dict()
    doc["config"] = cfg.to_dict()
    return doc, EXIT_OK


TABLE_HEADER = ["x", "t", "P_IS", "P_CI_pct", "P_order1", "P_RE_pct",
                "E_IS", "E_CI_pct", "E_order1", "E_RE_pct"]


def table_rows(model: AffineModel, levels, times, order=1, paths=0, seed=0, dt=0.01,
               tilt_feedback=True, skew_weight=0.5):
    """Full-precision rows: approximation and (if ``paths > 0``) IS for P and E.

    Relative errors are ``(approx - IS) / IS`` in percent.
    """
    rows = []
    for x in levels:
        batch = None
        if paths and times:
            batch = simulate(model, sorted(times), SimConfig(paths, dt, seed),
                             tilted_for_level(model, x))
        for t in times:
            row = {"x": x, "t": t}
            for tag, functional in (("P", Indicator()), ("E", Power(1.0))):
                approx = tail_expectation(model, x, t, functional, order,
                                          experimental=order >= 2, tilt_feedback=tilt_feedback,
                                          skew_weight=skew_weight).value
                row[f"{tag}_order1"] = approx
                if batch is not None:
                    k = int(np.searchsorted(batch.times, t))
                    est = estimate(batch, x, functional, k)
                    row[f"{tag}_IS"] = est.mean
                    row[f"{tag}_CI_pct"] = 100 * est.relative_halfwidth
                    row[f"{tag}_RE_pct"] = 100 * (approx - est.mean) / est.mean if est.mean else math.nan
                else:
                    row[f"{tag}_IS"] = row[f"{tag}_CI_pct"] = row[f"{tag}_RE_pct"] = math.nan
            rows.append(row)
    return rows


def _format_row(row: dict) -> list:
    out = []
    for key in TABLE_HEADER:
        v = row[key]
        if key in ("x", "t"):
            out.append(f"{v:g}")
        elif key.endswith("_pct"):
            out.append("" if math.isnan(v) else f"{v:+.2f}")
        else:
            out.append(_sci(v))
    return out


def _write_csv(path_or_stream, header, rows, manifest: RunManifest) -> None:
    stream = open(path_or_stream, "w", newline="") if isinstance(path_or_stream, str) \
        else path_or_stream
    try:
        stream.write("# manifest: " + json.dumps(manifest.to_dict(), default=_json_default) + "\n")
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if stream is not path_or_stream:
            stream.close()


def cmd_table(model: AffineModel, args) -> tuple:
    rows = table_rows(model, args.levels, args.times, args.order, args.paths, args.seed,
                      args.dt, not args.frozen_tilt, args.skew_weight)
    formatted = [_format_row(r) for r in rows]
    args._manifest.finished = _now()
    _write_csv(args.output or sys.stdout, TABLE_HEADER, formatted, args._manifest)
    if args.json:
        with open(args.json, "w") as fh:
            _dump({"manifest": args._manifest.to_dict(), "rows": rows}, fh)
    return None, EXIT_OK


def cmd_clt(model: AffineModel, args) -> tuple:
    return clt_tail(model, args.y, args.time).to_dict(), EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="affine-ldp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--model", required=True, help="model TOML file")
        sp.set_defaults(func=func)
        return sp

    def conventions(sp):
        sp.add_argument("--frozen-tilt", action="store_true",
                        help="hold beta* fixed when differentiating psi")
        sp.add_argument("--skew-weight", type=float, default=0.5,
                        help="weight of eta'''/eta'' in the non-lattice d_1 (exact: 0.5)")

    def sim(sp, paths):
        sp.add_argument("--paths", type=int, default=paths, help="number of simulated paths")
        sp.add_argument("--seed", type=int, default=0, help="base seed of the random streams")
        sp.add_argument("--dt", type=float, default=0.01, help="Euler time step")

    add("validate", cmd_validate, "check admissibility clauses")

    sp = add("tilt", cmd_tilt, "solve for u*(theta) and its derivatives")
    sp.add_argument("--theta", type=float, required=True)
    sp.add_argument("--order", type=int, default=4)

    sp = add("saddle", cmd_saddle, "solve eta'(h) = R and dump the cumulants")
    sp.add_argument("--level", type=float, required=True)
    sp.add_argument("--order", type=int, default=4)

    sp = add("psi", cmd_psi, "psi and its first two derivatives")
    sp.add_argument("--theta", type=float, required=True)
    sp.add_argument("--method", choices=("fd", "ode"), default="fd")
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--frozen-tilt", action="store_true")

    sp = add("approx", cmd_approx, "refined large-deviation approximation")
    sp.add_argument("--level", type=float, required=True, help="level R of V(t) >= R t")
    sp.add_argument("--time", type=float, required=True, help="horizon t")
    sp.add_argument("--order", type=int, choices=(0, 1, 2), default=1,
                    help="expansion order (2 is experimental)")
    sp.add_argument("--payoff", type=parse_payoff, default=Indicator(),
                    help="prob, plus or power:GAMMA")
    sp.add_argument("--csv", help="also write the CSV row to this file")
    conventions(sp)

    sp = add("clt", cmd_clt, "Gaussian approximation of P(V(t) >= r t + sigma sqrt(t) y)")
    sp.add_argument("--y", type=float, required=True)
    sp.add_argument("--time", type=float, required=True)

    sp = add("mc", cmd_mc, "plain or importance-sampling Monte Carlo")
    sp.add_argument("--level", type=float, required=True)
    sp.add_argument("--time", type=float, required=True)
    sp.add_argument("--sampler", choices=("plain", "is"), default="is",
                    help="plain sampling or importance sampling at the saddlepoint")
    sp.add_argument("--payoff", type=parse_payoff, default=Indicator())
    sp.add_argument("--antithetic", action="store_true")
    sp.add_argument("--events", choices=("poisson", "bernoulli"), default="poisson")
    sim(sp, 10_000)

    sp = add("table", cmd_table, "approximation against IS in the tabulated layout (CSV)")
    sp.add_argument("--levels", type=_float_list, default=[25.0, 30.0],
                    help="comma-separated levels")
    sp.add_argument("--times", type=_float_list, default=[10, 20, 30, 50, 100, 200, 300],
                    help="comma-separated horizons (may be empty)")
    sp.add_argument("--order", type=int, choices=(0, 1, 2), default=1)
    sp.add_argument("--output", help="CSV file (default: standard output)")
    sp.add_argument("--json", help="also write full-precision rows to this JSON file")
    sim(sp, 0)
    conventions(sp)
    return p


def _echo(args) -> dict:
    out = {}
    for k, v in vars(args).items():
        if k.startswith("_") or k == "func":
            continue
        out[k] = getattr(v, "name", v) if not isinstance(v, (int, float, str, list, type(None))) else v
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    manifest = RunManifest(args.command, None, _echo(args), seed=getattr(args, "seed", None),
                           started=_now())
    args._manifest = manifest
    try:
        model = load_model(args.model)
        manifest.model_hash = model_hash(args.model)
        if args.command != "validate":
            report = validate(model)
            if not report.passed:
                _dump({"manifest": manifest.to_dict(), "error": "model failed validation",
                       "validation": report.to_dict()}, sys.stdout)
                return EXIT_DOMAIN
        doc, code = args.func(model, args)
    except (ModelFileError, DimensionMismatch) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except LevelBelowMean as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except NumericalFailure as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (AffineLDPError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if doc is not None:
        manifest.finished = _now()
        _dump({"manifest": manifest.to_dict(), "result": doc}, sys.stdout)
    return code


if __name__ == "__main__":
    sys.exit(main())
