"""Command line entry point: mcres {spectrum,resonances,clusters,accumulate,crosscheck} CONFIG.

Exit codes: 0 all enabled verifications pass, 1 a verification failed,
2 configuration error, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import config as cfgmod
from .accumulation import (CountingFunction, build_Q0_E0, classify_sheet, eps_sequence, verify_counting,
                           verify_sector)
from .charval import Annulus
from .clusters import (build_effective_matrix, build_projector, cluster_eigenvalues, order_regression,
                       predict_clusters, verify_clusters)
from .errors import ConfigError, McresError, NotCaseB, NumericalError
from .freeres import WeightScheme
from .model import bands, classify_thresholds, diagonalize_channel
from .oracles import big_box_for, box_eigenvalues, weighted_resolvent_oracle
from .pipeline import ThresholdProblem, build_problem

log = logging.getLogger("mcres")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
CSV_COLUMNS = ("omega_re", "omega_im", "k_re", "k_im", "z_re", "z_im", "mult", "sheet", "cluster_id", "threshold_id")


# -- formatting -------------------------------------------------------------------

def fnum(x: float) -> str:
    x = float(x)
    if x == 0:
        return "0"
    return format(x, ".17g")


def cpair(z) -> list:
    z = complex(z)
    return [float(z.real), float(z.imag)]


def records_csv(records: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([fnum(r.omega.real), fnum(r.omega.imag), fnum(r.k.real), fnum(r.k.imag),
                    fnum(r.z.real), fnum(r.z.imag), r.mult_index, r.sheet,
                    "" if r.cluster_id is None else r.cluster_id, r.threshold])
    return buf.getvalue()


def plot_csvs(records: list) -> dict:
    out = {}
    for plane in ("k", "z"):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("omega_re", "omega_im", f"{plane}_re", f"{plane}_im", "mult", "sheet"))
        for r in records:
            v = r.k if plane == "k" else r.z
            w.writerow([fnum(r.omega.real), fnum(r.omega.imag), fnum(v.real), fnum(v.imag), r.mult_index, r.sheet])
        out[f"resonances_{plane}.csv"] = buf.getvalue()
    return out


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (complex, np.complexfloating)):
        return cpair(x)
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def dump_report(report: dict) -> str:
    return json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"


def record_dict(r) -> dict:
    return dict(k=r.k, z=r.z, omega=r.omega, mult_index=r.mult_index, mult_residue=r.mult_residue,
                sheet=r.sheet, cluster_id=r.cluster_id, threshold=r.threshold, index_raw=r.index_raw)


# -- experiments ------------------------------------------------------------------

def problem_for(cfg: cfgmod.RunConfig) -> ThresholdProblem:
    return build_problem(cfg.matrix, cfg.potential, cfg.threshold, cfg.side, cfg.case,
                         cfg.rho, cfg.box, cfg.eps0, cfg.seed)


def _region(cfg, prob, omega) -> Annulus:
    return prob.default_region(omega, cfg.region, cfg.puncture)


def run_spectrum(cfg: cfgmod.RunConfig):
    S = diagonalize_channel(cfg.matrix, cfg.case)
    cat = classify_thresholds(S, cfg.case)
    report = {
        "command": "spectrum",
        "case": cfg.case,
        "eigenvalues": list(S.eigenvalues),
        "multiplicities": list(S.multiplicities),
        "condition": S.condition,
        "bands": [list(b) for b in bands(S)],
        "thresholds": [dict(id=e.ident, value=e.value, side=e.side, channel=e.channel,
                            degenerate=e.degenerate, partner=e.degenerate_partner, klass=e.klass)
                       for e in cat.entries],
        "passed": True,
    }
    return report, []


def _multiplicity_check(records) -> dict:
    bad = [record_dict(r) for r in records if r.mult_index != r.mult_residue]
    return {"passed": not bad, "mismatches": bad,
            "max_index_offset": max((abs(r.index_raw - r.mult_index) for r in records), default=0.0)}


def _all_records(cfg, prob) -> list:
    if not cfg.omegas:
        raise ConfigError("omega list is empty")
    out = []
    for om in cfg.omegas:
        recs = prob.records(om, _region(cfg, prob, om), tol=cfg.search_tol) if om != 0 else []
        log.info("omega=%s: %d records", om, len(recs))
        out.append((om, recs))
    return out


def run_resonances(cfg: cfgmod.RunConfig):
    prob = problem_for(cfg)
    per = _all_records(cfg, prob)
    records = [r for _, recs in per for r in recs]
    mult = _multiplicity_check(records)
    report = {"command": "resonances", "threshold": prob.threshold_id, "eps0": prob.eps0,
              "counts": [dict(omega=om, count=sum(r.mult_index for r in recs)) for om, recs in per],
              "multiplicity": mult, "records": [record_dict(r) for r in records],
              "notes": cfg.notes, "passed": mult["passed"]}
    return report, records


def _selfadjoint(cfg, prob) -> bool:
    M = cfg.matrix.entries
    return bool(np.allclose(M, M.conj().T)) and prob.potential.is_hermitian(prob.weights)


def run_clusters(cfg: cfgmod.RunConfig):
    prob = problem_for(cfg)
    S_an = prob.resolvent.spectral
    proj = build_projector(prob.analysed_entry, S_an, prob.weights)
    E = build_effective_matrix(prob.analysed_entry, prob.factors, proj, prob.threshold_id)
    sa = _selfadjoint(cfg, prob)
    per = _all_records(cfg, prob)
    rows, records, ok = [], [], True
    for om, recs in per:
        if om == 0:
            continue
        pred = predict_clusters(E, om, cfg.cluster_constant)
        rep = verify_clusters(recs, pred, selfadjoint=sa)
        ok &= rep.passed
        rows.append(dict(omega=om, centers=pred.centers(), report=rep.as_dict()))
        records.extend(recs)
    eig = cluster_eigenvalues(E.matrix)
    slopes = []
    slope_tol = float(cfg.raw.get("slope_tol", 0.2))
    for j, (val, m) in enumerate(eig):
        oms = [r["omega"] for r in rows]
        errs = [r["report"]["distances"][j] for r in rows]
        entry = dict(cluster=j, eigenvalue=val, multiplicity=m, expected=1 + 1 / m, slope=None, passed=True)
        if len(oms) >= 3 and all(e > 0 for e in errs):
            s = order_regression(oms, errs)
            entry["slope"] = s
            entry["passed"] = abs(s - (1 + 1 / m)) <= slope_tol
            ok &= entry["passed"]
        slopes.append(entry)
    mult = _multiplicity_check(records)
    ok &= mult["passed"]
    report = {"command": "clusters", "threshold": prob.threshold_id, "eps0": prob.eps0,
              "selfadjoint": sa, "degenerate": E.degenerate, "effective_matrix": E.matrix,
              "per_omega": rows, "regression": slopes, "multiplicity": mult,
              "notes": cfg.notes, "passed": bool(ok)}
    return report, records


def _wrap(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def run_accumulate(cfg: cfgmod.RunConfig):
    if cfg.case != "B":
        raise NotCaseB("accumulate needs a case B configuration")
    prob = problem_for(cfg)
    acc = cfg.accumulate
    inner = float(acc.get("inner", 1e-6))
    theta = float(acc.get("theta", 0.3))
    axis_tol = float(acc.get("axis_tol", 0.1))
    Q0, E0 = build_Q0_E0(prob.potential, prob.weights, prob.resolvent.spectral)
    cf = CountingFunction(E0)
    eps = eps_sequence(cf, count=int(acc.get("count", 40)), floor=inner)
    sign = prob.potential.sign
    ok = True
    rows, records = [], []
    for om in cfg.omegas:
        if om == 0:
            raise ConfigError("accumulate needs ω ≠ 0")
        region = Annulus(inner * abs(om), prob.eps0 * abs(om))
        recs = prob.records(om, region, tol=cfg.search_tol)
        sector = verify_sector(recs, om, theta, sign)
        counting = verify_counting(recs, om, cf, eps, prob.eps0)
        tags = [classify_sheet(r, om, sign) for r in recs]
        sheets_ok = all(t.match for t in tags)
        # accumulation axis of z - threshold; z - λ = ±k² on the two sides
        u = sum((r.k ** 2) / abs(r.k) ** 2 for r in recs)
        shift = 0.0 if not prob.reflected else math.pi
        axis = _wrap(math.atan2(u.imag, u.real) + shift) if recs else float("nan")
        predicted = _wrap(2 * math.atan2(om.imag, om.real) - math.pi + shift)
        axis_ok = bool(recs) and abs(_wrap(axis - predicted)) <= axis_tol
        passed = bool(sector.passed and counting.passed and sheets_ok and axis_ok)
        ok &= passed
        rows.append(dict(omega=om, sector=sector.as_dict(), counting=counting.as_dict(),
                         sheets=dict(passed=sheets_ok, expected=tags[0].expected if tags else None,
                                     actual=sorted({t.actual for t in tags})),
                         axis=dict(angle=axis, predicted=predicted, passed=axis_ok), passed=passed))
        records.extend(recs)
    mult = _multiplicity_check(records)
    ok &= mult["passed"]
    ev = cf.eigenvalues
    nonzero = ev[ev > 1e-12 * max(ev.max(initial=0.0), 1e-300)]
    report = {"command": "accumulate", "threshold": prob.threshold_id, "eps0": prob.eps0,
              "E0": dict(rank=cf.rank(), top=float(ev.max(initial=0.0)),
                         smallest_nonzero=float(nonzero.min()) if nonzero.size else 0.0,
                         trace_Q0=float(np.trace(Q0).real)),
              "eps_sequence": eps, "per_omega": rows, "multiplicity": mult,
              "notes": cfg.notes, "passed": bool(ok)}
    return report, records


def continuation_check(prob: ThresholdProblem, points: int = 20, kmin: float = 1e-3, kmax: float = 1e-1,
                       corrupt: bool = False) -> dict:
    """First-quadrant R(k) against weighted dense solves; derivative against central differences."""
    R = prob.resolvent
    M = R.spectral.matrix
    W = prob.weights
    mods = np.geomspace(kmin, kmax, points)
    angles = np.linspace(0.1, 0.5 * math.pi - 0.1, points)
    worst, worst_d = 0.0, 0.0
    for r, a in zip(mods, angles):
        k = complex(r * math.cos(a), r * math.sin(a))
        z = complex(R.z(k))
        Lb = big_box_for([z - lam for lam in R.spectral.eigenvalues], W.box)
        O = weighted_resolvent_oracle(M, z, W.weights_minus, Lb)
        val = R.matrix(-k if corrupt else k)
        worst = max(worst, np.linalg.norm(val - O) / np.linalg.norm(O))
        h = 1e-5 * abs(k)
        fd = (R.matrix(k + h) - R.matrix(k - h)) / (2 * h)
        d = R.derivative(k)
        worst_d = max(worst_d, np.linalg.norm(d - fd) / np.linalg.norm(d))
    passed = bool(worst <= 1e-8 and worst_d <= 1e-6)
    return dict(points=points, max_rel_error=worst, max_rel_derivative_error=worst_d, passed=passed)


def eigenvalue_check(cfg, prob, records, L: int = 60, tol: float = 1e-6) -> dict:
    """First-sheet records against eigenvalues of the Dirichlet truncation of H_ω."""
    S = prob.spectral
    P = cfg.potential
    Lp = min(prob.weights.box, L)
    V = P.dense(WeightScheme(prob.weights.rho, Lp))
    cache = {}
    rows, ok = [], True
    lam = complex(cfg.threshold)
    for r in records:
        if r.omega not in cache:
            cache[r.omega] = box_eigenvalues(S.matrix, V, r.omega, L, Lp)
        ev = cache[r.omega]
        d = float(np.min(np.abs(ev - r.z))) if ev.size else math.inf
        if r.sheet == "first":
            below = abs(r.z.imag) <= tol and (r.z.real < lam.real if prob.entry.side == "left" else r.z.real > lam.real)
            good = below and d <= tol
        else:
            good = d > tol
        ok &= good
        rows.append(dict(k=r.k, z=r.z, sheet=r.sheet, distance=d, passed=good))
    return dict(box=L, tol=tol, rows=rows, passed=bool(ok))


def run_crosscheck(cfg: cfgmod.RunConfig):
    prob = problem_for(cfg)
    cc = cfg.crosscheck
    checks = {}
    if cc.get("continuation", True):
        checks["continuation"] = continuation_check(
            prob, int(cc.get("points", 20)), float(cc.get("kmin", 1e-3)), float(cc.get("kmax", 1e-1)),
            bool(cc.get("corrupt_branch", False)))
    records = []
    for om in cfg.omegas:
        if om != 0:
            records.extend(prob.records(om, _region(cfg, prob, om), tol=cfg.search_tol))
    if cc.get("eigenvalues", True):
        checks["eigenvalues"] = eigenvalue_check(cfg, prob, records, int(cc.get("box", 60)), float(cc.get("tol", 1e-6)))
    checks["multiplicity"] = _multiplicity_check(records)
    passed = all(c["passed"] for c in checks.values())
    report = {"command": "crosscheck", "threshold": prob.threshold_id, "eps0": prob.eps0,
              "checks": checks, "notes": cfg.notes, "passed": bool(passed)}
    return report, records


COMMANDS = {
    "spectrum": run_spectrum,
    "resonances": run_resonances,
    "clusters": run_clusters,
    "accumulate": run_accumulate,
    "crosscheck": run_crosscheck,
}


# -- argument handling ------------------------------------------------------------

def _omega_flag(text: str) -> dict:
    parts = text.split(",")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"omega must be MOD[,ARG], got {text!r}") from None
    if len(vals) not in (1, 2):
        raise argparse.ArgumentTypeError("omega must be MOD[,ARG]")
    return {"modulus": vals[0], "argument": vals[1] if len(vals) == 2 else 0.0}


def _set_flag(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError("--set expects KEY=VALUE")
    key, value = text.split("=", 1)
    return key.strip(), yaml.safe_load(value)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcres", description="Threshold resonances of multichannel lattice operators.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("config", help="YAML run configuration")
        s.add_argument("--omega", action="append", type=_omega_flag, help="MOD[,ARG]; repeatable, replaces the config list")
        s.add_argument("--threshold", type=float, help="threshold value (real)")
        s.add_argument("--side", choices=("left", "right"))
        s.add_argument("--case", choices=("A", "B"))
        s.add_argument("--rho", type=float)
        s.add_argument("--box", type=int)
        s.add_argument("--eps0", type=float)
        s.add_argument("--seed", type=int)
        s.add_argument("--region", choices=("omega", "full"))
        s.add_argument("--csv", help="records CSV path (default: stdout)")
        s.add_argument("--report", help="JSON report path")
        s.add_argument("--emit-plot-data", metavar="DIR", help="write k- and z-plane scatter CSVs")
        s.add_argument("--set", action="append", type=_set_flag, default=[], metavar="KEY=VALUE",
                       help="override any config field by dotted key")
    return p


def _overrides(args) -> list:
    out = list(args.set)
    if args.omega:
        out.append(("omega", args.omega))
    for flag, key in (("threshold", "threshold.value"), ("side", "threshold.side"), ("case", "case"),
                      ("rho", "rho"), ("box", "box"), ("eps0", "eps0"), ("seed", "seed"), ("region", "region")):
        v = getattr(args, flag)
        if v is not None:
            out.append((key, v))
    return out


def _write(path: Optional[str], text: str, fallback=None) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    elif fallback is not None:
        fallback.write(text)


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = cfgmod.load(args.config, _overrides(args))
    except (McresError, ValueError, KeyError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report, records = COMMANDS[args.command](cfg)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except McresError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = cfg.output
    if args.command != "spectrum":
        _write(args.csv or out.get("csv"), records_csv(records), sys.stdout)
    _write(args.report or out.get("report"), dump_report(report),
           sys.stdout if args.command == "spectrum" else None)
    plot_dir = args.emit_plot_data or out.get("plot_dir")
    if plot_dir:
        for name, text in plot_csvs(records).items():
            _write(str(Path(plot_dir) / name), text)
    status = "PASS" if report["passed"] else "FAIL"
    print(f"{args.command}: {status}", file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
