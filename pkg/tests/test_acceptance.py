"""Acceptance criteria 1-10, one printed PASS/FAIL line each."""

import math
import subprocess
import sys
import time
from functools import lru_cache
from pathlib import Path

import numpy as np

from mcres import ChannelMatrix, build_problem, preset
from mcres.accumulation import (CountingFunction, build_Q0_E0, classify_sheet, eps_sequence, verify_counting,
                                verify_sector)
from mcres.charval import Annulus
from mcres.clusters import build_effective_matrix, build_projector, order_regression, predict_clusters, verify_clusters
from mcres.freeres import ContinuedResolvent, WeightScheme, free_kernel, pole_residue, residue_kernels
from mcres.model import classify_thresholds, diagonalize_channel
from mcres.oracles import big_box_for, box_eigenvalues, dense_free_resolvent, weighted_resolvent_oracle
from mcres.perturbation import PotentialSpec, SeparableTerm, site_potential

ROOT = Path(__file__).resolve().parents[1]
CASE_B_OMEGA = 0.01


def _strip_rank_one():
    return build_problem(preset("strip", {"N": 2}), site_potential({(0, 0): [[1, 0], [0, 0]]}, 1.0, 2), 1.0)


def _diag113(block):
    return build_problem(ChannelMatrix(np.diag([1.0, 1.0, 3.0])), site_potential({(0, 0): block}, 1.0, 3), 1.0)


@lru_cache(maxsize=None)
def cluster_sweep():
    prob = _strip_rank_one()
    omegas = list(np.logspace(-1.5, -3, 7))
    t0 = time.time()
    runs = [(om, prob.records(om)) for om in omegas]
    return prob, runs, time.time() - t0


COUPLED = np.array([[0.35, 0.15, 0.1], [0.15, 0.35, 0.0], [0.1, 0.0, 0.3]])
DOUBLE = np.diag([0.4, 0.4, 0.0])


@lru_cache(maxsize=None)
def exact_count_runs():
    out = []
    for name, block in (("coupled", COUPLED), ("double", DOUBLE)):
        prob = _diag113(block)
        proj = build_projector(prob.entry, prob.spectral, prob.weights)
        E = build_effective_matrix(prob.entry, prob.factors, proj)
        for om in (0.02, 0.01, 0.005):
            recs = prob.records(om)
            out.append((name, om, recs, verify_clusters(recs, predict_clusters(E, om), selfadjoint=True)))
    return out


@lru_cache(maxsize=None)
def case_b_run(sign: int, arg: float):
    J = 30
    M = np.zeros((J, J))
    M[0, 0] = 2.0
    K = np.diag(1.0 / np.arange(1, J + 1) ** 2)
    P = PotentialSpec("B", (SeparableTerm(1.0, 1.0, np.eye(J)),), 1.0, J, K=K, sign=sign)
    t0 = time.time()
    prob = build_problem(ChannelMatrix(M, rank_hint=1), P, 0.0, case="B")
    _, E0 = build_Q0_E0(P, prob.weights, prob.spectral)
    om = CASE_B_OMEGA * complex(math.cos(arg), math.sin(arg))
    recs = prob.records(om, Annulus(1e-6 * abs(om), prob.eps0 * abs(om)))
    return prob, CountingFunction(E0), om, recs, time.time() - t0


def test_criterion_01_kernel(acceptance_line):
    t0 = time.time()
    closed = max(abs(free_kernel(-1, 0, 0) - 1 / math.sqrt(5)), abs(free_kernel(5, 0, 0) + 1 / math.sqrt(5)))
    rng = np.random.default_rng(2024)
    worst = 0.0
    L = 200
    for _ in range(50):
        # at least 0.25 away from [0, 4]: the box [-200, 200] then truncates at the 1e-17 level
        while True:
            z = complex(rng.uniform(-3, 7), rng.uniform(-2, 2))
            if abs(z - min(max(z.real, 0), 4)) >= 0.25:
                break
        G = dense_free_resolvent(z, L)
        for n, m in ((0, 0), (3, -2), (10, 10), (-7, 5), (20, 0)):
            worst = max(worst, abs(free_kernel(z, n, m) - G[L + n, L + m]))
    dt = time.time() - t0
    ok = closed < 1e-10 and worst < 1e-8 and dt < 10
    acceptance_line(1, ok, f"closed-form err {closed:.1e}, max dense err {worst:.1e} (tol 1e-8), {dt:.1f}s")
    assert ok


def test_criterion_02_continuation(acceptance_line):
    S = diagonalize_channel(preset("strip", {"N": 2}))
    W = WeightScheme.default(1.0)
    R = ContinuedResolvent(S, 0, W)
    rng = np.random.default_rng(7)
    worst, worst_d = 0.0, 0.0
    for _ in range(20):
        k = 10 ** rng.uniform(-3, -1) * np.exp(1j * rng.uniform(0.05, math.pi / 2 - 0.05))
        z = complex(R.z(k))
        O = weighted_resolvent_oracle(S.matrix, z, W.weights_minus,
                                      big_box_for([z - lam for lam in S.eigenvalues], W.box))
        worst = max(worst, np.linalg.norm(R.matrix(k) - O) / np.linalg.norm(O))
        h = 1e-5 * abs(k)
        fd = (R.matrix(k + h) - R.matrix(k - h)) / (2 * h)
        d = R.derivative(k)
        worst_d = max(worst_d, np.linalg.norm(d - fd) / np.linalg.norm(d))
    ok = worst <= 1e-8 and worst_d <= 1e-6
    acceptance_line(2, ok, f"max rel err {worst:.1e} (tol 1e-8), derivative {worst_d:.1e} (tol 1e-6)")
    assert ok


def _residue_slope(R, Res):
    ks = np.logspace(-5, -2, 13) * np.exp(0.7j)
    errs = [np.linalg.norm(k * R.matrix(k) - Res) for k in ks]
    return order_regression(ks, errs)


def test_criterion_03_residue_law(acceptance_line):
    S = diagonalize_channel(preset("strip", {"N": 2}))
    W = WeightScheme(1.0, 20)
    R = ContinuedResolvent(S, 0, W)
    s1 = _residue_slope(R, pole_residue(R))
    Sd = diagonalize_channel(ChannelMatrix(np.diag([0.0, 4.0])))
    entry = classify_thresholds(Sd).find(4.0, "left")
    Rd = ContinuedResolvent(Sd, entry.channel, W, partner=entry.degenerate_partner)
    a, b = residue_kernels(W)
    Res_d = np.kron(a, Sd.projections[entry.channel]) + np.kron(b, Sd.projections[entry.degenerate_partner])
    s2 = _residue_slope(Rd, Res_d)
    ok = abs(s1 - 1) <= 0.1 and abs(s2 - 1) <= 0.1
    acceptance_line(3, ok, f"slope {s1:.3f} (non-degenerate), {s2:.3f} (degenerate diag(0,4)); target 1.0 +- 0.1")
    assert ok


def test_criterion_04_cluster_law(acceptance_line):
    prob, runs, dt = cluster_sweep()
    counts = [sum(r.mult_index for r in recs) for _, recs in runs]
    errs = [abs(recs[0].k + 0.25j * om) for om, recs in runs if recs]
    slope = order_regression([om for om, _ in runs], errs) if len(errs) == len(runs) else float("nan")
    ok = counts == [1] * 7 and abs(slope - 2) <= 0.2 and dt < 120
    acceptance_line(4, ok, f"counts {counts}, slope {slope:.3f} (2.0 +- 0.2), {dt:.1f}s")
    assert ok


def test_criterion_05_exact_count(acceptance_line):
    runs = exact_count_runs()
    totals = [(name, om, sum(r.mult_index for r in recs), rep.counts, rep.expected) for name, om, recs, rep in runs]
    ok = all(t == 2 and c == e for _, _, t, c, e in totals) and all(rep.passed for *_, rep in runs)
    detail = "; ".join(f"{n} w={om:g}: total {t}, clusters {c} vs {e}" for n, om, t, c, e in totals)
    acceptance_line(5, ok, detail)
    assert ok


def test_criterion_06_multiplicity_equivalence(acceptance_line):
    records = [r for _, recs in cluster_sweep()[1] for r in recs]
    records += [r for _, _, recs, _ in exact_count_runs() for r in recs]
    records += case_b_run(1, 0.0)[3]
    mism = sum(r.mult_index != r.mult_residue for r in records)
    offset = max(abs(r.index_raw - r.mult_index) for r in records)
    ok = mism == 0 and offset <= 1e-6 and len(records) > 0
    acceptance_line(6, ok, f"{len(records)} records, {mism} index/residue mismatches, max index offset {offset:.1e}")
    assert ok


def test_criterion_07_eigenvalue_oracle(acceptance_line):
    V_block = np.diag([-8.0, -8.0])
    prob = build_problem(preset("strip", {"N": 2}), site_potential({(0, 0): V_block}, 1.0, 2), 1.0)
    Lp = 10
    V = prob.potential.dense(WeightScheme(1.0, Lp))
    first, second, bad = 0, 0, []
    for om in (0.03, 0.04, 0.05):
        ev = box_eigenvalues(prob.spectral.matrix, V, om, 60, Lp)
        for r in prob.records(om, prob.default_region(om, "full")):
            d = float(np.min(np.abs(ev - r.z)))
            if r.sheet == "first":
                first += 1
                if not (abs(r.z.imag) <= 1e-6 and r.z.real < 1 and d <= 1e-6):
                    bad.append((om, r.z, d))
            else:
                second += 1
                if d <= 1e-6:
                    bad.append((om, r.z, d))
    ok = first > 0 and not bad
    acceptance_line(7, ok, f"{first} first-sheet records matched to 1e-6, {second} second-sheet, failures {bad}")
    assert ok


def test_criterion_08_accumulation(acceptance_line):
    prob, cf, om, recs, dt = case_b_run(1, 0.0)
    sector = verify_sector(recs, om, sign=1)
    eps = eps_sequence(cf, floor=1e-6)
    counting = verify_counting(recs, om, cf, eps, prob.eps0)
    ev = cf.eigenvalues
    small = ev[ev > 1e-12].min()
    saturated = [row for row in counting.rows if row["eps"] < small / 2]
    sat_ok = bool(saturated) and all(row["count"] == cf.rank() for row in saturated)
    ok = sector.passed and counting.passed and sat_ok and dt < 300
    acceptance_line(8, ok, f"{len(recs)} records, max Im(k/w) {sector.max_im:.1e}, counts within +-1 on "
                           f"{len(counting.rows)} annuli, saturation {saturated[-1]['count'] if saturated else None}"
                           f"/{cf.rank()}, {dt:.0f}s")
    assert ok


def _axis(recs):
    u = sum(r.z / abs(r.z) for r in recs)
    return math.atan2(u.imag, u.real)


def _wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def test_criterion_09_sheet_table(acceptance_line):
    parts, ok = [], True
    for sign in (1, -1):
        for arg in (0.0, 3 * math.pi / 4):
            prob, cf, om, recs, _ = case_b_run(sign, arg)
            tags = [classify_sheet(r, om, sign) for r in recs]
            good = bool(recs) and all(t.match for t in tags)
            parts.append(f"V{'+' if sign > 0 else '-'} arg {arg:.2f}: {tags[0].expected if tags else '-'} "
                         f"{'ok' if good else 'MISMATCH'}")
            ok &= good
            if sign > 0 and arg > 0:
                dev = abs(_wrap(_axis(recs) - (2 * arg - math.pi)))
                ok &= dev <= 0.1
                parts.append(f"axis deviation {dev:.1e} rad")
    acceptance_line(9, ok, "; ".join(parts))
    assert ok


def test_criterion_10_determinism(acceptance_line, tmp_path):
    outs = []
    for cfg in ("strip_rank1.yaml", "diag113_clusters.yaml"):
        for rep in range(2):
            path = tmp_path / f"{cfg}.{rep}.csv"
            cmd = "resonances" if cfg.startswith("strip") else "clusters"
            subprocess.run([sys.executable, "-m", "mcres", cmd, str(ROOT / "configs" / cfg), "--csv", str(path)],
                           check=True, capture_output=True)
            outs.append(path.read_bytes())
    ok = outs[0] == outs[1] and outs[2] == outs[3] and len(outs[0]) > 100
    acceptance_line(10, ok, "two configurations, byte-identical CSV across repeated runs")
    assert ok
