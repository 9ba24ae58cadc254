import math

import numpy as np
import pytest

from mcres import build_problem
from mcres.accumulation import (CountingFunction, SectorSpec, annulus_count, build_Q0_E0, classify_sheet,
                                eps_sequence, expected_sheet, q0_from_residue, verify_counting, verify_sector)
from mcres.charval import Annulus, ResonanceRecord
from mcres.errors import EpsilonOnSpectrum, NotCaseB
from mcres.model import preset
from mcres.perturbation import PotentialSpec, SeparableTerm, site_potential


def _case_b(J=8, sign=1):
    M = preset("semistrip", {"N": 1, "J": J})
    K = np.diag(1.0 / np.arange(1, J + 1) ** 2)
    P = PotentialSpec("B", (SeparableTerm(1.0, 1.0, np.eye(J)),), 1.0, J, K=K, sign=sign)
    return M, P


def test_q0_e0_identities():
    M, P = _case_b()
    prob = build_problem(M, P, 0.0, case="B")
    Q0, E0 = build_Q0_E0(P, prob.weights, prob.spectral)
    q = np.sort(np.linalg.eigvalsh(Q0))[::-1]
    e = np.sort(np.linalg.eigvalsh(E0))[::-1]
    n = len(e)
    assert np.allclose(q[:n], e / 2, atol=1e-10)
    assert np.allclose(q[n:], 0, atol=1e-10)
    assert np.allclose(Q0, q0_from_residue(P, prob.weights, prob.spectral), atol=1e-10)
    assert np.all(e >= -1e-12)


def test_case_a_refused():
    prob = build_problem(preset("strip", {"N": 2}), site_potential({(0, 0): np.eye(2)}, 1.0, 2), 1.0)
    with pytest.raises(NotCaseB):
        build_Q0_E0(prob.potential, prob.weights, prob.spectral)


def test_counting_function():
    cf = CountingFunction(np.diag([0.5, 0.1, 0.1, 0.0]))
    assert cf(0.05, 2) == 3
    assert cf(0.6, 2) == 0
    assert cf.rank() == 3


def test_eps_sequence_avoids_spectrum():
    cf = CountingFunction(np.diag([0.4, 0.1]))
    eps = eps_sequence(cf, count=10)
    assert eps[0] == 0.4
    assert 0.05 not in eps  # 2ε = 0.1 sits on an eigenvalue
    for e in eps:
        assert np.all(np.abs(cf.eigenvalues - 2 * e) >= 0.1 * 2 * e)


def _rec(k, omega=0.01):
    return ResonanceRecord(k=k, z=k * k, mult_index=1, mult_residue=1, sheet="first" if k.imag > 0 else "second",
                           omega=omega, threshold="t")


def test_counting_report_rules():
    cf = CountingFunction(np.diag([0.4, 0.02]))
    recs = [_rec(-0.5j * 0.01 * 0.4), _rec(-0.5j * 0.01 * 0.02)]
    rep = verify_counting(recs, 0.01, cf, [0.4, 0.05, 0.005], eps0=0.3)
    assert rep.passed
    assert [r["count"] for r in rep.rows] == [0, 1, 2]
    with pytest.raises(EpsilonOnSpectrum):
        verify_counting(recs, 0.01, cf, [0.01], eps0=0.3)


def test_sector():
    recs = [_rec(-0.001j), _rec(0.0001 - 0.002j)]
    assert verify_sector(recs, 0.01, sign=1).passed
    assert not verify_sector([_rec(0.0001j)], 0.01, sign=1).passed
    with pytest.raises(ValueError):
        SectorSpec(theta=2.0)


def test_sheet_table():
    assert classify_sheet(_rec(0.001j), 1.0, -1).actual == "first"
    assert expected_sheet(1.0, 1) == "second"
    assert expected_sheet(1.0, -1) == "first"
    w = complex(math.cos(3 * math.pi / 4), math.sin(3 * math.pi / 4))
    assert expected_sheet(w, 1) == "first"
    assert expected_sheet(w, -1) == "second"
    assert expected_sheet(1j, 1) is None
    assert not classify_sheet(_rec(0.001j), 1.0, 1).match


@pytest.mark.parametrize("sign", [1, -1])
def test_small_case_b_run(sign):
    M, P = _case_b(J=6, sign=sign)
    prob = build_problem(M, P, 0.0, case="B")
    om = 0.01
    Q0, E0 = build_Q0_E0(P, prob.weights, prob.spectral)
    cf = CountingFunction(E0)
    recs = prob.records(om, Annulus(1e-5 * om, prob.eps0 * om))
    assert all(r.mult_index == r.mult_residue for r in recs)
    assert verify_sector(recs, om, sign=sign).passed
    eps = eps_sequence(cf, floor=1e-5)
    assert verify_counting(recs, om, cf, eps, prob.eps0).passed
    assert all(classify_sheet(r, om, sign).match for r in recs)
    if sign < 0:
        # genuine eigenvalues below the threshold
        assert all(abs(r.z.imag) < 1e-12 and r.z.real < 0 for r in recs)
    assert annulus_count(recs, om, 1e-5, prob.eps0) == cf.rank()
