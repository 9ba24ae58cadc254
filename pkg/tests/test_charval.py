import cmath

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcres.charval import (Annulus, ContourSpec, as_family, index_on_contour, locate_characteristic_values,
                           newton_refine, residue_rank, sort_zeros)
from mcres.errors import SingularOnContour


def poly_family(roots_per_entry):
    """Diagonal family with entries Π (k - r); zeros known exactly."""
    def F(k):
        return np.diag([np.prod([k - r for r in rs]) if rs else 1.0 + 0j for rs in roots_per_entry])

    def dF(k):
        out = []
        for rs in roots_per_entry:
            s = 0j
            for i in range(len(rs)):
                s += np.prod([k - r for j, r in enumerate(rs) if j != i])
            out.append(s)
        return np.diag(out)
    return as_family(F, dF)


def test_index_counts_multiplicity():
    a = 0.01 - 0.02j
    fam = poly_family([[a, a], [a], [0.5]])
    assert index_on_contour(fam, ContourSpec(a, 0.005)) == 3
    assert index_on_contour(fam, ContourSpec(0.3, 0.01)) == 0


def test_index_raises_on_contour_zero():
    fam = poly_family([[0.01]])
    with pytest.raises(SingularOnContour):
        index_on_contour(fam, ContourSpec(0.0, 0.01, nodes=32))


def test_locator_finds_known_zeros_with_multiplicity():
    roots = [0.02 * cmath.exp(-1.0j), 0.05 * cmath.exp(2.0j), 0.1 * cmath.exp(0.4j)]
    fam = poly_family([[roots[0], roots[1]], [roots[1], roots[2]], [0.7]])
    zs = locate_characteristic_values(fam, Annulus(1e-4, 0.2))
    assert [m for _, m in zs] == [1, 2, 1]
    for (k, m), r in zip(zs, roots):
        assert abs(k - r) < 1e-12


@settings(max_examples=10, deadline=None)
@given(st.lists(st.tuples(st.floats(0.003, 0.15), st.floats(-3.1, 3.1)), min_size=1, max_size=4),
       st.integers(0, 3))
def test_locator_property(polar, seed):
    roots = [r * cmath.exp(1j * t) for r, t in polar]
    pts = sorted(roots, key=abs)
    # keep the search well posed: distinct roots, away from the annulus edges
    for i in range(len(pts)):
        for j in range(i):
            if abs(pts[i] - pts[j]) < 1e-3:
                return
    fam = poly_family([roots])
    zs = locate_characteristic_values(fam, Annulus(1e-3, 0.2), seed=seed)
    assert sum(m for _, m in zs) == len(roots)
    for r in roots:
        assert min(abs(k - r) for k, _ in zs) < 1e-10


def test_empty_annulus():
    fam = poly_family([[0.5], []])
    assert locate_characteristic_values(fam, Annulus(1e-4, 0.1)) == []


def test_newton_with_deflation():
    fam = poly_family([[0.01, 0.011j]])
    k = newton_refine(fam, 0.009 + 0.001j)
    assert abs(k - 0.01) < 1e-15
    k2 = newton_refine(fam, 0.0101, deflate=[(0.01, 1)])
    assert abs(k2 - 0.011j) < 1e-15


def test_residue_rank_of_known_pole():
    rng = np.random.default_rng(0)
    U = rng.standard_normal((6, 2))
    V = rng.standard_normal((2, 6))
    H = rng.standard_normal((6, 6))
    a = 0.01 + 0.003j

    def R(k):
        return U @ V / (k - a) + H * k
    assert residue_rank(R, ContourSpec(a, 0.002)) == 2
    assert residue_rank(R, ContourSpec(0.1, 0.002)) == 0


def test_sort_is_deterministic():
    items = [(0.1j, 1), (0.05, 2), (-0.1j, 1), (0.1, 1)]
    assert sort_zeros(items) == sort_zeros(list(reversed(items)))
    assert sort_zeros(items)[0] == (0.05, 2)
