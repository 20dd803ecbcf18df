import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from openbook.geometry import (
    BindingSpec,
    EmptyStructure,
    GeometryError,
    OpenBookStructure,
    PageSpec,
    TransversalityViolation,
    build_periodic_flat_book,
    certify_epsilon0,
    compute_epsilon0,
    overlap_extent_sampled,
    two_spheres,
    validate_structure,
)


def test_three_equispaced_pages():
    s = build_periodic_flat_book(3, 1.0, 1.0)
    assert s.n_pages == 3
    assert len(s.bindings) == 1 and s.bindings[0].periodic
    assert np.allclose(np.degrees(s.angles), [0, 120, 240])
    assert s.incidence == {0: (0, 1, 2)}
    assert s.area == pytest.approx(3.0)


def test_single_page_is_valid():
    s = build_periodic_flat_book(1)
    rep = validate_structure(s)
    assert rep.ok
    assert rep.n_pages == 1


def test_narrow_gap_rejected():
    with pytest.raises(TransversalityViolation):
        build_periodic_flat_book(2, angles=[0.0, math.radians(10)])


@pytest.mark.parametrize(
    "kwargs",
    [dict(E=0), dict(E=2, ell=-1.0), dict(E=2, L=0.0), dict(E=2, angles=[0.0]), dict(E=2, angles=[1.0, 0.5])],
)
def test_bad_inputs(kwargs):
    with pytest.raises(GeometryError):
        build_periodic_flat_book(**kwargs)


def test_zero_pages_is_empty_structure():
    with pytest.raises(EmptyStructure):
        build_periodic_flat_book(0)


def test_validate_equispaced_book(book3):
    rep = validate_structure(book3)
    assert rep.ok, rep.failures()
    assert rep.min_gap_deg == pytest.approx(120.0)


def test_coincident_pages_fail_validation():
    pages = (PageSpec(1.0, 0.3), PageSpec(1.0, 0.3))
    s = OpenBookStructure(pages, (BindingSpec(1.0),), epsilon0=0.1)
    rep = validate_structure(s)
    assert not rep.ok
    assert "transversal" in rep.failures()
    assert rep.min_gap_deg == 0.0


def test_dangling_binding_and_empty():
    s = OpenBookStructure((PageSpec(1.0, 0.0),), (BindingSpec(1.0), BindingSpec(1.0)), epsilon0=0.1)
    rep = validate_structure(s)
    assert set(rep.failures()) >= {"bindings_used", "connected"}
    empty = OpenBookStructure((), (), epsilon0=0.1)
    assert "nonempty" in validate_structure(empty).failures()


def test_two_spheres_counts():
    s = two_spheres(1.0, 1.0, 1.2)
    rep = validate_structure(s)
    assert rep.n_pages == 4 and rep.n_bindings == 1
    assert rep.connected
    assert not s.flat


def test_tangent_spheres_are_not_transversal():
    s = two_spheres(1.0, 1.0, 2.0)
    assert "transversal" in validate_structure(s).failures()


@pytest.mark.parametrize("E", [2, 3])
def test_epsilon0_quarter_length(E):
    assert compute_epsilon0(build_periodic_flat_book(E)) == pytest.approx(0.25)


def test_epsilon0_certified_by_sampling():
    for s in (build_periodic_flat_book(2), build_periodic_flat_book(3)):
        eps = s.epsilon0 - 1e-6
        reach = overlap_extent_sampled(s, eps, n_samples=10**6, seed=1)
        assert reach <= 2 * eps + 1e-9 or reach <= s.junction_radius(eps) + 1e-9
        assert certify_epsilon0(s, eps, n_samples=10**5)


def test_epsilon0_narrow_gap_matches_sampling():
    gap = math.radians(20)
    s = build_periodic_flat_book(2, angles=[0.0, gap])
    assert s.epsilon0 == pytest.approx(min(0.25, 0.5 * math.sin(gap / 2)))
    eps = s.epsilon0 - 1e-6
    reach = overlap_extent_sampled(s, eps, n_samples=10**6, seed=2)
    # two strips at gap g overlap out to eps / sin(g/2); sampling resolves it from below
    assert reach <= eps / math.sin(gap / 2) + 1e-9
    assert reach >= 0.95 * eps / math.sin(gap / 2)
    assert certify_epsilon0(s, eps, n_samples=10**5)


def test_json_round_trip(book3):
    d = json.loads(book3.to_json())
    assert set(d) == {"pages", "binding"}
    assert d["pages"][1]["angle_deg"] == pytest.approx(120.0)
    assert d["binding"] == {"length": 1.0, "periodic": True}
    back = OpenBookStructure.from_json(book3.to_json())
    assert np.allclose(back.angles, book3.angles)
    assert back.epsilon0 == pytest.approx(book3.epsilon0)


angle_sets = st.lists(st.floats(0, 359.0), min_size=1, max_size=6, unique=True).map(sorted)


@given(E=st.integers(1, 8), ell=st.floats(0.2, 5.0), L=st.floats(0.2, 5.0))
def test_build_then_validate(E, ell, L):
    assert validate_structure(build_periodic_flat_book(E, ell, L)).ok


@given(degs=angle_sets)
def test_build_validate_or_reject(degs):
    try:
        s = build_periodic_flat_book(len(degs), angles=[math.radians(a) for a in degs])
    except TransversalityViolation:
        return
    assert validate_structure(s).ok


@given(g1=st.floats(20, 180), g2=st.floats(20, 180))
def test_epsilon0_monotone_in_gap(g1, g2):
    lo, hi = sorted((g1, g2))
    e_lo = build_periodic_flat_book(2, angles=[0.0, math.radians(lo)]).epsilon0
    e_hi = build_periodic_flat_book(2, angles=[0.0, math.radians(hi)]).epsilon0
    assert e_lo <= e_hi + 1e-15


@given(E=st.integers(1, 6), s=st.floats(0.1, 10.0))
def test_epsilon0_scales_linearly(E, s):
    book = build_periodic_flat_book(E, 1.3, 0.7)
    assert book.scaled(s).epsilon0 == pytest.approx(s * book.epsilon0, rel=1e-12)


def test_coincident_pages_are_not_transversal():
    with pytest.raises(TransversalityViolation):
        build_periodic_flat_book(2, angles=[0.0, 0.0])
