import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from extremo import (
    SpaceTimeField,
    as_lag,
    build_domain,
    lag_closure,
    load_field,
    rectangular_closure_size,
    save_field,
    square_sites,
)
from extremo.errors import FieldFormatError, ValidationError


@pytest.mark.parametrize(
    "fixed, n, w, expected",
    [
        (square_sites(15, 15), 300, 1, 67500),
        ([()], 40, 3, 64000),
        ([(0,)], 1, 1, 1),
        (square_sites(3), 4, 2, 48),
    ],
)
def test_site_count(fixed, n, w, expected):
    dom = build_domain(fixed, n, w)
    assert dom.n_sites == expected
    assert dom.d == dom.q + dom.w


def test_canonical_order_is_fixed_major_then_row_major():
    dom = build_domain([(2,), (1,)], 2, 2)
    expected = [(f,) + t for f in (2, 1) for t in itertools.product((1, 2), repeat=2)]
    assert [tuple(s) for s in dom.sites().tolist()] == expected
    for i, s in enumerate(expected):
        assert dom.site_index(s) == i


@pytest.mark.parametrize(
    "fixed, err",
    [([(1, 1), (1, 1)], "duplicate"), ([(1, 1), (1,)], "dimension"), ([], "non-empty")],
)
def test_build_domain_rejects(fixed, err):
    with pytest.raises(ValidationError, match=err):
        build_domain(fixed, 3, 1)


@pytest.mark.parametrize(
    "Z, h, expected",
    [
        ([[1], [2], [3], [4], [5]], [0], [[1], [2], [3], [4], [5]]),
        ([[1], [2], [3], [4], [5]], [2], [[1], [2], [3]]),
        ([[1, 1], [1, 2], [2, 1], [2, 2]], [1, 1], [[1, 1]]),
    ],
)
def test_lag_closure_examples(Z, h, expected):
    assert lag_closure(Z, h).tolist() == expected


def test_lag_closure_dimension_mismatch():
    with pytest.raises(ValidationError):
        lag_closure([[1, 1], [1, 2]], [1, 0, 0])


@given(n=st.integers(1, 6), w=st.integers(1, 3), data=st.data())
def test_rectangular_closure_matches_enumeration(n, w, data):
    h = data.draw(st.lists(st.integers(-n - 1, n + 1), min_size=w, max_size=w))
    Z = np.array(list(itertools.product(range(1, n + 1), repeat=w)))
    closure = lag_closure(Z, h)
    assert len(closure) == rectangular_closure_size(n, h)
    assert len(closure) <= len(Z)
    assert (len(closure) == len(Z)) == (not any(h))
    members = {tuple(z) for z in Z.tolist()}
    assert all(tuple(z) in members for z in (closure + np.array(h)).tolist())


def test_lag_split():
    lag = as_lag((1, 0, 2), 2)
    assert lag.fixed_part == (1, 0) and lag.increasing_part == (2,)
    assert lag.vector == (1, 0, 2)
    with pytest.raises(ValidationError):
        as_lag((1, 2), 2, 1)


def test_block_extracts_window():
    dom = build_domain(square_sites(2), 4, 1)
    fld = SpaceTimeField(dom, np.arange(8.0))
    sub = fld.block((1,), 2)
    assert sub.domain.n == 2
    assert sub.values.tolist() == [1.0, 2.0, 5.0, 6.0]
    with pytest.raises(ValidationError):
        fld.block((3,), 2)


def test_field_length_checked():
    with pytest.raises(ValidationError):
        SpaceTimeField(build_domain([(1,)], 3, 1), [1.0, 2.0])


@pytest.mark.parametrize("suffix", [".csv", ".csv.gz"])
def test_round_trip_and_byte_stability(tmp_path, suffix):
    dom = build_domain([()], 1, 1)
    fld = SpaceTimeField(dom, [3.5])
    save_field(fld, tmp_path / f"a{suffix}")
    assert load_field(tmp_path / f"a{suffix}", dom) == fld

    dom = build_domain(square_sites(2, 2), 5, 1)
    vals = np.random.default_rng(1).pareto(1.0, dom.n_sites) + 1e-300
    fld = SpaceTimeField(dom, vals)
    save_field(fld, tmp_path / f"b{suffix}")
    save_field(fld, tmp_path / f"c{suffix}")
    assert (tmp_path / f"b{suffix}").read_bytes() == (tmp_path / f"c{suffix}").read_bytes()
    assert load_field(tmp_path / f"b{suffix}", dom) == fld


def test_rows_in_any_order(tmp_path):
    dom = build_domain(square_sites(2), 2, 1)
    (tmp_path / "f.csv").write_text("f1,i1,value\n2,2,4\n1,1,1\n2,1,3\n1,2,2\n")
    assert load_field(tmp_path / "f.csv", dom).values.tolist() == [1.0, 2.0, 3.0, 4.0]


@pytest.mark.parametrize(
    "body, match",
    [
        ("1,1,1\n1,2,2\n2,1,3\n", "missing site"),
        ("1,1,1\n1,2,2\n2,1,3\n2,2,4\n3,1,5\n", "extra site"),
        ("1,1,1\n1,2,NaN\n2,1,3\n2,2,4\n", "unparseable value"),
        ("1,1,1\n1,2,abc\n2,1,3\n2,2,4\n", "unparseable value"),
        ("1,1,1\n1,1,2\n2,1,3\n2,2,4\n", "duplicate"),
    ],
)
def test_load_errors(tmp_path, body, match):
    dom = build_domain(square_sites(2), 2, 1)
    (tmp_path / "f.csv").write_text("f1,i1,value\n" + body)
    with pytest.raises(FieldFormatError, match=match):
        load_field(tmp_path / "f.csv", dom)


def test_positivity_flag(tmp_path):
    dom = build_domain([(1,)], 2, 1)
    (tmp_path / "f.csv").write_text("f1,i1,value\n1,1,1.0\n1,2,-0.5\n")
    load_field(tmp_path / "f.csv", dom)
    with pytest.raises(FieldFormatError, match="non-positive"):
        load_field(tmp_path / "f.csv", dom, positive=True)
