"""Diagram value types, the pointwise metric layer and file I/O."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdbary.diagram import (
    DiagramFormatError,
    DiagramPoint,
    MetricParams,
    PairType,
    PersistenceDiagram,
    augment,
    diagonal_projection,
    lifted_distance,
    pointwise_distance,
    read_diagram,
    read_manifest,
    threshold_by_persistence,
    write_diagram,
    write_manifest,
)

from conftest import brute_force_cost, random_diagram


# -- value types -----------------------------------------------------------


def test_point_validation():
    with pytest.raises(ValueError):
        DiagramPoint(birth=1.0, death=0.5)
    with pytest.raises(ValueError):
        DiagramPoint(birth=0.0, death=1.0, critical_index_low=0,
                     critical_index_high=2)
    with pytest.raises(ValueError):
        DiagramPoint(birth=0.0, death=1.0, is_diagonal=True)
    p = DiagramPoint(birth=0.25, death=1.0)
    assert p.persistence == 0.75
    assert not p.on_diagonal()
    assert DiagramPoint(birth=0.5, death=0.5).on_diagonal()


def test_diagram_validation():
    with pytest.raises(ValueError):
        PersistenceDiagram(np.array([1.0]), np.array([0.0]))
    with pytest.raises(ValueError):
        PersistenceDiagram(np.array([0.0, 0.0]), np.array([1.0, 1.0]),
                           crit_low=np.array([0, 1]))
    D = PersistenceDiagram.from_pairs([(0.0, 1.0), (0.5, 2.0)])
    assert len(D) == 2
    assert D.max_persistence() == 1.5
    assert np.allclose(D.persistence, [1.0, 1.5])


def test_metric_params_validation():
    with pytest.raises(ValueError):
        MetricParams(q=0.0)
    with pytest.raises(ValueError):
        MetricParams(alpha=1.5)
    p = MetricParams(alpha=0.5)
    assert p.lam(PairType.MIN_SADDLE) == 0.0
    assert p.lam(PairType.SADDLE_MAX) == 1.0


# -- metric layer ----------------------------------------------------------


def test_pointwise_distance_basics():
    a = DiagramPoint(birth=0.0, death=1.0)
    b = DiagramPoint(birth=3.0, death=5.0)
    assert pointwise_distance(a, b, 2.0) == pytest.approx(5.0)
    assert pointwise_distance(a, b, 1.0) == pytest.approx(7.0)
    d1 = DiagramPoint(birth=0.5, death=0.5, is_diagonal=True)
    d2 = DiagramPoint(birth=9.0, death=9.0, is_diagonal=True)
    assert pointwise_distance(d1, d2) == 0.0
    with pytest.raises(ValueError):
        pointwise_distance(a, b, 0.0)


def test_diagonal_projection():
    a = DiagramPoint(birth=1.0, death=3.0, birth_location=(0.1, 0.2, 0.3))
    p = diagonal_projection(a)
    assert p.birth == p.death == 2.0
    assert p.is_diagonal
    assert p.birth_location == a.birth_location
    # distance to the projection is the L2 deletion distance
    assert pointwise_distance(a, p) == pytest.approx(np.sqrt(2.0))


def test_lifted_distance_alpha_zero_matches_pointwise():
    a = DiagramPoint(birth=0.0, death=1.0, birth_location=(0.0, 0.0, 0.0))
    b = DiagramPoint(birth=0.5, death=2.0, birth_location=(1.0, 1.0, 1.0))
    params = MetricParams(alpha=0.0)
    assert lifted_distance(a, b, params) == pointwise_distance(a, b)


def test_lifted_distance_blend_by_hand():
    # maxima pairs (crit_low = 1) use the death location (lambda_max = 1)
    a = DiagramPoint(birth=0.0, death=1.0, critical_index_low=1,
                     critical_index_high=2, death_location=(0.0, 0.0, 0.0))
    b = DiagramPoint(birth=0.0, death=1.0, critical_index_low=1,
                     critical_index_high=2, death_location=(3.0, 4.0, 0.0))
    params = MetricParams(alpha=0.64)
    # birth/death parts coincide, so only the location term remains
    assert lifted_distance(a, b, params) == pytest.approx(np.sqrt(0.64 * 25))
    both_diag = lifted_distance(
        DiagramPoint(birth=1.0, death=1.0, is_diagonal=True,
                     death_location=(5.0, 0.0, 0.0)),
        DiagramPoint(birth=2.0, death=2.0, is_diagonal=True),
        params)
    assert both_diag == 0.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0.01, 1)),
                min_size=3, max_size=3),
       st.floats(1.0, 8.0))
def test_pointwise_triangle_inequality(coords, q):
    # off-diagonal points only: two diagonal ghosts are at distance zero by
    # convention, which deliberately breaks the triangle inequality
    pts = [DiagramPoint(birth=b, death=b + p) for b, p in coords]
    d_ab = pointwise_distance(pts[0], pts[1], q)
    d_bc = pointwise_distance(pts[1], pts[2], q)
    d_ac = pointwise_distance(pts[0], pts[2], q)
    assert d_ac <= d_ab + d_bc + 1e-9


def test_augment_balances_and_flags():
    Df = PersistenceDiagram.from_pairs([(0.0, 1.0)])
    Dg = PersistenceDiagram.from_pairs([(0.0, 2.0), (1.0, 3.0)])
    Af, Ag = augment(Df, Dg)
    assert len(Af) == len(Ag) == 3
    assert Af.is_diag.sum() == 2 and Ag.is_diag.sum() == 1
    # injected ghosts sit at the other diagram's diagonal projections
    assert set(zip(Af.births[1:], Af.deaths[1:])) == {(1.0, 1.0), (2.0, 2.0)}
    with pytest.raises(ValueError):
        augment(Df, PersistenceDiagram.empty(PairType.MIN_SADDLE))


def test_augment_preserves_optimal_cost(rng):
    # the full square assignment over augmented diagrams realizes the same
    # optimum as the partial-matching-with-deletion formulation; check that
    # adding extra ghost pairs (which cost zero against each other) never
    # changes the brute-force optimum
    params = MetricParams()
    for _ in range(10):
        Df = random_diagram(rng, max_points=2)
        Dg = random_diagram(rng, max_points=2)
        base = brute_force_cost(Df, Dg, params)
        Af, Ag = augment(Df, Dg)
        assert brute_force_cost(Af, Ag, params) == pytest.approx(
            base, abs=1e-12)


def test_threshold_is_strict():
    D = PersistenceDiagram.from_pairs([(0.0, 1.0), (0.0, 2.0), (1.0, 1.0)])
    T = threshold_by_persistence(D, 1.0)
    assert len(T) == 1 and T.deaths[0] == 2.0
    assert len(threshold_by_persistence(D, 0.0)) == 2  # zero pairs dropped
    with pytest.raises(ValueError):
        threshold_by_persistence(D, -0.5)


# -- file I/O --------------------------------------------------------------


def test_diagram_roundtrip_exact(tmp_path, rng):
    D = random_diagram(rng, max_points=20, with_locations=True)
    path = tmp_path / "d.csv"
    write_diagram(D, path)
    E = read_diagram(path)
    assert np.array_equal(D.births, E.births)
    assert np.array_equal(D.deaths, E.deaths)
    assert np.array_equal(D.birth_locs, E.birth_locs)
    assert np.array_equal(D.death_locs, E.death_locs)
    assert E.pair_type == D.pair_type
    assert E.label == "d"


def test_diagonal_ghosts_not_serialized(tmp_path):
    D = PersistenceDiagram(
        np.array([0.0, 1.0]), np.array([2.0, 1.0]),
        is_diag=np.array([False, True]))
    path = tmp_path / "d.csv"
    write_diagram(D, path)
    assert len(read_diagram(path)) == 1


@pytest.mark.parametrize("rows, lineno, needle", [
    (["0,1,0,0,0,0,0,0"], 2, "expected 9 fields"),
    (["0,1,0,0,0,0,0,0,saddleMax", "x,1,0,0,0,0,0,0,saddleMax"], 3, "line 3"),
    (["0,1,0,0,0,0,0,0,whatever"], 2, "unknown pair type"),
    (["2,1,0,0,0,0,0,0,saddleMax"], 2, "death < birth"),
    (["0,1,0,0,0,0,0,0,saddleMax", "0,1,0,0,0,0,0,0,minSaddle"], 3, "mixed"),
])
def test_read_diagram_errors_carry_line_numbers(tmp_path, rows, lineno, needle):
    path = tmp_path / "bad.csv"
    path.write_text("birth,death,bx,by,bz,dx,dy,dz,pairType\n"
                    + "\n".join(rows) + "\n")
    with pytest.raises(DiagramFormatError) as exc:
        read_diagram(path)
    assert f"line {lineno}" in str(exc.value)
    assert needle in str(exc.value)


def test_read_diagram_header_errors(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(DiagramFormatError, match="missing header"):
        read_diagram(empty)
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,c\n")
    with pytest.raises(DiagramFormatError, match="line 1"):
        read_diagram(bad)


def test_manifest_roundtrip(tmp_path, rng):
    paths = []
    diags = []
    for i in range(3):
        D = random_diagram(rng, max_points=5)
        p = tmp_path / f"m{i}.csv"
        write_diagram(D, p)
        paths.append((f"member_{i}", f"m{i}.csv"))
        diags.append(D)
    manifest = tmp_path / "ensemble.json"
    write_manifest(manifest, paths)
    loaded = read_manifest(manifest)
    assert [D.label for D in loaded] == ["member_0", "member_1", "member_2"]
    for D, E in zip(diags, loaded):
        assert np.array_equal(D.births, E.births)
        assert np.array_equal(D.deaths, E.deaths)
