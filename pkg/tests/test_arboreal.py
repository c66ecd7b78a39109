"""Tests for ribbon graphs, chart atlases, sigma regions, and global families."""

import numpy as np
import pytest

from gfc.arboreal import (ArborealGraph, GlobalFamily, assemble_global_curve,
                          build_atlas, check_global_consistency,
                          graph_to_text, parse_graph, sigma_membership,
                          sigma_region, validate_graph)
from gfc.expr import make_cutoff, make_step, parse_function
from gfc.genfam import GeneratingFamily
from gfc.operators import (hyperbolic_stabilizer, quadratic_stabilizer,
                           restrict_to_leg)


def tripod():
    return ArborealGraph(
        vertices={"c": ("l0", "e1", "e2"), "a": ("e1",), "b": ("e2",),
                  "t": ("l0",)},
        edges={"e1": ("c", "a"), "e2": ("c", "b"), "l0": ("c", "t")},
        legs={"c": "l0"},
    )


def triangle():
    return ArborealGraph(
        vertices={"u": ("a", "c"), "v": ("a", "b"), "w": ("b", "c")},
        edges={"a": ("u", "v"), "b": ("v", "w"), "c": ("w", "u")},
        legs={},
    )


def fam_of(text, domain=(-2.0, 2.0)):
    return GeneratingFamily("q", domain, (), (), parse_function(text, ("q",)))


def zero_global(graph, atlas):
    fams = {v: fam_of("0.0", atlas.charts[v].base_interval)
            for v in graph.vertices}
    return GlobalFamily(graph, fams)


def codes(violations):
    return {v.code for v in violations}


# ---------------------------------------------------------------------------
# graph validation


def test_validate_tripod_and_triangle_ok():
    assert validate_graph(tripod()) == []
    assert validate_graph(triangle()) == []


def test_validate_four_valent_vertex():
    g = ArborealGraph(
        vertices={"c": ("e1", "e2", "e3", "e4"), "a": ("e1",), "b": ("e2",),
                  "d": ("e3",), "f": ("e4",)},
        edges={"e1": ("c", "a"), "e2": ("c", "b"), "e3": ("c", "d"),
               "e4": ("c", "f")},
        legs={},
    )
    assert "valence" in codes(validate_graph(g))


def test_validate_missing_leg():
    g = tripod()
    g = ArborealGraph(g.vertices, g.edges, legs={})
    assert "missing-leg" in codes(validate_graph(g))


def test_validate_double_edge():
    g = ArborealGraph(
        vertices={"u": ("e1", "e2"), "v": ("e1", "e2")},
        edges={"e1": ("u", "v"), "e2": ("u", "v")},
        legs={},
    )
    assert "double-edge" in codes(validate_graph(g))


def test_validate_self_loop():
    g = ArborealGraph(
        vertices={"u": ("e1", "e1")},
        edges={"e1": ("u", "u")},
        legs={},
    )
    assert "self-loop" in codes(validate_graph(g))


def test_validate_leg_bookkeeping():
    g = triangle()
    bad = ArborealGraph(g.vertices, g.edges, legs={"u": "a"})
    assert "spurious-leg" in codes(validate_graph(bad))
    t = tripod()
    bad = ArborealGraph(t.vertices, t.edges, legs={"c": "xx"})
    assert "leg-not-incident" in codes(validate_graph(bad))


def test_validate_cyclic_order_mismatch():
    t = tripod()
    vertices = dict(t.vertices)
    vertices["c"] = ("l0", "e1", "e1")
    bad = ArborealGraph(vertices, t.edges, t.legs)
    assert "cyclic-order" in codes(validate_graph(bad))


def test_validate_unknown_references():
    g = ArborealGraph(vertices={"u": ("e1",)},
                      edges={"e1": ("u", "nope")}, legs={})
    assert "unknown-vertex" in codes(validate_graph(g))
    g = ArborealGraph(vertices={"u": ("mystery",)}, edges={}, legs={})
    assert "unknown-edge" in codes(validate_graph(g))


# ---------------------------------------------------------------------------
# text format


def test_graph_text_roundtrip():
    for g in (tripod(), triangle()):
        assert parse_graph(graph_to_text(g)) == g


def test_parse_graph_rejects_bad_lines():
    with pytest.raises(ValueError):
        parse_graph("vertex a\nwhatever a b\n")
    with pytest.raises(ValueError):
        parse_graph("edge e1 a\n")


# ---------------------------------------------------------------------------
# atlas geometry


def test_atlas_tripod_charts():
    atlas = build_atlas(tripod())
    c = atlas.charts["c"]
    assert c.valence == 3
    assert c.base_interval == (-2.0, 2.0)
    assert c.views["l0"].kind == "leg"
    assert c.views["l0"].window == (1.0, 2.0)
    assert c.views["e1"].kind == "base"
    assert c.views["e1"].side == 1
    assert c.views["e1"].window == (1.0, 2.0)
    assert c.views["e2"].side == -1
    assert c.views["e2"].window == (-2.0, -1.0)
    a = atlas.charts["a"]
    assert a.valence == 1
    assert a.base_interval == (-1.0, 2.0)
    assert a.views["e1"].side == 1
    assert atlas.overlaps["l0"] == "through-leg-of-c"
    assert atlas.overlaps["e1"] == "direct"
    assert atlas.overlaps["e2"] == "direct"


def test_atlas_triangle_direct_overlaps():
    atlas = build_atlas(triangle())
    assert set(atlas.overlaps.values()) == {"direct"}
    for vertex, chart in atlas.charts.items():
        assert chart.valence == 2
        assert chart.base_interval == (-2.0, 2.0)
        sides = sorted(view.side for view in chart.views.values())
        assert sides == [-1, 1]


def test_atlas_rejects_invalid_graph():
    g = tripod()
    bad = ArborealGraph(g.vertices, g.edges, legs={})
    with pytest.raises(ValueError):
        build_atlas(bad)


def test_transition_known_points():
    atlas = build_atlas(tripod())
    # direct band e1: disk edge of c maps to the far end at a
    T = atlas.transition("e1", "c", "a")
    q, p = T.map_points(np.array([1.0, 2.0]), np.array([0.3, -0.4]))
    assert np.allclose(q, [2.0, 1.0], atol=1e-14)
    assert np.allclose(p, [-0.3, 0.4], atol=1e-14)
    # through-leg l0: leg momentum becomes base position at t
    T = atlas.transition("l0", "c", "t")
    q, p = T.map_points(np.array([0.2]), np.array([1.5]))
    assert np.allclose(q, [1.5], atol=1e-14)
    assert np.allclose(p, [0.2], atol=1e-14)


def test_transition_roundtrips():
    rng = np.random.default_rng(2)
    for g in (tripod(), triangle()):
        atlas = build_atlas(g)
        for e, (v, w) in g.edges.items():
            T_vw = atlas.transition(e, v, w)
            T_wv = atlas.transition(e, w, v)
            qs = rng.uniform(-2.0, 2.0, 50)
            ps = rng.uniform(-2.0, 2.0, 50)
            q1, p1 = T_vw.map_points(qs, ps)
            q2, p2 = T_wv.map_points(q1, p1)
            assert np.allclose(q2, qs, atol=1e-12)
            assert np.allclose(p2, ps, atol=1e-12)


def test_transition_potential_shifts():
    atlas = build_atlas(tripod())
    rng = np.random.default_rng(3)
    qs = rng.uniform(-1.0, 1.0, 40)
    ps = rng.uniform(1.0, 2.0, 40)
    # through-leg transitions shift the potential like the quarter turn
    T = atlas.transition("l0", "c", "t")
    assert np.allclose(T.h_values(qs, ps), -qs * ps, atol=1e-13)
    # direct band transitions leave the potential alone
    T = atlas.transition("e1", "c", "a")
    assert np.allclose(T.h_values(qs, ps), 0.0, atol=1e-14)


# ---------------------------------------------------------------------------
# sigma regions


def test_sigma_membership_by_valence():
    tri, path = tripod(), triangle()
    # two-valent chart is the unit band
    assert sigma_membership(path, "u", (0.0, 0.0))
    assert not sigma_membership(path, "u", (0.0, 1.5))
    assert sigma_membership(path, "u", (-1.7, -0.9))
    # trivalent chart adds the upward leg over the disk
    assert sigma_membership(tri, "c", (0.5, -0.5))
    assert sigma_membership(tri, "c", (0.3, 1.7))
    assert sigma_membership(tri, "c", (1.5, 0.9))
    assert not sigma_membership(tri, "c", (1.5, 1.2))
    assert not sigma_membership(tri, "c", (1.5, -1.2))
    # univalent chart is the disk plus its one band
    assert sigma_membership(tri, "a", (-0.5, 0.2))
    assert sigma_membership(tri, "a", (1.5, 0.5))
    assert not sigma_membership(tri, "a", (-0.5, 1.2))
    assert not sigma_membership(tri, "a", (1.5, 1.2))


def test_sigma_membership_agrees_on_overlaps():
    rng = np.random.default_rng(4)
    for g in (tripod(), triangle()):
        atlas = build_atlas(g)
        for e, (v, w) in g.edges.items():
            view = atlas.charts[v].views[e]
            if view.kind == "leg":
                qs = rng.uniform(-0.95, 0.95, 200)
                ps = rng.uniform(1.05, 1.95, 200)
            else:
                lo, hi = view.window
                qs = rng.uniform(lo + 0.05, hi - 0.05, 200)
                ps = rng.uniform(-1.5, 1.5, 200)
            region_v = sigma_region(g, v)
            mem_v = region_v.contains(qs, ps)
            T = atlas.transition(e, v, w)
            qw, pw = T.map_points(qs, ps)
            mem_w = sigma_region(g, w).contains(qw, pw)
            assert np.array_equal(mem_v, mem_w)


# ---------------------------------------------------------------------------
# global families: consistency


def test_zero_family_triangle_consistent():
    g = triangle()
    atlas = build_atlas(g)
    gf = zero_global(g, atlas)
    report = check_global_consistency(gf, atlas)
    assert report.ok
    assert len(report.edges) == 3
    for rec in report.edges:
        assert rec.ok
        assert rec.index_offset == 0
    for chart in report.charts:
        assert chart.ok


def test_zero_family_tripod_leg_forgiven():
    g = tripod()
    atlas = build_atlas(g)
    gf = zero_global(g, atlas)
    report = check_global_consistency(gf, atlas)
    assert report.ok
    leg = {rec.edge: rec for rec in report.edges}["l0"]
    assert leg.ok
    assert leg.forgiven
    assert leg.index_offset is None


def test_leg_content_strict_match():
    # c pushes a fold of momentum up to 1.5 into its leg ribbon; the tip
    # carries the mirrored vertical presentation of the same content, so the
    # leg comparison has real samples on both sides and must pass strictly.
    g = tripod()
    atlas = build_atlas(g)
    Fc = GeneratingFamily("q", (-2.0, 2.0), (), (),
                          0.45 * make_step("q", -0.3, 0.3))
    D = restrict_to_leg(Fc)
    M = GeneratingFamily("q", (-1.0, 2.9), D.fiber_vars, D.fiber_box,
                         D.F.substitute({"q": "3.0 - q"}))
    gf = zero_global(g, atlas)
    gf.families["c"] = Fc
    gf.families["t"] = M
    report = check_global_consistency(gf, atlas, tol=1e-5)
    assert report.ok
    leg = {r.edge: r for r in report.edges}["l0"]
    assert leg.ok and not leg.forgiven
    assert leg.index_offset is None
    assert abs(leg.potential_offset) < 1e-9


def test_leg_content_mismatch_flagged():
    # same pushed fold at c, but the tip family stays zero: the leg side now
    # sees ribbon content with no counterpart, which is a genuine defect
    g = tripod()
    atlas = build_atlas(g)
    gf = zero_global(g, atlas)
    gf.families["c"] = GeneratingFamily("q", (-2.0, 2.0), (), (),
                                        0.45 * make_step("q", -0.3, 0.3))
    report = check_global_consistency(gf, atlas, tol=1e-5)
    assert not report.ok
    recs = {r.edge: r for r in report.edges}
    assert not recs["l0"].ok
    assert recs["e1"].ok and recs["e2"].ok


def test_stabilized_side_records_offset():
    g = triangle()
    atlas = build_atlas(g)
    gf = zero_global(g, atlas)
    gf.edge_stabilizers[("a", "u")] = quadratic_stabilizer(
        np.eye(2), ("s1", "s2"))
    report = check_global_consistency(gf, atlas)
    assert report.ok
    rec = {r.edge: r for r in report.edges}["a"]
    assert rec.index_offset == 0

    gf.edge_stabilizers[("a", "u")] = hyperbolic_stabilizer(("s1", "s2"))
    report = check_global_consistency(gf, atlas)
    assert report.ok
    rec = {r.edge: r for r in report.edges}["a"]
    assert abs(rec.index_offset) == 1


def bump(center, amp=0.002):
    base = amp * make_cutoff(0.15, 0.25, var="q")
    return base.substitute({"q": f"q - {center}"})


def test_mismatched_bump_flagged():
    g = triangle()
    atlas = build_atlas(g)
    gf = zero_global(g, atlas)
    gf.families["u"] = GeneratingFamily("q", (-2.0, 2.0), (), (), bump(1.5))
    report = check_global_consistency(gf, atlas)
    assert not report.ok
    rec = {r.edge: r for r in report.edges}["a"]
    assert not rec.ok
    with pytest.raises(ValueError):
        assemble_global_curve(gf, atlas)


def test_matching_perturbation_consistent():
    g = triangle()
    atlas = build_atlas(g)
    gf = zero_global(g, atlas)
    eps = bump(1.5)
    gf.families["u"] = GeneratingFamily("q", (-2.0, 2.0), (), (), eps)
    # edge a reverses orientation: u's band q maps to 3 - q at v
    mirrored = eps.substitute({"q": "3.0 - q"})
    gf.families["v"] = GeneratingFamily("q", (-2.0, 2.0), (), (), mirrored)
    report = check_global_consistency(gf, atlas)
    assert report.ok
    curves = assemble_global_curve(gf, atlas)
    pts = curves["u"].all_points()
    assert np.max(np.abs(pts[:, 1])) > 0.02
    assert len(curves["u"].branches) == 1


def test_unbounded_family_flagged():
    g = triangle()
    atlas = build_atlas(g)
    gf = zero_global(g, atlas)
    gf.families["u"] = fam_of("q^2.0/2.0")
    report = check_global_consistency(gf, atlas)
    chart = {c.vertex: c for c in report.charts}["u"]
    assert not chart.ok
    assert chart.witness is not None
    assert not report.ok


# ---------------------------------------------------------------------------
# assembly


def test_assemble_triangle_zero_sections():
    g = triangle()
    atlas = build_atlas(g)
    curves = assemble_global_curve(zero_global(g, atlas), atlas)
    assert set(curves) == set(g.vertices)
    for v, curve in curves.items():
        assert len(curve.branches) == 1
        pts = curve.all_points()
        assert np.max(np.abs(pts[:, 1])) < 1e-9
        assert pts[:, 0].min() < -1.9 and pts[:, 0].max() > 1.9


def test_assemble_tripod_has_leg_segment():
    g = tripod()
    atlas = build_atlas(g)
    curves = assemble_global_curve(zero_global(g, atlas), atlas)
    center = curves["c"]
    assert len(center.branches) == 2
    pts = center.all_points()
    leg_pts = pts[np.abs(pts[:, 0]) < 1e-9]
    assert leg_pts.size
    assert leg_pts[:, 1].min() < 1.2 and leg_pts[:, 1].max() > 1.8
    # the tip chart sees only its own section: the hat is invisible there
    tip = curves["t"]
    assert len(tip.branches) == 1
