"""Tests for lifting chart-local Hamiltonian isotopies to global families."""

import numpy as np
import pytest

from gfc.arboreal import (ArborealGraph, GlobalFamily, assemble_global_curve,
                          build_atlas)
from gfc.expr import make_cutoff, parse_function
from gfc.genfam import GeneratingFamily, TraceConfig
from gfc.lift import (AdmissibleIsotopy, IsotopyStep, check_ham_admissible,
                      lift_isotopy, lift_step)


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


def zero_global(graph, atlas):
    zero = parse_function("0.0", ("q",))
    fams = {v: GeneratingFamily("q", atlas.charts[v].base_interval, (), (),
                                zero)
            for v in graph.vertices}
    return GlobalFamily(graph, fams)


H_ZERO = parse_function("0.0", ("q", "p"))

# A push flow A*C(q)*K(p) moves the zero section onto p = -A*C'(q) exactly:
# the section never leaves the plateau of K, where q is frozen.
PUSH_C = make_cutoff(0.1, 0.7, var="q")
PUSH_K = make_cutoff(0.2, 0.85, var="p")
PUSH_BOX = ((-0.7, 0.7), (-0.85, 0.85))


def push_H(amp, center=0.0):
    C = PUSH_C if center == 0.0 else PUSH_C.substitute(
        {"q": f"q - {center!r}"})
    return amp * C * PUSH_K


def push_box(center):
    return ((center - 0.7, center + 0.7), (-0.85, 0.85))


def push_oracle(amp, qs, center=0.0):
    dC = PUSH_C.differentiate("q")
    return -amp * dC.evaluate(np.asarray(qs, float) - center)


# A wiggle supported in the vertical band over a leg: A*C(q)*K(p-1) fixes
# the horizontal zero section exactly and sends vertical-band points to
# q = A*K'(p-1) with p frozen.
LEG_K = make_cutoff(0.2, 0.75, var="p")
LEG_BOX = ((-0.7, 0.7), (0.25, 1.75))


def leg_H(amp):
    return amp * PUSH_C * LEG_K.substitute({"p": "p - 1.0"})


TRACE = TraceConfig(seed_base=15, seed_fiber=3, step=8e-3, max_step=8e-3,
                    visit_tol=6e-3)


def lifted_curve(pts, qs):
    order = np.argsort(pts[:, 0])
    return np.interp(qs, pts[order, 0], pts[order, 1])


# ---------------------------------------------------------------------------
# admissibility


def test_admissible_gentle_push():
    g = triangle()
    iso = AdmissibleIsotopy(
        [IsotopyStep("u", push_H(0.003), (0.0, 1.0), PUSH_BOX)])
    rep = check_ham_admissible(iso, g)
    assert rep.ok
    assert len(rep.verdicts) == 1
    assert rep.verdicts[0].chart == "u"


def test_admissibility_rejects_unknown_chart():
    g = triangle()
    iso = AdmissibleIsotopy([IsotopyStep("z", H_ZERO, (0.0, 1.0), PUSH_BOX)])
    rep = check_ham_admissible(iso, g)
    assert not rep.ok
    assert "unknown chart" in rep.verdicts[0].reason


def test_admissibility_rejects_support_outside_sigma():
    g = triangle()
    box = ((-0.5, 0.5), (0.6, 1.4))
    iso = AdmissibleIsotopy([IsotopyStep("u", H_ZERO, (0.0, 1.0), box)])
    rep = check_ham_admissible(iso, g)
    assert not rep.ok
    assert "chart region" in rep.verdicts[0].reason


def test_admissibility_rejects_sealed_univalent_part():
    g = tripod()
    box = ((-0.7, -0.3), (-0.2, 0.2))
    iso = AdmissibleIsotopy([IsotopyStep("a", H_ZERO, (0.0, 1.0), box)])
    rep = check_ham_admissible(iso, g)
    assert not rep.ok
    assert "sealed" in rep.verdicts[0].reason


def test_admissibility_rejects_undeclared_motion():
    g = triangle()
    box = ((-0.2, 0.2), (-0.85, 0.85))
    iso = AdmissibleIsotopy([IsotopyStep("u", push_H(0.003), (0.0, 1.0),
                                         box)])
    rep = check_ham_admissible(iso, g)
    assert not rep.ok
    assert "declared support" in rep.verdicts[0].reason


# ---------------------------------------------------------------------------
# single steps


def test_lift_step_zero_flow_mechanisms():
    g = tripod()
    atlas = build_atlas(g)
    gf = zero_global(g, atlas)
    step = IsotopyStep("a", H_ZERO, (0.0, 1.0), ((0.2, 0.6), (-0.5, 0.5)))
    out, rep = lift_step(gf, step, atlas, config=TRACE)
    upd = {u.vertex: u for u in rep.updates}
    assert upd["a"].mechanism == "chekanov (identity data)"
    assert upd["c"].mechanism.startswith("conjugated chekanov")
    assert "identity data" in upd["c"].mechanism
    assert "direct" in upd["c"].mechanism
    assert upd["b"].mechanism == "stabilize"
    assert upd["t"].mechanism == "stabilize"
    for u in rep.updates:
        assert u.rank_after == u.rank_before + 2
    assert all(len(out.families[v].fiber_vars) == 2 for v in g.vertices)
    assert rep.transport_error == 0.0
    assert rep.h_support is None
    assert rep.consistency.ok
    for e in rep.consistency.edges:
        assert e.index_offset == (None if e.edge == "l0" else 0)
    br = rep.curves["a"].branches[0]
    assert np.max(np.abs(br.ps)) < 1e-9
    assert np.all(br.idxs == 1)


def test_lift_step_push_matches_exact_transport():
    g = triangle()
    atlas = build_atlas(g)
    gf = zero_global(g, atlas)
    A = 0.003
    step = IsotopyStep("u", push_H(A), (0.0, 1.0), PUSH_BOX)
    out, rep = lift_step(gf, step, atlas, config=TRACE)
    assert rep.consistency.ok
    assert rep.transport_error < 1e-4
    upd = {u.vertex: u.mechanism for u in rep.updates}
    assert upd["u"] == "chekanov"
    assert "identity data" in upd["v"] and "identity data" in upd["w"]
    qs = np.linspace(-1.8, 1.8, 1201)
    dev = lifted_curve(rep.curves["u"].all_points(), qs) - push_oracle(A, qs)
    assert np.max(np.abs(dev)) < 1e-4
    (qlo, qhi), _ = rep.h_support
    assert -2.0 < qlo < qhi < 2.0


def test_lift_step_band_crossing_repairs_neighbor():
    g = triangle()
    atlas = build_atlas(g)
    gf = zero_global(g, atlas)
    A = 0.003
    step = IsotopyStep("u", push_H(A, center=1.25), (0.0, 1.0),
                       push_box(1.25))
    out, rep = lift_step(gf, step, atlas, config=TRACE)
    assert rep.consistency.ok
    assert rep.transport_error < 1e-4
    upd = {u.vertex: u.mechanism for u in rep.updates}
    assert upd["u"] == "chekanov"
    assert upd["v"].startswith("conjugated chekanov")
    assert "identity data" not in upd["v"]
    assert "identity data" in upd["w"]
    qs = np.linspace(-1.8, 1.8, 1201)
    dev_u = (lifted_curve(rep.curves["u"].all_points(), qs)
             - push_oracle(A, qs, center=1.25))
    assert np.max(np.abs(dev_u)) < 1e-4
    # crossing the band flips both coordinates: q_v = 3 - q_u, p_v = -p_u
    dev_v = (lifted_curve(rep.curves["v"].all_points(), qs)
             + push_oracle(A, 3.0 - qs, center=1.25))
    assert np.max(np.abs(dev_v)) < 1e-4


def test_lift_step_through_leg():
    g = tripod()
    atlas = build_atlas(g)
    gf = zero_global(g, atlas)
    A = 0.003
    step = IsotopyStep("c", leg_H(A), (0.0, 1.0), LEG_BOX)
    out, rep = lift_step(gf, step, atlas, config=TRACE)
    assert rep.consistency.ok
    assert rep.transport_error < 1e-4
    leg = {e.edge: e for e in rep.consistency.edges}["l0"]
    assert leg.ok and leg.forgiven
    upd = {u.vertex: u.mechanism for u in rep.updates}
    assert upd["c"] == "chekanov"
    assert upd["t"].startswith("conjugated chekanov")
    assert "identity data" not in upd["t"]
    assert "through-leg" in upd["t"]
    assert "identity data" in upd["a"] and "identity data" in upd["b"]
    # the base section of the active chart never moves
    qs = np.linspace(-1.9, 1.9, 1201)
    assert np.max(np.abs(lifted_curve(rep.curves["c"].all_points(), qs))) \
        < 1e-4
    # seen from the tip chart the wiggle is q_t = 3 - p_c, p_t = A*K'(2 - q_t)
    dK = LEG_K.differentiate("p")
    qt = np.linspace(-0.9, 1.9, 1201)
    dev_t = (lifted_curve(rep.curves["t"].all_points(), qt)
             - A * dK.evaluate(2.0 - qt))
    assert np.max(np.abs(dev_t)) < 1e-4
    # the assembled picture of the central chart gains the wiggled leg arc
    curves = assemble_global_curve(out, atlas, tol=1e-4, config=TRACE)
    own, imported = sorted(curves["c"].branches,
                           key=lambda b: np.max(np.abs(b.ps)))
    assert np.max(imported.ps) > 1.0
    peak = np.max(np.abs(imported.qs))
    expect = A * np.max(np.abs(dK.evaluate(np.linspace(-1.0, 1.0, 2001))))
    assert abs(peak - expect) < 1e-4


def test_lift_step_rejects_large_c1():
    g = triangle()
    atlas = build_atlas(g)
    gf = zero_global(g, atlas)
    step = IsotopyStep("u", push_H(0.008), (0.0, 1.0), PUSH_BOX)
    with pytest.raises(ValueError, match="c1 threshold exceeded"):
        lift_step(gf, step, atlas, config=TRACE)


def test_lift_step_rejects_inadmissible():
    g = triangle()
    atlas = build_atlas(g)
    gf = zero_global(g, atlas)
    step = IsotopyStep("u", H_ZERO, (0.0, 1.0), ((-0.5, 0.5), (0.6, 1.4)))
    with pytest.raises(ValueError, match="not admissible"):
        lift_step(gf, step, atlas, config=TRACE)


# ---------------------------------------------------------------------------
# whole isotopies


def test_lift_isotopy_empty():
    g = triangle()
    atlas = build_atlas(g)
    gf = zero_global(g, atlas)
    out, rep = lift_isotopy(gf, AdmissibleIsotopy([]), atlas=atlas,
                            config=TRACE)
    assert out.families == gf.families
    assert rep.steps == []
    assert rep.accumulated == 0.0


def test_lift_isotopy_fragments_strong_push():
    g = triangle()
    atlas = build_atlas(g)
    gf = zero_global(g, atlas)
    A = 0.008
    iso = AdmissibleIsotopy(
        [IsotopyStep("u", push_H(A), (0.0, 1.0), PUSH_BOX)])
    out, rep = lift_isotopy(gf, iso, threshold=1e-4, atlas=atlas,
                            config=TRACE)
    assert len(rep.steps) >= 3
    assert all(s.chart == "u" for s in rep.steps)
    assert all(s.consistency.ok for s in rep.steps)
    assert rep.accumulated < 1e-4 * len(rep.steps)
    n = len(rep.steps)
    assert all(len(out.families[v].fiber_vars) == 2 * n for v in g.vertices)
    qs = np.linspace(-1.8, 1.8, 1201)
    final = rep.steps[-1].curves["u"].all_points()
    dev = lifted_curve(final, qs) - push_oracle(A, qs)
    assert np.max(np.abs(dev)) < 3e-4


def test_lift_isotopy_two_charts():
    g = triangle()
    atlas = build_atlas(g)
    gf = zero_global(g, atlas)
    A = 0.002
    iso = AdmissibleIsotopy([
        IsotopyStep("u", push_H(A), (0.0, 1.0), PUSH_BOX),
        IsotopyStep("v", push_H(A), (0.0, 1.0), PUSH_BOX),
    ])
    out, rep = lift_isotopy(gf, iso, threshold=1e-4, atlas=atlas,
                            config=TRACE)
    assert len(rep.steps) == 2
    assert [s.chart for s in rep.steps] == ["u", "v"]
    assert rep.accumulated < 1e-3
    assert all(len(out.families[x].fiber_vars) == 4 for x in g.vertices)
    qs = np.linspace(-1.8, 1.8, 1201)
    last = rep.steps[-1].curves
    for x in ("u", "v"):
        dev = lifted_curve(last[x].all_points(), qs) - push_oracle(A, qs)
        assert np.max(np.abs(dev)) < 2e-4
    assert np.max(np.abs(lifted_curve(last["w"].all_points(), qs))) < 2e-4


def test_lift_isotopy_budget_failure():
    g = triangle()
    atlas = build_atlas(g)
    gf = zero_global(g, atlas)
    iso = AdmissibleIsotopy(
        [IsotopyStep("u", push_H(0.002), (0.0, 1.0), PUSH_BOX)])
    with pytest.raises(ValueError, match="tolerance budget exceeded"):
        lift_isotopy(gf, iso, threshold=1e-9, atlas=atlas, config=TRACE)


def test_lift_isotopy_rejects_inadmissible():
    g = triangle()
    atlas = build_atlas(g)
    gf = zero_global(g, atlas)
    iso = AdmissibleIsotopy(
        [IsotopyStep("u", H_ZERO, (0.0, 1.0), ((-0.5, 0.5), (0.6, 1.4)))])
    with pytest.raises(ValueError, match="not admissible"):
        lift_isotopy(gf, iso, atlas=atlas, config=TRACE)
