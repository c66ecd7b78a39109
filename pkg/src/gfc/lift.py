"""Lifting chart-local Hamiltonian isotopies to whole global families.

A step of an isotopy is a Hamiltonian supported in a box inside one
chart's region.  Lifting it couples every chart's family to generating
data for the map the step induces there: the flow itself on the active
chart, the flow conjugated by the chart transition on charts sharing an
edge, and a plain hyperbolic stabilizer everywhere else.  Each step grows
every rank by exactly two, moves every chart curve by the induced map,
and must leave the family globally consistent before it is accepted.

Charts where the induced map is the identity on the window their family
can reach are coupled to identity data instead of a fitted grid, so their
curves carry over without retracing.
"""

from dataclasses import dataclass

import numpy as np

from .arboreal import (GlobalFamily, _shift_indices, build_atlas,
                       check_global_consistency, sigma_region)
from .genfam import windowed_match
from .operators import _fresh, chekanov, hyperbolic_stabilizer, stabilize
from .symplecto import (Composition, HamiltonianFlow, c1_defect, fragment,
                        genfam_of_near_identity, make_identity_genfam)

# Base shifts a single near-identity step may impose on a curve.
_SHIFT_BOX = (-0.12, 0.12)
# Target spacing for fitted grid data.
_H_TARGET = 0.014
# Extra base window kept around each chart so that data fitted now still
# covers the shifted arguments produced by later steps.
_MARGIN = 0.67
# With the margin above, at most this many steps can stack before a shift
# could walk off the oldest grid.
_MAX_NESTED = 5
# Drift below this counts as the identity map.
_IDENTITY_TOL = 1e-12


@dataclass(frozen=True)
class IsotopyStep:
    """One Hamiltonian move inside a single chart.

    ``H`` depends on (q, p) or (t, q, p); ``support`` is the box
    ((qlo, qhi), (plo, phi)) outside which the flow must be the identity.
    """

    chart: str
    H: object
    t_range: tuple
    support: tuple

    def flow(self, rtol=1e-9):
        return HamiltonianFlow(self.H, self.t_range[0], self.t_range[1],
                               rtol=rtol)


@dataclass
class AdmissibleIsotopy:
    """Ordered chart-local steps applied left to right."""

    steps: list
    label: str = ""

    def __iter__(self):
        return iter(self.steps)

    def __len__(self):
        return len(self.steps)


@dataclass
class StepVerdict:
    step: int
    chart: str
    ok: bool
    reason: str = ""


@dataclass
class AdmissibilityReport:
    verdicts: list

    @property
    def ok(self):
        return all(v.ok for v in self.verdicts)

    def summary(self):
        return "\n".join(
            f"step {v.step} ({v.chart}): " + ("ok" if v.ok else v.reason)
            for v in self.verdicts)


@dataclass
class VertexUpdate:
    vertex: str
    mechanism: str
    rank_before: int
    rank_after: int
    error: float = 0.0


@dataclass
class StepReport:
    chart: str
    c1: float
    updates: list
    consistency: object
    transport_error: float
    h_support: tuple | None
    curves: dict


@dataclass
class LiftReport:
    steps: list
    accumulated: float
    threshold: float


def check_ham_admissible(iso, graph, atlas=None):
    """Per-step verdicts on whether an isotopy can be lifted chart by chart.

    A step passes when its chart exists, its Hamiltonian depends on (q, p)
    or (t, q, p), its declared support lies inside the chart's region and
    clear of the sealed part of a univalent disk, and its flow really is
    the identity outside the declared box.
    """
    return AdmissibilityReport(
        [_step_verdict(i, step, graph) for i, step in enumerate(iso)])


def _step_verdict(i, step, graph):
    if step.chart not in graph.vertices:
        return StepVerdict(i, step.chart, False,
                           f"unknown chart {step.chart!r}")
    if step.H.variables not in (("q", "p"), ("t", "q", "p")):
        return StepVerdict(
            i, step.chart, False,
            f"Hamiltonian must depend on (q, p) or (t, q, p), "
            f"got {step.H.variables}")
    (qlo, qhi), (plo, phi) = step.support
    qg = np.linspace(qlo, qhi, 21)
    pg = np.linspace(plo, phi, 21)
    Q, P = np.meshgrid(qg, pg, indexing="ij")
    inside = sigma_region(graph, step.chart).contains(Q.ravel(), P.ravel())
    if not np.all(inside):
        j = int(np.argmin(inside))
        return StepVerdict(
            i, step.chart, False,
            f"support leaves the chart region near "
            f"({Q.ravel()[j]:.3g}, {P.ravel()[j]:.3g})")
    if len(graph.vertices[step.chart]) == 1:
        sealed = ((Q ** 2 + P ** 2 <= 1.0 + 1e-12)
                  & ~((Q > 0.0) & (np.abs(P) <= 1.0)))
        if np.any(sealed):
            j = int(np.argmax(sealed.ravel()))
            return StepVerdict(
                i, step.chart, False,
                f"support enters the sealed part of the univalent disk "
                f"near ({Q.ravel()[j]:.3g}, {P.ravel()[j]:.3g})")
    ring = 0.35
    eq = np.linspace(qlo - ring, qhi + ring, 27)
    ep = np.linspace(plo - ring, phi + ring, 27)
    EQ, EP = np.meshgrid(eq, ep, indexing="ij")
    outside = ((EQ < qlo - 1e-9) | (EQ > qhi + 1e-9)
               | (EP < plo - 1e-9) | (EP > phi + 1e-9))
    MQ, MP = step.flow().map_points(EQ[outside], EP[outside])
    drift = max(float(np.max(np.abs(MQ - EQ[outside]))),
                float(np.max(np.abs(MP - EP[outside]))))
    if drift > 1e-10:
        return StepVerdict(
            i, step.chart, False,
            f"the flow moves points outside its declared support "
            f"(drift {drift:.2g})")
    return StepVerdict(i, step.chart, True)


def lift_step(gf, step, atlas=None, tol=1e-4, c1_limit=0.2, config=None,
              _curves=None, _cache=None, _cache_key=None):
    """Lift one near-identity step to every chart of a global family.

    Returns the lifted family and a StepReport.  Raises when the flow is
    not C1-small over its support, the step is inadmissible, the lifted
    curve misses the transported one, or the result fails the global
    consistency check.
    """
    if atlas is None:
        atlas = build_atlas(gf.graph)
    verdict = _step_verdict(0, step, gf.graph)
    if not verdict.ok:
        raise ValueError(f"step is not admissible: {verdict.reason}")
    flow = step.flow()
    c1 = c1_defect(flow, step.support)
    if c1 > c1_limit:
        raise ValueError(
            f"c1 threshold exceeded ({c1:.3g} > {c1_limit:g}); "
            f"fragment the isotopy first")
    if _curves is None:
        _curves = {v: gf.families[v].critical_locus(config)
                   for v in gf.graph.vertices}
    neighbors = {}
    for e, (x, y) in gf.graph.edges.items():
        if x == step.chart and y != step.chart:
            neighbors[y] = e
        elif y == step.chart and x != step.chart:
            neighbors[x] = e

    new_fams, new_curves, updates = {}, {}, []
    h_support = None
    worst = 0.0
    for v, fam in gf.families.items():
        before = len(fam.fiber_vars)
        if v == step.chart:
            S = flow
            base, tags = "chekanov", []
        elif v in neighbors:
            T = atlas.transition(neighbors[v], step.chart, v)
            S = Composition([T.inverse(), flow, T])
            base, tags = "conjugated chekanov", [atlas.overlaps[neighbors[v]]]
        else:
            s = hyperbolic_stabilizer(_pair_names(fam))
            new_fams[v] = stabilize(fam, s)
            new_curves[v] = _shift_indices(_curves[v], s.index)
            updates.append(VertexUpdate(v, "stabilize", before, before + 2))
            continue
        if v == step.chart:
            sup = step.support
        else:
            sup = _transport_box(T, step.support)
        sg, ext, moving = _map_data(S, fam.base_domain, _curves[v], sup,
                                    _cache, None if _cache_key is None
                                    else (v, _cache_key))
        newf = chekanov(fam, sg, v_box=_SHIFT_BOX, t_box=ext)
        if not moving:
            tags.insert(0, "identity data")
            curve = _shift_indices(_curves[v], 1)
            err = 0.0
        else:
            curve = newf.critical_locus(config)
            _check_shift(curve, before, step.chart, v)
            moved = S.apply_to_curve(_curves[v])
            rep = windowed_match(curve, moved, fam.base_domain[0],
                                 fam.base_domain[1], tol=tol,
                                 potential="offset", index="ignore")
            err = rep.hausdorff
            if err > tol:
                raise ValueError(
                    f"lifted curve at {v} misses the transported one "
                    f"by {err:.3g} (tol {tol:g})")
            worst = max(worst, err)
            if v == step.chart:
                h_support = _grid_support(sg)
        label = base + (f" ({', '.join(tags)})" if tags else "")
        new_fams[v] = newf
        new_curves[v] = curve
        updates.append(VertexUpdate(v, label, before,
                                    len(newf.fiber_vars), err))
    for u in updates:
        if u.rank_after != u.rank_before + 2:
            raise RuntimeError(
                f"rank bookkeeping broken at {u.vertex}: "
                f"{u.rank_before} -> {u.rank_after}")
    out = GlobalFamily(gf.graph, new_fams, dict(gf.edge_stabilizers),
                       gf.label)
    report = check_global_consistency(out, atlas, tol=tol, config=config,
                                      _curves=new_curves)
    if not report.ok:
        raise ValueError(
            f"consistency repair failure after lifting at {step.chart}:\n"
            + report.summary())
    return out, StepReport(step.chart, c1, updates, report, worst,
                           h_support, new_curves)


def lift_isotopy(gf, iso, threshold=1e-4, atlas=None, c1_threshold=0.15,
                 c1_limit=0.2, config=None):
    """Lift a whole admissible isotopy, fragmenting entries as needed.

    Each entry is split into C1-small time slices and the slices are
    lifted in order, threading curves and reusing fitted data between
    slices of the same autonomous Hamiltonian.  Transport errors are
    charged against a budget of ``threshold`` per slice; overrunning it,
    or needing more slices than the lift window supports, raises.
    """
    if atlas is None:
        atlas = build_atlas(gf.graph)
    adm = check_ham_admissible(iso, gf.graph)
    if not adm.ok:
        bad = next(v for v in adm.verdicts if not v.ok)
        raise ValueError(
            f"isotopy is not admissible at entry {bad.step} ({bad.chart}): "
            f"{bad.reason}")
    pieces = []
    for entry in iso:
        for piece in fragment(entry.flow(), entry.support,
                              threshold=c1_threshold):
            pieces.append(IsotopyStep(entry.chart, entry.H,
                                      (piece.t0, piece.t1), entry.support))
    if len(pieces) > _MAX_NESTED:
        raise ValueError(
            f"isotopy needs {len(pieces)} near-identity pieces; the lift "
            f"window supports at most {_MAX_NESTED} stacked steps")
    if not pieces:
        return gf, LiftReport([], 0.0, threshold)
    curves = {v: gf.families[v].critical_locus(config)
              for v in gf.graph.vertices}
    cache = {}
    out = gf
    steps = []
    accumulated = 0.0
    for i, piece in enumerate(pieces):
        key = None
        if piece.H.variables == ("q", "p"):
            key = (piece.chart, id(piece.H),
                   round(piece.t_range[1] - piece.t_range[0], 12))
        out, rep = lift_step(out, piece, atlas, c1_limit=c1_limit,
                             config=config, _curves=curves, _cache=cache,
                             _cache_key=key)
        curves = rep.curves
        steps.append(rep)
        accumulated += rep.transport_error
        if accumulated > threshold * (i + 1):
            raise ValueError(
                f"accumulated tolerance budget exceeded at step {i + 1} of "
                f"{len(pieces)}: {accumulated:.3g} > "
                f"{threshold * (i + 1):.3g}")
    return out, LiftReport(steps, accumulated, threshold)


# ---------------------------------------------------------------------------
# internals


def _pair_names(fam):
    taken = {fam.base, *fam.fiber_vars}
    a = _fresh(taken, "v")
    b = _fresh(taken | {a}, "t")
    return (a, b)


def _transport_box(T, box):
    (a, b), (c, d) = box
    Q, P = T.map_points(np.array([a, a, b, b]), np.array([c, d, c, d]))
    return ((float(Q.min()), float(Q.max())),
            (float(P.min()), float(P.max())))


def _map_data(S, domain, curve, sup_box, cache, key):
    """Generating data for S over a chart's working window.

    Returns (data, momentum box, moving).  The momentum box covers the
    chart curve and the landed support with headroom.  When S is the
    identity on everything the family can reach, analytic identity data
    is returned instead of a fitted grid and moving is False.
    """
    dlo, dhi = float(domain[0]), float(domain[1])
    pts = curve.all_points()
    cps = pts[:, 1] if len(pts) else np.array([0.0])
    ext = (float(min(cps.min(), sup_box[1][0]) - 0.25),
           float(max(cps.max(), sup_box[1][1]) + 0.25))
    reach = _SHIFT_BOX[1] + 1e-2
    qg = np.linspace(dlo - reach, dhi + reach, 33)
    pg = np.linspace(ext[0], ext[1], 33)
    Q, P = np.meshgrid(qg, pg, indexing="ij")
    MQ, MP = S.map_points(Q.ravel(), P.ravel())
    drift = max(float(np.max(np.abs(MQ - Q.ravel()))),
                float(np.max(np.abs(MP - P.ravel()))))
    if drift < _IDENTITY_TOL:
        return make_identity_genfam(), ext, False
    if cache is not None and key in cache:
        return cache[key]
    box = ((dlo - _MARGIN, dhi + _MARGIN), (ext[0] - 0.05, ext[1] + 0.05))
    count = int(np.ceil((box[0][1] - box[0][0]) / _H_TARGET)) | 1
    # the step gate already bounded the flow's C1 size; the wider limits
    # here only keep honest data from tripping on grid discretization
    sg = genfam_of_near_identity(S, box, grid=count, defect_limit=0.4,
                                 curl_tol=2e-3)
    result = (sg, ext, True)
    if cache is not None and key is not None:
        cache[key] = result
    return result


def _check_shift(curve, vcol, chart, vertex):
    for b in curve.branches:
        if len(b) and np.max(np.abs(b.fibers[:, vcol])) > 0.8 * _SHIFT_BOX[1]:
            raise ValueError(
                f"step at {chart} shifts the curve at {vertex} beyond the "
                f"lift allowance; fragment the isotopy further")


def _grid_support(sg):
    """Bounding box where fitted data departs from its far constant."""
    gd = getattr(sg.G, "grid_data", None)
    if gd is None:
        return None
    dev = np.abs(gd.zz - sg.far_value)
    thr = max(1e-9, 1e-3 * float(dev.max()))
    rows = np.where(dev.max(axis=1) > thr)[0]
    cols = np.where(dev.max(axis=0) > thr)[0]
    if len(rows) == 0 or len(cols) == 0:
        return None
    return ((float(gd.xs[rows[0]]), float(gd.xs[rows[-1]])),
            (float(gd.ys[cols[0]]), float(gd.ys[cols[-1]])))
