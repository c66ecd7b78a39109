"""Surfaces glued from disks and ribbons along a graph, and families on them.

A finite graph with vertices of valence at most three, a cyclic edge order
at each vertex, and a marked leg at every trivalent vertex determines a
surface: one unit disk per vertex, one ribbon per edge.  Each vertex gets a
flat coordinate chart in which its disk is centered at the origin and the
ribbons of its edges sit over the intervals [1, 2] and [-2, -1]; the marked
leg instead runs up the momentum axis.  Transitions between neighbouring
charts are affine area-preserving maps, so exact curves and their
potentials transport across the whole surface.

On top of the geometry this module checks whether a family assigned to
each chart defines one global curve: every chart's curve must stay in the
region the surface allots to it, and over every shared ribbon the two
charts must generate the same curve with matching potentials up to a
constant and a constant index shift.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .genfam import Region, SampledCurve, windowed_match
from .symplecto import AffineMap, quarter_turn


@dataclass
class ArborealGraph:
    """Vertices with cyclic edge orders, edges as vertex pairs, marked legs."""

    vertices: dict   # vertex id -> incident edge ids in cyclic order
    edges: dict      # edge id -> (tail vertex, head vertex)
    legs: dict       # trivalent vertex id -> its leg edge id

    def __post_init__(self):
        self.vertices = {v: tuple(es) for v, es in self.vertices.items()}
        self.edges = {e: (vw[0], vw[1]) for e, vw in self.edges.items()}
        self.legs = dict(self.legs)


class Violation(NamedTuple):
    code: str
    detail: str


def validate_graph(graph):
    """All structural defects of the graph, as (code, detail) records.

    Codes: unknown-vertex, unknown-edge, self-loop, double-edge, valence,
    cyclic-order, missing-leg, spurious-leg, leg-not-incident, disconnected.
    An empty list means the graph carries a surface.
    """
    out = []
    for v, cyc in graph.vertices.items():
        for e in cyc:
            if e not in graph.edges:
                out.append(Violation(
                    "unknown-edge", f"vertex {v} lists unknown edge {e}"))
    for e, (a, b) in graph.edges.items():
        for v in (a, b):
            if v not in graph.vertices:
                out.append(Violation(
                    "unknown-vertex", f"edge {e} touches unknown vertex {v}"))
    seen = {}
    for e, (a, b) in graph.edges.items():
        if a == b:
            out.append(Violation("self-loop", f"edge {e} joins {a} to itself"))
            continue
        key = frozenset((a, b))
        if key in seen:
            out.append(Violation(
                "double-edge",
                f"edges {seen[key]} and {e} join the same vertices"))
        else:
            seen[key] = e
    for v, cyc in graph.vertices.items():
        incident = sorted(e for e, vw in graph.edges.items() if v in vw)
        if len(incident) > 3:
            out.append(Violation(
                "valence", f"vertex {v} has valence {len(incident)}"))
        if sorted(cyc) != incident:
            out.append(Violation(
                "cyclic-order",
                f"cyclic order at {v} does not list each incident edge once"))
        if len(incident) == 3 and v not in graph.legs:
            out.append(Violation(
                "missing-leg", f"trivalent vertex {v} has no marked leg"))
    for v, e in graph.legs.items():
        if v not in graph.vertices:
            out.append(Violation(
                "unknown-vertex", f"leg marked at unknown vertex {v}"))
            continue
        if len(graph.vertices[v]) != 3:
            out.append(Violation(
                "spurious-leg", f"vertex {v} is not trivalent but marks a leg"))
        if e not in graph.edges or v not in graph.edges.get(e, ()):
            out.append(Violation(
                "leg-not-incident", f"leg {e} is not an edge at {v}"))
    if graph.vertices and not out:
        reached = _component(graph, next(iter(graph.vertices)))
        if len(reached) < len(graph.vertices):
            missing = sorted(set(graph.vertices) - reached)
            out.append(Violation(
                "disconnected", f"vertices {missing} are unreachable"))
    return out


def _component(graph, start):
    reached = {start}
    frontier = [start]
    while frontier:
        v = frontier.pop()
        for a, b in graph.edges.values():
            for x, y in ((a, b), (b, a)):
                if x == v and y not in reached:
                    reached.add(y)
                    frontier.append(y)
    return reached


# ---------------------------------------------------------------------------
# text format


def parse_graph(text):
    """Graph from its line format: vertex/edge/cyclic/leg directives.

    ``vertex a``, ``edge e a b``, ``cyclic a e1 e2 e3``, ``leg a e``.
    Blank lines and ``#`` comments are skipped.  Vertices without a cyclic
    directive get their incident edges in declaration order.
    """
    vertices = {}
    edges = {}
    legs = {}
    cyclic = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *args = line.split()
        if head == "vertex" and len(args) == 1:
            vertices[args[0]] = None
        elif head == "edge" and len(args) == 3:
            edges[args[0]] = (args[1], args[2])
        elif head == "cyclic" and len(args) >= 2:
            cyclic[args[0]] = tuple(args[1:])
        elif head == "leg" and len(args) == 2:
            legs[args[0]] = args[1]
        else:
            raise ValueError(f"line {n}: cannot parse {raw.strip()!r}")
    order = {}
    for v in vertices:
        order[v] = cyclic.get(v) or tuple(
            e for e, vw in edges.items() for x in vw if x == v)
    return ArborealGraph(order, edges, legs)


def graph_to_text(graph):
    """Line format accepted by parse_graph, round-trip safe."""
    lines = [f"vertex {v}" for v in graph.vertices]
    lines += [f"edge {e} {a} {b}" for e, (a, b) in graph.edges.items()]
    lines += [f"cyclic {v} " + " ".join(cyc)
              for v, cyc in graph.vertices.items() if cyc]
    lines += [f"leg {v} {e}" for v, e in graph.legs.items()]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# charts and transitions


@dataclass(frozen=True)
class EdgeView:
    """How one chart sees one of its edges.

    ``kind`` is "base" when the ribbon lies along the position axis and
    "leg" when it runs up the momentum axis.  ``side`` is the sign of the
    position half-axis holding the ribbon, ``end`` is -1 at the edge's tail
    vertex and +1 at its head, and ``window`` is the coordinate interval the
    ribbon occupies (positions for base ribbons, momenta for the leg).
    """

    edge: str
    kind: str
    side: int
    end: int
    window: tuple


@dataclass
class Chart:
    vertex: str
    valence: int
    base_interval: tuple
    views: dict   # edge id -> EdgeView


def _end_sign(graph, edge, vertex):
    return -1 if graph.edges[edge][0] == vertex else 1


def _band_to_edge(side, end):
    # canonical ribbon coordinates: s in [-1, 1] from tail to head, with
    # the disk edge of this chart at s = end and area preserved
    m = [[-2.0 * side * end, 0.0], [0.0, -side * end / 2.0]]
    return AffineMap(m, (3.0 * end, 0.0))


@dataclass
class ChartAtlas:
    """Charts of the glued surface plus the affine transitions between them."""

    graph: ArborealGraph
    charts: dict    # vertex id -> Chart
    overlaps: dict  # edge id -> "direct" or "through-leg-of-..."

    def chart_to_edge(self, edge, vertex):
        """Affine map from this chart into the edge's ribbon coordinates."""
        view = self.charts[vertex].views[edge]
        band = _band_to_edge(view.side, view.end)
        if view.kind == "leg":
            return _compose(band, quarter_turn(1))
        return band

    def transition(self, edge, frm, to):
        """Affine transition between the two charts sharing an edge."""
        if frm == to:
            return AffineMap(np.eye(2))
        if {frm, to} != set(self.graph.edges[edge]):
            raise ValueError(f"edge {edge} does not join {frm} and {to}")
        A = self.chart_to_edge(edge, frm)
        B = self.chart_to_edge(edge, to)
        return _compose(B.inverse(), A)


def _compose(*maps):
    """Single AffineMap equal to the composition, rightmost applied first."""
    m = np.eye(2)
    c = np.zeros(2)
    for part in reversed(maps):
        m = part.m @ m
        c = part.m @ c + part.c
    return AffineMap(m, c)


def build_atlas(graph):
    """Coordinate charts for a valid graph; raises on structural defects."""
    violations = validate_graph(graph)
    if violations:
        msg = "; ".join(f"{v.code}: {v.detail}" for v in violations)
        raise ValueError(f"graph carries no surface: {msg}")
    charts = {}
    for v, cyc in graph.vertices.items():
        d = len(cyc)
        views = {}
        if d == 3:
            # rotate the cyclic order to start at the leg; the next edge
            # takes the positive band, the last one the negative band
            i = cyc.index(graph.legs[v])
            leg, pos, neg = cyc[i:] + cyc[:i]
            interval = (-2.0, 2.0)
            views[leg] = EdgeView(leg, "leg", 1,
                                  _end_sign(graph, leg, v), (1.0, 2.0))
            views[pos] = EdgeView(pos, "base", 1,
                                  _end_sign(graph, pos, v), (1.0, 2.0))
            views[neg] = EdgeView(neg, "base", -1,
                                  _end_sign(graph, neg, v), (-2.0, -1.0))
        elif d == 2:
            interval = (-2.0, 2.0)
            for side, e in zip((1, -1), cyc):
                win = (1.0, 2.0) if side == 1 else (-2.0, -1.0)
                views[e] = EdgeView(e, "base", side,
                                    _end_sign(graph, e, v), win)
        elif d == 1:
            interval = (-1.0, 2.0)
            e = cyc[0]
            views[e] = EdgeView(e, "base", 1,
                                _end_sign(graph, e, v), (1.0, 2.0))
        else:
            interval = (-1.0, 1.0)
        charts[v] = Chart(v, d, interval, views)
    overlaps = {}
    for e, (a, b) in graph.edges.items():
        ka = charts[a].views[e].kind
        kb = charts[b].views[e].kind
        if ka == kb == "base":
            overlaps[e] = "direct"
        elif ka == kb == "leg":
            overlaps[e] = "through-leg-of-both"
        else:
            overlaps[e] = f"through-leg-of-{a if ka == 'leg' else b}"
    return ChartAtlas(graph, charts, overlaps)


# ---------------------------------------------------------------------------
# allowed regions


def sigma_region(graph, vertex):
    """Region of the chart plane the glued surface allots to this vertex."""
    d = len(graph.vertices[vertex])
    if d >= 3:
        return Region.bounded_shape()
    if d == 2:
        return Region.band(-1.0, 1.0)
    if d == 1:
        def fn(qs, ps, tol):
            disk = qs * qs + ps * ps <= 1.0 + tol
            band = (qs > -tol) & (np.abs(ps) <= 1.0 + tol)
            return disk | band
        return Region("disk-with-band", fn)

    def fn(qs, ps, tol):
        return qs * qs + ps * ps <= 1.0 + tol
    return Region("disk", fn)


def sigma_membership(graph, vertex, point, tol=1e-9):
    q, p = point
    region = sigma_region(graph, vertex)
    return bool(region.contains(np.array([float(q)]),
                                np.array([float(p)]), tol)[0])


# ---------------------------------------------------------------------------
# global families


@dataclass
class GlobalFamily:
    """One generating family per chart, with optional per-side stabilizers.

    ``edge_stabilizers`` maps (edge id, vertex id) to a QuadraticStabilizer
    applied to that side before its restriction to the shared ribbon is
    compared, aligning fiber ranks across the edge.
    """

    graph: ArborealGraph
    families: dict
    edge_stabilizers: dict = field(default_factory=dict)
    label: str = ""


@dataclass
class EdgeCheck:
    edge: str
    kind: str
    ok: bool
    hausdorff: float
    index_offset: int | None
    potential_offset: float | None
    forgiven: bool = False
    note: str = ""


@dataclass
class ChartCheck:
    vertex: str
    ok: bool
    witness: tuple | None = None


@dataclass
class ConsistencyReport:
    edges: list
    charts: list
    tol: float

    @property
    def ok(self):
        return all(c.ok for c in self.charts) and all(e.ok for e in self.edges)

    def summary(self):
        lines = []
        for c in self.charts:
            state = "ok" if c.ok else f"leaves its region near {c.witness}"
            lines.append(f"chart {c.vertex}: {state}")
        for e in self.edges:
            if e.ok:
                extra = ""
                if e.index_offset:
                    extra += f" (index offset {e.index_offset:+d})"
                if e.forgiven:
                    extra += " (unseen zero-section content forgiven)"
                lines.append(f"edge {e.edge} [{e.kind}]: ok{extra}")
            else:
                why = f"; {e.note}" if e.note else ""
                lines.append(f"edge {e.edge} [{e.kind}]: mismatch, "
                             f"residual {e.hausdorff:.3g}{why}")
        return "\n".join(lines)


def _require_families(gf, atlas):
    for v, chart in atlas.charts.items():
        fam = gf.families.get(v)
        if fam is None:
            raise ValueError(f"no family assigned to vertex {v}")
        lo, hi = chart.base_interval
        if fam.base_domain[0] > lo + 1e-9 or fam.base_domain[1] < hi - 1e-9:
            raise ValueError(
                f"family for vertex {v} covers {fam.base_domain} but its "
                f"chart needs {chart.base_interval}")


def _shift_indices(curve, k):
    """Copy of the curve with every regular index moved by k."""
    from .genfam import Branch
    bs = [Branch(b.qs, b.ps, b.fs,
                 np.where(b.idxs >= 0, b.idxs + k, b.idxs),
                 b.fibers, closed=b.closed) for b in curve.branches]
    return SampledCurve(curve.base_name, curve.fiber_names, bs)


def _side_curve(gf, atlas, e, x, chart_curves, config):
    """This side's curve near the edge, in its comparison presentation.

    Base sides restrict the chart curve to the ribbon window.  Leg sides
    pass to the vertical presentation first, where the ribbon occupies
    positions [1, 2]; the restricted family generates exactly the rotated
    chart curve there, so the rotation stands in for a retrace.  A declared
    stabilizer keeps the curve in place and shifts indices by its own index.
    """
    view = atlas.charts[x].views[e]
    stab = gf.edge_stabilizers.get((e, x))
    curve = chart_curves[x]
    if view.kind == "leg":
        curve = quarter_turn(1).apply_to_curve(curve)
        window = (1.0, 2.0)
    else:
        window = view.window
    if stab is not None and stab.index:
        curve = _shift_indices(curve, stab.index)
    return curve.restricted(*window), window


def _presentation_transport(atlas, e, frm, to):
    """AffineMap between the two sides' comparison presentations."""
    maps = []
    if atlas.charts[to].views[e].kind == "leg":
        maps.append(quarter_turn(1))
    maps.append(atlas.transition(e, frm, to))
    if atlas.charts[frm].views[e].kind == "leg":
        maps.append(quarter_turn(1).inverse())
    return _compose(*maps)


def _check_edge(gf, atlas, e, chart_curves, tol, ftol, config):
    v, w = gf.graph.edges[e]
    kind = atlas.overlaps[e]
    # compare in the presentation of a base-kind side when one exists
    if atlas.charts[w].views[e].kind == "base":
        native, other = w, v
    elif atlas.charts[v].views[e].kind == "base":
        native, other = v, w
    else:
        native, other = w, v
    curve_native, window = _side_curve(gf, atlas, e, native,
                                       chart_curves, config)
    curve_other, _ = _side_curve(gf, atlas, e, other, chart_curves, config)
    B = _presentation_transport(atlas, e, other, native)
    moved = B.apply_to_curve(curve_other)
    lo, hi = window
    if kind == "direct":
        rep = windowed_match(moved, curve_native, lo, hi, tol=tol,
                             potential="offset", ftol=ftol, index="offset")
        offsets = rep.potential_offsets
        pot = float(np.median(offsets)) if len(offsets) else None
        return EdgeCheck(e, kind, bool(rep), rep.hausdorff,
                         rep.index_offset, pot, note=rep.notes)
    # A leg presentation only certifies ribbon content it can see.  When
    # every leg side is blank over the window, whatever the other side
    # carries there is its own business and the check passes vacuously;
    # otherwise the contents must agree strictly.  Indices are not compared
    # across a leg: the vertical presentation redistributes them at folds.
    margin = 2e-2
    legs = []
    if atlas.charts[other].views[e].kind == "leg":
        legs.append(moved)
    if atlas.charts[native].views[e].kind == "leg":
        legs.append(curve_native)
    if all(c.restricted(lo + margin, hi - margin).is_empty for c in legs):
        return EdgeCheck(e, kind, True, 0.0, None, None, forgiven=True,
                         note="leg presentation sees no ribbon content")
    rep = windowed_match(moved, curve_native, lo, hi, tol=tol,
                         potential="offset", ftol=ftol, index="ignore")
    offsets = rep.potential_offsets
    pot = float(np.median(offsets)) if len(offsets) else None
    return EdgeCheck(e, kind, bool(rep), rep.hausdorff, None, pot,
                     note=rep.notes)


def check_global_consistency(gf, atlas, tol=1e-6, ftol=None, config=None,
                             _curves=None):
    """Do the per-chart families define one global exact curve?

    Each chart's curve must stay inside its allotted region, and over every
    edge the two sides must generate the same curve with a constant
    potential offset and a constant index offset.  A side seen through a
    leg that generates nothing over the shared ribbon passes vacuously, and
    index offsets are never read across a leg.  ``_curves`` reuses
    already-traced chart curves.
    """
    _require_families(gf, atlas)
    if ftol is None:
        ftol = tol
    graph = gf.graph
    chart_curves = _curves if _curves is not None else {
        v: gf.families[v].critical_locus(config) for v in graph.vertices}
    charts = []
    for v in graph.vertices:
        inside, witness = sigma_region(graph, v).contains_curve(
            chart_curves[v], tol=1e-7)
        charts.append(ChartCheck(v, inside, witness))
    edges = [_check_edge(gf, atlas, e, chart_curves, tol, ftol, config)
             for e in graph.edges]
    return ConsistencyReport(edges, charts, tol)


# ---------------------------------------------------------------------------
# assembly


def _bare(branch):
    from .genfam import Branch
    return Branch(branch.qs, branch.ps, branch.fs, branch.idxs,
                  np.zeros((len(branch), 0)), closed=branch.closed)


def _ribbon_content(atlas, e, w, chart_curves):
    """Vertex w's curve content over the ribbon of e, in w's presentation."""
    view = atlas.charts[w].views[e]
    slack = 1e-9
    if view.kind == "base":
        lo, hi = view.window
        return chart_curves[w].restricted_box(lo, hi, -1.0 - slack,
                                              1.0 + slack)
    curve = quarter_turn(1).apply_to_curve(chart_curves[w])
    return curve.restricted_box(1.0, 2.0, -1.0 - slack, 1.0 + slack)


def _to_chart_transport(atlas, e, frm, to):
    """AffineMap from frm's comparison presentation into to's chart plane."""
    T = atlas.transition(e, frm, to)
    if atlas.charts[frm].views[e].kind == "leg":
        return _compose(T, quarter_turn(1).inverse())
    return T


def assemble_global_curve(gf, atlas, tol=1e-6, dedupe=2e-3, config=None):
    """Glued exact curve of a consistent global family, chart by chart.

    Each chart keeps its own samples and imports whatever a neighbouring
    chart generates over a shared ribbon, transported through the edge
    transition; imported branches duplicating content the chart already
    carries (within ``dedupe``) are dropped.  Raises ValueError when the
    family is not consistent.
    """
    graph = gf.graph
    chart_curves = {v: gf.families[v].critical_locus(config)
                    for v in graph.vertices}
    report = check_global_consistency(gf, atlas, tol=tol, config=config,
                                      _curves=chart_curves)
    if not report.ok:
        raise ValueError(
            "global family is inconsistent:\n" + report.summary())
    out = {}
    for v in graph.vertices:
        branches = [_bare(b) for b in chart_curves[v].branches if len(b)]
        cloud = [np.column_stack([b.qs, b.ps]) for b in branches]
        for e in atlas.charts[v].views:
            a, b = graph.edges[e]
            w = b if v == a else a
            piece = _ribbon_content(atlas, e, w, chart_curves)
            if piece.is_empty:
                continue
            moved = _to_chart_transport(atlas, e, w, v).apply_to_curve(piece)
            for br in moved.branches:
                if len(br) == 0:
                    continue
                P = np.column_stack([br.qs, br.ps])
                if cloud:
                    d, _ = cKDTree(np.vstack(cloud)).query(P)
                    if np.max(d) <= dedupe:
                        continue
                branches.append(_bare(br))
                cloud.append(P)
        out[v] = SampledCurve(gf.families[v].base, (), branches)
    return out
