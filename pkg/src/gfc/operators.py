"""Operators that build new generating families from existing ones.

Every operation is pure: inputs are never mutated, outputs are fresh
families.  The common scheme is to realize a plane transformation by
adding fiber directions and coupling terms to the function, so that the
new family presents the transformed curve through the usual rule
``p = dF/dq`` on the fiber-critical set.  Auxiliary fiber names are
chosen by a deterministic suffix counter, so repeated runs produce
identical families.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .expr import (ExprError, make_cutoff, make_step, parse_function,
                   quadratic_form)
from .genfam import GeneratingFamily, Region, TraceConfig, curves_match
from .symplecto import apply_genfam

__all__ = [
    "QuadraticStabilizer", "quadratic_stabilizer", "hyperbolic_stabilizer",
    "stabilize", "chekanov", "rotate", "cutoff_split", "dagger",
    "localize", "compute_O_set", "restrict_to_leg", "glue",
    "DefectReport", "compactify_defect",
]

# transition thresholds shared by dagger and the leg restriction
_BAND_INNER = 1.25
_BAND_OUTER = 2.0

# keep spline-backed graph data away from its boundary rows
_GRID_MARGIN = 0.05


def _fresh(taken, stem):
    """First of stem, stem1, stem2, ... not present in ``taken``."""
    if stem not in taken:
        return stem
    k = 1
    while f"{stem}{k}" in taken:
        k += 1
    return f"{stem}{k}"


def _vals(fn, *args):
    """Evaluate and broadcast to the common argument shape."""
    shape = np.broadcast(*[np.asarray(a) for a in args]).shape
    out = np.asarray(fn.evaluate(*args), dtype=float)
    if out.shape != shape:
        out = np.broadcast_to(out, shape)
    return out


def _shift_base(fn, base, v):
    """Replace the base variable by base + v where it occurs."""
    if base in fn.variables:
        return fn.substitute({base: f"{base} + {v}"})
    return fn


# ---------------------------------------------------------------------------
# stabilization


@dataclass(frozen=True)
class QuadraticStabilizer:
    """A nondegenerate quadratic form in fresh fiber directions."""

    new_vars: tuple
    form: object
    index: int


def quadratic_stabilizer(matrix, names):
    """Stabilizer x^T A x for symmetric nondegenerate A."""
    names = tuple(names)
    if len(set(names)) != len(names):
        raise ExprError("stabilizer variable names must be distinct")
    a = np.asarray(matrix, dtype=float)
    if a.shape != (len(names), len(names)):
        raise ExprError(
            f"matrix shape {a.shape} does not fit {len(names)} variables")
    a = (a + a.T) / 2.0
    eig = np.linalg.eigvalsh(a)
    scale = max(1.0, float(np.max(np.abs(eig))))
    if float(np.min(np.abs(eig))) < 1e-12 * scale:
        raise ExprError("stabilizing form must be nondegenerate")
    index = int(np.sum(eig < 0.0))
    return QuadraticStabilizer(names, quadratic_form(a, names), index)


def hyperbolic_stabilizer(names=("v", "t")):
    """The index-one block -v*t used by the identity-operator form."""
    return quadratic_stabilizer([[0.0, -0.5], [-0.5, 0.0]], names)


def stabilize(fam, s, halfwidth=1.5):
    """Add the stabilizing form in fresh fiber directions.

    The curve is unchanged; every fiber Morse index shifts by ``s.index``.
    """
    taken = {fam.base, *fam.fiber_vars}
    clash = taken & set(s.new_vars)
    if clash:
        raise ExprError(f"stabilizer variables {sorted(clash)} already in use")
    box = fam.fiber_box + tuple((-halfwidth, halfwidth) for _ in s.new_vars)
    return GeneratingFamily(fam.base, fam.base_domain,
                            fam.fiber_vars + s.new_vars, box,
                            fam.F + s.form, label=fam.label)


# ---------------------------------------------------------------------------
# graph-coupling core shared by chekanov and localize


def _fresh_aux(fam, sg):
    taken = {fam.base, *fam.fiber_vars}
    v = _fresh(taken, "v")
    taken.add(v)
    t = _fresh(taken, "t")
    taken.add(t)
    chi_map = {}
    chi_names = []
    for name in sg.fiber_vars:
        nn = _fresh(taken, name)
        taken.add(nn)
        chi_map[name] = nn
        chi_names.append(nn)
    return v, t, chi_map, chi_names


def _aux_boxes(fam, sg, base_domain, v_box, t_box):
    out_lo, out_hi = base_domain
    fam_lo, fam_hi = fam.base_domain
    grid = getattr(sg.G, "grid_data", None)
    if v_box is None:
        v_box = (fam_lo - out_hi, fam_hi - out_lo)
        if grid is not None:
            (xlo, xhi), _ = grid.bounds
            v_box = (max(v_box[0], 2.0 * (xlo + _GRID_MARGIN - out_lo)),
                     min(v_box[1], 2.0 * (xhi - _GRID_MARGIN - out_hi)))
    if t_box is None:
        width = out_hi - out_lo
        t_box = (-width, width)
        if grid is not None:
            _, (ylo, yhi) = grid.bounds
            t_box = (max(t_box[0], ylo + _GRID_MARGIN),
                     min(t_box[1], yhi - _GRID_MARGIN))
    for lo, hi in (v_box, t_box):
        if not lo < hi:
            raise ExprError(
                "auxiliary fiber box came out empty; the graph data does not "
                "cover the base domain, pass v_box and t_box explicitly")
    return (tuple(float(x) for x in v_box), tuple(float(x) for x in t_box))


def _couple_through_graph(fam, sg, head, v, t, chi_map, chi_names,
                          v_box, t_box, base_domain):
    a, b = sg.base_vars
    G = sg.G.rename(chi_map) if chi_map else sg.G
    G = G.substitute({a: f"{fam.base} + {v}/2.0", b: t})
    P = head + G - parse_function(f"{v}*{t}", (v, t))
    fibers = fam.fiber_vars + (v, t) + tuple(chi_names)
    boxes = fam.fiber_box + (v_box, t_box) + tuple(sg.fiber_box)
    return GeneratingFamily(fam.base, base_domain, fibers, boxes, P,
                            label=fam.label)


def chekanov(fam, sg, v_box=None, t_box=None, base_domain=None):
    """Couple the family to generating data for a plane map.

    The result's curve is the image of the input's curve under the map the
    data generates.  Auxiliary directions v (base shift) and t (momentum
    midpoint) are appended after the original fibers.
    """
    if base_domain is None:
        base_domain = fam.base_domain
    base_domain = (float(base_domain[0]), float(base_domain[1]))
    v, t, chi_map, chi_names = _fresh_aux(fam, sg)
    v_box, t_box = _aux_boxes(fam, sg, base_domain, v_box, t_box)
    head = _shift_base(fam.F, fam.base, v)
    return _couple_through_graph(fam, sg, head, v, t, chi_map, chi_names,
                                 v_box, t_box, base_domain)


# ---------------------------------------------------------------------------
# rotation


def rotate(fam, direction, base_domain=None, u_box=None):
    """Quarter turn of the curve: ccw sends (q, p) to (p, -q).

    The old base becomes a fresh fiber u; ccw couples through -u*q and cw
    through +u*q, which generates the inverse turn.
    """
    if direction not in ("ccw", "cw"):
        raise ExprError("direction must be 'ccw' or 'cw'")
    base = fam.base
    taken = {base, *fam.fiber_vars}
    u = _fresh(taken, "u")
    turned = fam.F.substitute({base: u}) if base in fam.F.variables else fam.F
    coupling = parse_function(f"{u}*{base}", (u, base))
    P = turned - coupling if direction == "ccw" else turned + coupling
    if base_domain is None:
        base_domain = fam.base_domain
    if u_box is None:
        u_box = fam.base_domain
    return GeneratingFamily(base, base_domain, fam.fiber_vars + (u,),
                            fam.fiber_box + (tuple(u_box),), P,
                            label=fam.label)


# ---------------------------------------------------------------------------
# cutoff split and dagger


def cutoff_split(fam, phi):
    """Split F into a cut part near phi*F and its exact complement.

    F_nc is F - phi*F and F_c is F - F_nc, so however the products round,
    one of the two subtractions cancels exactly and F_c + F_nc reproduces
    F bit for bit.  On the plateaus of phi the pieces are exactly F and
    exactly zero.
    """
    extra = set(phi.variables) - {fam.base}
    if extra:
        raise ExprError(
            f"cutoff must depend only on the base variable, not {sorted(extra)}")
    F_nc = fam.F - phi * fam.F
    F_c = fam.F - F_nc
    return F_c, F_nc


def dagger(fam, direction=1, base_domain=None, u_box=None):
    """Rotation localized by the module-fixed transition profile.

    For families whose curve stays in the bounded region, the output curve
    is the quarter turn of the input curve (inverse turn for direction -1);
    the construction itself is total.
    """
    if direction not in (1, -1):
        raise ExprError("direction must be +1 or -1")
    base = fam.base
    phi = make_cutoff(_BAND_INNER, _BAND_OUTER, var=base)
    F_c, F_nc = cutoff_split(fam, phi)
    taken = {base, *fam.fiber_vars}
    u = _fresh(taken, "u")
    sub = {base: u}
    if base in F_c.variables:
        F_c = F_c.substitute(sub)
    if base in F_nc.variables:
        F_nc = F_nc.substitute(sub)
    coupling = parse_function(f"{u}*{base}", (u, base))
    P = F_c + phi * F_nc
    P = P - coupling if direction == 1 else P + coupling
    if base_domain is None:
        base_domain = (-_BAND_OUTER, _BAND_OUTER)
    if u_box is None:
        u_box = fam.base_domain
    return GeneratingFamily(base, base_domain, fam.fiber_vars + (u,),
                            fam.fiber_box + (tuple(u_box),), P,
                            label=fam.label)


def restrict_to_leg(fam, curve=None):
    """Rotate onto the leg chart and keep the positive-coordinate side.

    When a sampled curve is supplied it is checked against the bounded
    region; violations only warn, since the restriction is still a valid
    family, just without the contract.
    """
    if curve is not None:
        ok, where = Region.bounded_shape().contains_curve(curve)
        if not ok:
            warnings.warn(
                f"curve leaves the bounded region near {where}; the leg "
                "restriction contract is not guaranteed", stacklevel=2)
    out = dagger(fam, 1)
    lo = max(0.0, out.base_domain[0])
    return GeneratingFamily(out.base, (lo, out.base_domain[1]),
                            out.fiber_vars, out.fiber_box, out.F,
                            label=fam.label)


# ---------------------------------------------------------------------------
# localization


def _check_decomposition(fam, f, eps, tol=1e-11):
    order = (fam.base,) + fam.fiber_vars
    diff = fam.F - (f + eps)
    extra = set(diff.variables) - set(order)
    if extra:
        raise ExprError(
            f"decomposition mentions unknown variables {sorted(extra)}")
    diff = diff.with_variables(order)
    rng = np.random.default_rng(0)
    lo, hi = fam._bounds()
    pts = [rng.uniform(lo[i], hi[i], 997) for i in range(len(lo))]
    ref = _vals(fam.F, *pts)
    scale = 1.0 + float(np.max(np.abs(ref)))
    dev = float(np.max(np.abs(_vals(diff, *pts))))
    if dev > tol * scale:
        raise ExprError(
            f"family does not split as f + eps (deviation {dev:.2e})")


def localize(fam, f, eps, phi, sg, v_box=None, t_box=None, base_domain=None):
    """Graph coupling with the perturbation damped by phi at the new base.

    Whenever phi is identically one on a neighborhood of the O-set of the
    decomposition, the curve agrees with the full coupling's curve.
    """
    extra = set(phi.variables) - {fam.base}
    if extra:
        raise ExprError(
            f"phi must depend only on the base variable, not {sorted(extra)}")
    _check_decomposition(fam, f, eps)
    if base_domain is None:
        base_domain = fam.base_domain
    base_domain = (float(base_domain[0]), float(base_domain[1]))
    v, t, chi_map, chi_names = _fresh_aux(fam, sg)
    v_box, t_box = _aux_boxes(fam, sg, base_domain, v_box, t_box)
    head = _shift_base(f, fam.base, v) + phi * _shift_base(eps, fam.base, v)
    return _couple_through_graph(fam, sg, head, v, t, chi_map, chi_names,
                                 v_box, t_box, base_domain)


def _intervals_from_points(pts, gap, pad, domain):
    pts = np.sort(np.asarray(pts, dtype=float).ravel())
    if pts.size == 0:
        return []
    runs = []
    start = prev = float(pts[0])
    for x in pts[1:]:
        x = float(x)
        if x - prev > gap:
            runs.append((start, prev))
            start = x
        prev = x
    runs.append((start, prev))
    lo_d, hi_d = domain
    return [(max(lo_d, s - pad), min(hi_d, e + pad)) for s, e in runs]


def compute_O_set(fam, f, eps, phi, S, grid=801):
    """Base positions that can see the perturbation through the map.

    Union of two contributions: the mapped curve of the full family over
    the support of eps, and the fixed points of the frozen-coefficient
    scan r -> f + phi(r)*eps.  Returned as a list of closed intervals; the
    estimate is conservative (padded by the scan resolution).
    """
    base = fam.base
    qlo, qhi = fam.base_domain
    order = (base,) + fam.fiber_vars
    if not set(eps.variables) <= set(order):
        raise ExprError("eps mentions variables outside the family")
    if not set(f.variables) <= set(order):
        raise ExprError("f mentions variables outside the family")
    rs = np.linspace(qlo, qhi, grid)
    h = float(rs[1] - rs[0])
    collected = []

    if fam.n_fiber == 0:
        e1 = eps.with_variables((base,))
        f1 = f.with_variables((base,))
        dense = np.linspace(qlo, qhi, 4 * grid + 1)
        supp = dense[np.abs(_vals(e1, dense)) > 0.0]
        if supp.size == 0:
            return []
        famp = _vals(fam.F.differentiate(base), supp)
        Qi, _ = S.map_points(supp, famp)
        collected.append(np.asarray(Qi, dtype=float).ravel())
        if supp.size > 801:
            supp = supp[::supp.size // 801 + 1]
        fp = _vals(f1.differentiate(base), supp)
        ep = _vals(e1.differentiate(base), supp)
        phis = _vals(phi, rs)
        P = fp[None, :] + phis[:, None] * ep[None, :]
        Q = np.broadcast_to(supp[None, :], P.shape)
        Qi, _ = S.map_points(Q.ravel(), P.ravel())
        Qi = np.asarray(Qi, dtype=float).reshape(P.shape)
        hit = np.min(np.abs(Qi - rs[:, None]), axis=1) < 0.5 * h
        collected.append(rs[hit])
    else:
        e_full = eps.with_variables(order)
        f_full = f.with_variables(order)
        curve = fam.critical_locus()
        for br in curve.branches:
            if len(br) == 0:
                continue
            args = [br.qs] + [br.fibers[:, i] for i in range(fam.n_fiber)]
            mask = np.abs(_vals(e_full, *args)) > 0.0
            if mask.any():
                Qi, _ = S.map_points(br.qs[mask], br.ps[mask])
                collected.append(np.asarray(Qi, dtype=float).ravel())
        if not collected:
            return []
        rs_f = np.linspace(qlo, qhi, 161)
        h_f = float(rs_f[1] - rs_f[0])
        phis = _vals(phi, rs_f)
        cfg = TraceConfig(seed_base=13, seed_fiber=5)
        hits = []
        for r, pv in zip(rs_f, phis):
            fam_r = GeneratingFamily(base, fam.base_domain, fam.fiber_vars,
                                     fam.fiber_box,
                                     f_full + float(pv) * e_full)
            X = fam_r._seed_cloud(cfg)
            if X.shape[0] == 0:
                continue
            args = [X[:, 0]] + [X[:, i + 1] for i in range(fam.n_fiber)]
            mask = np.abs(_vals(e_full, *args)) > 0.0
            if not mask.any():
                continue
            ps = fam_r.momentum(X[mask, 0], X[mask, 1:])
            Qi, _ = S.map_points(X[mask, 0], ps)
            if float(np.min(np.abs(np.asarray(Qi, float) - r))) < 0.5 * h_f:
                hits.append(r)
        collected.append(np.asarray(hits, dtype=float))
        h = max(h, h_f)

    pts = np.concatenate([np.asarray(c, dtype=float).ravel()
                          for c in collected])
    pts = pts[(pts >= qlo) & (pts <= qhi)]
    return _intervals_from_points(pts, gap=2.0 * h, pad=h, domain=(qlo, qhi))


# ---------------------------------------------------------------------------
# gluing


def glue(famA, famB, K, stab=None, case="non-leg"):
    """Splice the prepared vertex family into the edge family across K.

    The two inputs must agree on the window K after preparation
    (stabilization, plus the rotation onto the leg chart for the leg case);
    the splice cutoff's transition lies inside K, so the result restricts
    to famB past the window and to the prepared famA before it.
    """
    klo, khi = float(K[0]), float(K[1])
    if not klo < khi:
        raise ValueError("gluing window must be a nonempty interval")
    if case not in ("non-leg", "leg"):
        raise ValueError(f"unknown gluing case {case!r}")
    prepped = famA
    if case == "leg":
        prepped = dagger(prepped, 1)
    if stab is not None:
        prepped = stabilize(prepped, stab)
    for fam in (prepped, famB):
        alo, ahi = fam.base_domain
        if not (alo < klo and khi < ahi):
            raise ValueError(
                f"gluing window ({klo}, {khi}) must lie inside the base "
                f"domain {fam.base_domain}")
    if prepped.fiber_vars != famB.fiber_vars:
        raise ValueError(
            f"fiber variables differ after preparation: "
            f"{prepped.fiber_vars} vs {famB.fiber_vars}")
    rng = np.random.default_rng(7)
    qs = rng.uniform(klo, khi, 400)
    args = [qs]
    for lo, hi in prepped.fiber_box:
        args.append(rng.uniform(lo, hi, 400))
    va = _vals(prepped.F, *args)
    vb = _vals(famB.F, *args)
    scale = 1.0 + float(max(np.max(np.abs(va)), np.max(np.abs(vb))))
    dev = float(np.max(np.abs(va - vb)))
    if dev > 1e-12 * scale:
        raise ValueError(
            f"families disagree on the gluing window (deviation {dev:.2e})")
    width = khi - klo
    chi = make_step(prepped.base, klo + 0.3 * width, khi - 0.3 * width)
    one = parse_function("1.0", (prepped.base,))
    blend = (one - chi) * prepped.F + chi * famB.F
    domain = (min(prepped.base_domain[0], famB.base_domain[0]),
              max(prepped.base_domain[1], famB.base_domain[1]))
    boxes = tuple((min(a[0], b[0]), max(a[1], b[1]))
                  for a, b in zip(prepped.fiber_box, famB.fiber_box))
    out = GeneratingFamily(prepped.base, domain, prepped.fiber_vars, boxes,
                           blend, label=famA.label)
    if case == "leg":
        out = dagger(out, -1)
    return out


# ---------------------------------------------------------------------------
# compact-support localization


@dataclass
class DefectReport:
    """Evidence that the damped coupling only changed a compact piece."""

    match: object
    support_certified: bool
    defect_box: tuple | None
    o_intervals: list


def _phi_one_everywhere(base, domain):
    lo = domain[0]
    span = domain[1] - domain[0]
    return make_step(base, lo - 0.50 * span, lo - 0.25 * span)


def compactify_defect(fam, f, eps, sg):
    """Damped coupling whose deviation from the plain coupling is compact.

    Chooses the damping profile automatically: identically one on a padded
    hull of the scanned O-set, zero well inside the base domain ends.
    Returns the new family plus a report with the curve comparison, the
    support certification, and the bounding box of the defect.
    """
    base = fam.base
    qlo, qhi = fam.base_domain
    span = qhi - qlo
    order = (base,) + fam.fiber_vars
    if not set(eps.variables) <= set(order):
        raise ExprError("eps mentions variables outside the family")
    _check_decomposition(fam, f, eps)

    ref = chekanov(fam, sg)

    # exact-zero scan of the perturbation over the variables it mentions
    evars = eps.variables
    axes = []
    for name in evars:
        if name == base:
            axes.append(np.linspace(qlo, qhi, 1601))
        else:
            lo, hi = fam.fiber_box[fam.fiber_vars.index(name)]
            axes.append(np.linspace(lo, hi, 81))
    if axes:
        mesh = np.meshgrid(*axes, indexing="ij")
        nz = np.abs(_vals(eps, *[m.ravel() for m in mesh])
                    ).reshape(mesh[0].shape) > 0.0
    else:
        nz = np.zeros(0, dtype=bool)

    if not nz.any():
        phi = _phi_one_everywhere(base, fam.base_domain)
        out = localize(fam, f, eps, phi, sg)
        rep = curves_match(out.critical_locus(), ref.critical_locus(),
                           tol=1e-6, potential="exact", ftol=1e-6)
        return out, DefectReport(rep, True, None, [])

    if base not in evars:
        raise ValueError(
            "eps does not vanish anywhere along the base; support is not "
            "compactly contained in the chart")
    kbase = evars.index(base)
    other = tuple(i for i in range(nz.ndim) if i != kbase)
    bm = nz.any(axis=other) if other else nz
    idx = np.flatnonzero(bm)
    if idx[0] <= 1 or idx[-1] >= len(axes[kbase]) - 2:
        raise ValueError(
            "eps support reaches the ends of the base domain; support is "
            "not compactly contained in the chart")

    # O-set superset over all damping levels in [0, 1]
    lam = np.linspace(0.0, 1.0, 11)
    o_pts = []
    if fam.n_fiber == 0:
        e1 = eps.with_variables((base,))
        f1 = f.with_variables((base,))
        dense = np.linspace(qlo, qhi, 2401)
        supp = dense[np.abs(_vals(e1, dense)) > 0.0]
        fp = _vals(f1.differentiate(base), supp)
        ep = _vals(e1.differentiate(base), supp)
        P = fp[None, :] + lam[:, None] * ep[None, :]
        Q = np.broadcast_to(supp[None, :], P.shape)
        s_img, _ = apply_genfam(sg, Q.ravel(), P.ravel())
        o_pts.append(np.asarray(s_img, dtype=float).ravel())
    else:
        e_full = eps.with_variables(order)
        f_full = f.with_variables(order)
        cfg = TraceConfig(seed_base=13, seed_fiber=5)
        for lv in lam[::2]:
            fam_l = GeneratingFamily(base, fam.base_domain, fam.fiber_vars,
                                     fam.fiber_box,
                                     f_full + float(lv) * e_full)
            X = fam_l._seed_cloud(cfg)
            if X.shape[0] == 0:
                continue
            args = [X[:, 0]] + [X[:, i + 1] for i in range(fam.n_fiber)]
            mask = np.abs(_vals(e_full, *args)) > 0.0
            if not mask.any():
                continue
            ps = fam_l.momentum(X[mask, 0], X[mask, 1:])
            s_img, _ = apply_genfam(sg, X[mask, 0], ps)
            o_pts.append(np.asarray(s_img, dtype=float).ravel())
        if not o_pts:
            o_pts.append(np.zeros(0))
    o_pts = np.concatenate(o_pts)
    o_pts = o_pts[(o_pts >= qlo) & (o_pts <= qhi)]
    o_intervals = _intervals_from_points(o_pts, gap=0.02 * span,
                                         pad=0.005 * span, domain=(qlo, qhi))

    if o_pts.size == 0:
        phi = _phi_one_everywhere(base, fam.base_domain)
    else:
        olo = float(np.min(o_pts))
        ohi = float(np.max(o_pts))
        g1 = 0.05 * span
        a1, b0 = olo - g1, ohi + g1
        room = min(a1 - qlo, qhi - b0)
        if room <= 0.02 * span:
            raise ValueError(
                "the O-set hull nearly fills the base domain; no room to "
                "flatten the defect inside the chart")
        g2 = 0.5 * room
        phi = (make_step(base, a1 - g2, a1)
               - make_step(base, b0, b0 + g2))

    out = localize(fam, f, eps, phi, sg)
    rep = curves_match(out.critical_locus(), ref.critical_locus(),
                       tol=1e-6, potential="exact", ftol=1e-6)

    # bounding box of the defect phi(q) * eps(q + v, ...), exact-zero scan
    v, t, chi_map, chi_names = _fresh_aux(fam, sg)
    v_box, _t_box = _aux_boxes(fam, sg, fam.base_domain, None, None)
    delta = phi * _shift_base(eps, base, v)
    names = [base] + [nm for nm in ((v,) + fam.fiber_vars)
                      if nm in set(delta.variables)]
    delta = delta.with_variables(tuple(names))
    axes = []
    for name in names:
        if name == base:
            axes.append(np.linspace(qlo, qhi, 801))
        elif name == v:
            axes.append(np.linspace(v_box[0], v_box[1], 201))
        else:
            lo, hi = fam.fiber_box[fam.fiber_vars.index(name)]
            axes.append(np.linspace(lo, hi, 41))
    mesh = np.meshgrid(*axes, indexing="ij")
    dnz = np.abs(_vals(delta, *[m.ravel() for m in mesh])
                 ).reshape(mesh[0].shape) > 0.0
    if not dnz.any():
        return out, DefectReport(rep, True, None, o_intervals)
    box = []
    certified = True
    for k, ax in enumerate(axes):
        other = tuple(i for i in range(dnz.ndim) if i != k)
        m = dnz.any(axis=other) if other else dnz
        idx = np.flatnonzero(m)
        if idx[0] <= 1 or idx[-1] >= len(ax) - 2:
            certified = False
        box.append((float(ax[idx[0]]), float(ax[idx[-1]])))
    return out, DefectReport(rep, certified, tuple(box), o_intervals)
