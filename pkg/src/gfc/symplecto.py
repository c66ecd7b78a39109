"""Symplectomorphisms of the (q, p) plane with exact potential transport.

Every map here carries, along with (q, p) -> (q', p'), the primitive shift
h with S*(p dq) = p dq + dh, so exact curves can be pushed forward including
their potential.  Near-identity maps can be converted into a generating
function over the midpoint base via the graph chart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import RectBivariateSpline

from .expr import SmoothFunction, parse_function, grid_function_2d
from .genfam import Branch, SampledCurve


# ---------------------------------------------------------------------------
# the graph chart on pairs (source, target)


def varpi(u, l, s, v):
    """Chart sending a pair ((u,l),(s,v)) to graph coordinates (q1,q2,p1,p2)."""
    return ((u + s) / 2.0, (l + v) / 2.0, v - l, u - s)


def varpi_inv(q1, q2, p1, p2):
    """Inverse chart, returning (u, l, s, v)."""
    return (q1 + p2 / 2.0, q2 - p1 / 2.0, q1 - p2 / 2.0, p1 / 2.0 + q2)


# ---------------------------------------------------------------------------
# maps


class Symplectomorphism:
    def transport(self, qs, ps):
        """Return (q', p', h) arrays for input point arrays."""
        raise NotImplementedError

    def map_points(self, qs, ps):
        q, p, _ = self.transport(qs, ps)
        return q, p

    def h_values(self, qs, ps):
        return self.transport(qs, ps)[2]

    def inverse(self):
        raise NotImplementedError

    def apply_to_curve(self, curve):
        """Push an exact curve forward, shifting potentials by h."""
        branches = []
        for b in curve.branches:
            if len(b) == 0:
                continue
            q, p, h = self.transport(b.qs, b.ps)
            branches.append(Branch(np.asarray(q, float), np.asarray(p, float),
                                   b.fs + h, b.idxs.copy(), b.fibers.copy(),
                                   closed=b.closed))
        return SampledCurve(curve.base_name, curve.fiber_names, branches)


class AffineMap(Symplectomorphism):
    """x -> M x + c with det M = 1; h is the induced quadratic polynomial."""

    def __init__(self, matrix, shift=(0.0, 0.0)):
        self.m = np.asarray(matrix, dtype=float).reshape(2, 2)
        self.c = np.asarray(shift, dtype=float).reshape(2)
        det = self.m[0, 0] * self.m[1, 1] - self.m[0, 1] * self.m[1, 0]
        if abs(det - 1.0) > 1e-12:
            raise ValueError(f"matrix must preserve area, det={det}")

    def transport(self, qs, ps):
        qs = np.asarray(qs, dtype=float)
        ps = np.asarray(ps, dtype=float)
        m, c = self.m, self.c
        q2 = m[0, 0] * qs + m[0, 1] * ps + c[0]
        p2 = m[1, 0] * qs + m[1, 1] * ps + c[1]
        h = (m[0, 0] * m[1, 0] * qs * qs / 2.0
             + m[0, 1] * m[1, 1] * ps * ps / 2.0
             + m[0, 1] * m[1, 0] * qs * ps
             + c[1] * (m[0, 0] * qs + m[0, 1] * ps))
        return q2, p2, h

    def inverse(self):
        minv = np.array([[self.m[1, 1], -self.m[0, 1]],
                         [-self.m[1, 0], self.m[0, 0]]])
        return AffineMap(minv, -minv @ self.c)

    def __repr__(self):
        return f"AffineMap({self.m.tolist()}, {self.c.tolist()})"


def identity_map():
    return AffineMap(np.eye(2))


def quarter_turn(direction=1):
    """(q,p) -> (p,-q) for direction +1, (q,p) -> (-p,q) for -1; h = -qp."""
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    if direction == 1:
        return AffineMap([[0.0, 1.0], [-1.0, 0.0]])
    return AffineMap([[0.0, -1.0], [1.0, 0.0]])


class HamiltonianFlow(Symplectomorphism):
    """Time-(t0 -> t1) flow of a Hamiltonian H(q, p) or H(t, q, p).

    Integrates (q, p) together with the primitive shift
    dh/dt = p dH/dp - H using adaptive step-doubled RK4 on the whole batch,
    which keeps results deterministic.
    """

    def __init__(self, H, t0=0.0, t1=1.0, rtol=1e-9, max_halvings=40):
        if H.variables not in (("q", "p"), ("t", "q", "p")):
            raise ValueError(
                f"Hamiltonian must have variables (q, p) or (t, q, p), "
                f"got {H.variables}")
        self.H = H
        self.timedep = H.variables[0] == "t"
        self.t0 = float(t0)
        self.t1 = float(t1)
        self.rtol = float(rtol)
        self.max_halvings = max_halvings
        self._hq = H.differentiate("q")
        self._hp = H.differentiate("p")

    def _rhs(self, t, q, p):
        if self.timedep:
            tt = np.broadcast_to(t, np.shape(q))
            args = (tt, q, p)
        else:
            args = (q, p)
        hq = np.asarray(self._hq.evaluate(*args), dtype=float)
        hp = np.asarray(self._hp.evaluate(*args), dtype=float)
        hval = np.asarray(self.H.evaluate(*args), dtype=float)
        dq = np.broadcast_to(hp, np.shape(q))
        dp = np.broadcast_to(-hq, np.shape(q))
        dh = p * dq - np.broadcast_to(hval, np.shape(q))
        return np.stack([dq, dp, dh])

    def _rk4(self, t, y, dt):
        k1 = self._rhs(t, y[0], y[1])
        k2 = self._rhs(t + dt / 2, *(y + dt / 2 * k1)[:2])
        k3 = self._rhs(t + dt / 2, *(y + dt / 2 * k2)[:2])
        k4 = self._rhs(t + dt, *(y + dt * k3)[:2])
        return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    def transport(self, qs, ps):
        qs = np.asarray(qs, dtype=float)
        ps = np.asarray(ps, dtype=float)
        shape = np.broadcast(qs, ps).shape
        q = np.broadcast_to(qs, shape).astype(float).ravel()
        p = np.broadcast_to(ps, shape).astype(float).ravel()
        y = np.stack([q, p, np.zeros_like(q)])
        t = self.t0
        total = self.t1 - self.t0
        if total == 0.0 or y.shape[1] == 0:
            return (q.reshape(shape), p.reshape(shape),
                    np.zeros(shape))
        dt = total / 50.0
        sgn = np.sign(total)
        while (self.t1 - t) * sgn > 1e-15 * max(1.0, abs(total)):
            if (t + dt - self.t1) * sgn > 0:
                dt = self.t1 - t
            halved = 0
            while True:
                y_full = self._rk4(t, y, dt)
                y_half = self._rk4(t + dt / 2, self._rk4(t, y, dt / 2), dt / 2)
                scale = max(1.0, float(np.max(np.abs(y_half))))
                err = float(np.max(np.abs(y_full - y_half))) / 15.0
                if err <= self.rtol * scale or halved >= self.max_halvings:
                    break
                dt /= 2.0
                halved += 1
            # fifth-order correction from the step-doubling pair
            y = y_half + (y_half - y_full) / 15.0
            t = t + dt
            if err > 0:
                grow = 0.9 * (self.rtol * scale / err) ** 0.2
                dt *= min(max(grow, 0.2), 5.0)
            else:
                dt *= 5.0
            if abs(dt) > abs(total):
                dt = total
        return (y[0].reshape(shape), y[1].reshape(shape), y[2].reshape(shape))

    def inverse(self):
        return HamiltonianFlow(self.H, self.t1, self.t0, rtol=self.rtol)

    def subflow(self, ta, tb):
        return HamiltonianFlow(self.H, ta, tb, rtol=self.rtol)

    def __repr__(self):
        return f"HamiltonianFlow(t0={self.t0}, t1={self.t1})"


class Composition(Symplectomorphism):
    """Apply parts left to right: Composition([A, B]) is B after A."""

    def __init__(self, parts):
        self.parts = list(parts)

    def transport(self, qs, ps):
        q = np.asarray(qs, dtype=float)
        p = np.asarray(ps, dtype=float)
        h = np.zeros(np.broadcast(q, p).shape)
        for part in self.parts:
            q, p, dh = part.transport(q, p)
            h = h + dh
        return q, p, h

    def inverse(self):
        return Composition([part.inverse() for part in reversed(self.parts)])

    def __repr__(self):
        return f"Composition({self.parts!r})"


# ---------------------------------------------------------------------------
# how far a map is from the identity


def c1_defect(S, box, grid=31, fd=1e-5):
    """max over the box of |S(x) - x| + |J_S(x) - I| (Frobenius norm)."""
    (qlo, qhi), (plo, phi) = box
    qs, ps = np.meshgrid(np.linspace(qlo, qhi, grid),
                         np.linspace(plo, phi, grid), indexing="ij")
    qs = qs.ravel()
    ps = ps.ravel()
    mq, mp = S.map_points(qs, ps)
    shift = np.hypot(mq - qs, mp - ps)
    aq, ap = S.map_points(qs + fd, ps)
    bq, bp = S.map_points(qs - fd, ps)
    cq, cp = S.map_points(qs, ps + fd)
    dq, dp = S.map_points(qs, ps - fd)
    j11 = (aq - bq) / (2 * fd) - 1.0
    j21 = (ap - bp) / (2 * fd)
    j12 = (cq - dq) / (2 * fd)
    j22 = (cp - dp) / (2 * fd) - 1.0
    jnorm = np.sqrt(j11**2 + j12**2 + j21**2 + j22**2)
    return float(np.max(shift + jnorm))


def fragment(flow, box, threshold=0.15, grid=15, max_depth=12):
    """Split a Hamiltonian flow into time slices, each close to the identity.

    Bisects the time interval until every slice has c1 defect below the
    threshold over the box; returns the list of slices in time order.
    """
    if not isinstance(flow, HamiltonianFlow):
        raise TypeError("fragment expects a HamiltonianFlow")
    out = []

    def rec(ta, tb, depth):
        piece = flow.subflow(ta, tb)
        if c1_defect(piece, box, grid=grid) <= threshold:
            out.append(piece)
            return
        if depth >= max_depth:
            raise RuntimeError(
                f"time slice [{ta}, {tb}] cannot be made near-identity")
        tm = 0.5 * (ta + tb)
        rec(ta, tm, depth + 1)
        rec(tm, tb, depth + 1)

    rec(flow.t0, flow.t1, 0)
    return out


# ---------------------------------------------------------------------------
# generating data over the midpoint base


@dataclass
class SympGenFam:
    """Generating data for a plane symplectomorphism over a 2-d base.

    The base coordinates are the graph-chart positions (q1, q2); fibers are
    auxiliary variables minimized out.  For the maps constructed here the
    fiber tuple is empty.  ``far_value`` records the constant the function
    takes where the underlying map is the identity (0.0 if nowhere).
    """

    G: SmoothFunction
    base_vars: tuple
    fiber_vars: tuple = ()
    fiber_box: tuple = ()
    far_value: float = 0.0
    label: str = ""

    def partials(self, q1, q2):
        a, b = self.base_vars
        if self.fiber_vars:
            raise ValueError("partials only defined for fiberless data")
        g1 = self.G.differentiate(a).evaluate(q1, q2)
        g2 = self.G.differentiate(b).evaluate(q1, q2)
        return np.asarray(g1, float), np.asarray(g2, float)


def make_identity_genfam():
    return SympGenFam(parse_function("0.0", ("a", "b")), ("a", "b"),
                        label="identity")


def make_W_genfam(direction=1):
    """Generating data for the quarter turn; negation generates the inverse."""
    if direction == 1:
        G = parse_function("-a^2.0 - b^2.0", ("a", "b"))
    elif direction == -1:
        G = parse_function("a^2.0 + b^2.0", ("a", "b"))
    else:
        raise ValueError("direction must be +1 or -1")
    return SympGenFam(G, ("a", "b"), label=f"quarter_turn({direction})")


def genfam_defect(sg, S, box, grid=23):
    """Largest graph-chart mismatch between the data and the actual map."""
    (ulo, uhi), (llo, lhi) = box
    us, ls = np.meshgrid(np.linspace(ulo, uhi, grid),
                         np.linspace(llo, lhi, grid), indexing="ij")
    us = us.ravel()
    ls = ls.ravel()
    sv = S.map_points(us, ls)
    q1, q2, p1, p2 = varpi(us, ls, sv[0], sv[1])
    g1, g2 = sg.partials(q1, q2)
    return float(max(np.max(np.abs(g1 - p1)), np.max(np.abs(g2 - p2))))


def genfam_of_near_identity(S, box, grid=161, defect_limit=0.2,
                                   curl_tol=1e-4, check_tol=1e-4):
    """Extract generating data for a near-identity map over the given base box.

    The box is in midpoint coordinates (q1, q2); sources whose midpoints fall
    on the box must stay within reach of the map, so pass a box comfortably
    inside the region where S is defined.
    """
    defect = c1_defect(S, box, grid=21)
    if defect > defect_limit:
        raise ValueError(
            f"map has C1 defect {defect:.3f}, beyond {defect_limit}; "
            "fragment it first")
    (alo, ahi), (blo, bhi) = box
    if grid % 2 == 0:
        grid += 1
    q1s = np.linspace(alo, ahi, grid)
    q2s = np.linspace(blo, bhi, grid)
    Q1, Q2 = np.meshgrid(q1s, q2s, indexing="ij")
    tq1 = Q1.ravel()
    tq2 = Q2.ravel()
    # solve midpoint(source) = (q1, q2) for the source by batched Newton
    u = tq1.copy()
    l = tq2.copy()
    fd = 1e-6
    for _ in range(40):
        s, v = S.map_points(u, l)
        r1 = (u + s) / 2.0 - tq1
        r2 = (l + v) / 2.0 - tq2
        if max(np.max(np.abs(r1)), np.max(np.abs(r2))) < 1e-12:
            break
        sqa, sva = S.map_points(u + fd, l)
        sqb, svb = S.map_points(u - fd, l)
        sqc, svc = S.map_points(u, l + fd)
        sqd, svd = S.map_points(u, l - fd)
        j11 = 0.5 * (1.0 + (sqa - sqb) / (2 * fd))
        j21 = 0.5 * ((sva - svb) / (2 * fd))
        j12 = 0.5 * ((sqc - sqd) / (2 * fd))
        j22 = 0.5 * (1.0 + (svc - svd) / (2 * fd))
        det = j11 * j22 - j12 * j21
        du = (j22 * r1 - j12 * r2) / det
        dl = (-j21 * r1 + j11 * r2) / det
        u = u - du
        l = l - dl
    s, v = S.map_points(u, l)
    res = max(np.max(np.abs((u + s) / 2 - tq1)), np.max(np.abs((l + v) / 2 - tq2)))
    if res > 1e-9:
        raise RuntimeError(f"midpoint inversion stalled at residual {res:.2e}")
    P1 = (v - l).reshape(grid, grid)
    P2 = (u - s).reshape(grid, grid)
    d1 = q1s[1] - q1s[0]
    d2 = q2s[1] - q2s[0]
    # quintic cross-derivatives keep the truncation floor well under
    # curl_tol even for cutoff-shaped fields; real area-preservation
    # failures land orders above it
    sp1 = RectBivariateSpline(q1s, q2s, P1, kx=5, ky=5)
    sp2 = RectBivariateSpline(q1s, q2s, P2, kx=5, ky=5)
    curl = sp1(q1s, q2s, dy=1) - sp2(q1s, q2s, dx=1)
    worst_curl = float(np.max(np.abs(curl[3:-3, 3:-3])))
    if worst_curl > curl_tol:
        raise RuntimeError(
            f"graph data is not closed (curl {worst_curl:.2e}); "
            "the map may not be area preserving")
    c = grid // 2
    # integrate dG = P1 dq1 + P2 dq2 from the center node, both orders
    ga = (_cum_from(P1[:, c], d1, c)[:, None]
          + _cum_from(P2, d2, c, axis=1))
    gb = (_cum_from(P2[c, :], d2, c)[None, :]
          + _cum_from(P1, d1, c, axis=0))
    G = 0.5 * (ga + gb)
    G = G - G[c, c]
    fn = grid_function_2d(q1s, q2s, G, ("a", "b"))
    quiet = (np.abs(P1) + np.abs(P2)) < 1e-10
    far_value = float(np.median(G[quiet])) if np.any(quiet) else 0.0
    sg = SympGenFam(fn, ("a", "b"), far_value=far_value,
                          label="near-identity")
    err = genfam_defect(
        sg, S,
        ((alo + 4 * d1, ahi - 4 * d1), (blo + 4 * d2, bhi - 4 * d2)))
    if err > check_tol:
        raise RuntimeError(
            f"extracted data reproduces the map only to {err:.2e}")
    return sg


def apply_genfam(sg, us, ls, tol=1e-11, iters=60):
    """Evaluate the map generated by fiberless data at points (us, ls).

    Solves the graph-chart relations p1 = G_1, p2 = G_2 for the target point
    by batched Newton; converges for data generating maps whose graph stays
    transverse to the chart (quarter turns and near-identity maps included).
    """
    if sg.fiber_vars:
        raise ValueError("apply_genfam needs fiberless data")
    a, b = sg.base_vars
    G1 = sg.G.differentiate(a)
    G2 = sg.G.differentiate(b)
    G11 = G1.differentiate(a)
    G12 = G1.differentiate(b)
    G22 = G2.differentiate(b)
    us = np.asarray(us, dtype=float)
    ls = np.asarray(ls, dtype=float)
    s = us.copy()
    v = ls.copy()
    r1 = r2 = None
    for _ in range(iters):
        q1 = (us + s) / 2.0
        q2 = (ls + v) / 2.0
        g1 = np.asarray(G1.evaluate(q1, q2), float)
        g2 = np.asarray(G2.evaluate(q1, q2), float)
        r1 = (v - ls) - g1
        r2 = (us - s) - g2
        if max(np.max(np.abs(r1)), np.max(np.abs(r2))) < tol:
            break
        g11 = np.asarray(G11.evaluate(q1, q2), float)
        g12 = np.asarray(G12.evaluate(q1, q2), float)
        g22 = np.asarray(G22.evaluate(q1, q2), float)
        # d(r1,r2)/d(s,v)
        a11 = -g11 / 2.0
        a12 = 1.0 - g12 / 2.0
        a21 = -1.0 - g12 / 2.0
        a22 = -g22 / 2.0
        det = a11 * a22 - a12 * a21
        ds = (a22 * r1 - a12 * r2) / det
        dv = (-a21 * r1 + a11 * r2) / det
        s = s - ds
        v = v - dv
    res = max(np.max(np.abs(r1)), np.max(np.abs(r2)))
    if res > 1e-8:
        raise RuntimeError(f"graph solve stalled at residual {res:.2e}")
    return s, v


def _cum_from(arr, dx, center, axis=None):
    """Cumulative integral along an axis, zero at the center index."""
    if axis is None:
        vals = cumulative_simpson(arr, dx=dx, initial=0.0)
        return vals - vals[center]
    vals = cumulative_simpson(arr, dx=dx, axis=axis, initial=0.0)
    if axis == 0:
        return vals - vals[center, :][None, :]
    return vals - vals[:, center][:, None]
