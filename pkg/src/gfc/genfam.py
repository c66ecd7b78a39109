"""Generating families over a one-dimensional base and their exact curves.

A generating family F(q; xi_1..xi_n) determines the locus where the fiber
gradient vanishes; each locus point is sent to (q, p) = (q, dF/dq) with
potential value f = F.  This module traces that curve numerically, checks
df = p dq along it, and compares sampled curves up to tolerances.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .expr import ExprError, SmoothFunction


class TransversalityError(RuntimeError):
    """The critical locus fails to be a clean curve at some point."""


class TraceError(RuntimeError):
    pass


@dataclass
class TraceConfig:
    base_grid: int = 4001          # samples for fiberless families
    seed_base: int | None = None   # seeding grid along the base (auto)
    seed_fiber: int | None = None  # seeding grid per fiber direction (auto)
    step: float = 4e-3             # continuation arclength step
    min_step: float = 1e-7
    max_step: float = 4e-3
    refine: int = 4                # subdivision factor after tracing
    newton_tol: float = 1e-13
    residual_tol: float = 1e-9
    dedupe: float = 5e-2           # thinning distance for the seed cloud
    visit_tol: float = 3e-3        # pool points this close to a branch are used up
                                   # (must exceed half the raw sample spacing)
    max_steps: int = 40000
    loop_min_steps: int = 20
    seed_points: np.ndarray | None = None  # extra seeds (rows of (q, xi...))


@dataclass
class Branch:
    qs: np.ndarray
    ps: np.ndarray
    fs: np.ndarray
    idxs: np.ndarray               # fiber Morse index per sample, -1 degenerate
    fibers: np.ndarray             # shape (N, n)
    closed: bool = False

    def __len__(self):
        return len(self.qs)

    def points(self):
        return np.column_stack([self.qs, self.ps])


@dataclass
class SampledCurve:
    base_name: str
    fiber_names: tuple
    branches: list

    @property
    def is_empty(self):
        return all(len(b) == 0 for b in self.branches)

    def num_points(self):
        return sum(len(b) for b in self.branches)

    def all_points(self):
        pts = [b.points() for b in self.branches if len(b)]
        if not pts:
            return np.zeros((0, 2))
        return np.vstack(pts)

    def to_csv(self):
        out = io.StringIO()
        cols = ["branch", "q", "p", "f", "index"] + list(self.fiber_names)
        out.write(",".join(cols) + "\n")
        for bi, b in enumerate(self.branches):
            for i in range(len(b)):
                row = [str(bi), _g17(b.qs[i]), _g17(b.ps[i]), _g17(b.fs[i]),
                       str(int(b.idxs[i]))]
                for j in range(b.fibers.shape[1]):
                    row.append(_g17(b.fibers[i, j]))
                out.write(",".join(row) + "\n")
        return out.getvalue()

    def _masked(self, masks):
        branches = []
        for b, keep in zip(self.branches, masks):
            if not np.any(keep):
                continue
            for i0, i1 in _mask_runs(keep):
                branches.append(Branch(b.qs[i0:i1], b.ps[i0:i1], b.fs[i0:i1],
                                       b.idxs[i0:i1], b.fibers[i0:i1],
                                       closed=False))
        return SampledCurve(self.base_name, self.fiber_names, branches)

    def restricted(self, lo, hi):
        """Samples with base coordinate in [lo, hi], split into contiguous runs."""
        return self._masked([(b.qs >= lo) & (b.qs <= hi)
                             for b in self.branches])

    def restricted_box(self, qlo, qhi, plo, phi):
        """Samples inside a (q, p) rectangle, split into contiguous runs."""
        return self._masked([(b.qs >= qlo) & (b.qs <= qhi)
                             & (b.ps >= plo) & (b.ps <= phi)
                             for b in self.branches])


def _mask_runs(mask):
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        return []
    splits = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate([[0], splits + 1])
    ends = np.concatenate([splits, [len(idx) - 1]])
    return [(int(idx[s]), int(idx[e]) + 1) for s, e in zip(starts, ends)]


def _g17(x):
    return format(float(x), ".17g")


class GeneratingFamily:
    """F(base; fibers) on a rectangle of base interval times fiber box."""

    def __init__(self, base, base_domain, fiber_vars, fiber_box, F,
                 label=None):
        self.base = base
        self.base_domain = (float(base_domain[0]), float(base_domain[1]))
        if not self.base_domain[0] < self.base_domain[1]:
            raise ExprError("base domain must be a nonempty interval")
        self.fiber_vars = tuple(fiber_vars)
        self.fiber_box = tuple((float(lo), float(hi)) for lo, hi in fiber_box)
        if len(self.fiber_box) != len(self.fiber_vars):
            raise ExprError("need one fiber interval per fiber variable")
        for lo, hi in self.fiber_box:
            if not lo < hi:
                raise ExprError("fiber box intervals must be nonempty")
        order = (base,) + self.fiber_vars
        extra = set(F.variables) - set(order)
        if extra:
            raise ExprError(f"family mentions unknown variables {sorted(extra)}")
        self.F = F.with_variables(order)
        self.label = label

    @property
    def n_fiber(self):
        return len(self.fiber_vars)

    def __repr__(self):
        return (f"GeneratingFamily(base={self.base!r}, "
                f"fibers={self.fiber_vars!r}, label={self.label!r})")

    # --- batched evaluation helpers; Xi has shape (N, n_fiber)

    def _args(self, qs, Xi):
        qs = np.asarray(qs, dtype=float)
        cols = [Xi[:, i] for i in range(self.n_fiber)]
        return [qs] + cols

    def value(self, qs, Xi):
        out = self.F.evaluate(*self._args(qs, Xi))
        return np.broadcast_to(np.asarray(out, dtype=float),
                               np.shape(qs)).astype(float)

    def momentum(self, qs, Xi):
        d = self.F.differentiate(self.base)
        out = d.evaluate(*self._args(qs, Xi))
        return np.broadcast_to(np.asarray(out, dtype=float),
                               np.shape(qs)).astype(float)

    def fiber_grad(self, qs, Xi):
        args = self._args(qs, Xi)
        shape = np.shape(args[0])
        cols = [np.broadcast_to(
            np.asarray(self.F.differentiate(v).evaluate(*args), dtype=float),
            shape) for v in self.fiber_vars]
        return np.stack(cols, axis=-1)

    def fiber_hessian(self, qs, Xi):
        args = self._args(qs, Xi)
        n = self.n_fiber
        N = len(np.atleast_1d(args[0]))
        H = np.zeros((N, n, n))
        for i, vi in enumerate(self.fiber_vars):
            di = self.F.differentiate(vi)
            for j in range(i, n):
                vals = np.asarray(
                    di.differentiate(self.fiber_vars[j]).evaluate(*args),
                    dtype=float)
                H[:, i, j] = vals
                H[:, j, i] = vals
        return H

    def mixed_grad(self, qs, Xi):
        """d^2 F / d fiber d base, shape (N, n)."""
        args = self._args(qs, Xi)
        shape = np.shape(args[0])
        cols = [np.broadcast_to(np.asarray(
            self.F.differentiate(v).differentiate(self.base).evaluate(*args),
            dtype=float), shape) for v in self.fiber_vars]
        return np.stack(cols, axis=-1)

    def locus_jacobian(self, qs, Xi):
        """Jacobian of the fiber gradient in all variables, shape (N, n, 1+n)."""
        return np.concatenate(
            [self.mixed_grad(qs, Xi)[:, :, None], self.fiber_hessian(qs, Xi)],
            axis=2)

    def _bounds(self):
        lo = np.array([self.base_domain[0]] + [b[0] for b in self.fiber_box])
        hi = np.array([self.base_domain[1]] + [b[1] for b in self.fiber_box])
        return lo, hi

    def in_box(self, x, slack=0.0):
        lo, hi = self._bounds()
        return np.all((x >= lo - slack) & (x <= hi + slack), axis=-1)

    # --- tracing

    def critical_locus(self, config=None):
        cfg = config or TraceConfig()
        if self.n_fiber == 0:
            return self._trace_fiberless(cfg)
        return self._trace_with_fibers(cfg)

    def _trace_fiberless(self, cfg):
        qs = np.linspace(*self.base_domain, cfg.base_grid)
        Xi = np.zeros((len(qs), 0))
        ps = self.momentum(qs, Xi)
        fs = self.value(qs, Xi)
        idxs = np.zeros(len(qs), dtype=int)
        branch = Branch(qs, ps, fs, idxs, Xi)
        return SampledCurve(self.base, self.fiber_vars, [branch])

    def _seed_cloud(self, cfg):
        n = self.n_fiber
        nb = cfg.seed_base or max(21, 81 // max(1, n))
        nf = cfg.seed_fiber or {1: 41, 2: 17, 3: 9, 4: 7}.get(n, 5)
        axes = [np.linspace(*self.base_domain, nb)]
        for lo, hi in self.fiber_box:
            axes.append(np.linspace(lo, hi, nf))
        grids = np.meshgrid(*axes, indexing="ij")
        X = np.column_stack([g.ravel() for g in grids])
        if cfg.seed_points is not None and len(cfg.seed_points):
            X = np.vstack([np.atleast_2d(np.asarray(cfg.seed_points, float)), X])
        X = self._newton_batch(X, iters=60, tol=cfg.residual_tol)
        if X.shape[0] == 0:
            return X
        # coarse grid snap first, then a greedy pass on the survivors
        cell = cfg.dedupe / 2.0
        snapped = np.round(X / cell).astype(np.int64)
        _, first = np.unique(snapped, axis=0, return_index=True)
        X = X[np.sort(first)]
        order = np.lexsort(tuple(X[:, k] for k in range(X.shape[1] - 1, -1, -1)))
        X = X[order]
        kept = []
        for row in X:
            if kept and np.min(
                    np.linalg.norm(np.asarray(kept) - row, axis=1)) < cfg.dedupe:
                continue
            kept.append(row)
        return np.asarray(kept)

    def _newton_batch(self, X, iters, tol):
        """Gauss-Newton projection of points onto the locus; drops strays."""
        lo, hi = self._bounds()
        span = float(np.max(hi - lo))
        X = np.array(X, dtype=float)
        done = np.zeros((0, X.shape[1]))
        for _ in range(iters):
            if X.shape[0] == 0:
                break
            R = self.fiber_grad(X[:, 0], X[:, 1:])
            finite = np.all(np.isfinite(R), axis=1)
            X, R = X[finite], R[finite]
            if X.shape[0] == 0:
                break
            conv = np.max(np.abs(R), axis=1) < tol
            if np.any(conv):
                done = np.vstack([done, X[conv]])
                X, R = X[~conv], R[~conv]
            if X.shape[0] == 0:
                break
            J = self.locus_jacobian(X[:, 0], X[:, 1:])
            okJ = np.all(np.isfinite(J.reshape(len(X), -1)), axis=1)
            X, R, J = X[okJ], R[okJ], J[okJ]
            if X.shape[0] == 0:
                break
            step = np.einsum("nij,nj->ni", np.linalg.pinv(J), R)
            norm = np.linalg.norm(step, axis=1)
            big = norm > 0.5 * span
            if np.any(big):
                step[big] *= (0.5 * span / norm[big])[:, None]
            # clamp into the box so grid-backed families are never evaluated
            # outside their data; stalled boundary points fail to converge
            # and drop out on their own
            X = np.clip(X - step, lo, hi)
        if done.shape[0] == 0:
            return done
        keep = self.in_box(done, slack=1e-9)
        return done[keep]

    def _tangent(self, x):
        J = self.locus_jacobian(np.array([x[0]]), x[None, 1:])[0]
        u, s, vt = np.linalg.svd(J)
        scale = max(1.0, float(s[0]) if len(s) else 1.0)
        if len(s) == self.n_fiber and s[-1] < 1e-10 * scale:
            raise TransversalityError(
                f"critical locus is not a clean curve near {tuple(x)}")
        return vt[-1], J

    def _corrector(self, x_pred, J, row, rhs, tol=1e-13, iters=14):
        """Chord Newton for [fiber grad; row . y = rhs] started at x_pred."""
        n = self.n_fiber
        A = np.zeros((n + 1, n + 1))
        A[:n, :] = J
        A[n, :] = row
        try:
            Ainv = np.linalg.inv(A)
        except np.linalg.LinAlgError:
            return None
        y = np.array(x_pred, dtype=float)
        R = np.zeros(n + 1)
        for _ in range(iters):
            R[:n] = self.fiber_grad(np.array([y[0]]), y[None, 1:])[0]
            R[n] = row @ y - rhs
            if not np.all(np.isfinite(R)):
                return None
            if np.max(np.abs(R)) < tol:
                return y
            y = y - Ainv @ R
        if np.max(np.abs(R)) < 1e-9:
            return y
        return None

    def _trace_branch(self, start, cfg):
        start = np.array(start, dtype=float)
        halves = []
        for direction in (1.0, -1.0):
            x = start.copy()
            t_prev = None
            h = cfg.step
            seq = []
            closed = False
            for _ in range(cfg.max_steps):
                try:
                    t, J = self._tangent(x)
                except TransversalityError:
                    if t_prev is None:
                        raise
                    break
                if t_prev is None:
                    sgn = 0.0
                    for comp in t:
                        if abs(comp) > 1e-12:
                            sgn = 1.0 if comp > 0 else -1.0
                            break
                    t = t * (sgn or 1.0) * direction
                elif t @ t_prev < 0:
                    t = -t
                y = None
                while h >= cfg.min_step:
                    x_pred = x + h * t
                    y = self._corrector(x_pred, J, t, t @ x_pred,
                                        tol=cfg.newton_tol)
                    if y is not None and np.linalg.norm(y - x) > 0.1 * h:
                        break
                    y = None
                    h *= 0.5
                if y is None:
                    break
                if not self.in_box(y):
                    y_edge = self._land_on_boundary(x, y, J, t, cfg)
                    if y_edge is not None:
                        seq.append(y_edge)
                    break
                seq.append(y)
                x = y
                t_prev = t
                h = min(h * 1.3, cfg.max_step)
                if (direction == 1.0 and len(seq) > cfg.loop_min_steps
                        and np.linalg.norm(y - start) < 1.6 * h):
                    closed = True
                    break
            if closed:
                return np.vstack([start[None, :], np.asarray(seq)]), True
            halves.append(seq)
        back = halves[1][::-1] if len(halves) > 1 else []
        chain = list(back) + [start] + list(halves[0])
        return np.asarray(chain), False

    def _land_on_boundary(self, x_in, x_out, J, t, cfg):
        lo, hi = self._bounds()
        best = None
        for j in range(len(x_in)):
            for bound in (lo[j], hi[j]):
                d0 = x_in[j] - bound
                d1 = x_out[j] - bound
                if d0 * d1 > 0 or (d0 == 0.0 and d1 == 0.0):
                    continue
                denom = d0 - d1
                if denom == 0.0:
                    continue
                s = d0 / denom
                if 0.0 <= s <= 1.0 and (best is None or s < best[0]):
                    best = (s, j, bound)
        if best is None:
            return None
        s, j, bound = best
        x_mid = x_in + s * (x_out - x_in)
        row = np.zeros(len(x_in))
        row[j] = 1.0
        y = self._corrector(x_mid, J, row, bound, tol=cfg.newton_tol)
        if y is None or not self.in_box(y, slack=1e-9):
            return None
        y[j] = bound
        return y

    def _refine_branch(self, pts, closed, cfg):
        if cfg.refine <= 1 or len(pts) < 2:
            return pts
        a = pts if closed else pts[:-1]
        b = np.vstack([pts[1:], pts[:1]]) if closed else pts[1:]
        m = len(a)
        fracs = np.arange(1, cfg.refine) / cfg.refine
        seeds = np.concatenate([a + f * (b - a) for f in fracs], axis=0)
        refined = seeds
        for _ in range(8):
            R = self.fiber_grad(refined[:, 0], refined[:, 1:])
            if not np.all(np.isfinite(R)) or np.max(np.abs(R)) < cfg.residual_tol:
                break
            J = self.locus_jacobian(refined[:, 0], refined[:, 1:])
            refined = refined - np.einsum("nij,nj->ni", np.linalg.pinv(J), R)
        out = []
        for i in range(m):
            out.append(pts[i])
            for k in range(len(fracs)):
                out.append(refined[k * m + i])
        if not closed:
            out.append(pts[-1])
        return np.asarray(out)

    def _trace_with_fibers(self, cfg):
        cloud = self._seed_cloud(cfg)
        if cloud.shape[0] == 0:
            return SampledCurve(self.base, self.fiber_vars, [])
        pool = list(cloud)
        raw_branches = []
        guard = 0
        while pool and guard < 200:
            guard += 1
            start = pool.pop(0)
            pts, closed = self._trace_branch(start, cfg)
            if len(pts) < 2:
                continue
            raw_branches.append((pts, closed))
            if pool:
                tree = cKDTree(pts)
                rest = np.asarray(pool)
                d, _ = tree.query(rest)
                pool = [row for row, di in zip(rest, np.atleast_1d(d))
                        if di > cfg.visit_tol]
        branches = []
        for pts, closed in raw_branches:
            pts = self._refine_branch(pts, closed, cfg)
            pts = _canonical_orientation(pts, closed)
            branches.append(self._finish_branch(pts, closed))
        branches.sort(key=lambda b: (round(float(b.qs[0]), 9),
                                     round(float(b.ps[0]), 9),
                                     round(float(b.qs[-1]), 9),
                                     round(float(b.ps[-1]), 9)))
        return SampledCurve(self.base, self.fiber_vars, branches)

    def _finish_branch(self, pts, closed):
        qs = pts[:, 0]
        Xi = pts[:, 1:]
        ps = self.momentum(qs, Xi)
        fs = self.value(qs, Xi)
        H = self.fiber_hessian(qs, Xi)
        idxs = _morse_indices(H)
        return Branch(qs, ps, fs, idxs, Xi, closed=closed)

    def locus_residual(self, curve):
        """Largest fiber-gradient entry over all curve samples."""
        worst = 0.0
        for b in curve.branches:
            if len(b) == 0 or b.fibers.shape[1] != self.n_fiber:
                continue
            R = self.fiber_grad(b.qs, b.fibers)
            if R.size:
                worst = max(worst, float(np.max(np.abs(R))))
        return worst


def _canonical_orientation(pts, closed):
    if len(pts) < 2:
        return pts
    if not closed:
        a = tuple(np.round(pts[0], 9))
        b = tuple(np.round(pts[-1], 9))
        return pts if a <= b else pts[::-1]
    keys = [tuple(np.round(row, 9)) for row in pts]
    i0 = min(range(len(keys)), key=lambda i: keys[i])
    pts = np.roll(pts, -i0, axis=0)
    keys = keys[i0:] + keys[:i0]
    if len(pts) > 2 and keys[-1] < keys[1]:
        pts = np.vstack([pts[:1], pts[1:][::-1]])
    return pts


def _morse_indices(H):
    N, n, _ = H.shape
    if n == 0:
        return np.zeros(N, dtype=int)
    eigs = np.linalg.eigvalsh(H)
    scale = np.maximum(1.0, np.max(np.abs(eigs), axis=1))
    idx = np.sum(eigs < 0.0, axis=1)
    degenerate = np.min(np.abs(eigs), axis=1) < 1e-8 * scale
    idx = np.where(degenerate, -1, idx)
    return idx.astype(int)


# ---------------------------------------------------------------------------
# exactness


def exactness_residual(curve):
    """Largest deviation of f from the running integral of p dq."""
    worst = 0.0
    for b in curve.branches:
        if len(b) < 2:
            continue
        qs, ps, fs = b.qs, b.ps, b.fs
        if b.closed:
            qs = np.append(qs, qs[:1])
            ps = np.append(ps, ps[:1])
            fs = np.append(fs, fs[:1])
        integ = np.concatenate(
            [[0.0], np.cumsum(0.5 * (ps[1:] + ps[:-1]) * np.diff(qs))])
        worst = max(worst, float(np.max(np.abs((fs - fs[0]) - integ))))
    return worst


# ---------------------------------------------------------------------------
# curve comparison


@dataclass
class MatchReport:
    matched: bool
    hausdorff: float
    potential_ok: bool
    potential_offsets: list
    potential_dev: float
    index_ok: bool
    index_offset: int | None
    notes: str = ""

    def __bool__(self):
        return bool(self.matched and self.potential_ok and self.index_ok)


def _segment_data(curve):
    """All polyline segments of a curve as (starts, ends, f at each)."""
    A, B, FA, FB = [], [], [], []
    for b in curve.branches:
        if len(b) == 0:
            continue
        P = b.points()
        if len(b) == 1:
            A.append(P)
            B.append(P)
            FA.append(b.fs)
            FB.append(b.fs)
            continue
        A.append(P[:-1])
        B.append(P[1:])
        FA.append(b.fs[:-1])
        FB.append(b.fs[1:])
        if b.closed:
            A.append(P[-1:])
            B.append(P[:1])
            FA.append(b.fs[-1:])
            FB.append(b.fs[:1])
    if not A:
        return None
    return (np.vstack(A), np.vstack(B),
            np.concatenate(FA), np.concatenate(FB))


def _points_to_segments(P, segdata, kneighbors=12):
    """Distance from each point to the nearest segment, with interpolated f."""
    A, B, FA, FB = segdata
    mid = 0.5 * (A + B)
    tree = cKDTree(np.vstack([A, mid]))
    nseg = len(A)
    k = min(kneighbors, 2 * nseg)
    _, nbr = tree.query(P, k=k)
    nbr = np.asarray(nbr).reshape(len(P), -1)
    cand = np.where(nbr >= nseg, nbr - nseg, nbr)
    dists = np.full(len(P), np.inf)
    fvals = np.zeros(len(P))
    for col in range(cand.shape[1]):
        idx = cand[:, col]
        a = A[idx]
        b = B[idx]
        ab = b - a
        denom = np.einsum("ij,ij->i", ab, ab)
        tpar = np.einsum("ij,ij->i", P - a, ab) / np.where(denom == 0, 1.0, denom)
        tpar = np.clip(tpar, 0.0, 1.0)
        proj = a + tpar[:, None] * ab
        d = np.linalg.norm(P - proj, axis=1)
        better = d < dists
        dists = np.where(better, d, dists)
        f_here = FA[idx] + tpar * (FB[idx] - FA[idx])
        fvals = np.where(better, f_here, fvals)
    return dists, fvals


def _directed(curve_x, seg_y):
    """Max distance from samples of curve_x to segments seg_y, with potential
    offsets (median per branch) and their max deviation."""
    worst = 0.0
    offsets = []
    dev = 0.0
    for b in curve_x.branches:
        if len(b) == 0:
            continue
        d, f_interp = _points_to_segments(b.points(), seg_y)
        worst = max(worst, float(np.max(d)))
        off = b.fs - f_interp
        med = float(np.median(off))
        offsets.append(med)
        dev = max(dev, float(np.max(np.abs(off - med))))
    return worst, offsets, dev


def _index_offset(curve_a, curve_b):
    """Constant index shift between nondegenerate nearest samples, if any."""
    pb, ib = [], []
    for b in curve_b.branches:
        if len(b):
            pb.append(b.points())
            ib.append(b.idxs)
    if not pb:
        return True, None
    tree = cKDTree(np.vstack(pb))
    Ib = np.concatenate(ib)
    diffs = set()
    for b in curve_a.branches:
        if len(b) == 0:
            continue
        _, j = tree.query(b.points())
        ok = (b.idxs >= 0) & (Ib[j] >= 0)
        diffs.update((b.idxs[ok] - Ib[j][ok]).tolist())
    if not diffs:
        return True, None
    if len(diffs) == 1:
        return True, int(diffs.pop())
    return False, None


def _judge_potential(potential, ftol, offsets, dev):
    if potential == "ignore":
        return True
    if potential == "exact":
        return dev <= ftol and all(abs(o) <= ftol for o in offsets)
    return dev <= ftol


def curves_match(curve_a, curve_b, tol=1e-6, potential="offset", ftol=None,
                 index="offset"):
    """Compare two sampled exact curves as subsets of the (q, p) plane.

    ``potential``: "offset" accepts a constant shift per branch, "exact"
    requires the shift to vanish, "ignore" skips the check.  ``index``:
    "offset" requires a single constant shift over nondegenerate samples.
    """
    if ftol is None:
        ftol = tol
    if curve_a.is_empty and curve_b.is_empty:
        return MatchReport(True, 0.0, True, [], 0.0, True, 0,
                           notes="both curves empty")
    if curve_a.is_empty != curve_b.is_empty:
        return MatchReport(False, float("inf"), False, [], float("inf"),
                           False, None, notes="one curve empty")
    seg_a = _segment_data(curve_a)
    seg_b = _segment_data(curve_b)
    d_ab, offsets, dev = _directed(curve_a, seg_b)
    d_ba, _, _ = _directed(curve_b, seg_a)
    worst = max(d_ab, d_ba)
    matched = worst <= tol
    potential_ok = _judge_potential(potential, ftol, offsets, dev)
    index_ok = True
    index_off = None
    if index == "offset" and matched:
        index_ok, index_off = _index_offset(curve_a, curve_b)
    return MatchReport(matched, worst, potential_ok, offsets, dev,
                       index_ok, index_off)


def windowed_match(curve_a, curve_b, lo, hi, margin=2e-2, tol=1e-6,
                   potential="offset", ftol=None, index="offset"):
    """Compare two curves over the base window [lo, hi].

    Each direction measures trimmed samples against the other curve over the
    full window, so endpoint overhang at the window edges cannot register as
    disagreement.  Returns a MatchReport; when both curves have no samples in
    the interior window the comparison passes vacuously.
    """
    if ftol is None:
        ftol = tol
    a_in = curve_a.restricted(lo + margin, hi - margin)
    b_in = curve_b.restricted(lo + margin, hi - margin)
    a_out = curve_a.restricted(lo, hi)
    b_out = curve_b.restricted(lo, hi)
    return _trimmed_match(a_in, b_in, a_out, b_out, tol, potential, ftol,
                          index)


def box_match(curve_a, curve_b, box, margin=2e-2, tol=1e-6,
              potential="offset", ftol=None, index="offset"):
    """Compare two curves over a (q, p) rectangle ((qlo, qhi), (plo, phi)).

    Same trimming scheme as ``windowed_match`` but in both coordinates, so
    curves escaping the window vertically are clipped too.
    """
    if ftol is None:
        ftol = tol
    (qlo, qhi), (plo, phi) = box
    a_in = curve_a.restricted_box(qlo + margin, qhi - margin,
                                  plo + margin, phi - margin)
    b_in = curve_b.restricted_box(qlo + margin, qhi - margin,
                                  plo + margin, phi - margin)
    a_out = curve_a.restricted_box(qlo, qhi, plo, phi)
    b_out = curve_b.restricted_box(qlo, qhi, plo, phi)
    return _trimmed_match(a_in, b_in, a_out, b_out, tol, potential, ftol,
                          index)


def _trimmed_match(a_in, b_in, a_out, b_out, tol, potential, ftol, index):
    if a_in.is_empty and b_in.is_empty:
        return MatchReport(True, 0.0, True, [], 0.0, True, 0,
                           notes="vacuous: no samples in window")
    if a_in.is_empty != b_in.is_empty:
        return MatchReport(False, float("inf"), False, [], float("inf"),
                           False, None, notes="one curve empty in window")
    seg_a = _segment_data(a_out)
    seg_b = _segment_data(b_out)
    d_ab, offsets, dev = _directed(a_in, seg_b)
    d_ba, _, _ = _directed(b_in, seg_a)
    worst = max(d_ab, d_ba)
    matched = worst <= tol
    potential_ok = _judge_potential(potential, ftol, offsets, dev)
    index_ok = True
    index_off = None
    if index == "offset" and matched:
        index_ok, index_off = _index_offset(a_in, b_out)
    return MatchReport(matched, worst, potential_ok, offsets, dev,
                       index_ok, index_off)


# ---------------------------------------------------------------------------
# plane regions


class Region:
    """A closed subset of the (q, p) plane with a vectorized membership test."""

    def __init__(self, name, fn):
        self.name = name
        self._fn = fn

    def contains(self, qs, ps, tol=1e-9):
        qs = np.asarray(qs, dtype=float)
        ps = np.asarray(ps, dtype=float)
        return self._fn(qs, ps, tol)

    def contains_curve(self, curve, tol=1e-9):
        for b in curve.branches:
            if len(b) == 0:
                continue
            ok = self.contains(b.qs, b.ps, tol)
            if not np.all(ok):
                i = int(np.argmin(ok))
                return False, (float(b.qs[i]), float(b.ps[i]))
        return True, None

    def __repr__(self):
        return f"Region({self.name!r})"

    @staticmethod
    def plane():
        return Region("plane", lambda q, p, t: np.ones(np.shape(q), dtype=bool))

    @staticmethod
    def band(plo, phi):
        return Region(f"band[{plo},{phi}]",
                      lambda q, p, t: (p >= plo - t) & (p <= phi + t))

    @staticmethod
    def halfplane_p_above(c):
        return Region(f"p>={c}", lambda q, p, t: p >= c - t)

    @staticmethod
    def bounded_shape(qthr=1.0):
        """p >= -1 everywhere, and p <= 1 wherever |q| >= qthr."""

        def fn(q, p, t):
            return (p >= -1.0 - t) & ((np.abs(q) < qthr - t) | (p <= 1.0 + t))

        return Region(f"bounded(qthr={qthr})", fn)

    @staticmethod
    def custom(name, fn):
        return Region(name, lambda q, p, t: fn(q, p))
