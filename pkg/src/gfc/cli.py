"""Command line front end for families, graphs, isotopies, and curves.

File formats, all plain text and written deterministically:

  .gf    one ``[family]`` section with keys name, base, domain, fiber,
         fiber_box, F.  Grid-backed functions reference ``[grid NAME]``
         sections holding spline samples at full float precision, so a
         written family reads back bit for bit.
  .ag    graph lines ``vertex`` / ``edge`` / ``cyclic`` / ``leg``.
  .gfam  ``[global]`` with a graph path, then ``[families]`` mapping each
         vertex to a family file (paths relative to the .gfam file).
  .iso   ordered ``[step *]`` sections with keys chart, H, t, support.

Subcommands: trace, op, verify, graph, lift, plot.  Failures print a line
starting with ``error:`` and exit nonzero.  The environment variable
GFC_TOL overrides default verification and lift tolerances.
"""

import argparse
import configparser
import csv
import io
import os
import sys

import numpy as np

from .arboreal import (GlobalFamily, build_atlas, check_global_consistency,
                       parse_graph, validate_graph)
from .expr import (ExprError, GridData1, GridData2, SerializeError,
                   parse_function)
from .genfam import (GeneratingFamily, TraceConfig, box_match, curves_match)
from .lift import AdmissibleIsotopy, IsotopyStep, lift_isotopy
from .operators import (chekanov, dagger, glue, hyperbolic_stabilizer,
                        localize, restrict_to_leg, rotate, stabilize)
from .symplecto import SympGenFam, make_identity_genfam, quarter_turn


class CliError(Exception):
    """A user-facing failure: message printed with the error: prefix."""


# ---------------------------------------------------------------------------
# family files


def _config():
    cp = configparser.ConfigParser(delimiters=("=",), interpolation=None,
                                   comment_prefixes=("#",))
    cp.optionxform = str
    return cp


def _read_config(path):
    cp = _config()
    try:
        with open(path) as fh:
            cp.read_file(fh, source=path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}")
    except configparser.Error as exc:
        raise CliError(f"{path}: {exc}")
    return cp


def _floats(text, what, count=None):
    try:
        vals = [float(x) for x in text.split()]
    except ValueError:
        raise CliError(f"{what}: expected numbers, got {text!r}")
    if count is not None and len(vals) != count:
        raise CliError(f"{what}: expected {count} numbers, got {len(vals)}")
    return vals


def _grid_from_section(sec, where):
    kind = sec.get("kind", "").strip()
    try:
        if kind == "1":
            xs = _floats(sec.get("xs", ""), f"{where} xs")
            ys = _floats(sec.get("ys", ""), f"{where} ys")
            return GridData1(xs, ys, int(sec.get("k", "3")))
        if kind == "2":
            xs = _floats(sec.get("xs", ""), f"{where} xs")
            ys = _floats(sec.get("ys", ""), f"{where} ys")
            zz = _floats(sec.get("zz", ""), f"{where} zz",
                         len(xs) * len(ys))
            return GridData2(xs, ys,
                             np.array(zz).reshape(len(xs), len(ys)),
                             int(sec.get("kx", "3")), int(sec.get("ky", "3")))
    except ExprError as exc:
        raise CliError(f"{where}: {exc}")
    raise CliError(f"{where}: kind must be 1 or 2")


def read_family(path):
    cp = _read_config(path)
    if "family" not in cp:
        raise CliError(f"{path}: missing [family] section")
    grids = {}
    for sec in cp.sections():
        if sec.startswith("grid "):
            name = sec.split(None, 1)[1]
            grids[name] = _grid_from_section(cp[sec], f"{path} [{sec}]")
    g = cp["family"]
    for key in ("base", "domain", "F"):
        if key not in g:
            raise CliError(f"{path}: [family] needs key '{key}'")
    base = g["base"].strip()
    domain = _floats(g["domain"], f"{path}: domain", 2)
    fibers = tuple(g.get("fiber", "").split())
    nums = _floats(g.get("fiber_box", ""), f"{path}: fiber_box")
    if len(nums) != 2 * len(fibers):
        raise CliError(f"{path}: fiber_box needs two numbers per fiber")
    box = tuple((nums[2 * i], nums[2 * i + 1]) for i in range(len(fibers)))
    try:
        F = parse_function(g["F"].strip(), (base,) + fibers,
                           grids=grids or None)
        label = g.get("name", "").strip() or None
        return GeneratingFamily(base, domain, fibers, box, F, label=label)
    except ExprError as exc:
        raise CliError(f"{path}: {exc}")


def _nums(arr):
    return " ".join(repr(float(x)) for x in np.asarray(arr, float).ravel())


def family_text(fam):
    env = {}
    try:
        body = fam.F.serialize(env)
    except SerializeError as exc:
        raise CliError(f"family cannot be written as text: {exc}")
    lines = ["[family]"]
    if fam.label:
        lines.append(f"name = {fam.label}")
    lines.append(f"base = {fam.base}")
    lines.append("domain = " + _nums(fam.base_domain))
    lines.append("fiber = " + " ".join(fam.fiber_vars))
    lines.append("fiber_box = " + " ".join(_nums(b) for b in fam.fiber_box))
    lines.append(f"F = {body}")
    for name, data in env.items():
        lines.append("")
        lines.append(f"[grid {name}]")
        if isinstance(data, GridData1):
            lines.append("kind = 1")
            lines.append(f"k = {data.k}")
            lines.append("xs = " + _nums(data.xs))
            lines.append("ys = " + _nums(data.ys))
        else:
            lines.append("kind = 2")
            lines.append(f"kx = {data.kx}")
            lines.append(f"ky = {data.ky}")
            lines.append("xs = " + _nums(data.xs))
            lines.append("ys = " + _nums(data.ys))
            lines.append("zz =")
            for row in data.zz:
                lines.append("    " + _nums(row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# graph, global family, isotopy files


def read_graph(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}")
    try:
        return parse_graph(text)
    except ValueError as exc:
        raise CliError(f"{path}: {exc}")


def read_global(path):
    """Global family and the path of its graph file."""
    cp = _read_config(path)
    for sec in ("global", "families"):
        if sec not in cp:
            raise CliError(f"{path}: missing [{sec}] section")
    if "graph" not in cp["global"]:
        raise CliError(f"{path}: [global] needs key 'graph'")
    here = os.path.dirname(os.path.abspath(path))
    graph_path = os.path.normpath(
        os.path.join(here, cp["global"]["graph"].strip()))
    graph = read_graph(graph_path)
    fams = {}
    for v, rel in cp["families"].items():
        if v not in graph.vertices:
            raise CliError(f"{path}: family for unknown vertex {v!r}")
        fams[v] = read_family(os.path.normpath(os.path.join(here,
                                                            rel.strip())))
    missing = sorted(set(graph.vertices) - set(fams))
    if missing:
        raise CliError(f"{path}: no family for vertices {', '.join(missing)}")
    label = cp["global"].get("label", "").strip()
    return GlobalFamily(graph, fams, label=label), graph_path


def write_global(gf, path, graph_path):
    outdir = os.path.dirname(os.path.abspath(path))
    stem = os.path.splitext(os.path.basename(path))[0]
    lines = ["[global]",
             f"graph = {os.path.relpath(graph_path, outdir)}"]
    if gf.label:
        lines.append(f"label = {gf.label}")
    lines += ["", "[families]"]
    for v in gf.graph.vertices:
        name = f"{stem}.{v}.gf"
        with open(os.path.join(outdir, name), "w", newline="") as fh:
            fh.write(family_text(gf.families[v]))
        lines.append(f"{v} = {name}")
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_isotopy(path):
    cp = _read_config(path)
    steps = []
    for sec in cp.sections():
        s = cp[sec]
        for key in ("chart", "H", "t", "support"):
            if key not in s:
                raise CliError(f"{path} [{sec}]: needs key '{key}'")
        t0, t1 = _floats(s["t"], f"{path} [{sec}]: t", 2)
        q0, q1, p0, p1 = _floats(s["support"], f"{path} [{sec}]: support", 4)
        text = s["H"].strip()
        try:
            try:
                H = parse_function(text, ("q", "p"))
            except ExprError:
                H = parse_function(text, ("t", "q", "p"))
        except ExprError as exc:
            raise CliError(f"{path} [{sec}]: {exc}")
        steps.append(IsotopyStep(s["chart"].strip(), H, (t0, t1),
                                 ((q0, q1), (p0, p1))))
    return AdmissibleIsotopy(steps, label=os.path.basename(path))


# ---------------------------------------------------------------------------
# small shared helpers


def _emit(out, text):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _tol(args, default):
    if getattr(args, "tol", None) is not None:
        return args.tol
    env = os.environ.get("GFC_TOL")
    if env:
        try:
            return float(env)
        except ValueError:
            raise CliError(f"GFC_TOL is not a number: {env!r}")
    return default


def _trace_config(args):
    if getattr(args, "grid", None) is None:
        return None
    return TraceConfig(base_grid=args.grid)


def _symp_arg(expr):
    if expr is None or expr.strip() == "identity":
        return make_identity_genfam()
    return SympGenFam(parse_function(expr, ("a", "b")), ("a", "b"))


def _verdict(name, ok, detail):
    print(f"{name}: {'pass' if ok else 'fail'} ({detail})")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# commands


def _cmd_trace(args):
    fam = read_family(args.family)
    curve = fam.critical_locus(_trace_config(args))
    _emit(args.out, curve.to_csv())
    return 0


def _cmd_op(args):
    fam = read_family(args.family)
    if args.op == "rotate":
        out = rotate(fam, args.direction)
    elif args.op == "dagger":
        out = dagger(fam, args.direction)
    elif args.op == "restrict":
        out = restrict_to_leg(fam)
    elif args.op == "stabilize":
        taken = {fam.base, *fam.fiber_vars}
        names = []
        for stem in ("v", "t"):
            name = stem
            k = 0
            while name in taken:
                k += 1
                name = f"{stem}{k}"
            taken.add(name)
            names.append(name)
        out = stabilize(fam, hyperbolic_stabilizer(tuple(names)))
    elif args.op == "chekanov":
        out = chekanov(fam, _symp_arg(args.symp))
    elif args.op == "localize":
        fvars = (fam.base,) + fam.fiber_vars
        out = localize(fam, parse_function(args.f, fvars),
                       parse_function(args.eps, fvars),
                       parse_function(args.phi, (fam.base,)),
                       _symp_arg(args.symp))
    elif args.op == "glue":
        other = read_family(args.other)
        out = glue(fam, other, tuple(args.window), case=args.case)
    else:
        raise CliError(f"unknown operator {args.op!r}")
    _emit(args.out, family_text(out))
    return 0


def _cmd_verify(args):
    if args.suite == "turn":
        fam = read_family(args.family)
        tol = _tol(args, 1e-6)
        base = fam.critical_locus(_trace_config(args))
        turned = rotate(fam, "ccw").critical_locus(_trace_config(args))
        rep = curves_match(turned, quarter_turn(1).apply_to_curve(base),
                           tol=tol, potential="ignore", index="ignore")
        return _verdict("turn", bool(rep), f"distance {rep.hausdorff:g}")
    if args.suite == "chekanov":
        fam = read_family(args.family)
        tol = _tol(args, 1e-6)
        base = fam.critical_locus(_trace_config(args))
        out = chekanov(fam, _symp_arg(args.symp))
        rep = curves_match(out.critical_locus(_trace_config(args)), base,
                           tol=tol, potential="exact", ftol=tol)
        ok = bool(rep) and rep.index_offset == 1
        return _verdict("chekanov", ok,
                        f"distance {rep.hausdorff:g}, "
                        f"index offset {rep.index_offset}")
    if args.suite == "localization":
        fam = read_family(args.family)
        tol = _tol(args, 1e-6)
        fvars = (fam.base,) + fam.fiber_vars
        f = parse_function(args.f, fvars)
        eps = parse_function(args.eps, fvars)
        phi = parse_function(args.phi, (fam.base,))
        sg = _symp_arg(args.symp)
        cfg = _trace_config(args)
        hat = localize(fam, f, eps, phi, sg).critical_locus(cfg)
        full = chekanov(fam, sg).critical_locus(cfg)
        rep = curves_match(hat, full, tol=tol, potential="exact", ftol=tol)
        ok = bool(rep) and rep.index_offset == 0
        return _verdict("localization", ok, f"distance {rep.hausdorff:g}")
    if args.suite == "stable-inverse":
        fam = read_family(args.family)
        tol = _tol(args, 1e-6)
        cfg = _trace_config(args)
        base = fam.critical_locus(cfg)
        dd = dagger(dagger(fam, 1), -1).critical_locus(cfg)
        lo, hi = fam.base_domain
        h = 0.6 * max(abs(lo), abs(hi))
        # the round trip reproduces the curve inside the bounded region; the
        # potentials agree exactly and the index gains one hyperbolic block
        rep = box_match(dd, base, ((-h, h), (-h, h)), tol=tol,
                        potential="exact", ftol=tol)
        ok = bool(rep) and rep.index_offset in (None, 1)
        return _verdict("stable-inverse", ok,
                        f"distance {rep.hausdorff:g}, potential offset 0, "
                        f"index offset {rep.index_offset}")
    if args.suite == "consistency":
        gf, _ = read_global(args.gfam)
        tol = _tol(args, 1e-6)
        report = check_global_consistency(gf, build_atlas(gf.graph), tol=tol,
                                          config=_trace_config(args))
        print(report.summary())
        return _verdict("consistency", report.ok, f"tol {tol:g}")
    raise CliError(f"unknown suite {args.suite!r}")


def _cmd_graph(args):
    g = read_graph(args.graph)
    if args.action == "validate":
        violations = validate_graph(g)
        for v in violations:
            print(f"{v.code}: {v.detail}")
        if violations:
            return 1
        print("ok")
        return 0
    atlas = build_atlas(g)
    for v, chart in atlas.charts.items():
        lo, hi = chart.base_interval
        print(f"vertex {v}: valence {chart.valence}, base [{lo:g}, {hi:g}]")
        for e, view in chart.views.items():
            wlo, whi = view.window
            print(f"  edge {e}: kind {view.kind}, side {view.side:+d}, "
                  f"end {view.end:+d}, window [{wlo:g}, {whi:g}]")
    for e, kind in atlas.overlaps.items():
        print(f"edge {e}: overlap {kind}")
    return 0


def _cmd_lift(args):
    gf, graph_path = read_global(args.gfam)
    iso = read_isotopy(args.iso)
    threshold = _tol(args, 1e-4)
    out, rep = lift_isotopy(gf, iso, threshold=threshold,
                            atlas=build_atlas(gf.graph),
                            config=_trace_config(args))
    write_global(out, args.out, graph_path)
    text = _lift_report_text(args, rep, threshold)
    if args.report:
        with open(args.report, "w", newline="") as fh:
            fh.write(text)
    print(f"lift: {len(rep.steps)} steps, accumulated transport error "
          f"{rep.accumulated:g}, wrote {args.out}")
    return 0


def _lift_report_text(args, rep, threshold):
    lines = [f"lift of {os.path.basename(args.iso)} over "
             f"{os.path.basename(args.gfam)}",
             f"steps: {len(rep.steps)}, accumulated transport error "
             f"{rep.accumulated:g} (budget {threshold:g} per step)"]
    for i, step in enumerate(rep.steps, 1):
        lines.append(f"step {i}: chart {step.chart}, c1 defect {step.c1:g}")
        for u in step.updates:
            tail = f", transport error {u.error:g}" if u.error else ""
            lines.append(f"  {u.vertex}: {u.mechanism}, rank "
                         f"{u.rank_before} -> {u.rank_after}{tail}")
        lines.append("  consistency:")
        for line in step.consistency.summary().splitlines():
            lines.append(f"    {line}")
    return "\n".join(lines) + "\n"


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd",
            "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _cmd_plot(args):
    try:
        with open(args.csv, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise CliError(f"cannot read {args.csv}: {exc.strerror or exc}")
    if not rows or not {"branch", "q", "p"} <= set(rows[0]):
        raise CliError(f"{args.csv}: expected a curve CSV with "
                       f"branch,q,p columns")
    bi = rows[0].index("branch")
    qi = rows[0].index("q")
    pi = rows[0].index("p")
    branches = {}
    try:
        for row in rows[1:]:
            branches.setdefault(row[bi], []).append(
                (float(row[qi]), float(row[pi])))
    except (ValueError, IndexError):
        raise CliError(f"{args.csv}: malformed data row")
    _emit(args.out, _svg_text(branches))
    return 0


def _svg_text(branches):
    """Fixed-viewport line drawing of curve branches with region guides."""
    W, H, pad = 720.0, 480.0, 40.0
    pts = [p for b in branches.values() for p in b]
    qs = [q for q, _ in pts] + [-1.2, 1.2]
    ps = [p for _, p in pts] + [-1.2, 1.2]
    qlo, qhi, plo, phi = min(qs), max(qs), min(ps), max(ps)
    s = min((W - 2 * pad) / (qhi - qlo), (H - 2 * pad) / (phi - plo))
    ox = (W - s * (qhi - qlo)) / 2.0
    oy = (H - s * (phi - plo)) / 2.0

    def fx(q):
        return ox + (q - qlo) * s

    def fy(p):
        return H - oy - (p - plo) * s

    out = io.StringIO()
    out.write('<svg xmlns="http://www.w3.org/2000/svg" '
              f'width="{W:g}" height="{H:g}" viewBox="0 0 {W:g} {H:g}">\n')
    out.write('<g stroke="#bbbbbb" fill="none" stroke-width="1">\n')
    out.write(f'<circle cx="{fx(0.0):.2f}" cy="{fy(0.0):.2f}" '
              f'r="{s:.2f}"/>\n')
    for band in (-1.0, 1.0):
        out.write(f'<line x1="{fx(qlo):.2f}" y1="{fy(band):.2f}" '
                  f'x2="{fx(qhi):.2f}" y2="{fy(band):.2f}" '
                  'stroke-dasharray="4 3"/>\n')
    out.write('</g>\n')
    for i, key in enumerate(sorted(branches, key=lambda k: (len(k), k))):
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{fx(q):.2f},{fy(p):.2f}"
                          for q, p in branches[key])
        out.write(f'<polyline fill="none" stroke="{color}" '
                  f'stroke-width="1.2" points="{coords}"/>\n')
    out.write('</svg>\n')
    return out.getvalue()


# ---------------------------------------------------------------------------
# argument parsing


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _build_parser():
    top = _ArgumentParser(prog="gfc",
                          description="generating-family calculus tools")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trace", help="sample the exact curve of a family")
    p.add_argument("family")
    p.add_argument("--grid", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_trace)

    p = sub.add_parser("op", help="apply an operator to a family")
    ops = p.add_subparsers(dest="op", required=True)

    def op_parser(name):
        q = ops.add_parser(name)
        q.add_argument("family")
        q.add_argument("--out", default=None)
        q.set_defaults(func=_cmd_op)
        return q

    q = op_parser("rotate")
    q.add_argument("--direction", choices=("ccw", "cw"), default="ccw")
    q = op_parser("dagger")
    q.add_argument("--direction", type=int, choices=(1, -1), default=1)
    op_parser("restrict")
    op_parser("stabilize")
    q = op_parser("chekanov")
    q.add_argument("--symp", default=None,
                   help="generating data G(a, b), default identity")
    q = op_parser("localize")
    q.add_argument("--f", required=True)
    q.add_argument("--eps", required=True)
    q.add_argument("--phi", required=True)
    q.add_argument("--symp", default=None)
    q = op_parser("glue")
    q.add_argument("other")
    q.add_argument("--window", type=float, nargs=2, required=True)
    q.add_argument("--case", choices=("non-leg", "leg"), default="non-leg")

    p = sub.add_parser("verify", help="run a property suite")
    suites = p.add_subparsers(dest="suite", required=True)

    def suite_parser(name, target="family"):
        q = suites.add_parser(name)
        q.add_argument(target)
        q.add_argument("--tol", type=float, default=None)
        q.add_argument("--grid", type=int, default=None)
        q.set_defaults(func=_cmd_verify)
        return q

    suite_parser("turn")
    q = suite_parser("chekanov")
    q.add_argument("--symp", default=None)
    q = suite_parser("localization")
    q.add_argument("--f", required=True)
    q.add_argument("--eps", required=True)
    q.add_argument("--phi", required=True)
    q.add_argument("--symp", default=None)
    suite_parser("stable-inverse")
    suite_parser("consistency", target="gfam")

    p = sub.add_parser("graph", help="validate a graph or print its atlas")
    p.add_argument("action", choices=("validate", "atlas"))
    p.add_argument("graph")
    p.set_defaults(func=_cmd_graph)

    p = sub.add_parser("lift", help="lift an isotopy over a global family")
    p.add_argument("gfam")
    p.add_argument("iso")
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--tol", type=float, default=None,
                   help="per-step transport budget")
    p.add_argument("--grid", type=int, default=None)
    p.set_defaults(func=_cmd_lift)

    p = sub.add_parser("plot", help="draw a curve CSV as an SVG")
    p.add_argument("csv")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_plot)

    return top


def main(argv=None):
    try:
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return exc.code or 0
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ExprError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
