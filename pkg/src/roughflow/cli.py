"""Scenario runner: parse a configuration, run verification suites, write CSV.

Configuration grammar (UTF-8, line oriented)::

    # comment                      blank lines and '#' / ';' comments ignored
    [domain]                       section header
    kind = ball                    key = value
    [set core]                     set sections carry a label

Sections and keys (defaults in parentheses):

``[domain]``
    ``kind`` (ball | box), ``center`` (0, 0, 0), ``radius`` (1, ball) or
    ``halfwidths`` (1, 1, 1, box), ``margin`` (0.2): the gap between the
    domain and the enclosing ball K, which bounds every eps.
``[field]``
    ``name``: one of the built-in scenarios (see ``--list``).
``[run]``
    ``eps_list`` (0.1, 0.05, 0.025), ``step_size`` (1e-3),
    ``time_pairs`` (0:1) as ``s:t`` items, ``samples`` (100000), ``seed`` (1),
    ``suites`` (all, in the order flow-diagnostics, transport, commutator,
    reynolds, convergence), ``output`` (out), ``time_nodes`` (5),
    ``cells`` (32), ``order`` (8), ``convergence_samples`` (2000).
``[set <label>]``
    ``kind`` (ball | box); ``center`` and ``radius`` for balls, ``lo`` and
    ``hi`` for boxes.

Lists are comma separated.  Every problem found in a file is reported, each
with its line number.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import fields as F
from .flow import (
    FlowEvaluator,
    TrajectoryEscape,
    advect,
    flow_convergence_study,
    group_defect,
    semigroup_defect,
)
from .geometry import Domain, Enclosure, MeasurableSet, ball, ball_set, box, box_set, sample_uniform
from .reynolds import (
    DensityFunction,
    compressibility_check,
    rtt_density_residual,
    rtt_limit_study,
    rtt_measure_residual,
)
from .transport import (
    GridSpec,
    commutator_field,
    l2_identity_residual,
    rho_convergence_study,
    smooth_bump,
    solve_eulerian,
)

SUITES = ("flow-diagnostics", "transport", "commutator", "reynolds", "convergence")

#: tolerance for identities that hold exactly with shared samples
EXACT_TOL = 1e-12
#: tolerance for group/semigroup defects of unmollified scenario flows
DEFECT_TOL = 1e-6


class ConfigError(ValueError):
    """All problems found in one configuration text."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass(frozen=True)
class SetSpec:
    label: str
    kind: str
    params: dict
    line: int

    def build(self) -> MeasurableSet:
        if self.kind == "ball":
            return ball_set(self.params["center"], self.params["radius"], self.label)
        return box_set(self.params["lo"], self.params["hi"], self.label)


@dataclass(frozen=True)
class ScenarioConfig:
    domain: Domain
    margin: float
    field_name: str
    eps_list: tuple
    step_size: float = 1e-3
    time_pairs: tuple = ((0.0, 1.0),)
    samples: int = 100_000
    seed: int = 1
    suites: tuple = SUITES
    output: str = "out"
    sets: tuple = ()
    time_nodes: int = 5
    cells: int = 32
    order: int = 8
    convergence_samples: int = 2000

    @property
    def enclosure(self) -> Enclosure:
        return Enclosure(self.domain, self.margin / 2.0)

    def field(self) -> F.VelocityField:
        return F.SCENARIOS[self.field_name](self.domain)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    worst_residual: float = 0.0
    tolerance: float = 0.0
    files: list = field(default_factory=list)
    note: str = ""


@dataclass
class RunSummary:
    suites: list
    wall_time: float

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.suites)

    def table(self) -> str:
        lines = [f"{'suite':<18} {'status':<6} {'worst':>12} {'tolerance':>12}  note"]
        for s in self.suites:
            lines.append(
                f"{s.name:<18} {'pass' if s.passed else 'FAIL':<6} "
                f"{s.worst_residual:>12.4g} {s.tolerance:>12.4g}  {s.note}"
            )
        lines.append(f"overall: {'pass' if self.passed else 'FAIL'} ({self.wall_time:.1f} s)")
        return "\n".join(lines)


# --- parsing -----------------------------------------------------------------


def _floats(text: str) -> list[float]:
    return [float(p) for p in text.split(",") if p.strip()]


def _vec3(text: str) -> np.ndarray:
    v = _floats(text)
    if len(v) != 3:
        raise ValueError("expected three comma-separated numbers")
    return np.array(v)


def _pairs(text: str) -> list[tuple]:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        a, sep, b = item.partition(":")
        if not sep:
            raise ValueError(f"time pair {item!r} is not of the form s:t")
        out.append((float(a), float(b)))
    return out


def _tokenize(text: str):
    """Yield (section, section_line, key, value, line) plus headers with key None."""
    section = None
    section_line = 0
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                yield ("!", no, None, f"malformed section header {line!r}", no)
                continue
            section = " ".join(line[1:-1].split())
            section_line = no
            yield (section, no, None, None, no)
            continue
        key, sep, value = line.partition("=")
        if not sep:
            yield ("!", no, None, f"expected 'key = value', got {line!r}", no)
            continue
        yield (section, section_line, key.strip().lower(), value.strip(), no)


_DOMAIN_KEYS = {"kind", "center", "radius", "halfwidths", "margin"}
_FIELD_KEYS = {"name"}
_RUN_KEYS = {
    "eps_list", "step_size", "time_pairs", "samples", "seed", "suites", "output",
    "time_nodes", "cells", "order", "convergence_samples",
}
_SET_KEYS = {"kind", "center", "radius", "lo", "hi"}


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate a scenario configuration.

    Raises :class:`ConfigError` listing every problem with its line.
    """
    errors: list[str] = []
    sections: dict = {}
    set_lines: dict = {}

    for section, sec_line, key, value, no in _tokenize(text):
        if section == "!":
            errors.append(f"line {no}: {value}")
            continue
        if section is None:
            errors.append(f"line {no}: key {key!r} outside any section")
            continue
        if key is None:
            if section.startswith("set "):
                label = section[4:].strip()
                set_lines.setdefault(label, []).append(no)
                sections.setdefault(("set", label, no), {})
            elif section in ("domain", "field", "run"):
                if section in sections:
                    errors.append(f"line {no}: section [{section}] repeated")
                sections.setdefault(section, {})
            elif section == "set":
                errors.append(f"line {no}: [set] needs a label, e.g. [set core]")
                sections.setdefault(("set", "", no), {})
            else:
                errors.append(f"line {no}: unknown section [{section}]")
                sections.setdefault(("?", section, no), {})
            continue
        target = (
            ("set", section[4:].strip(), sec_line) if section.startswith("set ")
            else ("set", "", sec_line) if section == "set"
            else section if section in ("domain", "field", "run")
            else ("?", section, sec_line)
        )
        sections.setdefault(target, {})[key] = (value, no)

    for label, lines in set_lines.items():
        if len(lines) > 1:
            where = ", ".join(f"line {n}" for n in lines)
            errors.append(f"duplicate set label {label!r} at {where}")

    def take(sec_name, table, allowed):
        for k, (_, no) in table.items():
            if k not in allowed:
                errors.append(f"line {no}: unknown key {k!r} in [{sec_name}]")

    def conv(table, key, fn, default, sec_name):
        if key not in table:
            return default
        value, no = table[key]
        try:
            return fn(value)
        except (ValueError, TypeError) as exc:
            errors.append(f"line {no}: [{sec_name}] {key} = {value!r}: {exc}")
            return None

    # domain
    dom_t = sections.get("domain", {})
    take("domain", dom_t, _DOMAIN_KEYS)
    kind = dom_t.get("kind", ("ball", 0))[0].lower()
    center = conv(dom_t, "center", _vec3, np.zeros(3), "domain")
    margin = conv(dom_t, "margin", float, 0.2, "domain")
    domain = None
    if kind not in ("ball", "box"):
        errors.append(f"line {dom_t['kind'][1]}: unknown domain kind {kind!r}")
    elif kind == "ball":
        radius = conv(dom_t, "radius", float, 1.0, "domain")
        if radius is not None and center is not None:
            if radius <= 0:
                errors.append(f"line {dom_t['radius'][1]}: radius must be positive")
            else:
                domain = ball(center, radius)
    else:
        half = conv(dom_t, "halfwidths", _vec3, np.ones(3), "domain")
        if half is not None and center is not None:
            if np.any(half <= 0):
                errors.append(f"line {dom_t['halfwidths'][1]}: halfwidths must be positive")
            else:
                domain = box(center - half, center + half)
    if margin is not None and margin <= 0:
        errors.append(f"line {dom_t['margin'][1]}: margin must be positive")
        margin = None

    # field
    fld_t = sections.get("field", {})
    take("field", fld_t, _FIELD_KEYS)
    name = None
    if "name" not in fld_t:
        errors.append("[field] name is required")
    else:
        name, no = fld_t["name"]
        if name not in F.SCENARIOS:
            errors.append(
                f"line {no}: unknown field name {name!r} (known: {', '.join(F.SCENARIOS)})"
            )
            name = None

    # run
    run_t = sections.get("run", {})
    take("run", run_t, _RUN_KEYS)
    eps = conv(run_t, "eps_list", _floats, [0.1, 0.05, 0.025], "run")
    if eps is not None:
        no = run_t.get("eps_list", ("", 0))[1]
        for e in eps:
            if e <= 0:
                errors.append(f"line {no}: eps {e!r} must be positive")
            elif margin is not None and e > margin:
                errors.append(f"line {no}: eps {e!r} exceeds the enclosure margin {margin!r}")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            errors.append(f"line {no}: eps_list must be strictly decreasing")
    step = conv(run_t, "step_size", float, 1e-3, "run")
    if step is not None and step <= 0:
        errors.append(f"line {run_t['step_size'][1]}: step_size must be positive")
    pairs = conv(run_t, "time_pairs", _pairs, [(0.0, 1.0)], "run")
    if pairs is not None and not pairs:
        errors.append(f"line {run_t['time_pairs'][1]}: time_pairs is empty")
    ints = {}
    for key, default, low in (
        ("samples", 100_000, 100), ("seed", 1, 0), ("time_nodes", 5, 3),
        ("cells", 32, 4), ("order", 8, 8), ("convergence_samples", 2000, 10),
    ):
        v = conv(run_t, key, int, default, "run")
        if v is not None and v < low:
            errors.append(f"line {run_t[key][1]}: {key} must be at least {low}")
        ints[key] = v
    suites = SUITES
    if "suites" in run_t:
        value, no = run_t["suites"]
        suites = tuple(p.strip() for p in value.split(",") if p.strip())
        for s in suites:
            if s not in SUITES:
                errors.append(f"line {no}: unknown suite {s!r} (known: {', '.join(SUITES)})")
    output = run_t.get("output", ("out", 0))[0]

    # sets
    sets = []
    for key, table in sections.items():
        if not (isinstance(key, tuple) and key[0] == "set"):
            continue
        _, label, line = key
        if not label:
            continue
        take(f"set {label}", table, _SET_KEYS)
        skind = table.get("kind", ("ball", line))[0].lower()
        sname = f"set {label}"
        if skind == "ball":
            c = conv(table, "center", _vec3, np.zeros(3), sname)
            r = conv(table, "radius", float, None, sname)
            if "radius" not in table:
                errors.append(f"line {line}: [{sname}] needs a radius")
            elif r is not None and r <= 0:
                errors.append(f"line {table['radius'][1]}: radius must be positive")
            elif c is not None and r is not None:
                sets.append(SetSpec(label, "ball", {"center": c, "radius": r}, line))
        elif skind == "box":
            lo = conv(table, "lo", _vec3, None, sname)
            hi = conv(table, "hi", _vec3, None, sname)
            if "lo" not in table or "hi" not in table:
                errors.append(f"line {line}: [{sname}] needs lo and hi")
            elif lo is not None and hi is not None:
                if np.any(hi <= lo):
                    errors.append(f"line {table['hi'][1]}: box set needs hi > lo")
                else:
                    sets.append(SetSpec(label, "box", {"lo": lo, "hi": hi}, line))
        else:
            errors.append(f"line {table['kind'][1]}: unknown set kind {skind!r}")
    if domain is not None:
        for sp in sets:
            a = sp.build()
            lo, hi = a.bounding_region.bounding_box()
            corners = np.array(np.meshgrid(*zip(lo, hi), indexing="ij")).reshape(3, -1).T
            if sp.kind == "ball":
                inside = domain.distance(corners).max() == 0 and bool(
                    domain.contains(sp.params["center"])[0]
                ) and _ball_inside(domain, sp.params["center"], sp.params["radius"])
            else:
                inside = bool(np.all(domain.contains(corners)))
            if not inside:
                errors.append(f"line {sp.line}: set {sp.label!r} is not inside the domain")

    if errors:
        raise ConfigError(errors)
    return ScenarioConfig(
        domain=domain,
        margin=margin,
        field_name=name,
        eps_list=tuple(eps),
        step_size=step,
        time_pairs=tuple(pairs),
        samples=ints["samples"],
        seed=ints["seed"],
        suites=suites,
        output=output,
        sets=tuple(sorted(sets, key=lambda sp: sp.line)),
        time_nodes=ints["time_nodes"],
        cells=ints["cells"],
        order=ints["order"],
        convergence_samples=ints["convergence_samples"],
    )


def _ball_inside(domain: Domain, center, radius: float) -> bool:
    c = np.asarray(center, dtype=float) - domain.center
    if domain.kind == "ball":
        return float(np.linalg.norm(c)) + radius < float(domain.size)
    return bool(np.all(np.abs(c) + radius < domain.size))


# --- CSV ----------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows) -> Path:
    """Write rows with shortest round-trip float formatting and '\\n' endings."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(buf.getvalue(), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def write_trajectory_csv(path: Path, record) -> Path:
    """Columns r, x1, x2, x3, jac_log."""
    pos = np.atleast_2d(record.positions)
    return write_csv(
        path,
        ("r", "x1", "x2", "x3", "jac_log"),
        ((r, *p, j) for r, p, j in zip(record.times, pos, np.atleast_1d(record.jacobian_log))),
    )


def write_grid_csv(path: Path, grid_fn) -> Path:
    """Columns index, x1, x2, x3, value (cell centres in C order)."""
    centers = grid_fn.grid.centers()
    vals = grid_fn.flat()
    return write_csv(
        path,
        ("index", "x1", "x2", "x3", "value"),
        ((i, *c, v) for i, (c, v) in enumerate(zip(centers, vals))),
    )


def write_commutator_csv(path: Path, eps, norms) -> Path:
    return write_csv(path, ("eps", "l1_norm"), zip(eps, norms))


REYNOLDS_HEADER = (
    "identity_tag", "set", "s", "t", "lhs", "rhs", "residual", "mc_sigma",
    "quad_error", "threshold", "nodes", "seed",
)


def reynolds_row(label: str, rep) -> tuple:
    return (
        rep.identity_tag, label, rep.s, rep.t, rep.lhs, rep.rhs, rep.residual,
        rep.mc_sigma, rep.quad_error, rep.threshold, rep.time_quadrature_nodes, rep.seed,
    )


# --- suites -------------------------------------------------------------------


def _default_sets(cfg: ScenarioConfig) -> list[MeasurableSet]:
    if cfg.sets:
        return [sp.build() for sp in cfg.sets]
    c = cfg.domain.center
    r = 0.2 * min(np.atleast_1d(cfg.domain.size))
    return [ball_set(c, r, "center")]


def _flow(cfg: ScenarioConfig, field=None) -> FlowEvaluator:
    return FlowEvaluator(field or cfg.field(), cfg.step_size, cfg.enclosure)


def _density(cfg: ScenarioConfig) -> DensityFunction:
    c = cfg.domain.center

    def g(r, x):
        return (x[:, 0] - c[0]) ** 2 + r

    def dg(r, x):
        return np.ones(len(x))

    def grad(r, x):
        out = np.zeros_like(x)
        out[:, 0] = 2.0 * (x[:, 0] - c[0])
        return out

    return DensityFunction(g, dg, grad, "x1^2 + t")


def _core_points(cfg: ScenarioConfig, n: int) -> np.ndarray:
    dom = cfg.domain
    shrunk = Domain(dom.kind, dom.center, 0.5 * np.asarray(dom.size))
    return sample_uniform(shrunk, n, cfg.seed)


def suite_flow(cfg: ScenarioConfig, out: Path) -> SuiteResult:
    fl = _flow(cfg)
    pts = _core_points(cfg, min(cfg.samples, 1000))
    rows = []
    worst = 0.0
    ok = True
    for s, t in cfg.time_pairs:
        g = group_defect(fl, s, t, pts)
        sg = semigroup_defect(fl, s, 0.5 * (s + t), t, pts)
        for name, d in (("group_defect_max", g.max), ("semigroup_defect_max", sg.max)):
            rows.append((name, "", s, t, d, 0.0, DEFECT_TOL, d <= DEFECT_TOL))
            worst = max(worst, d)
            ok &= d <= DEFECT_TOL
        sets = _default_sets(cfg)
        for a, res in zip(sets, compressibility_check(fl, s, t, sets, cfg.samples, cfg.seed)):
            good = res.ok
            ok &= good
            rows.append(("preimage_measure", a.label, s, t, res.estimate.value,
                         res.lower, res.upper, good))
    files = [write_csv(out / "flow_diagnostics.csv",
                       ("quantity", "set", "s", "t", "value", "lower", "upper", "ok"), rows)]
    s, t = cfg.time_pairs[0]
    rec = advect(fl, t, pts[0], s)
    files.append(write_trajectory_csv(out / "trajectory.csv", rec))
    return SuiteResult("flow-diagnostics", ok, worst, DEFECT_TOL, files)


def suite_transport(cfg: ScenarioConfig, out: Path) -> SuiteResult:
    field_ = cfg.field()
    fl = _flow(cfg, field_)
    half = float(np.min(np.atleast_1d(cfg.domain.size)))
    rho0 = smooth_bump(cfg.domain.center, 0.5 * half)
    rows = []
    ok = True
    worst = 0.0
    tol_ratio = 0.0
    for s, t in cfg.time_pairs:
        times = [s + (t - s) * k / 4 for k in range(1, 5)] if t != s else [t]
        if t < s:
            times = times[::-1]
        for r in l2_identity_residual(fl, rho0, s, times, cfg.samples, cfg.seed):
            tol = 4.0 * r.sigma + EXACT_TOL
            good = r.residual <= tol
            ok &= good
            worst = max(worst, r.residual)
            tol_ratio = max(tol_ratio, r.residual / tol)
            rows.append((s, r.t, r.norm_sq, r.predicted, r.residual, r.sigma, tol, good))
    files = [write_csv(out / "transport.csv",
                       ("s", "t", "norm_sq", "predicted", "residual", "sigma", "threshold", "ok"),
                       rows)]
    s, t = cfg.time_pairs[0]
    lo, hi = cfg.domain.bounding_box()
    grid = GridSpec(box(lo, hi), cfg.cells)
    snap = solve_eulerian(field_, rho0, s, t, grid)
    beta = rho0.sup_bound
    mp = float(np.max(np.abs(snap.values))) <= beta + EXACT_TOL
    ok &= mp
    files.append(write_grid_csv(out / "eulerian_grid.csv", snap))
    return SuiteResult("transport", ok, worst, 4.0, files,
                       f"max residual/threshold {tol_ratio:.3g}; maximum principle {'ok' if mp else 'violated'}")


def _commutator_grid(cfg: ScenarioConfig) -> GridSpec:
    lo, hi = cfg.domain.bounding_box()
    e = max(cfg.eps_list)
    return GridSpec(box(lo - e, hi + e), cfg.cells)


def suite_commutator(cfg: ScenarioConfig, out: Path) -> SuiteResult:
    field_ = cfg.field()
    half = float(np.min(np.atleast_1d(cfg.domain.size)))
    rho = smooth_bump(cfg.domain.center, 0.6 * half)
    grid = _commutator_grid(cfg)
    norms = [
        commutator_field(field_, rho, e, cfg.time_pairs[0][0], grid, cfg.order).l1_norm()
        for e in cfg.eps_list
    ]
    files = [write_commutator_csv(out / "commutator.csv", cfg.eps_list, norms)]
    if max(norms) <= EXACT_TOL:
        return SuiteResult("commutator", True, max(norms), EXACT_TOL, files, "field gives zero commutator")
    dec = all(b < a for a, b in zip(norms, norms[1:]))
    return SuiteResult("commutator", dec, norms[-1], norms[0], files,
                       "strictly decreasing" if dec else "not decreasing")


def suite_reynolds(cfg: ScenarioConfig, out: Path) -> SuiteResult:
    fl = _flow(cfg)
    g = _density(cfg)
    rows = []
    ok = True
    worst_ratio = 0.0
    for s, t in cfg.time_pairs:
        for a in _default_sets(cfg):
            for variant in ("trans1", "trans0"):
                rep = rtt_measure_residual(fl, s, t, a, cfg.time_nodes, cfg.samples, cfg.seed, variant)
                rows.append(reynolds_row(a.label, rep))
                ok &= rep.passed
                worst_ratio = max(worst_ratio, rep.residual / rep.threshold)
            for variant in ("trans2", "trans3"):
                rep = rtt_density_residual(fl, g, None, s, t, a, cfg.time_nodes, cfg.samples,
                                           cfg.seed, variant)
                rows.append(reynolds_row(a.label, rep))
                ok &= rep.passed
                worst_ratio = max(worst_ratio, rep.residual / rep.threshold)
    files = [write_csv(out / "reynolds.csv", REYNOLDS_HEADER, rows)]
    return SuiteResult("reynolds", ok, worst_ratio, 1.0, files, "worst residual/threshold")


def suite_convergence(cfg: ScenarioConfig, out: Path) -> SuiteResult:
    field_ = cfg.field()
    s, t = cfg.time_pairs[0]
    n = cfg.convergence_samples
    step = max(cfg.step_size, 1e-2)
    flows = flow_convergence_study(field_, cfg.eps_list, s, t, n, cfg.seed, step, cfg.order)
    from .transport import coordinate

    rhos = rho_convergence_study(field_, coordinate(0), s, t, cfg.eps_list, n, cfg.seed, step, cfg.order)
    a = _default_sets(cfg)[0]
    table, diffs = rtt_limit_study(field_, cfg.eps_list, s, t, a, n, cfg.seed, step, cfg.order)
    rows = []
    for i, row in enumerate(table):
        d = (lambda seq: seq[i - 1] if i > 0 else "")
        rows.append((row.eps, row.preimage.value, row.image.value, row.image_jacobian.value,
                     d(flows), d(rhos), d(diffs["image_jacobian"])))
    files = [write_csv(out / "convergence.csv",
                       ("eps", "preimage", "image", "image_jacobian", "flow_l2_diff",
                        "rho_l2_diff", "image_jacobian_diff"), rows)]
    seqs = (flows, rhos, diffs["image_jacobian"])
    if all(max(q) <= EXACT_TOL for q in seqs):
        return SuiteResult("convergence", True, 0.0, EXACT_TOL, files, "all distances zero")
    dec = all(all(b < a_ for a_, b in zip(q, q[1:])) for q in seqs)
    return SuiteResult("convergence", dec, max(q[-1] for q in seqs), 0.0, files,
                       "strictly decreasing" if dec else "not strictly decreasing")


_SUITE_FUNCS: dict[str, Callable] = {
    "flow-diagnostics": suite_flow,
    "transport": suite_transport,
    "commutator": suite_commutator,
    "reynolds": suite_reynolds,
    "convergence": suite_convergence,
}


def run(config: ScenarioConfig, out: Optional[Path] = None) -> RunSummary:
    """Run the configured suites in order and write one CSV per suite plus
    ``summary.csv``.  A trajectory escape fails its suite and the run."""
    out = Path(out if out is not None else config.output)
    start = time.perf_counter()
    results = []
    for name in config.suites:
        try:
            res = _SUITE_FUNCS[name](config, out)
        except TrajectoryEscape as exc:
            res = SuiteResult(name, False, math.inf, 0.0, [], f"aborted: {exc}")
        results.append(res)
    write_csv(
        out / "summary.csv",
        ("suite", "passed", "worst", "tolerance", "note"),
        ((r.name, r.passed, r.worst_residual, r.tolerance, r.note) for r in results),
    )
    return RunSummary(results, time.perf_counter() - start)


def list_scenarios() -> str:
    """One line per built-in field with its divergence-free flag and oracle facts."""
    facts = {
        "rotation": "X(s,t,x) = R(s - t) x in the core, R the rotation about x3",
        "contraction": "div = -3 for |x| <= 0.7; X(s,t,x) = x exp(t - s) in the core",
        "rough_shear": "trajectories are segments parallel to x1; |grad v| ~ |x2|^(-1/2)",
        "zero": "X(s,t,x) = x, jacobian_log = 0",
    }
    lines = []
    for name, ctor in F.SCENARIOS.items():
        f = ctor()
        lines.append(
            f"{name:<12} div-free={'yes' if f.divergence_free else 'no':<3} "
            f"div_bound={f.div_sup_bound:.6g} speed={f.sup_speed:.6g}  "
            f"{f.description}; oracle: {facts[name]}"
        )
    return "\n".join(lines)


def main(argv: Optional[Sequence[str]] = None) -> int:
    p = argparse.ArgumentParser(prog="roughflow", description=__doc__.splitlines()[0])
    p.add_argument("config", nargs="?", help="scenario configuration file")
    p.add_argument("--suite", action="append", choices=SUITES,
                   help="run only this suite (repeatable)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", help="output directory (overrides the configured one)")
    p.add_argument("--list", action="store_true", help="list the built-in scenarios")
    args = p.parse_args(argv)
    if args.list:
        print(list_scenarios())
        return 0
    if not args.config:
        p.error("a configuration file is required unless --list is given")
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"{args.config}: {e}", file=sys.stderr)
        return 2
    if args.suite:
        cfg = replace(cfg, suites=tuple(args.suite))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    try:
        summary = run(cfg, Path(args.out) if args.out else None)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(summary.table())
    return 0 if summary.passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
