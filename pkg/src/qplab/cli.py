"""Command line entry point: ``qplab <subcommand> --config <path> [--out <dir>] [--workers <k>]``.

Each subcommand writes ``<out>/<subcommand>.csv`` and ``<out>/summary.json``.
Output bytes depend only on the config text: work is cut into chunks of a
fixed size and reassembled in grid order, whatever the number of workers.
Exit codes: 0 on success, 1 if any check was violated, 2 on a config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .cartan import random_blaschke_quotient, verify_cartan
from .config import SUBCOMMANDS, RunConfig, load_config
from .errors import ConfigError, HypothesisFailed, QPLabError
from .localization import bad_flags, calibrate, eigen_decay, fit_sigma, interlacing_ok, orbit_count, \
    BadSet, pave, patch_check
from .spectral import IndexWindow, avg_logdet_check, default_C_tilde, deviation_from_table, \
    good_shift, green, midpoint_grid, u_table
from .sublevel import chain_check, default_eps_list, fit_exponent, normalized_linear_measure, \
    potential_measure, sublevel_measure
from .torus import continued_fraction, diophantine_check, orbit

CHUNK = 64  # grid points per task; never depends on the worker count


@dataclass
class RunSummary:
    subcommand: str
    header: list
    rows: list
    results: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 1 if self.violations else 0


def _chunks(seq, size=CHUNK):
    return [seq[i:i + size] for i in range(0, len(seq), size)]


def _pmap(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*tasks)))


def _flatten(parts):
    return [row for part in parts for row in part]


def _describe(err: Exception) -> str:
    return f"{type(err).__name__}: {err}"


# ---------------------------------------------------------------------------
# workers (module level so they pickle)


def _green_chunk(spec, points, N, frac):
    rows = []
    for x, E in points:
        try:
            r = green(spec, x, IndexWindow.of_size(N), E, frac)
            rows.append([x, E, r.logdet_B, r.c_eff, r.r2, r.max_entry, r.hadamard_ok, "ok"])
        except QPLabError as e:
            rows.append([x, E, -math.inf, math.nan, math.nan, math.nan, True, type(e).__name__])
    return rows


def _shift_chunk(spec, points, N, frac):
    rows = []
    for x, E in points:
        try:
            s = good_shift(spec, x, E, N, frac)
            r = s.result
            rows.append([x, E, s.m, r.logdet_B, r.c_eff, r.r2, r.max_entry, "ok"])
        except QPLabError as e:
            rows.append([x, E, 0, -math.inf, math.nan, math.nan, math.nan, type(e).__name__])
    return rows


def _u_chunk(spec, E, N, xs, M, C_tilde):
    return u_table(spec, E, N, np.asarray(xs), M, C_tilde)


def _cartan_chunk(seed, trials, R, R2, delta, H, Hp, grid):
    rows = []
    for t in trials:
        rng = np.random.default_rng([seed, t])
        fn, inp = random_blaschke_quotient(rng, R=R, R2=R2, delta=delta, H=H, Hp=Hp)
        rep = verify_cartan(fn, inp, grid)
        rows.append([t, len(inp.zeros), len(inp.poles), fn.logM, rep.bound, rep.checked,
                     rep.skipped, rep.violations, rep.worst_margin])
    return rows


def _measure_one(spec, measure, E, eps, depth):
    p = spec.potential
    if measure == "potential":
        return potential_measure(p, E, eps, depth)
    if measure == "linear":
        return normalized_linear_measure(p, E, eps, depth)
    return sublevel_measure(p.f, eps, depth)


def _bad_chunk(spec, E, N, xs, c0, slack):
    return bad_flags(spec, E, N, np.asarray(xs), c0, slack)


# ---------------------------------------------------------------------------
# subcommands


def _phases_and_energies(cfg: RunConfig):
    xs = cfg.get("xs") or [cfg.get("x0")]
    energies = cfg.get("energies") or [cfg.get("E")]
    return [(float(x), float(E)) for x in xs for E in energies]


def _run_green(cfg, spec, workers):
    N, frac = cfg.get("N"), cfg.get("frac")
    tasks = [(spec, c, N, frac) for c in _chunks(_phases_and_energies(cfg))]
    rows = _flatten(_pmap(_green_chunk, tasks, workers))
    header = ["x", "E", "logdet_B", "c_eff", "r2", "max_entry", "hadamard_ok", "status"]
    violations = [f"green: x={r[0]!r}, E={r[1]!r}: {r[7]}" for r in rows if r[7] != "ok"]
    violations += [f"green: x={r[0]!r}, E={r[1]!r}: Hadamard ceiling exceeded"
                   for r in rows if not r[6]]
    finite = [r[3] for r in rows if r[7] == "ok" and math.isfinite(r[3])]
    results = {"windows": len(rows), "min_c_eff": min(finite) if finite else math.nan}
    return header, rows, results, violations


def _run_shiftscan(cfg, spec, workers):
    N, frac = cfg.get("N"), cfg.get("frac")
    tasks = [(spec, c, N, frac) for c in _chunks(_phases_and_energies(cfg))]
    rows = _flatten(_pmap(_shift_chunk, tasks, workers))
    header = ["x", "E", "m", "logdet_B", "c_eff", "r2", "max_entry", "status"]
    violations = [f"shiftscan: x={r[0]!r}, E={r[1]!r}: {r[7]}" for r in rows if r[7] != "ok"]
    return header, rows, {"phases": len(rows)}, violations


def _run_ldt(cfg, spec, workers):
    E, N = cfg.get("E"), cfg.get("N")
    Ms = sorted(cfg.get("Ms"))
    threshold = cfg.get("threshold")
    C_tilde = cfg.get("C_tilde") or default_C_tilde(spec, E)
    xs = midpoint_grid(cfg.get("x_grid")).tolist()
    tasks = [(spec, E, N, c, max(Ms), C_tilde) for c in _chunks(xs, 4 * CHUNK)]
    table = np.vstack(_pmap(_u_chunk, tasks, workers))
    reps = [deviation_from_table(table, M, threshold, C_tilde) for M in Ms]
    rows = [[r.M, r.threshold, r.bad_fraction, r.mean] for r in reps]
    fr = [r.bad_fraction for r in reps]
    violations = []
    for a, b, Ma, Mb in zip(fr, fr[1:], Ms, Ms[1:]):
        if b > a:
            violations.append(f"ldt: bad fraction rises from {a!r} at M={Ma} to {b!r} at M={Mb}")
    results = {"E": E, "N": N, "C_tilde": C_tilde, "bad_fraction": dict(zip(map(str, Ms), fr))}
    return ["M", "threshold", "bad_fraction", "mean"], rows, results, violations


def _run_avgdet(cfg, spec, workers):
    N, tol = cfg.get("N"), cfg.get("tolerance")
    energies = cfg.get("energies") or [cfg.get("E")]
    rows, violations = [], []
    for E in energies:
        r = avg_logdet_check(spec, E, N, cfg.get("x_grid"), cfg.get("quad_grid"))
        rows.append([E, N, r.lhs, r.rhs, r.margin, r.used, r.skipped])
        if not abs(r.margin) <= tol:
            violations.append(f"avgdet: E={E!r}: |lhs - rhs| = {abs(r.margin)!r} exceeds {tol!r}")
    header = ["E", "N", "lhs", "rhs", "margin", "used", "skipped"]
    return header, rows, {"max_abs_margin": max(abs(r[4]) for r in rows)}, violations


def _run_cartan(cfg, spec, workers):
    seed = cfg.require("seed")
    trials = list(range(cfg.get("trials")))
    args = (cfg.get("R"), cfg.get("R2"), cfg.get("pole_delta"), cfg.get("H"), cfg.get("Hp"),
            cfg.get("cartan_grid"))
    tasks = [(seed, c, *args) for c in _chunks(trials, 4)]
    rows = _flatten(_pmap(_cartan_chunk, tasks, workers))
    header = ["trial", "zeros", "poles", "logM", "bound", "checked", "skipped", "violations",
              "worst_margin"]
    violations = [f"cartan: trial {r[0]}: {r[7]} grid points below the bound" for r in rows if r[7]]
    results = {"trials": len(rows), "total_violations": sum(r[7] for r in rows),
               "worst_margin": min(r[8] for r in rows)}
    return header, rows, results, violations


def _run_sublevel(cfg, spec, workers):
    E, depth, measure = cfg.get("E"), cfg.get("depth"), cfg.get("measure")
    eps_list = cfg.get("eps_list") or default_eps_list().tolist()
    rows, violations = [], []
    for eps in eps_list:
        try:
            b = _measure_one(spec, measure, E, eps, depth)
            rows.append([eps, b.lower, b.upper, b.depth])
        except QPLabError as e:
            violations.append(f"sublevel: eps={eps!r}: {_describe(e)}")
    results = {"E": E, "measure": measure}
    try:
        c, intercept, r2 = fit_exponent([r[0] for r in rows], [0.5 * (r[1] + r[2]) for r in rows])
        results.update(exponent=c, intercept=intercept, r2=r2)
    except ValueError:
        results.update(exponent=math.nan, intercept=math.nan, r2=math.nan)
    if cfg.get("chain"):
        checks = []
        for Ec, eps in cfg.get("chain"):
            ch = chain_check(spec.potential, Ec, eps, depth)
            checks.append({"E": ch.E, "eps": ch.eps, "lhs": ch.lhs, "rhs": ch.rhs, "ok": ch.ok})
            if not ch.ok:
                violations.append(f"sublevel: chain inequality fails at E={Ec!r}, eps={eps!r}")
        results["chain"] = checks
    return ["eps", "lower", "upper", "depth"], rows, results, violations


def _run_pave(cfg, spec, workers):
    N, M = cfg.get("N"), cfg.require("M")
    try:
        p = pave(IndexWindow.of_size(N), M)
    except QPLabError as e:
        return ["child", "lo", "hi"], [], {"N": N, "M": M}, [f"pave: {_describe(e)}"]
    rows = [[i, c.lo, c.hi] for i, c in enumerate(p.children)]
    return ["child", "lo", "hi"], rows, {"N": N, "M": M, "children": len(rows)}, []


def _run_patch(cfg, spec, workers):
    N, M, x0, E = cfg.get("N"), cfg.require("M"), cfg.get("x0"), cfg.get("E")
    header = ["child", "lo", "hi", "c_eff"]
    try:
        shift = good_shift(spec, x0, E, N)
        paving = pave(IndexWindow.of_size(N, shift.m), M)
        c0, slack = cfg.get("c0"), cfg.get("slack")
        if c0 is None or slack is None:
            c0_m, slack_m = calibrate(spec, x0, E, paving)
            c0 = c0_m if c0 is None else c0
            slack = slack_m if slack is None else slack
        rep = patch_check(spec, x0, E, paving, c0, slack)
    except HypothesisFailed as e:
        return header, [], {"hypothesis": "failed"}, [f"patch: hypothesis fails: {e}"]
    except QPLabError as e:
        return header, [], {}, [f"patch: {_describe(e)}"]
    rows = [[i, c.lo, c.hi, r] for i, (c, r) in enumerate(zip(paving.children, rep.child_c_eff))]
    results = {"shift": shift.m, "c0": c0, "slack": slack, "max_entry": rep.max_entry,
               "b4_bound": rep.b4_bound, "b4_ok": rep.b4_ok, "b5_worst": rep.b5_worst,
               "b5_ok": rep.b5_ok, "resolvent_residual": rep.resolvent_residual,
               "parent_c_eff": rep.parent_c_eff, "hypothesis": "verified"}
    violations = []
    if not rep.b4_ok:
        violations.append("patch: parent max |G| exceeds 2 exp(c0 slack)")
    if not rep.b5_ok:
        violations.append("patch: parent misses half-rate decay")
    if not rep.resolvent_ok:
        violations.append(f"patch: resolvent identity residual {rep.resolvent_residual!r}")
    return header, rows, results, violations


def _bad_set(cfg, spec, N, workers):
    grid = cfg.get("grid")
    if grid < 512:
        raise ConfigError("grid must be >= 512", key="grid")
    E, c0 = cfg.get("E"), cfg.get("c0") or 0.9
    slack = cfg.get("slack")
    if slack is None:
        slack = cfg.get("kappa") * N
    xs = midpoint_grid(grid).tolist()
    tasks = [(spec, E, N, c, c0, slack) for c in _chunks(xs)]
    flags = np.concatenate(_pmap(_bad_chunk, tasks, workers))
    return BadSet.from_flags(E, N, flags, c0, slack)


def _run_badset(cfg, spec, workers):
    Ns = cfg.get("Ns")
    sets = [_bad_set(cfg, spec, N, workers) for N in Ns]
    xs = midpoint_grid(cfg.get("grid"))
    rows = [[b.N, float(x), bool(f)] for b in sets for x, f in zip(xs, b.flagged)]
    fr = [b.fraction for b in sets]
    sig = fit_sigma(Ns, fr)
    violations = []
    order = np.argsort(Ns, kind="stable")
    for i, j in zip(order, order[1:]):
        if fr[j] > fr[i]:
            violations.append(f"badset: fraction rises from {fr[i]!r} at N={Ns[i]} to {fr[j]!r} at N={Ns[j]}")
    results = {"E": sets[0].E, "c0": sets[0].c0, "slack": [b.slack for b in sets],
               "fraction": dict(zip(map(str, Ns), fr)), "sigma": sig.sigma,
               "sigma_points": sig.points}
    return ["N", "x", "flagged"], rows, results, violations


def _run_orbit(cfg, spec, workers):
    N, x0, delta = cfg.get("N"), cfg.get("x0"), cfg.get("delta")
    N1 = cfg.get("N1") or 4096
    bad = _bad_set(cfg, spec, N, workers)
    pts = orbit(x0, spec.freq, 1, N1)
    hit = bad.contains(pts)
    rows = [[k, float(y), bool(h)] for k, y, h in zip(range(1, N1 + 1), pts, hit)]
    oc = orbit_count(bad, x0, spec.freq, N1, delta)
    results = {"qualitative": True, "N": N, "N1": N1, "delta": delta,
               "bad_fraction": bad.fraction, "count": oc.count, "bound": oc.bound,
               "ratio": oc.ratio, "degenerate": oc.degenerate}
    violations = ["orbit: every orbit point is bad"] if oc.degenerate else []
    return ["k", "y", "flagged"], rows, results, violations


def _run_localize(cfg, spec, workers):
    N, x0 = cfg.get("N"), cfg.get("x0")
    header = ["E", "center", "decay_c", "decay_r2", "residual"]
    try:
        rep = eigen_decay(spec, x0, N, cfg.get("energy_window"), cfg.get("j_stride"),
                          cfg.get("N1"), cfg.get("frac"))
    except QPLabError as e:
        return header, [], {}, [f"localize: {_describe(e)}"]
    rows = [[p.E, p.center, p.decay_c, p.decay_r2, p.residual] for p in rep.pairs]
    inner = rep.interior()
    rates = [p.decay_c for p in inner if math.isfinite(p.decay_c)]
    violations = []
    js = sorted(rep.energies)
    for a, b in zip(js, js[1:]):
        if not interlacing_ok(rep.energies[a], rep.energies[b]):
            violations.append(f"localize: spectra on [-{a}, {a}] and [-{b}, {b}] do not interlace")
    results = {"pairs": len(rows), "interior": len(inner),
               "localized_fraction": rep.localized_fraction(),
               "median_decay_c": float(np.median(rates)) if rates else math.nan,
               "max_residual": max((p.residual for p in rep.pairs), default=0.0),
               "nested_counts": {str(j): int(rep.energies[j].size) for j in js}}
    return header, rows, results, violations


def _run_dioph(cfg, spec, workers):
    header = ["k", "p", "q", "a_k", "err"]
    try:
        cf = continued_fraction(spec.omega, cfg.get("cf_depth"))
    except QPLabError as e:
        return header, [], {}, [f"dioph: {_describe(e)}"]
    rows = [[k + 1, c.p, c.q, a, c.err] for k, (c, a) in enumerate(zip(cf, cf.partial_quotients))]
    rep = diophantine_check(spec.freq, cfg.get("K"))
    results = {"passed": rep.passed, "k": rep.k, "ratio": rep.ratio, "worst_k": rep.worst_k,
               "worst_ratio": rep.worst_ratio}
    violations = [] if rep.passed else [f"dioph: ||k omega|| <= a k^-A at k={rep.k}"]
    return header, rows, results, violations


HANDLERS = {
    "green": _run_green, "shiftscan": _run_shiftscan, "ldt": _run_ldt, "avgdet": _run_avgdet,
    "cartan": _run_cartan, "sublevel": _run_sublevel, "pave": _run_pave, "patch": _run_patch,
    "badset": _run_badset, "orbit": _run_orbit, "localize": _run_localize, "dioph": _run_dioph,
}


# ---------------------------------------------------------------------------
# output


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else repr(f)
    return v


def write_outputs(summary: RunSummary, cfg: RunConfig, out: str) -> None:
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, f"{summary.subcommand}.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(summary.header)
        for row in summary.rows:
            w.writerow([_cell(v) for v in row])
    doc = {
        "tool": "qplab",
        "version": __version__,
        "config_hash": cfg.hash,
        "config": cfg.echo(),
        "subcommand": summary.subcommand,
        "results": summary.results,
        "violations": summary.violations,
    }
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def run(cfg: RunConfig, subcommand: str, out: str | None = None,
        workers: int | None = None) -> RunSummary:
    """Execute ``subcommand`` and write its artifacts to ``out`` (if given)."""
    if subcommand not in HANDLERS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    spec = cfg.operator()
    workers = workers or cfg.workers()
    header, rows, results, violations = HANDLERS[subcommand](cfg, spec, workers)
    summary = RunSummary(subcommand, header, rows, results, violations)
    if out is not None:
        write_outputs(summary, cfg, out)
    return summary


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="qplab", description="Quasi-periodic operator laboratory.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="path to the run configuration")
    ap.add_argument("--out", help="output directory (defaults to [output] dir)")
    ap.add_argument("--workers", type=int, help="worker processes (defaults to [output] workers or all cores)")
    args = ap.parse_args(argv)

    start = time.perf_counter()
    try:
        cfg = load_config(args.config)
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        out = args.out or cfg.output.get("dir", "out")
        summary = run(cfg, args.subcommand, out, args.workers)
    except ConfigError as e:
        print(f"qplab: config error: {e}", file=sys.stderr)
        return 2
    except QPLabError as e:
        print(f"qplab {args.subcommand}: {_describe(e)}", file=sys.stderr)
        return 1
    elapsed = time.perf_counter() - start
    print(f"{args.subcommand}: {len(summary.rows)} rows, {len(summary.violations)} violations, "
          f"{elapsed:.2f} s, {args.workers or cfg.workers()} workers -> {out}")
    for v in summary.violations:
        print(f"  violation: {v}", file=sys.stderr)
    return summary.exit_code


if __name__ == "__main__":
    sys.exit(main())
