"""Command-line surface: one binary, five subcommands, reproducible outputs.

Every run reads an INI experiment config, writes a resolved snapshot next to
its outputs, and derives all randomness from the master seed through named
streams (recorded in the output files).  Existing outputs are never
overwritten unless --force is passed.

Output directory layout:
    config.resolved.ini      resolved config snapshot (every run)
    scale_function.csv       scale-fn
    cpp_n{n}_r{r}.json/.csv  simulate (one file pair per level and replica)
    simulate_summary.csv     simulate
    limit_r{r}.json/.csv     limit
    pi_table.csv             limit (intensity of m-mutation lineages)
    kernel_{name}.csv        kernels
    verify_report.json       verify

Exit codes: 0 success (verify: all tests passed), 1 runtime or numeric
failure (verify: some test failed), 2 usage error or malformed config.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    parse_config,
    seed_stream,
    serialize_config,
    stream_name,
)
from .genealogy import simulate_marked_cpp, write_cpp_csv, write_cpp_json
from .kernels import estimate_pi, g_x, mu_K, nu_init
from .levy import NumericsError, brownian_model, stable_model
from .limit import p_eps, pi1_B, pi1_B_geq, sample_limit_cpp
from . import verify as vf


# ---------------------------------------------------------------------------
# plumbing
# ---------------------------------------------------------------------------

def _fmt(x):
    return "%.12g" % float(x)


def _target(path, force):
    path = Path(path)
    if path.exists() and not force:
        raise FileExistsError(path)
    return path


def _write_csv(path, force, header, rows):
    with open(_target(path, force), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _prepare(args):
    cfg = parse_config(args.config)
    overrides = {}
    if args.output_dir:
        overrides["directory"] = args.output_dir
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if overrides:
        cfg = replace(cfg, **overrides)
    outdir = Path(cfg.directory)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(_target(outdir / "config.resolved.ini", args.force), "w") as fh:
        fh.write(serialize_config(cfg))
    return cfg, outdir


def _run_tasks(tasks, threads):
    """Evaluate zero-argument callables, optionally on a worker pool.

    Each task owns its pre-derived rng stream, so results do not depend on
    scheduling order."""
    if threads <= 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda t: t(), tasks))


def _limit_of(cfg):
    """The scaling-limit model of the configured family."""
    if cfg.family == "critical-exponential":
        return brownian_model(b=1.0)
    if cfg.family == "truncated-stable":
        return stable_model(cfg.alpha)
    return cfg.limit_model()


def _method(model):
    return "closed-form" if model.registry_name else "laplace-inversion"


def _write_cpp_files(cfg, outdir, stem, cpp, stream, force):
    cpp.metadata["master_seed"] = cfg.master_seed
    cpp.metadata["stream"] = stream
    if "json" in cfg.formats:
        with open(_target(outdir / f"{stem}.json", force), "w") as fh:
            write_cpp_json(cpp, fh)
    if "csv" in cfg.formats:
        with open(_target(outdir / f"{stem}.csv", force), "w",
                  newline="") as fh:
            write_cpp_csv(cpp, fh)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_scale_fn(args):
    cfg, outdir = _prepare(args)
    if cfg.is_limit_family:
        models = [("limit", cfg.limit_model())]
    else:
        models = [(str(n), cfg.rescaled_model(n)) for n in cfg.n_list]
    xs = np.linspace(args.x_min, args.x_max, args.points)
    rows = []
    for label, model in models:
        for x in xs:
            rows.append([_fmt(x), _fmt(model.scale_function(float(x))),
                         _method(model), label])
    _write_csv(outdir / "scale_function.csv", args.force,
               ["x", "W", "method", "n"], rows)
    return 0


def cmd_simulate(args):
    cfg, outdir = _prepare(args)
    if cfg.is_limit_family:
        raise ConfigError("simulate needs a pre-limit family; "
                          "use the `limit` subcommand for limit models")
    jobs = []
    for n in cfg.n_list:
        model = cfg.rescaled_model(n)
        scheme = cfg.scheme(n)
        for r in range(cfg.replicas):
            stream = stream_name("simulate", f"n{n}", f"r{r}")
            rng = seed_stream(cfg.master_seed, "simulate", f"n{n}", f"r{r}")

            def task(model=model, scheme=scheme, rng=rng, n=n, r=r,
                     stream=stream):
                cpp = simulate_marked_cpp(model, scheme, cfg.tau, rng,
                                          I_n=cfg.i_n)
                return n, r, stream, cpp
            jobs.append(task)
    results = _run_tasks(jobs, args.threads)

    summary = []
    for n in cfg.n_list:
        model = cfg.rescaled_model(n)
        lineages = [lin for rn, _, _, cpp in results if rn == n
                    for _, lin in cpp.atoms]
        deep = sum(lin.coalescence_depth >= cfg.eps for lin in lineages)
        w0 = model.scale_function(0.0)
        we = model.scale_function(cfg.eps)
        wt = model.scale_function(cfg.tau)
        expected = (w0 / we) * (1 - we / wt) / (1 - w0 / wt)
        summary.append([n, _fmt(cfg.d_n(n)), cfg.replicas, len(lineages),
                        _fmt(deep / len(lineages)) if lineages else "",
                        _fmt(expected), cfg.master_seed,
                        stream_name("simulate", f"n{n}")])
    for n, r, stream, cpp in results:
        _write_cpp_files(cfg, outdir, f"cpp_n{n}_r{r}", cpp, stream,
                         args.force)
    _write_csv(outdir / "simulate_summary.csv", args.force,
               ["n", "d_n", "replicas", "lineages", "deep_fraction",
                "expected_deep_fraction", "master_seed", "stream"], summary)
    return 0


def cmd_limit(args):
    cfg, outdir = _prepare(args)
    model = cfg.limit_model()
    theta = cfg.theta

    jobs = []
    for r in range(cfg.replicas):
        stream = stream_name("limit", f"r{r}")
        rng = seed_stream(cfg.master_seed, "limit", f"r{r}")

        def task(rng=rng, r=r, stream=stream):
            cpp = sample_limit_cpp(model, cfg.tau, cfg.eps, rng, theta=theta)
            return r, stream, cpp
        jobs.append(task)
    for r, stream, cpp in _run_tasks(jobs, args.threads):
        _write_cpp_files(cfg, outdir, f"limit_r{r}", cpp, stream, args.force)

    pi_rng = seed_stream(cfg.master_seed, "limit", "pi")
    pi_stream = stream_name("limit", "pi")
    closed = cfg.family == "brownian" or theta == 0.0
    rows = []
    for m in range(args.m_max + 1):
        val, se = pi1_B(model, m, cfg.eps, cfg.tau, theta=theta,
                        samples=args.samples, rng=pi_rng)
        rows.append([m, _fmt(val), _fmt(se),
                     "closed-form" if closed else "monte-carlo",
                     cfg.master_seed, pi_stream])
    if cfg.family == "brownian":
        tail = pi1_B_geq(model, args.m_max + 1, cfg.eps, cfg.tau, theta)
        rows.append([f">{args.m_max}", _fmt(tail), _fmt(0.0),
                     "closed-form", cfg.master_seed, pi_stream])
    _write_csv(outdir / "pi_table.csv", args.force,
               ["m", "intensity", "stderr", "method", "master_seed",
                "stream"], rows)
    return 0


def _kernel_nu_init(cfg, args, rows):
    model = (cfg.limit_model() if cfg.is_limit_family
             else cfg.rescaled_model(min(cfg.n_list)))
    nu = nu_init(model, cfg.eps, cfg.tau)
    us = np.linspace(cfg.eps, cfg.tau, args.points + 1)[:-1]
    for loc, q, w in nu.atoms:
        rows.append(["atom", _fmt(loc), q, _fmt(w), _fmt(0.0)])
    for q in (0, 1):
        for u in us:
            rows.append(["density", _fmt(u), q,
                         _fmt(nu.density(float(u), q)), _fmt(0.0)])
    return ["part", "u", "mark", "value", "mc_error"]


def _kernel_g_x(cfg, args, rows):
    model = (cfg.limit_model() if cfg.is_limit_family
             else cfg.rescaled_model(min(cfg.n_list)))
    x, a = args.x, args.depth
    g = g_x(model, x, a)
    vs = np.linspace(0.0, cfg.tau, args.points + 1)[1:]
    for loc, q, w in g.atoms:
        rows.append(["atom", _fmt(x), _fmt(a), _fmt(loc), q, _fmt(w),
                     _fmt(0.0)])
    for q in (0, 1):
        for v in vs:
            rows.append(["density", _fmt(x), _fmt(a), _fmt(v), q,
                         _fmt(g.density(float(v), q)), _fmt(0.0)])
    return ["part", "x", "depth", "v", "mark", "value", "mc_error"]


def _kernel_mu_k(cfg, args, rows):
    model = _limit_of(cfg)
    a = args.depth
    if not 0 < a < cfg.tau:
        raise ConfigError("--depth must lie in (0, tau) for mu-k")
    mk = mu_K(model, cfg.tau, a)
    rows.append(["atom", _fmt(a), "inf", _fmt(mk.atoms[0][2]), _fmt(0.0)])
    us = np.linspace(0.0, cfg.tau - a, args.points + 1)[1:-1]
    for u in us:
        rows.append(["density", _fmt(a), _fmt(u),
                     _fmt(mk.density(float(u), None)), _fmt(0.0)])
    return ["part", "depth", "u", "value", "mc_error"]


def _kernel_pi(cfg, args, rows):
    if cfg.is_limit_family:
        raise ConfigError("the pi kernel is estimated on a pre-limit model")
    model = cfg.rescaled_model(min(cfg.n_list))
    rng = seed_stream(cfg.master_seed, "kernels", "pi")
    est = estimate_pi(model, args.x, args.samples, rng, zmax=cfg.tau)
    rows.append(["zero", _fmt(args.x), _fmt(0.0), _fmt(0.0),
                 _fmt(est.zero_mass), _fmt(0.0)])
    for i in range(len(est.masses)):
        rows.append(["bin", _fmt(args.x), _fmt(est.bin_edges[i]),
                     _fmt(est.bin_edges[i + 1]), _fmt(est.masses[i]),
                     _fmt(est.errors[i])])
    rows.append(["killed", _fmt(args.x), "", "", _fmt(est.killed_mass),
                 _fmt(0.0)])
    rows.append(["overflow", _fmt(args.x), "", "", _fmt(est.overflow_mass),
                 _fmt(0.0)])
    return ["part", "x", "z_lo", "z_hi", "value", "mc_error"]


_KERNELS = {"nu-init": _kernel_nu_init, "g-x": _kernel_g_x,
            "mu-k": _kernel_mu_k, "pi": _kernel_pi}


def cmd_kernels(args):
    cfg, outdir = _prepare(args)
    rows = []
    header = _KERNELS[args.kernel](cfg, args, rows)
    stem = args.kernel.replace("-", "_")
    _write_csv(outdir / f"kernel_{stem}.csv", args.force,
               header + ["master_seed", "stream"],
               [row + [cfg.master_seed, stream_name("kernels", args.kernel)]
                for row in rows])
    return 0


def cmd_verify(args):
    cfg, outdir = _prepare(args)
    reports = []

    rng = seed_stream(cfg.master_seed, "verify", "calibration")
    reports.append(vf.ks_test("uniform-calibration", rng.random(2000),
                              "uniform", seeds=(cfg.master_seed,)))

    if not cfg.is_limit_family:
        n0 = min(cfg.n_list)
        model = cfg.rescaled_model(n0)
        reports.append(vf.cross_check_nu_init(
            model, cfg.eps, cfg.tau,
            seed_stream(cfg.master_seed, "verify", "nu-init"),
            samples=args.samples, bins=20, threshold=0.08,
            name=f"nu-init-tv-n{n0}", seed_label=cfg.master_seed))
        if len(cfg.n_list) >= 2:
            limit = _limit_of(cfg)
            xs = np.linspace(0.0, cfg.tau, 101)[1:]
            w_lim = np.array([limit.scale_function(float(x)) for x in xs])

            def sup_err(n):
                m = cfg.rescaled_model(n)
                w_n = np.array([m.scale_function(float(x)) for x in xs])
                return float(np.max(np.abs(w_n - w_lim)))
            reports.append(vf.convergence_table(
                "scale-function-sup-error", sorted(cfg.n_list), sup_err))
    else:
        model = cfg.limit_model()
        val = p_eps(model, cfg.eps, cfg.tau)
        reports.append(vf.TestReport(
            "intensity-mass-finite", val, math.inf, math.isfinite(val)
            and val > 0, distance=val))

    with open(_target(outdir / "verify_report.json", args.force), "w") as fh:
        vf.write_reports(reports, fh)
    print(vf.summary_table(reports))
    return 0 if all(r.passed for r in reports) else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("config", help="experiment config file (INI)")
    p.add_argument("--output-dir", help="override the configured directory")
    p.add_argument("--force", action="store_true",
                   help="overwrite existing output files")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for replica-parallel stages")
    p.add_argument("--seed", type=int, help="override the master seed")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="marked-cpp",
        description="Simulation and verification of marked coalescent "
                    "point processes from splitting-tree contours.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scale-fn", help="tabulate the scale function W")
    _add_common(p)
    p.add_argument("--x-min", type=float, default=0.0)
    p.add_argument("--x-max", type=float, default=5.0)
    p.add_argument("--points", type=int, default=51)
    p.set_defaults(func=cmd_scale_fn)

    p = sub.add_parser("simulate",
                       help="pre-limit marked coalescent point processes")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("limit",
                       help="limit point processes and intensity tables")
    _add_common(p)
    p.add_argument("--m-max", type=int, default=4,
                   help="largest mutation count in the intensity table")
    p.add_argument("--samples", type=int, default=2000,
                   help="Monte Carlo chains per table row (non-closed-form)")
    p.set_defaults(func=cmd_limit)

    p = sub.add_parser("kernels", help="export kernel grids as CSV")
    _add_common(p)
    p.add_argument("--kernel", choices=sorted(_KERNELS), default="nu-init")
    p.add_argument("--points", type=int, default=41)
    p.add_argument("--x", type=float, default=0.5,
                   help="start level for the g-x and pi kernels")
    p.add_argument("--depth", type=float, default=0.5,
                   help="current depth a for the g-x and mu-k kernels")
    p.add_argument("--samples", type=int, default=2000)
    p.set_defaults(func=cmd_kernels)

    p = sub.add_parser("verify", help="run the statistical check suite")
    _add_common(p)
    p.add_argument("--samples", type=int, default=20000,
                   help="excursions for the entry-law cross-check")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileExistsError as exc:
        print(f"error: refusing to overwrite {exc} (pass --force)",
              file=sys.stderr)
        return 1
    except (NumericsError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
