"""Command-line entry point ``wavekin``.

Exit status: 0 on success, 1 for usage or validation errors, 2 for runtime
failures (integrator aborts, kinetic instability, unwritable outputs).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("wavekin")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _load(args, required=True):
    from .config import ExperimentConfig
    if args.config is None:
        if required:
            raise UsageError(f"{args.command}: --config is required")
        return ExperimentConfig.from_dict({})
    return ExperimentConfig.from_json(args.config)


def _apply_overrides(cfg, args):
    run = {}
    if getattr(args, "ensemble", None) is not None:
        run["ensemble"] = args.ensemble
    if getattr(args, "seed", None) is not None:
        run["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        run["workers"] = args.workers
    sections = {"run": run} if run else {}
    if getattr(args, "out", None) and args.command in ("compare", "flatness", "simulate"):
        sections["output"] = {"dir": str(args.out)}
    return cfg.replace(**sections) if sections else cfg


def _print_plan(plan):
    print(json.dumps(plan, indent=2, sort_keys=True, default=float))


def _writer(path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_grid(args):
    from .grid import build_grid, coarse_partition
    cfg = _load(args, required=args.dump is None)
    grid = build_grid(cfg.domain, cfg.N, cfg.dispersion)
    if args.dry_run:
        part = coarse_partition(grid, cfg.h) if grid.size else None
        _print_plan({"N": cfg.N, "modes": grid.size, "cells": part.size if part else 0,
                     "dump": args.dump})
        return 0
    if args.dump is None:
        print(f"N={cfg.N}: {grid.size} modes in D+")
        return 0
    fh, w = _writer(args.dump)
    with fh:
        w.writerow(["i", "j", "k_x", "k_y", "omega", "gamma", "psi"])
        for n in range(grid.size):
            i, j = grid.index[n]
            w.writerow([int(i), int(j), repr(float(grid.k[n, 0])), repr(float(grid.k[n, 1])),
                        repr(float(grid.omega[n])), repr(float(grid.gamma[n])),
                        repr(float(grid.psi[n]))])
    return 0


def cmd_sample_check(args):
    from .grid import build_grid
    from .measures import chi_square_product
    from .rng import INIT, member_stream
    cfg = _load(args)
    R = int(args.ensemble or cfg.run["ensemble"])
    if args.dry_run:
        _print_plan({"experiment": "sample-check", "N": cfg.N, "ensemble": R,
                     "init": cfg.run["init"], "out": args.out})
        return 0
    grid = build_grid(cfg.domain, cfg.N, cfg.dispersion)
    law = cfg.init_law
    seed = int(cfg.run["seed"])
    s1 = np.zeros(grid.size)
    s2 = np.zeros(grid.size)
    for r in range(R):
        a = np.abs(law.sample(grid, member_stream(seed, r, INIT))) ** 2
        s1 += a
        s2 += a * a
    mean = s1 / R
    se = np.sqrt(np.maximum(s2 / R - mean ** 2, 0.0) / max(R - 1, 1))
    target = law.target_variance(grid)
    footer = {"ensemble": R, "init": law.variant}
    if law.variant == "product":
        footer["chi_square"] = chi_square_product(grid, cfg.profile, cfg.alpha)
    footer["max_z"] = float(np.max(np.abs(mean - target) / np.where(se > 0, se, np.inf)))
    fh, w = _writer(args.out)
    with fh:
        w.writerow(["k_x", "k_y", "gamma", "target_variance", "sample_mean_action", "stderr"])
        for n in range(grid.size):
            w.writerow([repr(float(v)) for v in (grid.k[n, 0], grid.k[n, 1], grid.gamma[n],
                                                 target[n], mean[n], se[n])])
        fh.write("# " + json.dumps(footer, sort_keys=True) + "\n")
    return 0


def cmd_simulate(args):
    from .grid import build_grid
    from .harness import manifest, run_ensemble, write_json, write_modes_csv
    cfg = _apply_overrides(_load(args), args)
    cfg.validate("simulate")
    if args.dry_run:
        _print_plan(cfg.plan("simulate"))
        return 0
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    raw = run_ensemble(cfg, "simulate", args.workers)
    grid = build_grid(cfg.domain, cfg.N, cfg.dispersion)
    write_modes_csv(out / "modes.csv", raw, grid)
    write_json(out / "manifest.json", manifest(cfg, "simulate", time.perf_counter() - t0,
                                               args.workers or cfg.run["workers"], raw.partial))
    return 0


def cmd_kinetic(args):
    from .harness import write_kinetic_csv
    from .kinetic import QuadratureSettings, assemble, build_mesh, solve
    cfg = _load(args)
    kin = cfg.kinetic
    form = args.form or kin["form"]
    lam = args.lam if args.lam is not None else (cfg.lam if form == "lorentzian" else None)
    T = float(args.T if args.T is not None else cfg.run["T"])
    n_saves = int(cfg.run["n_saves"])
    taus = [T * s / n_saves for s in range(n_saves + 1)]
    if args.dry_run:
        _print_plan({"experiment": "kinetic", "form": form, "lambda": lam, "T": T,
                     "mesh_dx": kin["mesh_dx"], "dtau": kin["dtau"], "save_taus": taus,
                     "convention": kin["convention"], "out": args.out})
        return 0
    mesh = build_mesh(cfg.domain, float(kin["mesh_dx"]))
    op = assemble(mesh, form, lam, cfg.dispersion, kin["convention"],
                  QuadratureSettings(n_sigma=int(kin["n_sigma"])))
    f0 = mesh.sample(lambda k: cfg.profile(k, cfg.domain))
    traj = solve(f0, op, T, float(kin["dtau"]), save_times=taus)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_kinetic_csv(args.out, traj.tau, traj.values, mesh)
    return 0


def _experiment(args, which):
    from .harness import compare_theorem1, emit_outputs, flatness_theorem2, manifest, write_json
    cfg = _apply_overrides(_load(args), args)
    cfg.validate(which)
    if args.dry_run:
        _print_plan(cfg.plan(which))
        return 0
    t0 = time.perf_counter()
    fn = compare_theorem1 if which == "compare" else flatness_theorem2
    report = fn(cfg, args.workers)
    out = cfg.output_dir
    formats = ("csv",) if args.no_plots else ("csv", "svg")
    emit_outputs(report, out, formats, cfg)
    write_json(out / "manifest.json", manifest(cfg, which, time.perf_counter() - t0,
                                               args.workers or cfg.run["workers"], report.partial))
    key = "sup_error" if which == "compare" else "flatness"
    print(json.dumps({"experiment": which, "output_dir": str(out), key: report.summary[key],
                      "partial": report.partial}, default=float))
    return 0


def cmd_compare(args):
    return _experiment(args, "compare")


def cmd_flatness(args):
    return _experiment(args, "flatness")


def cmd_census(args):
    from .census import (brute_force_modulus, denominator_series, enumerate_resonant_modulus,
                         parse_eta)
    from .config import ExperimentConfig
    from .grid import DispersionParams, build_grid
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig.from_dict({})
    eta_text = args.eta or cfg.eta_text
    eta = parse_eta(eta_text)
    params = DispersionParams(float(eta))
    if args.dry_run:
        _print_plan({"experiment": "census", "mode": args.mode, "eta": str(eta), "N": args.N,
                     "out": args.out})
        return 0
    if args.mode == "denominators":
        Ns = _ints(args.N) if args.N else [cfg.N]
        reports = denominator_series(cfg.domain, Ns, eta, args.order, params)
        fh, w = _writer(args.out)
        with fh:
            w.writerow(["eta", "N", "order", "n_tuples", "min_denominator", "exact_zeros",
                        "nu_hat", "c_hat"])
            for r in reports:
                w.writerow([r.eta, r.N, r.order, r.n_tuples, repr(float(r.min_denominator)),
                            r.exact_zeros, "" if r.nu_hat is None else repr(r.nu_hat),
                            "" if r.c_hat is None else repr(r.c_hat)])
        return 0
    if args.mode == "modulus":
        if not args.m_index:
            raise UsageError("census --mode modulus needs --m-index i,j")
        m = tuple(_ints(args.m_index))
        Ns = _ints(args.N) if args.N else [cfg.N]
        fh, w = _writer(args.out)
        with fh:
            w.writerow(["N", "j_i", "j_j", "k_i", "k_j", "l_i", "l_j", "class"])
            for N in Ns:
                grid = build_grid(cfg.domain, N, params)
                if eta.is_rational:
                    # the structural reduction splits rational and eta parts; scan instead
                    mod = brute_force_modulus(grid, m, eta)
                else:
                    mod = enumerate_resonant_modulus(grid, m, eta,
                                                     cross_check=not args.no_cross_check)
                for t in mod.triples:
                    (ji, jj), (ki, kj), (li, lj) = t
                    w.writerow([N, ji, jj, ki, kj, li, lj, mod.classes[t]])
        return 0
    # curve
    from .manifold import curve_quadrature
    if not args.m:
        raise UsageError("census --mode curve needs --m mx,my")
    m = np.array(_floats(args.m))
    q = curve_quadrature(m, float(args.z), params, cfg.domain, int(args.n_sigma),
                         args.convention)
    fh, w = _writer(args.out)
    with fh:
        w.writerow(["sigma", "branch", "p_x", "p_y", "weight"])
        for s, b, p, wt in zip(q.sigma, q.branch, q.p, q.weight):
            w.writerow([repr(float(s)), int(b), repr(float(p[0])), repr(float(p[1])),
                        repr(float(wt))])
    return 0


def cmd_plot(args):
    from . import plotting
    from .harness import load_report
    cfg = _load(args)
    run_dir = Path(args.run) if args.run else cfg.output_dir
    lams = _floats(args.lambdas) if args.lambdas else []
    if args.dry_run:
        _print_plan({"experiment": "plot", "run": str(run_dir), "lambdas": lams})
        return 0
    written = []
    if (run_dir / "report.json").exists():
        report = load_report(run_dir)
        if not report.is_empty:
            written += plotting.report_figures(report, run_dir)
    elif not lams:
        raise UsageError(f"no report.json in {run_dir}; run compare or flatness first")
    if lams:
        from .kinetic import QuadratureSettings, assemble, build_mesh, solve
        kin = cfg.kinetic
        mesh = build_mesh(cfg.domain, float(kin["mesh_dx"]))
        st = QuadratureSettings(n_sigma=int(kin["n_sigma"]))
        f0 = mesh.sample(lambda k: cfg.profile(k, cfg.domain))
        taus = np.linspace(0, 0.5, 6)
        ref = solve(f0, assemble(mesh, "resonant", None, cfg.dispersion, kin["convention"], st),
                    0.5, float(kin["dtau"]), save_times=taus).values
        errs = []
        for lam in lams:
            op = assemble(mesh, "lorentzian", lam, cfg.dispersion, kin["convention"], st)
            v = solve(f0, op, 0.5, float(kin["dtau"]), save_times=taus).values
            errs.append(float(np.max(np.abs(v - ref))))
        run_dir.mkdir(parents=True, exist_ok=True)
        written.append(plotting.lambda_convergence(lams, errs, run_dir / "lambda_convergence.svg"))
    for p in written:
        print(p)
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="wavekin", description="Wave-kinetic limit experiments for a KP-type system.")
    p.add_argument("--version", action="version", version=f"wavekin {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, out_help=None):
        sp.add_argument("--config", help="experiment JSON")
        sp.add_argument("--dry-run", action="store_true",
                        help="validate the config and print the resolved plan; write nothing")
        if out_help:
            sp.add_argument("--out", help=out_help)
        return sp

    s = common(sub.add_parser("grid", help="build the lattice; optionally dump modes"))
    s.add_argument("--dump", help="CSV path for one row per mode")
    s.set_defaults(func=cmd_grid)

    s = common(sub.add_parser("sample-check", help="moment check of the initial law"),
               "CSV path")
    s.add_argument("--ensemble", type=int, help="number of draws (default run.ensemble)")
    s.set_defaults(func=cmd_sample_check, out="check.csv")

    for name, fn, hlp in (("simulate", cmd_simulate, "ensemble simulation to modes.csv"),
                          ("compare", cmd_compare, "ensemble versus Lorentzian kinetic solution"),
                          ("flatness", cmd_flatness, "deterministic flatness run")):
        s = common(sub.add_parser(name, help=hlp), "output directory (default output.dir)")
        s.add_argument("--workers", type=int, help="worker processes (results do not depend on it)")
        s.add_argument("--ensemble", type=int, help="override run.ensemble")
        s.add_argument("--seed", type=int, help="override run.seed")
        if name != "simulate":
            s.add_argument("--no-plots", action="store_true", help="skip SVG output")
        s.set_defaults(func=fn)

    s = common(sub.add_parser("kinetic", help="solve the linearized kinetic equation"), "CSV path")
    s.add_argument("--form", choices=("lorentzian", "resonant"))
    s.add_argument("--lambda", dest="lam", type=float, help="Lorentzian width (default 3 delta)")
    s.add_argument("--T", type=float, help="rescaled horizon (default run.T)")
    s.set_defaults(func=cmd_kinetic, out="kinetic.csv")

    s = common(sub.add_parser("census", help="resonance census"), "CSV path")
    s.add_argument("--mode", required=True, choices=("denominators", "modulus", "curve"))
    s.add_argument("--eta", help="exact eta, e.g. 1, sqrt2, 27/10")
    s.add_argument("--N", help="comma separated lattice sizes")
    s.add_argument("--order", default="three_wave", choices=("three_wave", "four_wave_offres"))
    s.add_argument("--m-index", help="integer index i,j of the base mode")
    s.add_argument("--no-cross-check", action="store_true")
    s.add_argument("--m", help="continuum base point mx,my (curve mode)")
    s.add_argument("--z", type=float, default=0.0)
    s.add_argument("--n-sigma", type=int, default=400)
    s.add_argument("--convention", default="coarea", choices=("coarea", "gradient"))
    s.set_defaults(func=cmd_census, out="census.csv")

    s = common(sub.add_parser("plot", help="SVG figures from a run directory"))
    s.add_argument("--run", help="run directory (default output.dir)")
    s.add_argument("--lambdas", help="also plot lambda convergence, e.g. 0.2,0.1,0.05,0.025")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    from .census import BudgetExceeded, StructureMismatch
    from .config import ValidationError
    from .dynamics import IntegrationError
    from .kinetic import KineticInstability

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"wavekin: invalid configuration: {exc}", file=sys.stderr)
        return 1
    except (IntegrationError, KineticInstability, BudgetExceeded, StructureMismatch,
            OSError) as exc:
        print(f"wavekin: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"wavekin: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
