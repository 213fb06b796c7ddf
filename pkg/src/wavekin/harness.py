"""Ensemble experiments: kinetic comparison and deterministic flatness.

Members are simulated in fixed-size batches; each batch returns partial sums
that are reduced in batch order, so outputs do not depend on the number of
worker processes.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .census import parse_eta, scan_small_denominators
from .config import ExperimentConfig, ValidationError, error_budget
from .dynamics import IntegrationError, IntegratorConfig, NoiseStream, integrate_member
from .grid import DispersionParams, build_grid, coarse_partition
from .kinetic import QuadratureSettings, assemble, build_mesh, solve
from .rng import INIT, NOISE, member_stream

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# ensemble


@dataclass
class RawTable:
    times: np.ndarray                 # (S,)
    steps: list
    R: int
    coupled: bool
    mean_action: np.ndarray           # (S, M) perturbed members
    se_action: np.ndarray
    cell_mean_action: np.ndarray      # (S, C)
    cell_se_action: np.ndarray
    mean_diff: np.ndarray | None      # (S, M) perturbed minus baseline
    se_diff: np.ndarray | None
    cell_mean_diff: np.ndarray | None
    cell_se_diff: np.ndarray | None
    partial: bool = False
    failures: list = field(default_factory=list)
    wall_time: float = 0.0


def _batches(R, size):
    return [(s, min(R, s + size)) for s in range(0, R, size)]


def _moments(X, part):
    # X: (S, B, M); returns sums over members at mode and cell level
    C = part.average(X)
    return (X.sum(axis=1), (X * X).sum(axis=1), C.sum(axis=1), (C * C).sum(axis=1))


def simulate_batch(raw_cfg, experiment, start, stop):
    """Integrate members ``start..stop-1`` (and their baselines) and return partial sums."""
    cfg = ExperimentConfig.from_dict(raw_cfg, validate=False)
    grid = build_grid(cfg.domain, cfg.N, cfg.dispersion)
    part = coarse_partition(grid, cfg.h)
    law = cfg.init_law
    run = cfg.run
    coupled = bool(run["coupled"])
    seed = int(run["seed"])
    pert, base, noise_rngs = [], [], []
    for r in range(start, stop):
        rng = member_stream(seed, r, INIT)
        if coupled:
            v, b = law.sample(grid, rng, coupled=True)
            base.append(b)
        else:
            v = law.sample(grid, rng)
        pert.append(v)
        noise_rngs.append(member_stream(seed, r, NOISE))
    B = len(pert)
    V = np.array(pert + base)
    noise = None
    if cfg.delta > 0:
        noise = NoiseStream(cfg.delta, noise_rngs + (noise_rngs if coupled else []))
    icfg = IntegratorConfig(dt=float(run["dt"]), eps=cfg.eps, substeps=int(run["substeps"]),
                            backend=run["backend"], conservation_tol=float(run["conservation_tol"]))
    tr = integrate_member(V, grid, icfg, noise, cfg.save_steps(experiment), raise_on_failure=False)
    A = tr.actions
    out = {"start": start, "stop": stop, "action": _moments(A[:, :B], part)}
    if coupled:
        out["diff"] = _moments(A[:, :B] - A[:, B:], part)
    out["failures"] = [(start + (r % B), *info) for r, info in sorted(tr.failed.items())]
    return out


def _finalize(sums, R):
    s1, s2 = sums
    mean = s1 / R
    if R > 1:
        var = np.maximum(s2 - R * mean * mean, 0.0) / (R - 1)
        se = np.sqrt(var / R)
    else:
        se = np.full_like(mean, np.nan)
    return mean, se


def run_ensemble(cfg: ExperimentConfig, experiment="compare", workers=None) -> RawTable:
    """Simulate ``run.ensemble`` members; deterministic for any worker count."""
    grid = build_grid(cfg.domain, cfg.N, cfg.dispersion)
    grid.require_nonempty()
    run = cfg.run
    R = int(run["ensemble"])
    workers = int(workers or run["workers"] or 1)
    batches = _batches(R, int(run["batch_size"]))
    steps = cfg.save_steps(experiment)
    budget = run.get("wall_budget")
    t0 = time.perf_counter()
    acc = None
    done = 0
    failures = []
    partial = False

    def absorb(res):
        nonlocal acc, done
        keys = ["action"] + (["diff"] if "diff" in res else [])
        if acc is None:
            acc = {k: [np.array(x) for x in res[k]] for k in keys}
        else:
            for k in keys:
                for i, x in enumerate(res[k]):
                    acc[k][i] += x
        done = res["stop"]
        failures.extend(res["failures"])

    payload = cfg.as_dict()
    if workers <= 1:
        for s, e in batches:
            absorb(simulate_batch(payload, experiment, s, e))
            if budget is not None and time.perf_counter() - t0 > float(budget) and e < R:
                partial = True
                break
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(simulate_batch, payload, experiment, s, e) for s, e in batches]
            for f in futs:
                if partial:
                    f.cancel()
                    continue
                absorb(f.result())
                if budget is not None and time.perf_counter() - t0 > float(budget) and done < R:
                    partial = True
    if failures:
        r, step, tm, drift = failures[0]
        raise IntegrationError(f"{len(failures)} member(s) failed the conservation monitor; first: "
                               f"member {r} at step {step} (t={tm:g}), drift {drift:.3e}",
                               member=r, step=step, time=tm)
    Rd = done
    ma, sa = _finalize(acc["action"][:2], Rd)
    ca, csa = _finalize(acc["action"][2:], Rd)
    md = sd = cd = csd = None
    if "diff" in acc:
        md, sd = _finalize(acc["diff"][:2], Rd)
        cd, csd = _finalize(acc["diff"][2:], Rd)
    dt = float(run["dt"])
    return RawTable(times=np.array(steps, dtype=float) * dt, steps=steps, R=Rd,
                    coupled="diff" in acc, mean_action=ma, se_action=sa, cell_mean_action=ca,
                    cell_se_action=csa, mean_diff=md, se_diff=sd, cell_mean_diff=cd,
                    cell_se_diff=csd, partial=partial, failures=failures,
                    wall_time=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# fluctuations


@dataclass
class FluctuationSeries:
    times: np.ndarray
    F_mode: np.ndarray        # (S, M)
    se_mode: np.ndarray
    F_cell: np.ndarray        # (S, C)
    se_cell: np.ndarray
    nodes: np.ndarray         # (C, 2) coarse nodes K
    k: np.ndarray             # (M, 2)
    R: int


def compute_fluctuations(raw: RawTable, cfg: ExperimentConfig) -> FluctuationSeries:
    """``N^alpha`` times the mean action excess over ``gamma`` (or the coupled difference)."""
    grid = build_grid(cfg.domain, cfg.N, cfg.dispersion)
    part = coarse_partition(grid, cfg.h)
    M = grid.size
    if raw.mean_action.shape[-1] != M:
        raise ValidationError(f"raw table has {raw.mean_action.shape[-1]} modes, grid has {M}")
    scale = float(cfg.N) ** cfg.alpha
    if raw.coupled:
        Fm, sm = raw.mean_diff * scale, raw.se_diff * scale
        Fc, sc = raw.cell_mean_diff * scale, raw.cell_se_diff * scale
    else:
        Fm, sm = (raw.mean_action - grid.gamma) * scale, raw.se_action * scale
        Fc = (raw.cell_mean_action - part.average(grid.gamma)) * scale
        sc = raw.cell_se_action * scale
    return FluctuationSeries(times=raw.times, F_mode=Fm, se_mode=sm, F_cell=Fc, se_cell=sc,
                             nodes=part.nodes, k=np.array(grid.k), R=raw.R)


# ---------------------------------------------------------------------------
# kinetic side


@dataclass
class KineticPrediction:
    tau: np.ndarray
    nodal: np.ndarray         # (S, n) mesh values
    cell: np.ndarray          # (S, C) coarse averages of the lattice-interpolated solution
    mesh: object
    form: str
    lam: float | None
    operator_norm: float


def kinetic_prediction(cfg: ExperimentConfig, taus, form=None, lam=None) -> KineticPrediction:
    """Solve from ``f(0) = g0`` and coarse-average the solution sampled at lattice points."""
    kin = cfg.kinetic
    form = form or kin["form"]
    if form == "lorentzian" and lam is None:
        lam = cfg.lam
    mesh = build_mesh(cfg.domain, float(kin["mesh_dx"]))
    settings = QuadratureSettings(n_sigma=int(kin["n_sigma"]))
    op = assemble(mesh, form, lam, cfg.dispersion, kin["convention"], settings)
    prof = cfg.profile
    f0 = mesh.sample(lambda k: prof(k, cfg.domain))
    T = float(max(taus)) if len(taus) else 0.0
    traj = solve(f0, op, T, float(kin["dtau"]), save_times=taus)
    grid = build_grid(cfg.domain, cfg.N, cfg.dispersion)
    part = coarse_partition(grid, cfg.h)
    # solve() may snap requested times to its step grid; keep caller order
    lat = np.array([mesh.interpolate(v, grid.k) for v in traj.values])
    cells = part.average(lat)
    idx = [int(np.argmin(np.abs(traj.tau - t))) for t in taus]
    return KineticPrediction(tau=traj.tau[idx], nodal=traj.values[idx], cell=cells[idx], mesh=mesh,
                             form=form, lam=lam, operator_norm=traj.operator_norm)


# ---------------------------------------------------------------------------
# reports


@dataclass
class ComparisonReport:
    experiment: str
    times: np.ndarray
    taus: np.ndarray
    nodes: np.ndarray
    F_mc: np.ndarray              # (S, C)
    stderr: np.ndarray            # (S, C)
    F_kin: np.ndarray             # (S, C)
    sup_error: np.ndarray         # (S,)
    summary: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)   # extra per-cell arrays
    partial: bool = False
    fluct: FluctuationSeries | None = None
    raw: RawTable | None = None
    kinetic: KineticPrediction | None = None

    @classmethod
    def empty(cls, experiment="compare"):
        z = np.zeros((0, 0))
        return cls(experiment, np.zeros(0), np.zeros(0), np.zeros((0, 2)), z, z, z, np.zeros(0))

    @property
    def is_empty(self):
        return len(self.times) == 0


def _cell_g0(cfg, part, grid):
    g = cfg.profile.on_grid(grid)
    return part.average(g), cfg.profile(part.nodes, cfg.domain)


def compare_theorem1(cfg: ExperimentConfig, workers=None, raw: RawTable | None = None) -> ComparisonReport:
    """Coarse fluctuations versus the Lorentzian kinetic solution with ``lambda = 3 delta``."""
    cfg.validate("compare")
    raw = raw or run_ensemble(cfg, "compare", workers)
    fl = compute_fluctuations(raw, cfg)
    taus = math.pi * cfg.eps ** 2 * raw.times
    kp = kinetic_prediction(cfg, taus, "lorentzian", cfg.lam)
    err = np.abs(fl.F_cell - kp.cell)
    sup = err.max(axis=1)
    grid = build_grid(cfg.domain, cfg.N, cfg.dispersion)
    part = coarse_partition(grid, cfg.h)
    gbar, gK = _cell_g0(cfg, part, grid)
    summary = {
        "R": raw.R,
        "coupled": raw.coupled,
        "lambda": cfg.lam,
        "h_constraint_satisfied": cfg.h <= cfg.delta ** 2 + 1e-12,
        "budget": error_budget(cfg),
        "sup_error": sup.tolist(),
        "max_stderr": fl.se_cell.max(axis=1).tolist(),
        "t0_band": float(4 * fl.se_cell[0].max() + np.abs(kp.cell[0] - gK).max()),
        "t0_coarse_vs_corner": float(np.abs(gbar - gK).max()),
        "kinetic_operator_norm": kp.operator_norm,
    }
    reference = {"g0_cell": gbar, "g0_corner": gK}
    if cfg.kinetic.get("compare_resonant"):
        kr = kinetic_prediction(cfg, taus, "resonant")
        summary["sup_error_resonant"] = np.abs(fl.F_cell - kr.cell).max(axis=1).tolist()
        summary["sup_lorentzian_vs_resonant"] = np.abs(kp.cell - kr.cell).max(axis=1).tolist()
    return ComparisonReport("compare", raw.times, taus, fl.nodes, fl.F_cell, fl.se_cell, kp.cell,
                            sup, summary, reference, raw.partial, fl, raw, kp)


def census_summary(cfg: ExperimentConfig, etas=None, N=None):
    N = N or min(cfg.N, 8)
    etas = etas or [cfg.eta_text, "1"]
    out = {}
    for e in dict.fromkeys(etas):
        g = build_grid(cfg.domain, N, DispersionParams(float(parse_eta(e))))
        rep = scan_small_denominators(g, e, "three_wave")
        out[str(e)] = {"N": N, "min_three_wave_denominator": rep.min_denominator,
                       "exact_three_wave_resonances": rep.exact_zeros}
    return out


def flatness_theorem2(cfg: ExperimentConfig, workers=None, raw: RawTable | None = None) -> ComparisonReport:
    """Deterministic run to ``T / eps^2``: coarse fluctuations against ``g0`` plus kinetic contrast."""
    cfg.validate("flatness")
    raw = raw or run_ensemble(cfg, "flatness", workers)
    fl = compute_fluctuations(raw, cfg)
    grid = build_grid(cfg.domain, cfg.N, cfg.dispersion)
    part = coarse_partition(grid, cfg.h)
    gbar, gK = _cell_g0(cfg, part, grid)
    taus = math.pi * cfg.eps ** 2 * raw.times
    kp = kinetic_prediction(cfg, taus, "resonant")
    flat = np.abs(fl.F_cell - gbar).max(axis=1)
    flat_corner = np.abs(fl.F_cell - gK).max(axis=1)
    drift = np.abs(kp.cell - kp.cell[0]).max(axis=1)
    # same members at every save time: F(t) - F(0) has the mean of F(t) - g0 (E F(0) is the
    # cell average of g0) without the initial sampling noise
    flat_cv = np.abs(fl.F_cell - fl.F_cell[0]).max(axis=1)
    gsup = cfg.profile.sup_norm(cfg.domain)
    summary = {
        "R": raw.R,
        "g0_sup": gsup,
        "flatness": flat.tolist(),
        "flatness_vs_corner": flat_corner.tolist(),
        "flatness_paired": flat_cv.tolist(),
        "kinetic_drift": drift.tolist(),
        "max_stderr": fl.se_cell.max(axis=1).tolist(),
        "census": census_summary(cfg),
        "kinetic_operator_norm": kp.operator_norm,
    }
    reference = {"g0_cell": gbar, "g0_corner": gK, "kinetic_drift_cell": kp.cell - kp.cell[0]}
    return ComparisonReport("flatness", raw.times, taus, fl.nodes, fl.F_cell, fl.se_cell, kp.cell,
                            flat, summary, reference, raw.partial, fl, raw, kp)


# ---------------------------------------------------------------------------
# persistence


def _fmt(x):
    return repr(float(x))


def write_modes_csv(path, raw: RawTable, grid):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = ["t", "k_x", "k_y", "mean_action", "stderr"]
        if raw is not None and raw.coupled:
            cols += ["mean_diff", "stderr_diff"]
        w.writerow(cols)
        if raw is None:
            return
        for s, t in enumerate(raw.times):
            for i in range(grid.size):
                row = [_fmt(t), _fmt(grid.k[i, 0]), _fmt(grid.k[i, 1]),
                       _fmt(raw.mean_action[s, i]), _fmt(raw.se_action[s, i])]
                if raw.coupled:
                    row += [_fmt(raw.mean_diff[s, i]), _fmt(raw.se_diff[s, i])]
                w.writerow(row)


def write_kinetic_csv(path, taus, nodal, mesh):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau", "m_x", "m_y", "f"])
        if mesh is None:
            return
        act = mesh.active_index
        for tau, vals in zip(taus, nodal):
            for n in act:
                w.writerow([_fmt(tau), _fmt(mesh.nodes[n, 0]), _fmt(mesh.nodes[n, 1]), _fmt(vals[n])])


def write_fluctuations_csv(path, report: ComparisonReport):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if report.experiment == "flatness":
            w.writerow(["t", "tau", "K_x", "K_y", "F_mc", "g0_cell", "g0_corner", "F_kin_contrast",
                        "abs_err", "stderr"])
        else:
            w.writerow(["t", "tau", "K_x", "K_y", "F_mc", "F_kin", "abs_err", "stderr"])
        for s, t in enumerate(report.times):
            for c, K in enumerate(report.nodes):
                if report.experiment == "flatness":
                    g = report.reference["g0_cell"][c]
                    w.writerow([_fmt(t), _fmt(report.taus[s]), _fmt(K[0]), _fmt(K[1]),
                                _fmt(report.F_mc[s, c]), _fmt(g),
                                _fmt(report.reference["g0_corner"][c]), _fmt(report.F_kin[s, c]),
                                _fmt(abs(report.F_mc[s, c] - g)), _fmt(report.stderr[s, c])])
                else:
                    w.writerow([_fmt(t), _fmt(report.taus[s]), _fmt(K[0]), _fmt(K[1]),
                                _fmt(report.F_mc[s, c]), _fmt(report.F_kin[s, c]),
                                _fmt(abs(report.F_mc[s, c] - report.F_kin[s, c])),
                                _fmt(report.stderr[s, c])])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def write_json(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def manifest(cfg: ExperimentConfig, experiment, wall_time, workers, partial=False):
    import numba
    import scipy
    return {
        "experiment": experiment,
        "config": cfg.as_dict(),
        "seed": int(cfg.run["seed"]),
        "versions": {"wavekin": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "numba": numba.__version__, "python": platform.python_version()},
        "wall_time_s": wall_time,
        "workers": workers,
        "partial": partial,
    }


def load_report(outdir) -> ComparisonReport:
    """Rebuild a report (enough for plotting) from ``fluctuations.csv`` and ``report.json``."""
    out = Path(outdir)
    body = json.loads((out / "report.json").read_text())
    with open(out / "fluctuations.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    exp = body["experiment"]
    times = np.asarray(body["times"], dtype=float)
    if not rows:
        rep = ComparisonReport.empty(exp)
        rep.summary = body["summary"]
        return rep
    S = len(times)
    C = len(rows) // S
    col = lambda k: np.array([float(r[k]) for r in rows]).reshape(S, C)
    nodes = np.stack([col("K_x")[0], col("K_y")[0]], axis=1)
    F = col("F_mc")
    kin = col("F_kin_contrast" if exp == "flatness" else "F_kin")
    ref = {}
    if exp == "flatness":
        ref = {"g0_cell": col("g0_cell")[0], "g0_corner": col("g0_corner")[0]}
    return ComparisonReport(exp, times, np.asarray(body["taus"], dtype=float), nodes, F,
                            col("stderr"), kin, col("abs_err").max(axis=1), body["summary"], ref,
                            bool(body.get("partial", False)))


def emit_outputs(report: ComparisonReport, outdir, formats=("csv", "svg"), cfg=None):
    """Write CSV tables, ``report.json`` and SVG plots; empty reports give header-only CSVs."""
    out = Path(outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from None
    written = []
    if "csv" in formats:
        p = out / "fluctuations.csv"
        write_fluctuations_csv(p, report)
        written.append(p)
        grid = build_grid(cfg.domain, cfg.N, cfg.dispersion) if cfg is not None else None
        if grid is not None:
            write_modes_csv(out / "modes.csv", report.raw, grid)
            written.append(out / "modes.csv")
        if report.kinetic is not None:
            write_kinetic_csv(out / "kinetic.csv", report.kinetic.tau, report.kinetic.nodal,
                              report.kinetic.mesh)
            written.append(out / "kinetic.csv")
        else:
            write_kinetic_csv(out / "kinetic.csv", [], [], None)
            written.append(out / "kinetic.csv")
        body = {"experiment": report.experiment, "partial": report.partial,
                "times": report.times, "taus": report.taus, "summary": report.summary}
        write_json(out / "report.json", body)
        written.append(out / "report.json")
    if "svg" in formats and not report.is_empty:
        from . import plotting
        written += plotting.report_figures(report, out)
    return written
