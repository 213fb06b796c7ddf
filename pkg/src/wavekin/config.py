"""Experiment configuration: one JSON document, validated on load."""

from __future__ import annotations

import copy
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from .census import parse_eta
from .grid import DispersionParams, DomainSpec, build_grid
from .measures import InitLaw, PerturbationProfile, chi_square_product


class ValidationError(ValueError):
    """A configuration invariant is violated; the message names it."""


DEFAULTS = {
    "domain": {"a": 0.5, "b": 2.0, "c": 1.5, "w": 0.15},
    "grid": {"N": 16},
    "physics": {"eta": 1.0, "eps": 0.2, "delta": 0.55, "alpha": 1.0},
    "g0": {"kind": "gaussian_bump", "amplitude": 1.0, "center": [1.25, 0.0], "width": 0.3},
    "run": {"T": 0.5, "dt": 0.05, "ensemble": 1000, "seed": 0, "coupled": True,
            "save_every": None, "n_saves": 5, "t_end": None, "init": "product",
            "batch_size": 32, "workers": 1, "backend": "direct", "substeps": 1,
            "conservation_tol": 1e-6, "wall_budget": None},
    "coarse": {"h": 0.25, "override_h_constraint": False},
    "kinetic": {"mesh_dx": 0.05, "dtau": 0.01, "n_sigma": 400, "form": "lorentzian",
                "convention": "stationary", "compare_resonant": False},
    "output": {"dir": "runs/default"},
}


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key not in base:
            raise ValidationError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ValidationError(f"config section {path + key!r} must be an object")
            out[key] = _merge(base[key], val, path + key + ".")
        else:
            out[key] = val
    return out


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    # ---- construction -------------------------------------------------
    @classmethod
    def from_dict(cls, data, validate=True):
        cfg = cls(_merge(DEFAULTS, data or {}))
        if validate:
            cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path, validate=True):
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {path} is not valid JSON: {exc}") from None
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data, validate)

    def replace(self, **sections):
        """Copy with section overrides, e.g. ``replace(physics={"eps": 0.1})``."""
        return ExperimentConfig.from_dict(_merge(self.raw, sections))

    def to_json(self):
        return json.dumps(self.raw, indent=2, sort_keys=True)

    # ---- typed views ----------------------------------------------------
    def section(self, name):
        return self.raw[name]

    @property
    def domain(self) -> DomainSpec:
        d = self.raw["domain"]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return DomainSpec(float(d["a"]), float(d["b"]), float(d["c"]), float(d["w"]))

    @property
    def N(self) -> int:
        return int(self.raw["grid"]["N"])

    @property
    def eta_text(self) -> str:
        return str(self.raw["physics"]["eta"])

    @property
    def eta(self) -> float:
        return float(parse_eta(self.raw["physics"]["eta"]))

    @property
    def dispersion(self) -> DispersionParams:
        return DispersionParams(self.eta)

    @property
    def eps(self) -> float:
        return float(self.raw["physics"]["eps"])

    @property
    def delta(self) -> float:
        return float(self.raw["physics"]["delta"])

    @property
    def alpha(self) -> float:
        return float(self.raw["physics"]["alpha"])

    @property
    def lam(self) -> float:
        """Lorentzian width tied to the noise strength, ``lambda = 3 delta``."""
        return 3.0 * self.delta

    @property
    def profile(self) -> PerturbationProfile:
        g = self.raw["g0"]
        return PerturbationProfile(kind=g["kind"], amplitude=float(g["amplitude"]),
                                   center=tuple(float(c) for c in g["center"]),
                                   width=float(g["width"]))

    @property
    def init_law(self) -> InitLaw:
        return InitLaw(variant=self.raw["run"]["init"], profile=self.profile, alpha=self.alpha)

    @property
    def h(self) -> float:
        return float(self.raw["coarse"]["h"])

    @property
    def run(self):
        return self.raw["run"]

    @property
    def kinetic(self):
        return self.raw["kinetic"]

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["output"]["dir"])

    def physical_horizon(self, experiment="compare") -> float:
        """Simulation end time: ``T / (pi eps^2)`` (kinetic runs) or ``T / eps^2`` (flatness)."""
        if self.run["t_end"] is not None:
            return float(self.run["t_end"])
        if self.eps == 0:
            raise ValidationError("eps = 0 needs an explicit run.t_end")
        T = float(self.run["T"])
        if experiment == "flatness":
            return T / self.eps ** 2
        return T / (math.pi * self.eps ** 2)

    def save_steps(self, experiment="compare"):
        dt = float(self.run["dt"])
        n = int(round(self.physical_horizon(experiment) / dt))
        every = self.run["save_every"]
        if every is None:
            k = max(1, int(self.run["n_saves"]))
            marks = {int(round(n * s / k)) for s in range(k + 1)}
        else:
            every = int(every)
            marks = set(range(0, n + 1, every)) | {n}
        return sorted(marks)

    # ---- validation ------------------------------------------------------
    def validate(self, experiment=None):
        r = self.raw
        try:
            self.domain
            self.dispersion
            self.profile
            self.init_law
        except ValueError as exc:
            raise ValidationError(str(exc)) from None
        N = r["grid"]["N"]
        if not isinstance(N, int) or N < 1:
            raise ValidationError(f"grid.N must be a positive integer, got {N!r}")
        if self.eps < 0:
            raise ValidationError(f"physics.eps must be >= 0, got {self.eps}")
        if self.delta < 0:
            raise ValidationError(f"physics.delta must be >= 0, got {self.delta}")
        if not 1 <= self.alpha <= 2:
            raise ValidationError(f"physics.alpha must satisfy 1 <= alpha <= 2, got {self.alpha}")
        if self.h < 1.0 / self.N - 1e-12:
            raise ValidationError(f"coarse.h={self.h} violates h >= 1/N = {1.0 / self.N:g}")
        run = r["run"]
        if run["init"] == "product" and not self.profile.is_zero:
            # the smallness of g0 needed for a finite chi-square distance is left open, so the
            # check is the exact one: |g0(k)| N^-alpha < gamma_k on every mode
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                grid = build_grid(self.domain, N, self.dispersion)
            try:
                chi_square_product(grid, self.profile, self.alpha)
            except ValueError as exc:
                raise ValidationError(f"initial law: {exc}") from None
        if not float(run["dt"]) > 0:
            raise ValidationError(f"run.dt must be positive, got {run['dt']}")
        if int(run["ensemble"]) < 1:
            raise ValidationError(f"run.ensemble must be >= 1, got {run['ensemble']}")
        if int(run["batch_size"]) < 1:
            raise ValidationError("run.batch_size must be >= 1")
        if run["backend"] not in ("direct", "fft"):
            raise ValidationError(f"run.backend must be direct or fft, got {run['backend']!r}")
        kin = r["kinetic"]
        if kin["form"] not in ("lorentzian", "resonant"):
            raise ValidationError(f"kinetic.form must be lorentzian or resonant, got {kin['form']!r}")
        if not float(kin["mesh_dx"]) > 0 or not float(kin["dtau"]) > 0:
            raise ValidationError("kinetic.mesh_dx and kinetic.dtau must be positive")
        if experiment == "compare":
            if self.delta <= 0:
                raise ValidationError("compare needs physics.delta > 0")
            if self.eps <= 0 and run["t_end"] is None:
                raise ValidationError("compare needs physics.eps > 0 (or run.t_end)")
            if self.h > self.delta ** 2 + 1e-12 and not r["coarse"]["override_h_constraint"]:
                raise ValidationError(f"coarse.h={self.h} violates h <= delta^2 = {self.delta ** 2:g} "
                                      "(set coarse.override_h_constraint to run anyway)")
        if experiment == "flatness" and self.delta != 0:
            raise ValidationError(f"flatness needs physics.delta = 0, got {self.delta}")
        if not run["coupled"]:
            need = 100 * self.N ** (2 * self.alpha)
            if int(run["ensemble"]) < need:
                warnings.warn(f"uncoupled estimator with R={run['ensemble']} < 100 N^(2 alpha) = "
                              f"{need:.0f}: fluctuations will be noise dominated", RuntimeWarning,
                              stacklevel=2)
        return self

    def plan(self, experiment="simulate"):
        """Human-readable resolved plan (used by ``--dry-run``)."""
        steps = self.save_steps(experiment) if (self.eps > 0 or self.run["t_end"] is not None) else []
        dt = float(self.run["dt"])
        out = {
            "experiment": experiment,
            "N": self.N,
            "eta": self.eta_text,
            "eps": self.eps,
            "delta": self.delta,
            "lambda": self.lam,
            "alpha": self.alpha,
            "h": self.h,
            "ensemble": int(self.run["ensemble"]),
            "coupled": bool(self.run["coupled"]),
            "t_end": steps[-1] * dt if steps else None,
            "macro_steps": steps[-1] if steps else 0,
            "save_times": [s * dt for s in steps],
            "output_dir": str(self.output_dir),
        }
        if experiment == "compare":
            out["budget"] = error_budget(self)
        return out

    def as_dict(self):
        return copy.deepcopy(self.raw)


def error_budget(cfg: ExperimentConfig):
    """The three terms ``eps/(h delta^2)``, ``1/(h delta N)``, ``delta/N^(2-alpha)``."""
    h, d, N, e, a = cfg.h, cfg.delta, cfg.N, cfg.eps, cfg.alpha
    inf = float("inf")
    return {
        "eps_over_h_delta2": e / (h * d * d) if d > 0 else inf,
        "one_over_h_delta_N": 1.0 / (h * d * N) if d > 0 else inf,
        "delta_over_N_2_minus_alpha": d / N ** (2 - a),
    }


__all__ = ["ExperimentConfig", "ValidationError", "DEFAULTS", "error_budget"]
