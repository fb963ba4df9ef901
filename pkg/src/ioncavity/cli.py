"""Command-line runner: ``ioncavity <experiment> --config FILE [--seed N] [--threads N] [--out-dir D]``.

The config is a YAML mapping with the optional sections ``params``
(PhysicalParams fields, Hz / s / rad), ``gate`` (GateParams fields),
``integrator`` (IntegratorConfig fields except ``t_end``) and ``options``
(experiment-specific keys listed in :data:`OPTIONS`), plus top-level ``seed``
and ``out_dir``. Exit codes: 0 success, 2 config error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import platform
import sys
import time
from pathlib import Path
from typing import Any, Optional

import numpy as np
import scipy
import yaml

from . import __version__, experiments, kernels, photonstats
from .control import FitError, GateParams, MotionalTruncationError
from .dynamics import IntegratorConfig, NumericalError, series_to_csv
from .model import ParameterError, PhysicalParams
from .tomography import ConvergenceError, bootstrap, fidelity_curve_csv, records_to_json

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

EXPERIMENTS = ("ms-gate", "parity-scan", "stark-demo", "phase-sweep", "photon-shape",
               "tomography", "efficiency", "two-photon")

# experiment -> option defaults
OPTIONS: dict[str, dict[str, Any]] = {
    "ms-gate": {"n_points": 221},
    "parity-scan": {"n_phases": 41},
    "stark-demo": {"n_points": 161, "t_max": 16e-6},
    "phase-sweep": {"n_phases": 25, "window": 6e-6},
    "photon-shape": {"t_end": 20e-6, "bin_width": 1e-6},
    "tomography": {"windows_us": [2, 4, 6, 10, 20, 30, 40, 55], "shots": 2000, "resamples": 0,
                   "bootstrap_window_us": 6},
    "efficiency": {"t_end": 55e-6, "bin_width": 1e-6},
    "two-photon": {"attempts": 223106, "observed": 28, "mc_samples": 0, "coincidence": {}},
}
INTEGRATOR_KEYS = {f.name for f in dataclasses.fields(IntegratorConfig)} - {"t_end"}
TOP_KEYS = {"params", "gate", "integrator", "options", "seed", "out_dir", "experiment"}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------------
# config

def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    return data


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: must be a mapping")
    return dict(sec)


def _numbers(sec: dict) -> dict:
    out = {}
    for k, v in sec.items():
        if isinstance(v, str):
            try:
                v = float(v)
            except ValueError:
                pass
        out[k] = v
    return out


def resolve(cfg: dict, experiment: str) -> dict:
    """Validated, fully-populated configuration."""
    unknown = set(cfg) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown value {experiment!r}")
    params_in = _section(cfg, "params")
    for k in ("tone_assignment",):
        if k in params_in:
            params_in[k] = str(params_in[k])
    try:
        params = PhysicalParams.from_dict(_numbers(params_in))
    except (ParameterError, TypeError) as exc:
        raise ConfigError(f"params: {exc}") from exc
    gate_in = _section(cfg, "gate")
    gate_fields = {f.name for f in dataclasses.fields(GateParams)}
    if set(gate_in) - gate_fields:
        raise ConfigError(f"gate: unknown field(s) {sorted(set(gate_in) - gate_fields)}")
    try:
        gate = GateParams(**_numbers(gate_in))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"gate: {exc}") from exc
    integ = _numbers(_section(cfg, "integrator"))
    if set(integ) - INTEGRATOR_KEYS:
        raise ConfigError(f"integrator: unknown field(s) {sorted(set(integ) - INTEGRATOR_KEYS)}")
    try:
        IntegratorConfig(t_end=1e-6, **integ)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"integrator: {exc}") from exc
    opts_in = _section(cfg, "options")
    defaults = OPTIONS[experiment]
    if set(opts_in) - set(defaults):
        raise ConfigError(f"options: unknown key(s) for {experiment}: {sorted(set(opts_in) - set(defaults))}")
    options = {**defaults, **opts_in}
    _check_options(experiment, options)
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed: must be a nonnegative integer")
    return {"experiment": experiment, "params": params, "gate": gate, "integrator": integ,
            "options": options, "seed": seed, "out_dir": cfg.get("out_dir")}


def _check_options(experiment: str, o: dict) -> None:
    def positive_int(key, minimum=1):
        if not isinstance(o[key], int) or o[key] < minimum:
            raise ConfigError(f"options.{key}: must be an integer >= {minimum}")

    def positive(key):
        if not isinstance(o[key], (int, float)) or not o[key] > 0:
            raise ConfigError(f"options.{key}: must be a positive number")

    for key in ("n_points", "n_phases", "shots", "attempts"):
        if key in o:
            positive_int(key, 8 if key == "n_phases" and experiment == "parity-scan" else 1)
    for key in ("t_max", "window", "t_end", "bin_width"):
        if key in o:
            positive(key)
    if experiment == "tomography":
        w = o["windows_us"]
        if not isinstance(w, list) or not w or any(not isinstance(x, (int, float)) or x <= 0 for x in w):
            raise ConfigError("options.windows_us: must be a nonempty list of positive numbers")
        if not isinstance(o["resamples"], int) or (o["resamples"] and o["resamples"] < 100):
            raise ConfigError("options.resamples: must be 0 or an integer >= 100")
    if experiment == "two-photon":
        if not isinstance(o["coincidence"], dict):
            raise ConfigError("options.coincidence: must be a mapping")
        try:
            photonstats.CoincidenceParams(**o["coincidence"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"options.coincidence: {exc}") from exc
        if not isinstance(o["mc_samples"], int) or o["mc_samples"] < 0:
            raise ConfigError("options.mc_samples: must be a nonnegative integer")


def config_hash(resolved: dict) -> str:
    canon = {
        "experiment": resolved["experiment"],
        "params": resolved["params"].to_dict(),
        "gate": dataclasses.asdict(resolved["gate"]),
        "integrator": resolved["integrator"],
        "options": resolved["options"],
        "seed": resolved["seed"],
    }
    text = json.dumps(canon, sort_keys=True, default=_json_default)
    return hashlib.sha256(text.encode()).hexdigest()


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and math.isinf(o):
        return "inf"
    raise TypeError(f"not serialisable: {type(o)}")


def _clean(o):
    """Recursively convert to JSON-safe values with deterministic float formatting."""
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, np.ndarray):
        return [_clean(v) for v in o.tolist()]
    if isinstance(o, (np.floating, float)):
        v = float(o)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return float(f"{v:.12g}")
    if isinstance(o, np.integer):
        return int(o)
    return o


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------------
# experiments

def _csv(columns: dict, first: str, scale: float = 1.0) -> str:
    t = np.asarray(columns[first], dtype=float)
    rest = {k: np.asarray(v, dtype=float) for k, v in columns.items() if k != first}
    return series_to_csv(t, rest, time_column=first, time_scale=scale)


def run_experiment(r: dict, threads: int = 1) -> dict[str, str]:
    """Execute one experiment; returns file name -> content."""
    exp, p, g, o, integ, seed = (r["experiment"], r["params"], r["gate"], r["options"],
                                 r["integrator"], r["seed"])
    files: dict[str, str] = {}
    if exp == "ms-gate":
        res = experiments.ms_gate(g, o["n_points"])
        s = res["series"]
        files["ms_gate.csv"] = series_to_csv(res["times"], {"p_SS": s["p_SS"], "p_DD": s["p_DD"],
                                                            "p_mixed": s["p_mixed"], "p_top_fock": s["p_top"],
                                                            "motional_entropy": s["motional_entropy"]})
        files["ms_gate.json"] = dump_json({k: res[k] for k in ("fidelity_phi", "parity_amplitude", "max_top_fock",
                                                                "entropy_at_gate_time")} | {"gate_time_s": g.gate_time})
    elif exp == "parity-scan":
        res = experiments.parity_scan(g, o["n_phases"])
        files["parity_scan.csv"] = _csv({"phase_rad": res["phases"], "parity": res["parity"]}, "phase_rad")
        files["parity_scan.json"] = dump_json({"fit": res["fit"], "fidelity_bound": res["fidelity_bound"],
                                               "psi_plus_phase_rad": res["psi_plus_phase"]})
    elif exp == "stark-demo":
        res = experiments.stark_demo(g, o["n_points"], o["t_max"])
        s = res["series"]
        files["stark_demo.csv"] = series_to_csv(res["durations"], {"p_SS": s["p_SS"], "p_DD": s["p_DD"],
                                                                   "p_SD": s["p_SD"]}, time_column="duration_us")
        files["stark_demo.json"] = dump_json({"p_SD_half_period": res["p_SD_half_period"],
                                              "fitted_period_s": res["period"], "stark_period_s": g.stark_period})
    elif exp == "phase-sweep":
        phases = np.linspace(0, 2 * math.pi, o["n_phases"], endpoint=False)
        res = experiments.phase_sweep(p, phases, o["window"], integ, threads)
        files["phase_sweep.csv"] = _csv({"phi_rad": phases, "eta": res["eta"], "r": res["r"]}, "phi_rad")
        k = int(np.argmax(res["r"]))
        files["phase_sweep.json"] = dump_json({"eta_single": res["eta_psi"], "r_max": res["r"][k],
                                               "phi_max_rad": phases[k], "r_min": float(res["r"].min()),
                                               "phi_min_rad": phases[int(np.argmin(res["r"]))],
                                               "superradiant_phase_rad": experiments.superradiant_phase(p),
                                               "window_s": o["window"]})
    elif exp == "photon-shape":
        res = experiments.photon_shapes(p, o["t_end"], o["bin_width"], integ, threads)
        files["photon_shape.csv"] = series_to_csv(res["bin_starts"], res["shapes"])
        red = experiments.scattering_reduction(p, experiments.SWEEP_WINDOW, integ)
        files["photon_shape.json"] = dump_json({"bin_width_s": o["bin_width"], "reduction_first_6us": red,
                                                "totals": {k: float(v.sum()) for k, v in res["shapes"].items()}})
    elif exp in ("tomography", "efficiency"):
        t_end = max(o["windows_us"]) * 1e-6 if exp == "tomography" else o["t_end"]
        runs = {enc: experiments.run_mapping(p, enc, t_end, integ, threads) for enc in ("super", "single")}
        if exp == "tomography":
            res = experiments.tomography_vs_window(p, o["windows_us"], o["shots"], expected=False, seed=seed,
                                                   threads=threads, runs=runs)
            files["tomography.csv"] = fidelity_curve_csv(res["rows"])
            report = {"shots_per_setting": o["shots"], "rows": res["rows"],
                      "chi": {f"{enc}_{T:g}us": chi.to_dict() for (enc, T), chi in res["chi"].items()}}
            if o["resamples"]:
                T = float(o["bootstrap_window_us"])
                report["bootstrap"] = {}
                for j, enc in enumerate(("super", "single")):
                    recs = experiments.mapping_records(p, runs[enc], [0.0, T * 1e-6], o["shots"], seed + j)
                    report["bootstrap"][enc] = bootstrap(recs, o["resamples"], seed + 100 + j, threads)
                    files[f"records_{enc}_{T:g}us.json"] = records_to_json(recs) + "\n"
            files["tomography.json"] = dump_json(report)
        else:
            res = experiments.efficiency_curves(p, t_end, o["bin_width"], integ, threads, runs)
            files["efficiency.csv"] = series_to_csv(res["times"], {"eps_super": res["eps_super"],
                                                                   "eps_single": res["eps_single"],
                                                                   "ratio": res["ratio"]})
            files["efficiency.json"] = dump_json({
                "ratio_6us": experiments.efficiency_ratio_at(res, 6e-6),
                "ratio_end": experiments.efficiency_ratio_at(res, t_end),
                "eps_super_end": res["eps_super"][-1], "eps_single_end": res["eps_single"][-1],
                "monotone": bool(np.all(np.diff(res["eps_super"]) >= 0) and np.all(np.diff(res["eps_single"]) >= 0))})
    elif exp == "two-photon":
        cp = photonstats.CoincidenceParams(**o["coincidence"])
        rep = photonstats.report(cp, o["attempts"], o["observed"], o["mc_samples"], seed)
        files["two_photon.json"] = dump_json(rep)
    return files


# ---------------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ioncavity", description="Two-ion cavity QED reproductions")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", help="YAML configuration file")
    ap.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for independent simulations")
    ap.add_argument("--out-dir", default=None, help="output directory (overrides config)")
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    t_start = time.perf_counter()
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        resolved = resolve(cfg, args.experiment)
        if args.threads < 1:
            raise ConfigError("--threads: must be >= 1")
        out_dir = Path(args.out_dir or resolved["out_dir"] or f"out/{args.experiment}")
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"out_dir: cannot create {out_dir}: {exc}") from exc
        if not os.access(out_dir, os.W_OK):
            raise ConfigError(f"out_dir: {out_dir} is not writable")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        files = run_experiment(resolved, args.threads)
    except (NumericalError, MotionalTruncationError, FitError, ConvergenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    digests = {}
    for name, text in sorted(files.items()):
        (out_dir / name).write_text(text, encoding="utf-8")
        digests[name] = hashlib.sha256(text.encode()).hexdigest()
    manifest = {
        "experiment": args.experiment,
        "config_hash": config_hash(resolved),
        "seed": resolved["seed"],
        "threads": args.threads,
        "versions": {"ioncavity": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__, "kernel_backend": kernels.BACKEND},
        "wall_time_s": round(time.perf_counter() - t_start, 3),
        "outputs": digests,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{args.experiment}: wrote {len(files)} file(s) to {out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
