"""End-to-end reproduction pipelines shared by the CLI and the acceptance tests."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Sequence

import numpy as np

from . import control, tomography
from .control import GateParams
from .dynamics import (
    IntegratorConfig,
    Trajectory,
    cumulative_efficiency,
    detection_probability,
    evolve,
    photon_shape,
)
from .model import PhysicalParams, build_effective_bichromatic_model, build_effective_model
from .qcore import DensityMatrix

SWEEP_WINDOW = 6e-6
RAMAN_DURATION = 55e-6


def _map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _cfg(t_end: float, integrator: Optional[dict]) -> IntegratorConfig:
    return IntegratorConfig(t_end=t_end, **(integrator or {}))


# ---------------------------------------------------------------------------------
# coherent control

def ms_gate(gate: GateParams, n_points: int = 221, t_max: Optional[float] = None) -> dict:
    t_max = gate.gate_time * 1.2 if t_max is None else t_max
    times = np.linspace(0.0, t_max, n_points)
    res = control.ms_gate_evolution(gate, times)
    end = control.ms_gate_evolution(gate, [gate.gate_time])
    spin = control.ms_spin_state(end)
    phi = control.phi_state_vector()
    fidelity = float(np.real(phi.conj() @ spin.matrix @ phi))
    phases = np.linspace(0, 2 * math.pi, 32, endpoint=False)
    amp = control.fidelity_bound(control.parity_scan(spin, phases), phases)
    return {"times": times, "series": res, "fidelity_phi": fidelity, "parity_amplitude": amp,
            "max_top_fock": float(res["p_top"].max()), "entropy_at_gate_time": float(end["motional_entropy"][0])}


def parity_scan(gate: GateParams, n_phases: int = 41) -> dict:
    spin = control.ms_spin_state(control.ms_gate_evolution(gate, [gate.gate_time]))
    phases = np.linspace(0, 2 * math.pi, n_phases)
    values = control.parity_scan(spin, phases)
    fit = control.fit_parity(phases, values)
    return {"phases": phases, "parity": values, "fit": fit,
            "fidelity_bound": control.fidelity_bound(values, phases),
            "psi_plus_phase": control.PSI_PLUS_PHASE}


def stark_demo(gate: GateParams, n_points: int = 161, t_max: float = 16e-6) -> dict:
    durations = np.linspace(0.0, t_max, n_points)
    res = control.stark_ramsey(durations, gate)
    half = control.stark_ramsey([gate.stark_period / 2], gate)
    return {"durations": durations, "series": res, "p_SD_half_period": float(half["p_SD"][0]),
            "period": fitted_period(durations, res["p_SD"])}


def fitted_period(t: np.ndarray, y: np.ndarray) -> float:
    """Period of a sampled sinusoid from a least-squares scan over frequency."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float) - np.mean(y)
    span = t[-1] - t[0]
    freqs = np.linspace(0.5 / span, 0.5 / np.median(np.diff(t)), 4000)

    def resid(f):
        A = np.column_stack([np.cos(2 * math.pi * f * t), np.sin(2 * math.pi * f * t), np.ones_like(t)])
        c, *_ = np.linalg.lstsq(A, y, rcond=None)
        return float(np.sum((A @ c - y) ** 2))

    r = np.array([resid(f) for f in freqs])
    k = int(np.argmin(r))
    lo, hi = freqs[max(k - 1, 0)], freqs[min(k + 1, len(freqs) - 1)]
    for _ in range(60):
        m1, m2 = lo + (hi - lo) / 3, hi - (hi - lo) / 3
        if resid(m1) < resid(m2):
            hi = m2
        else:
            lo = m1
    return 1.0 / (0.5 * (lo + hi))


# ---------------------------------------------------------------------------------
# monochromatic photon generation

def superradiant_phase(params: PhysicalParams) -> float:
    return (-params.zeta_value) % (2 * math.pi)


def subradiant_phase(params: PhysicalParams) -> float:
    return (math.pi - params.zeta_value) % (2 * math.pi)


def run_two_ion(params: PhysicalParams, phi: float, t_end: float = SWEEP_WINDOW,
                integrator: Optional[dict] = None) -> Trajectory:
    model, rho0 = build_effective_model(params, phi)
    return evolve(model, rho0, _cfg(t_end, integrator))[0]


def run_single_ion(params: PhysicalParams, which: str, t_end: float = SWEEP_WINDOW,
                   integrator: Optional[dict] = None) -> Trajectory:
    state = control.prepare_single_ion(which, params, noisy=True)
    model, rho0 = build_effective_model(params, 0.0, initial=state.rho)
    return evolve(model, rho0, _cfg(t_end, integrator))[0]


def single_ion_reference(params: PhysicalParams, window: float = SWEEP_WINDOW,
                         integrator: Optional[dict] = None, threads: int = 1) -> float:
    """Mean detection probability of psi1 and psi2 in [0, window]."""
    trajs = _map(lambda w: run_single_ion(params, w, window, integrator), ["psi1", "psi2"], threads)
    return float(np.mean([detection_probability(t, params, [0, window]) for t in trajs]))


def phase_sweep(params: PhysicalParams, phases: Sequence[float], window: float = SWEEP_WINDOW,
                integrator: Optional[dict] = None, threads: int = 1) -> dict:
    phases = np.asarray(phases, dtype=float)
    eta_psi = single_ion_reference(params, window, integrator, threads)
    trajs = _map(lambda ph: run_two_ion(params, ph, window, integrator), list(phases), threads)
    eta = np.array([detection_probability(t, params, [0, window]) for t in trajs])
    return {"phases": phases, "eta": eta, "eta_psi": eta_psi, "r": eta / eta_psi}


def ratio_at(params: PhysicalParams, phi: float, window: float = SWEEP_WINDOW,
             integrator: Optional[dict] = None) -> float:
    eta = detection_probability(run_two_ion(params, phi, window, integrator), params, [0, window])
    return eta / single_ion_reference(params, window, integrator)


def photon_shapes(params: PhysicalParams, t_end: float = 20e-6, bin_width: float = 1e-6,
                  integrator: Optional[dict] = None, threads: int = 1) -> dict:
    jobs = [("super", lambda: run_two_ion(params, superradiant_phase(params), t_end, integrator)),
            ("sub", lambda: run_two_ion(params, subradiant_phase(params), t_end, integrator)),
            ("psi1", lambda: run_single_ion(params, "psi1", t_end, integrator)),
            ("psi2", lambda: run_single_ion(params, "psi2", t_end, integrator))]
    trajs = _map(lambda job: job[1](), jobs, threads)
    shapes = {}
    starts = None
    for (name, _), tr in zip(jobs, trajs):
        starts, shapes[name] = photon_shape(tr, params, bin_width)
    return {"bin_starts": starts, "shapes": shapes, "trajectories": dict(zip([j[0] for j in jobs], trajs))}


def scattering_reduction(params: PhysicalParams, window: float = SWEEP_WINDOW,
                         integrator: Optional[dict] = None) -> dict:
    """Relative loss of superradiant photon yield from preparation errors and scattering."""
    phi = superradiant_phase(params)
    ideal = params.replace(gamma=0.0, prep_error_SS_DD=0.0)
    noisy = detection_probability(run_two_ion(params, phi, window, integrator), params, [0, window])
    clean = detection_probability(run_two_ion(ideal, phi, window, integrator), ideal, [0, window])
    return {"noisy": noisy, "ideal": clean, "reduction": 1.0 - noisy / clean}


# ---------------------------------------------------------------------------------
# bichromatic mapping

def encoding_state(params: PhysicalParams, encoding: str) -> control.PreparedState:
    if encoding == "super":
        return control.prepare_psi_phi(superradiant_phase(params), params, noisy=True)
    if encoding == "single":
        return control.prepare_single_ion("psi1", params, noisy=True)
    raise ValueError("encoding must be 'super' or 'single'")


def run_mapping(params: PhysicalParams, encoding: str, t_end: float = RAMAN_DURATION,
                integrator: Optional[dict] = None, threads: int = 1) -> dict:
    """Trajectories of the bichromatic mapping for the four logical inputs."""
    model = build_effective_bichromatic_model(params)
    base = encoding_state(params, encoding)
    n_ph = model.space.factors[2] * model.space.factors[3]
    vac = np.zeros((n_ph, n_ph))
    vac[0, 0] = 1.0

    def job(ab):
        ions = control.prepare_superposition(ab[0], ab[1], base).rho.matrix
        return evolve(model, DensityMatrix(model.space, np.kron(ions, vac)), _cfg(t_end, integrator))[0]

    trajs = _map(job, list(tomography.INPUT_STATES), threads)
    return dict(zip(tomography.INPUT_STATES, trajs))


def mapping_records(params: PhysicalParams, trajs: dict, window: Sequence[float], shots: int,
                    seed: int = 0, expected: bool = False,
                    asymmetry: float = tomography.DEFAULT_ASYMMETRY) -> list:
    states = {s: tomography.polarization_state(tr, params, window) for s, tr in trajs.items()}
    return tomography.simulate_measurements(states, shots, params, window, seed, asymmetry, expected)


def tomography_vs_window(params: PhysicalParams, windows_us: Sequence[float], shots: int = 10**9,
                         expected: bool = True, seed: int = 0, integrator: Optional[dict] = None,
                         threads: int = 1, runs: Optional[dict] = None) -> dict:
    """chi_00 of both encodings for detection windows [0, T]."""
    runs = runs or {enc: run_mapping(params, enc, max(windows_us) * 1e-6, integrator, threads)
                    for enc in ("super", "single")}
    rows, chis = [], {}
    seeds = np.random.SeedSequence(seed).generate_state(len(windows_us) * 2)
    for k, T in enumerate(windows_us):
        row = {"window_us": float(T)}
        for j, enc in enumerate(("super", "single")):
            recs = mapping_records(params, runs[enc], [0.0, T * 1e-6], shots, int(seeds[2 * k + j]), expected)
            chi = tomography.mle_process(recs)
            chis[(enc, float(T))] = chi
            row[f"chi00_{enc}"] = tomography.process_fidelity(chi)
        rows.append(row)
    return {"rows": rows, "chi": chis, "runs": runs}


def efficiency_curves(params: PhysicalParams, t_end: float = RAMAN_DURATION, bin_width: float = 1e-6,
                      integrator: Optional[dict] = None, threads: int = 1,
                      runs: Optional[dict] = None) -> dict:
    """Cumulative process efficiency averaged over the four inputs."""
    runs = runs or {enc: run_mapping(params, enc, t_end, integrator, threads) for enc in ("super", "single")}
    curves = {}
    edges = None
    for enc, trajs in runs.items():
        vals = []
        for tr in trajs.values():
            edges, eps = cumulative_efficiency(tr, params, bin_width)
            vals.append(eps)
        curves[enc] = np.mean(vals, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(curves["single"] > 0, curves["super"] / curves["single"], np.nan)
    return {"times": edges, "eps_super": curves["super"], "eps_single": curves["single"], "ratio": ratio,
            "runs": runs}


def efficiency_ratio_at(curves: dict, t: float) -> float:
    es = np.interp(t, curves["times"], curves["eps_super"])
    e1 = np.interp(t, curves["times"], curves["eps_single"])
    return float(es / e1)
