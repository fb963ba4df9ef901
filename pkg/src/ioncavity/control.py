"""Coherent control of the two-ion register.

Two-ion states live on a ``[4, 4]`` space with per-ion levels
``{0: S, 1: S', 2: D, 3: D'}`` (the first four levels of the six-level
convention). Global 729 nm rotations act on the S <-> D transition only.
Fluorescence readout is an ideal projection onto bright (S, S') versus dark
(D, D') for each ion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .qcore import DensityMatrix, HilbertSpace, StateVector, partial_trace, von_neumann_entropy

S, SP, D, DP = 0, 1, 2, 3
N_LEVELS = 4
REGISTER = HilbertSpace([N_LEVELS, N_LEVELS])
BRIGHT = (S, SP)

# analysis phase at which the global pi/2 pulse maps Phi onto Psi+
PSI_PLUS_PHASE = 5 * math.pi / 4


class MotionalTruncationError(RuntimeError):
    """Raised when the motional Fock cutoff is populated beyond tolerance."""


class FitError(RuntimeError):
    """Raised when a parity fringe cannot be fitted."""


@dataclass(frozen=True)
class GateParams:
    delta_MS: float = 18.2e3
    eta_Omega: Optional[float] = None
    n_motional_max: int = 8
    stark_delta: float = 10e6
    stark_Omega: float = 8.6e6
    stark_period: float = 5.3e-6

    def __post_init__(self):
        if self.delta_MS <= 0:
            raise ValueError("delta_MS must be > 0")
        if self.n_motional_max < 2:
            raise ValueError("n_motional_max must be >= 2")
        if self.stark_period <= 0:
            raise ValueError("stark_period must be > 0")
        if self.eta_Omega is None:
            object.__setattr__(self, "eta_Omega", self.delta_MS / 2)

    @property
    def gate_time(self) -> float:
        return 1.0 / self.delta_MS


@dataclass(frozen=True, eq=False)
class PreparedState:
    label: str
    rho: DensityMatrix
    fidelity_target: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.fidelity_target <= 1:
            raise ValueError("fidelity_target must lie in [0, 1]")


# ------------------------------------------------------------------------------
# single-ion building blocks

def ket(*levels: int) -> np.ndarray:
    """Product basis vector of the register."""
    v = np.zeros(N_LEVELS ** len(levels), dtype=complex)
    v[np.ravel_multi_index(levels, (N_LEVELS,) * len(levels))] = 1.0
    return v


def rotation(theta: float, phi: float, lower: int = S, upper: int = D) -> np.ndarray:
    """exp(-i theta/2 (cos(phi) X + sin(phi) Y)) on the (lower, upper) pair of one ion."""
    gen = np.zeros((N_LEVELS, N_LEVELS), dtype=complex)
    gen[lower, upper] = np.exp(-1j * phi)
    gen[upper, lower] = np.exp(1j * phi)
    return expm(-0.5j * theta * gen)


def global_rotation(theta: float, phi: float, lower: int = S, upper: int = D) -> np.ndarray:
    r = rotation(theta, phi, lower, upper)
    return np.kron(r, r)


def _evolve(rho: DensityMatrix, u: np.ndarray) -> DensityMatrix:
    return DensityMatrix(rho.space, u @ rho.matrix @ u.conj().T)


def readout_populations(rho: DensityMatrix) -> dict[str, float]:
    """Bright/dark projective readout: p_SS, p_DD and the one-bright population p_SD."""
    pops = np.real(np.diag(rho.matrix)).reshape(N_LEVELS, N_LEVELS)
    bright = np.zeros(N_LEVELS, dtype=bool)
    bright[list(BRIGHT)] = True
    p_ss = float(pops[np.ix_(bright, bright)].sum())
    p_dd = float(pops[np.ix_(~bright, ~bright)].sum())
    return {"p_SS": p_ss, "p_DD": p_dd, "p_SD": float(1.0 - p_ss - p_dd)}


def parity(rho: DensityMatrix) -> float:
    p = readout_populations(rho)
    return p["p_SS"] + p["p_DD"] - p["p_SD"]


# ------------------------------------------------------------------------------
# Molmer-Sorensen gate

def _ms_operators(params: GateParams):
    n = params.n_motional_max + 1
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    jx = np.kron(sx, np.eye(2)) + np.kron(np.eye(2), sx)
    a = np.diag(np.sqrt(np.arange(1, n)), k=1).astype(complex)
    omega = 2 * math.pi * params.delta_MS
    f = 2 * math.pi * params.eta_Omega / 2
    # frame co-rotating with the detuned sideband drive: H = omega a^dag a + f J_x (a + a^dag)
    H = omega * np.kron(np.eye(4), a.conj().T @ a) + f * np.kron(jx, a + a.conj().T)
    return H, n


def ms_gate_evolution(params: GateParams, t_grid: Sequence[float], truncation_tol: float = 1e-3) -> dict:
    """Ideal Lamb-Dicke MS dynamics from |S S>|n=0>.

    Returns populations ``p_SS``, ``p_DD``, ``p_mixed`` on ``t_grid``, the peak
    population of the top Fock level, the motional entropy at each time and the
    final spin-motion state on ``[2, 2, n_motional_max + 1]`` (levels 0 = S, 1 = D).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 0):
        raise ValueError("times must be >= 0")
    H, n = _ms_operators(params)
    psi0 = np.zeros(4 * n, dtype=complex)
    psi0[0] = 1.0  # |S S> (index 0 of the spin pair) with motion in |0>
    evals, evecs = np.linalg.eigh(H)
    coeffs = evecs.conj().T @ psi0
    out = {k: np.empty(len(t_grid)) for k in ("p_SS", "p_DD", "p_mixed", "p_top", "motional_entropy")}
    psi = psi0
    space = HilbertSpace([2, 2, n])
    for k, t in enumerate(t_grid):
        psi = evecs @ (np.exp(-1j * evals * t) * coeffs)
        amp = psi.reshape(4, n)
        spin_pops = np.sum(np.abs(amp) ** 2, axis=1)
        out["p_SS"][k] = spin_pops[0]
        out["p_DD"][k] = spin_pops[3]
        out["p_mixed"][k] = spin_pops[1] + spin_pops[2]
        out["p_top"][k] = float(np.sum(np.abs(amp[:, -1]) ** 2))
        rho = DensityMatrix(space, np.outer(psi, psi.conj()), check=False)
        out["motional_entropy"][k] = von_neumann_entropy(partial_trace(rho, [0, 1]))
    peak = float(out["p_top"].max()) if len(t_grid) else 0.0
    if peak > truncation_tol:
        raise MotionalTruncationError(
            f"top motional level population {peak:.2e} exceeds {truncation_tol:g}; "
            "increase n_motional_max")
    out["times"] = t_grid
    out["final_state"] = StateVector(space, psi)
    return out


def ms_populations_closed_form(params: GateParams, t_grid: Sequence[float]) -> dict:
    """Untruncated MS populations from the displacement/geometric-phase solution.

    Each J_x eigencomponent m of |S S> picks up exp(i Theta m^2) and a motional
    coherent state alpha(t) m; the spin state follows from the coherent-state
    overlaps. Serves as an oracle independent of the numerical propagation.
    """
    t = np.asarray(t_grid, dtype=float)
    omega = 2 * math.pi * params.delta_MS
    f = 2 * math.pi * params.eta_Omega / 2
    alpha = -(f / omega) * (np.exp(1j * omega * t) - 1.0)
    theta = f ** 2 / omega * (t - np.sin(omega * t) / omega)
    # x-basis eigenvectors: |+> = (|S>+|D>)/sqrt2, |-> = (|S>-|D>)/sqrt2
    plus = np.array([1, 1]) / math.sqrt(2)
    minus = np.array([1, -1]) / math.sqrt(2)
    comps = []
    for v1, s1 in ((plus, 1), (minus, -1)):
        for v2, s2 in ((plus, 1), (minus, -1)):
            vec = np.kron(v1, v2)
            m = s1 + s2
            comps.append((vec, m, np.vdot(vec, [1, 0, 0, 0])))
    res = {"p_SS": [], "p_DD": [], "p_mixed": []}
    for k in range(len(t)):
        rho = np.zeros((4, 4), dtype=complex)
        for v, m, c in comps:
            for w, mp, cp in comps:
                a1, a2 = alpha[k] * m, alpha[k] * mp
                overlap = np.exp(-abs(a1) ** 2 / 2 - abs(a2) ** 2 / 2 + np.conj(a2) * a1)
                rho += c * np.conj(cp) * np.exp(1j * theta[k] * (m * m - mp * mp)) * overlap * np.outer(v, w.conj())
        pops = np.real(np.diag(rho))
        res["p_SS"].append(pops[0])
        res["p_DD"].append(pops[3])
        res["p_mixed"].append(pops[1] + pops[2])
    return {k: np.array(v) for k, v in res.items()}


def ms_spin_state(result: dict) -> DensityMatrix:
    """Spin density matrix of an MS run embedded into the four-level register."""
    psi = result["final_state"]
    rho = partial_trace(psi.to_density(), [2]).matrix
    return embed_two_level(rho)


def embed_two_level(rho2: np.ndarray) -> DensityMatrix:
    """Map a [2, 2] (S, D) density matrix into the four-level register."""
    idx = [S, D]
    full = np.zeros((N_LEVELS ** 2, N_LEVELS ** 2), dtype=complex)
    sel = [i * N_LEVELS + j for i in idx for j in idx]
    full[np.ix_(sel, sel)] = rho2
    return DensityMatrix(REGISTER, full)


def two_level_from_ion_state(rho: DensityMatrix, tol: float = 1e-12) -> np.ndarray:
    """Restrict a register state to the S/D subspace ({0: S, 1: D} per ion)."""
    if rho.space.factors == (2, 2):
        return np.array(rho.matrix)
    rho.space.check_same(REGISTER)
    sel = [i * N_LEVELS + j for i in (S, D) for j in (S, D)]
    sub = rho.matrix[np.ix_(sel, sel)]
    if abs(np.trace(sub) - 1) > tol:
        raise ValueError("state has population outside the S/D subspace")
    return np.array(sub)


def reduce_register(rho: DensityMatrix, tol: float = 1e-12) -> tuple[np.ndarray, int]:
    """Restrict a register state to S/D, or to S/D/D' when D' is populated.

    Returns the reduced matrix and the number of levels per ion (2 or 3), with
    the levels ordered S, D, D'.
    """
    if rho.space.factors == (2, 2):
        return np.array(rho.matrix), 2
    rho.space.check_same(REGISTER)
    pops = np.real(np.diag(rho.matrix)).reshape(N_LEVELS, N_LEVELS)
    if pops[SP].sum() + pops[:, SP].sum() > tol:
        raise ValueError("state has S' population; use the bichromatic model")
    if pops[DP].sum() + pops[:, DP].sum() <= tol:
        return two_level_from_ion_state(rho, tol), 2
    levels = (S, D, DP)
    sel = [i * N_LEVELS + j for i in levels for j in levels]
    return np.array(rho.matrix[np.ix_(sel, sel)]), 3


# ------------------------------------------------------------------------------
# parity analysis

def parity_scan(rho: DensityMatrix, phases: Sequence[float]) -> np.ndarray:
    """Parity after a global analysis pi/2 pulse with each phase."""
    if rho.space.factors == (2, 2):
        rho = embed_two_level(rho.matrix)
    return np.array([parity(_evolve(rho, global_rotation(math.pi / 2, ph))) for ph in phases])


def fit_parity(phases: Sequence[float], values: Sequence[float]) -> dict:
    """Least-squares fit of P(phi) = c + A cos(2 phi + phase)."""
    phases = np.asarray(phases, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(phases) < 8:
        raise FitError("at least 8 phase samples are required")
    if np.ptp(phases) < math.pi * (1 - 1 / len(phases)) - 1e-12:
        raise FitError("phase samples must cover a full parity period (pi)")
    design = np.column_stack([np.ones_like(phases), np.cos(2 * phases), np.sin(2 * phases)])
    if np.linalg.matrix_rank(design) < 3:
        raise FitError("degenerate phase samples")
    coef, *_ = np.linalg.lstsq(design, values, rcond=None)
    c, x, y = coef
    return {"offset": float(c), "amplitude": float(math.hypot(x, y)), "phase": float(math.atan2(-y, x))}


def fidelity_bound(parity_series: Sequence[float], phases: Optional[Sequence[float]] = None) -> float:
    """Parity-fringe amplitude, a lower bound on the fidelity with Phi.

    ``phases`` defaults to an even grid over [0, 2 pi) of the series' length.
    """
    values = np.asarray(parity_series, dtype=float)
    if phases is None:
        phases = np.linspace(0, 2 * math.pi, len(values), endpoint=False)
    amp = fit_parity(phases, values)["amplitude"]
    return float(min(max(amp, 0.0), 1.0))


# ------------------------------------------------------------------------------
# AC-Stark phase gate

def stark_phase(duration: float, params: GateParams) -> float:
    if duration < 0:
        raise ValueError("duration must be >= 0")
    return 2 * math.pi * duration / params.stark_period


def stark_unitary(duration: float, params: GateParams, ion: int = 1) -> np.ndarray:
    """Phase exp(i phi) on |D> of the addressed ion (index 1 = ion 2)."""
    single = np.eye(N_LEVELS, dtype=complex)
    single[D, D] = np.exp(1j * stark_phase(duration, params))
    eye = np.eye(N_LEVELS, dtype=complex)
    return np.kron(eye, single) if ion == 1 else np.kron(single, eye)


def stark_phase_gate(rho: DensityMatrix, duration: float, params: GateParams) -> DensityMatrix:
    return _evolve(rho, stark_unitary(duration, params))


def stark_ramsey(durations: Sequence[float], params: GateParams, analysis_phase: float = 0.0) -> dict:
    """Global pi/2, Stark pulse on ion 2, global pi/2 with the same phase, from |S S>."""
    rho0 = DensityMatrix(REGISTER, np.outer(ket(S, S), ket(S, S)))
    half = global_rotation(math.pi / 2, analysis_phase)
    out = {"p_SS": [], "p_DD": [], "p_SD": []}
    for tau in durations:
        rho = _evolve(stark_phase_gate(_evolve(rho0, half), tau, params), half)
        for k, v in readout_populations(rho).items():
            out[k].append(v)
    res = {k: np.array(v) for k, v in out.items()}
    res["durations"] = np.asarray(durations, dtype=float)
    return res


# ------------------------------------------------------------------------------
# state preparation

def psi_phi_vector(phi: float, ground: int = S) -> np.ndarray:
    return (ket(ground, D) + np.exp(1j * phi) * ket(D, ground)) / math.sqrt(2)


def phi_state_vector() -> np.ndarray:
    """(|S S> + i |D D>) / sqrt 2."""
    return (ket(S, S) + 1j * ket(D, D)) / math.sqrt(2)


def prepare_psi_phi(phi: float, params, noisy: Optional[bool] = True) -> PreparedState:
    """|Psi(phi)>; in noisy mode a fraction ``prep_error_SS_DD`` sits incoherently in SS and DD."""
    psi = psi_phi_vector(phi)
    pure = np.outer(psi, psi.conj())
    err = params.prep_error_SS_DD if (noisy or noisy is None) else 0.0
    if err > 0:
        mix = 0.5 * err * (np.outer(ket(S, S), ket(S, S)) + np.outer(ket(D, D), ket(D, D)))
        rho = (1 - err) * pure + mix
    else:
        rho = pure
    return PreparedState(f"Psi({phi:.6g})", DensityMatrix(REGISTER, rho), 1.0 - err, {"phi": phi})


def prepare_bell(which: str = "Phi") -> PreparedState:
    vec = {"Phi": phi_state_vector(), "Psi+": psi_phi_vector(0.0), "SS": ket(S, S)}[which]
    return PreparedState(which, DensityMatrix(REGISTER, np.outer(vec, vec.conj())))


def prepare_single_ion(which: str, params=None, noisy: bool = True) -> PreparedState:
    """psi1 = |S>|D'> or psi2 = |D'>|S>.

    psi1 comes from a pi pulse S -> D' on ion 2; a failed transfer leaves |S S>.
    psi2 follows from psi1 by a global S <-> D' pi pulse, which maps the error
    component to |D' D'>.
    """
    if which not in ("psi1", "psi2"):
        raise ValueError("which must be 'psi1' or 'psi2'")
    err = params.single_ion_prep_error if (noisy and params is not None) else 0.0
    rho = (1 - err) * np.outer(ket(S, DP), ket(S, DP)) + err * np.outer(ket(S, S), ket(S, S))
    state = DensityMatrix(REGISTER, rho)
    if which == "psi2":
        state = _evolve(state, global_rotation(math.pi, 0.0, S, DP))
    return PreparedState(which, state, 1.0 - err)


def superposition_operator(alpha: float, beta: float) -> np.ndarray:
    """Per-ion unitary |S> -> cos(a)|S> + e^{i b} sin(a)|S'>."""
    u = np.eye(N_LEVELS, dtype=complex)
    c, s = math.cos(alpha), math.sin(alpha)
    u[S, S] = c
    u[SP, S] = np.exp(1j * beta) * s
    u[S, SP] = -np.exp(-1j * beta) * s
    u[SP, SP] = c
    return u


def prepare_superposition(alpha: float, beta: float, base: PreparedState) -> PreparedState:
    m = superposition_operator(alpha, beta)
    rho = _evolve(base.rho, np.kron(m, m))
    return PreparedState(f"{base.label}|{alpha:.4g},{beta:.4g}>", rho, base.fidelity_target,
                         {**base.meta, "alpha": alpha, "beta": beta})
