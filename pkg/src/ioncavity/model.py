"""Physical parameters and Lindblad model builders.

All configuration values are ordinary frequencies in Hz, times in seconds and
angles in radians. Builders convert to angular frequency internally, so every
Hamiltonian and collapse rate returned here is in rad/s.

Slot conventions
----------------
Full model: ``[ion1, ion2, mode_H, mode_V]`` with six ion levels
``{0: S, 1: S', 2: D, 3: D', 4: P(-1/2), 5: P(+1/2)}``.

Effective monochromatic model: ``[ion1, ion2, mode]`` with two ion levels
``{0: S, 1: D}``; a third, uncoupled level ``2: D'`` is added when the
initial state populates it.

Effective bichromatic model: ``[ion1, ion2, mode_H, mode_V]`` with the first
four levels of the six-level convention ``{0: S, 1: S', 2: D, 3: D'}``.
"""
from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from .qcore import (
    DensityMatrix,
    HilbertSpace,
    Operator,
    StateVector,
    annihilation,
    dagger,
    embed,
    identity,
    projector,
)

TWO_PI = 2.0 * math.pi

# six-level ion
S, SP, D, DP, PM, PP = range(6)
LEVEL_NAMES = ("S", "S'", "D", "D'", "P-", "P+")
# magnetic quantum numbers and Lande factors per level
LEVEL_MJ = (-0.5, 0.5, -0.5, 1.5, -0.5, 0.5)
LANDE = {"S": 2.0023, "D": 1.2, "P": 1.334}
LEVEL_LANDE = (LANDE["S"], LANDE["S"], LANDE["D"], LANDE["D"], LANDE["P"], LANDE["P"])
BOHR_MHZ_PER_GAUSS = 1.3996

# Clebsch-Gordan weight of P(m) -> S(m) relative to the whole P -> S-manifold decay
SAME_SUBLEVEL_WEIGHT = 2.0 / 3.0

# effective two-level ion, plus the optional hidden level
E_S, E_D, E_DP = 0, 1, 2

FULL_SLOTS = {"ion1": 0, "ion2": 1, "H": 2, "V": 3}


class ParameterError(ValueError):
    """Raised for physically inconsistent parameter records."""


@dataclass(frozen=True)
class PhysicalParams:
    g_PD: float = 1e6
    kappa: float = 50e3
    gamma: float = 11.5e6
    branching_PS: float = 0.935
    Omega_SD: float = 19e6
    Omega_SpD: float = 9.5e6
    Delta: float = 400e6
    B: float = 4.5
    ion_separation: float = 5.6e-6
    raman_angle: float = math.pi / 4
    raman_wavelength: float = 393e-9
    laser_linewidth: float = 30e3
    zeta: Optional[float] = None
    coupling_asymmetry: float = 0.90
    tau_SSp: float = 190e-6
    tau_SD: float = 475e-6
    detection_efficiency: float = 0.08
    dark_rate_1: float = 3.2
    dark_rate_2: float = 3.8
    prep_error_SS_DD: float = 0.05
    coherence_scale: float = 0.96
    # geometric factors of the two Raman paths; xi_SD is calibrated so that the
    # single-ion effective coupling at Omega_SD = 19 MHz is 18 kHz
    xi_SD: float = 0.7578947368421053
    xi_SpD: float = 0.37894736842105264
    # "doubling": the larger Rabi frequency drives S' -> D in bichromatic mode
    tone_assignment: Literal["doubling", "as_listed"] = "doubling"
    single_ion_prep_error: float = 0.05
    # ion (1 or 2) whose cavity coupling is scaled by coupling_asymmetry
    weak_ion: int = 1
    # fraction of each tone's scattering rate also felt by the other S sublevel
    cross_tone_scattering: float = 0.6
    # common factor on both Rabi frequencies in bichromatic mode (calibration)
    bichromatic_rabi_scale: float = 0.9

    def __post_init__(self):
        rates = ("g_PD", "kappa", "gamma", "Omega_SD", "Omega_SpD", "laser_linewidth",
                 "dark_rate_1", "dark_rate_2", "B")
        for name in rates:
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")
        if not 0 <= self.branching_PS <= 1:
            raise ParameterError("branching_PS must lie in [0, 1]")
        if not 0 < self.detection_efficiency <= 1:
            raise ParameterError("detection_efficiency must lie in (0, 1]")
        if not 0 <= self.coupling_asymmetry <= 1:
            raise ParameterError("coupling_asymmetry must lie in [0, 1]")
        if not 0 <= self.prep_error_SS_DD <= 1 or not 0 <= self.single_ion_prep_error <= 1:
            raise ParameterError("preparation errors must lie in [0, 1]")
        if not 0 <= self.coherence_scale <= 1:
            raise ParameterError("coherence_scale must lie in [0, 1]")
        if self.tau_SSp <= 0 or self.tau_SD <= 0:
            raise ParameterError("coherence times must be > 0")
        if self.raman_wavelength <= 0:
            raise ParameterError("raman_wavelength must be > 0")
        if self.weak_ion not in (1, 2):
            raise ParameterError("weak_ion must be 1 or 2")
        if not 0 <= self.cross_tone_scattering <= 1:
            raise ParameterError("cross_tone_scattering must lie in [0, 1]")
        if not self.bichromatic_rabi_scale > 0:
            raise ParameterError("bichromatic_rabi_scale must be > 0")
        if self.tone_assignment not in ("doubling", "as_listed"):
            raise ParameterError(f"unknown tone_assignment {self.tone_assignment!r}")

    # convenience ---------------------------------------------------------------
    def replace(self, **changes) -> "PhysicalParams":
        return dataclasses.replace(self, **changes)

    @classmethod
    def ideal(cls, **overrides) -> "PhysicalParams":
        """Perfect preparation, equal couplings, no scattering, dephasing or dark counts."""
        base = dict(gamma=0.0, laser_linewidth=0.0, coupling_asymmetry=1.0,
                    prep_error_SS_DD=0.0, single_ion_prep_error=0.0, coherence_scale=1.0,
                    dark_rate_1=0.0, dark_rate_2=0.0, tau_SSp=math.inf, tau_SD=math.inf)
        base.update(overrides)
        return cls(**base)

    @property
    def dark_rate_total(self) -> float:
        return self.dark_rate_1 + self.dark_rate_2

    @property
    def zeta_value(self) -> float:
        return raman_phase(self) if self.zeta is None else float(self.zeta) % TWO_PI

    def bichromatic_rabi(self) -> tuple[float, float]:
        """(Omega for S->D, Omega for S'->D) used in bichromatic mode."""
        k = self.bichromatic_rabi_scale
        if self.tone_assignment == "doubling":
            lo, hi = sorted((self.Omega_SD, self.Omega_SpD))
            return k * lo, k * hi
        return k * self.Omega_SD, k * self.Omega_SpD

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PhysicalParams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown parameter(s): {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True, eq=False)
class LindbladModel:
    space: HilbertSpace
    hamiltonian: Operator
    collapse_ops: tuple[tuple[Operator, float], ...]
    observables: dict = field(default_factory=dict)
    # names of the photon-number observables, one per cavity mode
    mode_observables: tuple[str, ...] = ()
    description: str = ""

    def __post_init__(self):
        self.hamiltonian.space.check_same(self.space)
        if not self.hamiltonian.is_hermitian(1e-10 * max(1.0, _scale(self.hamiltonian))):
            raise ParameterError("Hamiltonian is not Hermitian")
        for op, rate in self.collapse_ops:
            op.space.check_same(self.space)
            if rate < 0:
                raise ParameterError("collapse rates must be >= 0")
        object.__setattr__(self, "collapse_ops", tuple(self.collapse_ops))

    def with_hamiltonian(self, hamiltonian: Operator) -> "LindbladModel":
        return dataclasses.replace(self, hamiltonian=hamiltonian)


def _scale(op: Operator) -> float:
    m = op.matrix
    return float(abs(m).max()) if getattr(m, "nnz", 1) else 0.0


# ---------------------------------------------------------------------------------
# derived quantities

def raman_phase(params: PhysicalParams) -> float:
    """Relative Raman phase between the ions, 2 pi d sin(theta) / lambda, in [0, 2 pi)."""
    if params.raman_wavelength <= 0:
        raise ParameterError("raman_wavelength must be > 0")
    # the multiple of 2 pi is removed in turns to keep sub-ulp accuracy
    turns = params.ion_separation * math.sin(params.raman_angle) / params.raman_wavelength
    frac = turns - math.floor(turns)
    return (TWO_PI * frac) % TWO_PI


def effective_rates(params: PhysicalParams, xi_SD: Optional[float] = None,
                    Omega: Optional[float] = None, Delta: Optional[float] = None) -> tuple[float, float]:
    """Single-ion Raman coupling and scattering rate after eliminating P (both in Hz).

    ``g = xi * Omega * g_PD / (2 Delta)`` and ``gamma_eff = gamma * (Omega / 2 Delta)**2``.
    """
    xi = params.xi_SD if xi_SD is None else xi_SD
    omega = params.Omega_SD if Omega is None else Omega
    delta = params.Delta if Delta is None else Delta
    if delta == 0:
        raise ParameterError("Delta must be nonzero for the effective model")
    if abs(delta) < 5 * omega:
        warnings.warn(f"Delta={delta:g} Hz is not large compared with Omega={omega:g} Hz; "
                      "adiabatic elimination is inaccurate", RuntimeWarning, stacklevel=2)
    ratio = omega / (2.0 * delta)
    return abs(xi * params.g_PD * ratio), params.gamma * ratio ** 2


def calibrate_xi(params: PhysicalParams, g_eff_target: float = 18e3) -> float:
    """Geometric factor giving the requested single-ion effective coupling (Hz)."""
    return g_eff_target * 2.0 * params.Delta / (params.Omega_SD * params.g_PD)


def zeeman_shifts(params: PhysicalParams) -> dict[str, float]:
    """Linear Zeeman shift (Hz) of each of the six levels at field ``params.B``."""
    if params.B < 0:
        raise ParameterError("B must be >= 0")
    unit = BOHR_MHZ_PER_GAUSS * 1e6 * params.B
    return {name: g * m * unit for name, g, m in zip(LEVEL_NAMES, LEVEL_LANDE, LEVEL_MJ)}


# ---------------------------------------------------------------------------------
# operator helpers

def _ion_op(n_levels: int, i: int, j: int, slot: int, space: HilbertSpace) -> Operator:
    return embed(projector(n_levels, i, j), slot, space)


def _mode_op(n_max: int, slot: int, space: HilbertSpace) -> Operator:
    return embed(annihilation(n_max), slot, space)


def _zero(space: HilbertSpace) -> Operator:
    return identity(space.factors) * 0.0


def _scattering_ops(n_levels: int, slot: int, space: HilbertSpace, source: int,
                    same: int, other: int, sink: int, rate: float, params: PhysicalParams,
                    other_exists: bool = True) -> list[tuple[Operator, float]]:
    """Effective Raman scattering out of ``source``; P decays back to the S manifold or to D."""
    if rate <= 0:
        return []
    b = params.branching_PS
    out = []
    w_same = SAME_SUBLEVEL_WEIGHT if other_exists else 1.0
    if b * w_same > 0:
        out.append((_ion_op(n_levels, same, source, slot, space), rate * b * w_same))
    if other_exists and b * (1 - w_same) > 0:
        out.append((_ion_op(n_levels, other, source, slot, space), rate * b * (1 - w_same)))
    if 1 - b > 0:
        out.append((_ion_op(n_levels, sink, source, slot, space), rate * (1 - b)))
    return out


def _manifold_dephasing(n_levels: int, levels: Sequence[int], space: HilbertSpace,
                        ion_slots: Sequence[int], rate: float) -> list[tuple[Operator, float]]:
    """Common-mode laser phase noise: one collapse operator sum_j P_S-manifold(j)."""
    if rate <= 0:
        return []
    op = _zero(space)
    for slot in ion_slots:
        for lev in levels:
            op = op + _ion_op(n_levels, lev, lev, slot, space)
    return [(op, rate)]


def _ion_couplings(params: PhysicalParams) -> tuple[float, float]:
    """Relative cavity couplings (ion 1, ion 2)."""
    c = params.coupling_asymmetry
    return (c, 1.0) if params.weak_ion == 1 else (1.0, c)


# ---------------------------------------------------------------------------------
# effective monochromatic model

def build_effective_model(params: PhysicalParams, phi: float, photon_cutoff: int = 1,
                          initial: Optional[DensityMatrix] = None,
                          noisy: Optional[bool] = None):
    """Two two-level ions (S/D) and one cavity mode after eliminating P.

    H = g_eff (sigma1_- + c2 e^{i zeta} sigma2_-) a^dagger + h.c., where ``c2`` is the
    coupling asymmetry. Collapse operators: cavity decay sqrt(2 kappa) a, Raman
    scattering per ion, and common-mode laser dephasing.

    Returns ``(model, rho0)`` where ``rho0`` is the prepared |Psi(phi)> state (noisy
    when ``params.prep_error_SS_DD > 0`` unless ``noisy`` is given) with the cavity
    in vacuum. ``initial`` replaces it by any register state; if that state
    populates D' the ions get a third level that does not couple to anything.
    """
    from .control import prepare_psi_phi, reduce_register

    if initial is None:
        initial = prepare_psi_phi(phi, params, noisy=noisy).rho
    ion_rho, n_lev = reduce_register(initial)

    space = HilbertSpace([n_lev, n_lev, photon_cutoff + 1])
    g, gamma_eff = effective_rates(params)
    zeta = params.zeta_value
    c1, c2 = _ion_couplings(params)
    a = _mode_op(photon_cutoff, 2, space)
    sm1 = _ion_op(n_lev, E_D, E_S, 0, space)
    sm2 = _ion_op(n_lev, E_D, E_S, 1, space)
    coupling = (sm1 * c1 + sm2 * (c2 * np.exp(1j * zeta))) @ dagger(a)
    H = (coupling + dagger(coupling)) * (TWO_PI * g)

    c_ops = [(a, 2.0 * TWO_PI * params.kappa)]
    scatter = TWO_PI * gamma_eff
    ret = params.branching_PS * SAME_SUBLEVEL_WEIGHT
    for slot in (0, 1):
        # S' is not represented: decay into it ends photon generation just like
        # decay into D, so it is folded into the loss channel
        if scatter > 0 and ret > 0:
            c_ops.append((_ion_op(n_lev, E_S, E_S, slot, space), scatter * ret))
        if scatter > 0 and ret < 1:
            c_ops.append((_ion_op(n_lev, E_D, E_S, slot, space), scatter * (1 - ret)))
    c_ops += _manifold_dephasing(n_lev, [E_S], space, (0, 1), TWO_PI * params.laser_linewidth)

    n = dagger(a) @ a
    observables = {
        "n_H": n,
        "p_S1": _ion_op(n_lev, E_S, E_S, 0, space),
        "p_S2": _ion_op(n_lev, E_S, E_S, 1, space),
        "p_top_fock": embed(projector(photon_cutoff + 1, photon_cutoff, photon_cutoff), 2, space),
    }
    model = LindbladModel(space, H, tuple(c_ops), observables, ("n_H",),
                          description=f"effective monochromatic, phi={phi:.6g}")

    vac = np.zeros((photon_cutoff + 1, photon_cutoff + 1), dtype=complex)
    vac[0, 0] = 1.0
    rho0 = DensityMatrix(space, np.kron(ion_rho, vac))
    return model, rho0


# ---------------------------------------------------------------------------------
# effective bichromatic model

def bichromatic_effective_rates(params: PhysicalParams) -> dict[str, float]:
    """Couplings and scattering rates (Hz) of the S->D (H) and S'->D (V) Raman paths."""
    om_h, om_v = params.bichromatic_rabi()
    shifts = zeeman_shifts(params)
    delta_v = params.Delta + (shifts["P+"] - shifts["P-"])
    g_h, gam_h = effective_rates(params, params.xi_SD, om_h, params.Delta)
    g_v, gam_v = effective_rates(params, params.xi_SpD, om_v, delta_v)
    x = params.cross_tone_scattering
    return {"g_H": g_h, "g_V": g_v, "gamma_S": gam_h + x * gam_v, "gamma_Sp": gam_v + x * gam_h,
            "Omega_H": om_h, "Omega_V": om_v, "Delta_V": delta_v}


def build_effective_bichromatic_model(params: PhysicalParams, photon_cutoff: int = 2) -> LindbladModel:
    """Four-level ions (S, S', D, D') and two polarisation modes after eliminating P."""
    n_lev = 4
    space = HilbertSpace([n_lev, n_lev, photon_cutoff + 1, photon_cutoff + 1])
    rates = bichromatic_effective_rates(params)
    zeta = params.zeta_value
    c = _ion_couplings(params)
    a = _mode_op(photon_cutoff, 2, space)
    b = _mode_op(photon_cutoff, 3, space)
    coupling = _zero(space)
    for slot, phase in ((0, 1.0), (1, np.exp(1j * zeta))):
        amp = c[slot] * phase
        coupling = coupling + (_ion_op(n_lev, D, S, slot, space) @ dagger(a)) * (amp * rates["g_H"])
        coupling = coupling + (_ion_op(n_lev, D, SP, slot, space) @ dagger(b)) * (amp * rates["g_V"])
    H = (coupling + dagger(coupling)) * TWO_PI

    c_ops = [(a, 2.0 * TWO_PI * params.kappa), (b, 2.0 * TWO_PI * params.kappa)]
    for slot in (0, 1):
        c_ops += _scattering_ops(n_lev, slot, space, S, S, SP, D, TWO_PI * rates["gamma_S"], params)
        c_ops += _scattering_ops(n_lev, slot, space, SP, SP, S, D, TWO_PI * rates["gamma_Sp"], params)
    c_ops += _manifold_dephasing(n_lev, [S, SP], space, (0, 1), TWO_PI * params.laser_linewidth)

    na = dagger(a) @ a
    nb = dagger(b) @ b
    observables = {
        "n_H": na,
        "n_V": nb,
        "coh_HV": dagger(a) @ b,  # <a^dagger b> = rho_pol[V, H]
        "p_top_fock_H": embed(projector(photon_cutoff + 1, photon_cutoff, photon_cutoff), 2, space),
        "p_top_fock_V": embed(projector(photon_cutoff + 1, photon_cutoff, photon_cutoff), 3, space),
    }
    return LindbladModel(space, H, tuple(c_ops), observables, ("n_H", "n_V"),
                         description="effective bichromatic")


# ---------------------------------------------------------------------------------
# full six-level model

def build_full_model(params: PhysicalParams, mode: Literal["monochromatic", "bichromatic"] = "monochromatic",
                     photon_cutoff: int = 2, raman_resonance: bool = True) -> LindbladModel:
    """Two six-level ions and two cavity modes, frame rotating with the Raman tones.

    The cavity couples P(-1/2)-D to mode H and P(+1/2)-D to mode V with opposite
    signs for the two ions (adjacent antinodes). The Raman tone(s) drive
    S -> P(-1/2) and, in bichromatic mode, S' -> P(+1/2), with optical phases
    ``zeta`` on ion 1 and 0 on ion 2. After eliminating P, ion 2's cavity-mediated
    coupling relative to ion 1 therefore carries the factor ``-exp(-i zeta)``; see
    :func:`full_to_effective_zeta`.

    With ``raman_resonance`` the cavity-photon frame energy cancels the differential
    light shift so that both Raman paths stay two-photon resonant.
    """
    if mode not in ("monochromatic", "bichromatic"):
        raise ParameterError(f"unknown mode {mode!r}")
    n_lev = 6
    space = HilbertSpace([n_lev, n_lev, photon_cutoff + 1, photon_cutoff + 1])
    shifts = zeeman_shifts(params)
    if mode == "monochromatic":
        om_h, om_v = params.Omega_SD, 0.0
    else:
        om_h, om_v = params.bichromatic_rabi()
    if om_h > 0 and params.Delta == 0:
        raise ParameterError("Raman detuning Delta must be nonzero")
    delta_m = params.Delta
    delta_p = params.Delta + (shifts["P+"] - shifts["P-"])
    g_h = params.g_PD * params.xi_SD
    g_v = params.g_PD * params.xi_SpD
    zeta = params.zeta_value
    c = _ion_couplings(params)
    signs = (1.0, -1.0)
    raman_phases = (zeta, 0.0)

    a = _mode_op(photon_cutoff, 2, space)
    b = _mode_op(photon_cutoff, 3, space)
    H = _zero(space)
    for slot in (0, 1):
        H = H + _ion_op(n_lev, PM, PM, slot, space) * delta_m
        H = H + _ion_op(n_lev, PP, PP, slot, space) * delta_p
    if raman_resonance and params.Delta != 0:
        eps_h = (g_h ** 2 - (om_h / 2) ** 2) / delta_m
        eps_v = (g_v ** 2 - (om_v / 2) ** 2) / delta_p if om_v > 0 else 0.0
        H = H + (dagger(a) @ a) * eps_h + (dagger(b) @ b) * eps_v

    coupling = _zero(space)
    for slot in (0, 1):
        amp = signs[slot] * c[slot]
        # sigma_PD a^dagger = |D><P| a^dagger
        coupling = coupling + (_ion_op(n_lev, D, PM, slot, space) @ dagger(a)) * (amp * g_h)
        coupling = coupling + (_ion_op(n_lev, D, PP, slot, space) @ dagger(b)) * (amp * g_v)
        drive = np.exp(1j * raman_phases[slot])
        if om_h > 0:
            coupling = coupling + _ion_op(n_lev, PM, S, slot, space) * (drive * om_h / 2)
        if om_v > 0:
            coupling = coupling + _ion_op(n_lev, PP, SP, slot, space) * (drive * om_v / 2)
    H = (H + coupling + dagger(coupling)) * TWO_PI

    kappa2 = 2.0 * TWO_PI * params.kappa
    c_ops = [(a, kappa2), (b, kappa2)]
    gam = TWO_PI * params.gamma
    for slot in (0, 1):
        c_ops += _scattering_ops(n_lev, slot, space, PM, S, SP, D, gam, params)
        c_ops += _scattering_ops(n_lev, slot, space, PP, SP, S, D, gam, params)
    c_ops += _manifold_dephasing(n_lev, [S, SP], space, (0, 1), TWO_PI * params.laser_linewidth)

    observables = {
        "n_H": dagger(a) @ a,
        "n_V": dagger(b) @ b,
        "coh_HV": dagger(a) @ b,
        "p_P1": _ion_op(n_lev, PM, PM, 0, space) + _ion_op(n_lev, PP, PP, 0, space),
        "p_P2": _ion_op(n_lev, PM, PM, 1, space) + _ion_op(n_lev, PP, PP, 1, space),
        "p_S1": _ion_op(n_lev, S, S, 0, space) + _ion_op(n_lev, SP, SP, 0, space),
        "p_S2": _ion_op(n_lev, S, S, 1, space) + _ion_op(n_lev, SP, SP, 1, space),
        "p_top_fock_H": embed(projector(photon_cutoff + 1, photon_cutoff, photon_cutoff), 2, space),
        "p_top_fock_V": embed(projector(photon_cutoff + 1, photon_cutoff, photon_cutoff), 3, space),
    }
    return LindbladModel(space, H, tuple(c_ops), observables, ("n_H", "n_V"),
                         description=f"full six-level, {mode}")


def full_to_effective_zeta(zeta: float) -> float:
    """Relative phase that the effective model needs to mimic the full model's couplings."""
    return (math.pi - zeta) % TWO_PI


def scattering_decay_rates(model: LindbladModel, source_slot: int, source_level: int,
                           n_levels: int) -> float:
    """Total collapse rate leaving ``source_level`` of the ion in ``source_slot``."""
    space = model.space
    idx = [0] * len(space)
    idx[source_slot] = source_level
    col = space.basis_index(idx)
    total = 0.0
    for op, rate in model.collapse_ops:
        m = op.csr()
        colvec = m[:, col].toarray().ravel()
        out = np.abs(colvec) ** 2
        out[col] = 0.0  # diagonal (dephasing/return) terms do not leave the level
        total += rate * float(out.sum())
    return total


def ion_state_full(levels: Sequence[int], photons: Sequence[int] = (0, 0),
                   photon_cutoff: int = 2) -> StateVector:
    space = HilbertSpace([6, 6, photon_cutoff + 1, photon_cutoff + 1])
    return StateVector.basis(space, list(levels) + list(photons))
