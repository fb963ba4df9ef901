import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ioncavity.dynamics import IntegratorConfig, evolve
from ioncavity.model import (
    D, PM, PP, S, SP, ParameterError, PhysicalParams, bichromatic_effective_rates,
    build_effective_bichromatic_model, build_effective_model, build_full_model, calibrate_xi,
    effective_rates, full_to_effective_zeta, ion_state_full, raman_phase, scattering_decay_rates,
    zeeman_shifts,
)
from ioncavity.qcore import DensityMatrix, StateVector


def raman_phase_oracle(d, theta, lam):
    mpmath.mp.dps = 40
    turns = mpmath.mpf(d) * mpmath.sin(mpmath.mpf(theta)) / mpmath.mpf(lam)
    return float(2 * mpmath.pi * (turns - mpmath.floor(turns)))


class TestParams:
    @pytest.mark.parametrize("field,value", [("kappa", -1.0), ("gamma", -1.0), ("branching_PS", 1.5),
                                             ("detection_efficiency", 0.0), ("coupling_asymmetry", 1.2),
                                             ("weak_ion", 3), ("tone_assignment", "other")])
    def test_invalid_values_rejected(self, field, value):
        with pytest.raises(ParameterError):
            PhysicalParams(**{field: value})

    def test_dict_roundtrip(self):
        p = PhysicalParams(kappa=40e3, zeta=1.0)
        assert PhysicalParams.from_dict(p.to_dict()) == p

    def test_unknown_field_rejected(self):
        with pytest.raises((ParameterError, TypeError)):
            PhysicalParams.from_dict({"kapa": 1.0})


class TestRamanPhase:
    def test_zero_separation(self):
        assert raman_phase(PhysicalParams(ion_separation=0.0)) == 0.0

    def test_full_wrap(self):
        p = PhysicalParams(ion_separation=393e-9 / math.sin(math.pi / 4))
        z = raman_phase(p)
        assert min(z, 2 * math.pi - z) < 1e-9

    def test_default_geometry(self):
        z = raman_phase(PhysicalParams())
        assert z == pytest.approx(raman_phase_oracle(5.6e-6, math.pi / 4, 393e-9), abs=1e-12)
        assert z == pytest.approx(0.478, abs=0.005)

    @given(st.floats(0, 2e-5), st.floats(0.05, 1.5))
    @settings(max_examples=50, deadline=None)
    def test_matches_high_precision_oracle(self, d, theta):
        z = raman_phase(PhysicalParams(ion_separation=d, raman_angle=theta))
        ref = raman_phase_oracle(d, theta, 393e-9)
        diff = abs(z - ref) % (2 * math.pi)
        assert min(diff, 2 * math.pi - diff) < 1e-9
        assert 0 <= z < 2 * math.pi

    def test_rejects_nonpositive_wavelength(self):
        with pytest.raises(ParameterError):
            PhysicalParams(raman_wavelength=0.0)


class TestEffectiveRates:
    def test_reference_scattering_rate(self):
        _, gamma_eff = effective_rates(PhysicalParams())
        assert gamma_eff == pytest.approx(11.5e6 * (19 / 800) ** 2, rel=1e-12)
        assert gamma_eff == pytest.approx(6.5e3, abs=0.1e3)

    def test_calibrated_coupling(self):
        g, _ = effective_rates(PhysicalParams())
        assert g == pytest.approx(18e3, rel=1e-9)
        assert calibrate_xi(PhysicalParams()) == pytest.approx(0.758, abs=5e-4)

    def test_zero_drive(self):
        assert effective_rates(PhysicalParams(Omega_SD=0.0)) == (0.0, 0.0)

    def test_zero_detuning(self):
        with pytest.raises(ParameterError):
            effective_rates(PhysicalParams(Delta=0.0))

    def test_small_detuning_warns(self):
        with pytest.warns(RuntimeWarning):
            effective_rates(PhysicalParams(Delta=50e6))

    def test_bichromatic_rates_balanced(self):
        r = bichromatic_effective_rates(PhysicalParams(bichromatic_rabi_scale=1.0))
        assert r["g_H"] == pytest.approx(9e3, rel=1e-9)
        assert r["g_V"] == pytest.approx(8.81e3, abs=0.02e3)
        assert r["Omega_V"] == pytest.approx(2 * r["Omega_H"])

    def test_tone_assignment_as_listed(self):
        r = bichromatic_effective_rates(PhysicalParams(tone_assignment="as_listed", bichromatic_rabi_scale=1.0))
        assert r["Omega_H"] == 19e6 and r["Omega_V"] == 9.5e6


class TestZeeman:
    def test_zero_field(self):
        assert all(v == 0 for v in zeeman_shifts(PhysicalParams(B=0.0)).values())

    def test_ground_state_shift(self):
        z = zeeman_shifts(PhysicalParams())
        assert z["S"] == pytest.approx(-6.30e6, abs=0.01e6)
        assert z["S'"] - z["S"] == pytest.approx(12.6e6, abs=0.05e6)


class TestEffectiveModel:
    @given(st.floats(0, 2 * math.pi), st.floats(0, 2 * math.pi), st.floats(0.1, 1.0))
    @settings(max_examples=40, deadline=None)
    def test_hamiltonian_hermitian(self, zeta, phi, asym):
        p = PhysicalParams(zeta=zeta, coupling_asymmetry=asym)
        model, rho0 = build_effective_model(p, phi)
        h = model.hamiltonian.dense()
        assert np.max(np.abs(h - h.conj().T)) <= 1e-10 * np.max(np.abs(h))
        assert all(rate >= 0 for _, rate in model.collapse_ops)

    @given(st.floats(0, 2 * math.pi))
    @settings(max_examples=30, deadline=None)
    def test_exchange_symmetry(self, zeta):
        p = PhysicalParams.ideal()
        h_plus = build_effective_model(p.replace(zeta=zeta), 0.0)[0].hamiltonian.dense()
        h_minus = build_effective_model(p.replace(zeta=(-zeta) % (2 * math.pi)), 0.0)[0].hamiltonian.dense()
        perm = _swap_ions([2, 2, 2])
        swapped = perm @ h_plus @ perm.T
        np.testing.assert_allclose(np.linalg.eigvalsh(swapped), np.linalg.eigvalsh(h_minus), atol=1e-10 * np.abs(h_plus).max())

    def test_zero_coupling_emits_nothing(self):
        p = PhysicalParams.ideal(Omega_SD=0.0)
        model, rho0 = build_effective_model(p, 0.0)
        traj, _ = evolve(model, rho0, IntegratorConfig(t_end=5e-6))
        assert np.max(np.abs(traj["n_H"])) == 0.0

    def test_psi1_adds_hidden_level(self):
        from ioncavity.control import prepare_single_ion
        p = PhysicalParams()
        model, rho0 = build_effective_model(p, 0.0, initial=prepare_single_ion("psi1", p).rho)
        assert model.space.factors == (3, 3, 2)


def _swap_ions(factors):
    d = int(np.prod(factors))
    perm = np.zeros((d, d))
    from ioncavity.qcore import HilbertSpace
    sp = HilbertSpace(factors)
    for i in range(d):
        a, b, *rest = sp.basis_labels(i)
        perm[sp.basis_index([b, a, *rest]), i] = 1
    return perm


class TestFullModel:
    def test_space_and_hermiticity(self):
        for mode in ("monochromatic", "bichromatic"):
            m = build_full_model(PhysicalParams(), mode)
            assert m.space.factors == (6, 6, 3, 3)
            h = m.hamiltonian.csr()
            assert abs(h - h.conj().T).max() <= 1e-10 * abs(h).max()

    def test_bad_mode(self):
        with pytest.raises(ParameterError):
            build_full_model(PhysicalParams(), "trichromatic")

    def test_decay_bookkeeping(self):
        p = PhysicalParams()
        m = build_full_model(p, "bichromatic")
        for slot in (0, 1):
            for lev in (PM, PP):
                assert scattering_decay_rates(m, slot, lev, 6) == pytest.approx(2 * math.pi * p.gamma, rel=1e-12)

    def test_cavity_only_dark_state(self):
        p = PhysicalParams.ideal(Omega_SD=0.0, Omega_SpD=0.0, B=0.0, Delta=0.0, coupling_asymmetry=1.0)
        m = build_full_model(p, "monochromatic", raman_resonance=False)
        h = m.hamiltonian.csr()
        # opposite-sign antinodes: the symmetric P excitation decouples from mode H
        dark = (ion_state_full([PM, D]).amplitudes + ion_state_full([D, PM]).amplitudes) / math.sqrt(2)
        bright = (ion_state_full([PM, D]).amplitudes - ion_state_full([D, PM]).amplitudes) / math.sqrt(2)
        assert np.linalg.norm(h @ dark) < 1e-12 * abs(h).max()
        assert np.linalg.norm(h @ bright) == pytest.approx(math.sqrt(2) * 2 * math.pi * p.g_PD * p.xi_SD, rel=1e-12)

    def test_matches_effective_model(self):
        p = PhysicalParams.ideal()
        full = build_full_model(p, "monochromatic")
        phi = -full_to_effective_zeta(p.zeta_value)
        psi = (ion_state_full([S, D]).amplitudes + np.exp(1j * phi) * ion_state_full([D, S]).amplitudes) / math.sqrt(2)
        cfg = IntegratorConfig(t_end=20e-6, method="expm", sample_dt=1e-7)
        tf, _ = evolve(full, DensityMatrix(full.space, np.outer(psi, psi.conj())), cfg)
        eff, rho0 = build_effective_model(p.replace(zeta=full_to_effective_zeta(p.zeta_value)), phi)
        te, _ = evolve(eff, rho0, IntegratorConfig(t_end=20e-6, sample_dt=1e-7))
        for key in ("n_H", "p_S1", "p_S2"):
            scale = np.max(np.abs(te[key]))
            assert np.max(np.abs(tf[key] - te[key])) <= 0.05 * scale

    def test_bichromatic_modes_balanced(self):
        p = PhysicalParams.ideal()
        full = build_full_model(p, "bichromatic")
        psi = (ion_state_full([S, 3]).amplitudes + ion_state_full([SP, 3]).amplitudes) / math.sqrt(2)
        traj, _ = evolve(full, DensityMatrix(full.space, np.outer(psi, psi.conj())),
                         IntegratorConfig(t_end=20e-6, method="expm", sample_dt=1e-7))
        assert traj["int_n_H"][-1] == pytest.approx(traj["int_n_V"][-1], rel=0.05)


class TestBichromaticModel:
    def test_structure(self):
        m = build_effective_bichromatic_model(PhysicalParams())
        assert m.space.factors == (4, 4, 3, 3)
        assert set(m.mode_observables) == {"n_H", "n_V"}
        h = m.hamiltonian.dense()
        assert np.max(np.abs(h - h.conj().T)) <= 1e-10 * np.abs(h).max()

    def test_cross_scattering_enters_rates(self):
        base = bichromatic_effective_rates(PhysicalParams(cross_tone_scattering=0.0))
        mixed = bichromatic_effective_rates(PhysicalParams(cross_tone_scattering=1.0))
        assert mixed["gamma_S"] == pytest.approx(base["gamma_S"] + base["gamma_Sp"])
        assert mixed["gamma_Sp"] == pytest.approx(base["gamma_S"] + base["gamma_Sp"])
