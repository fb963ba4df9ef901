import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ioncavity.control import (
    D, DP, PSI_PLUS_PHASE, REGISTER, S, SP, FitError, GateParams, MotionalTruncationError,
    embed_two_level, fidelity_bound, fit_parity, global_rotation, ket, ms_gate_evolution,
    ms_populations_closed_form, ms_spin_state, parity_scan, phi_state_vector, prepare_bell,
    prepare_psi_phi, prepare_single_ion, prepare_superposition, psi_phi_vector, readout_populations,
    stark_phase_gate, stark_ramsey, stark_unitary,
)
from ioncavity.model import PhysicalParams
from ioncavity.qcore import DensityMatrix

PHASES = np.linspace(0, 2 * math.pi, 32, endpoint=False)


def random_register_state(seed, pure=False):
    rng = np.random.default_rng(seed)
    if pure:
        v = rng.normal(size=16) + 1j * rng.normal(size=16)
        v /= np.linalg.norm(v)
        return DensityMatrix(REGISTER, np.outer(v, v.conj()))
    x = rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16))
    m = x @ x.conj().T
    return DensityMatrix(REGISTER, m / np.trace(m))


class TestGateParams:
    def test_defaults(self):
        g = GateParams()
        assert g.eta_Omega == pytest.approx(g.delta_MS / 2)
        assert g.gate_time == pytest.approx(54.9e-6, abs=0.1e-6)

    @pytest.mark.parametrize("kw", [{"delta_MS": 0.0}, {"n_motional_max": 1}, {"stark_period": 0.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            GateParams(**kw)


class TestMSGate:
    def test_initial_state(self):
        res = ms_gate_evolution(GateParams(), [0.0])
        assert res["p_SS"][0] == pytest.approx(1.0)

    def test_entangles_at_loop_closure(self):
        g = GateParams()
        res = ms_gate_evolution(g, [g.gate_time])
        spin = ms_spin_state(res)
        phi = phi_state_vector()
        assert np.real(phi.conj() @ spin.matrix @ phi) >= 0.999
        assert res["p_SS"][0] == pytest.approx(0.5, abs=1e-3)
        assert res["p_DD"][0] == pytest.approx(0.5, abs=1e-3)
        assert res["p_mixed"][0] < 1e-3
        assert res["motional_entropy"][0] <= 1e-4

    def test_matches_closed_form(self):
        g = GateParams()
        t = np.linspace(0, g.gate_time, 57)
        num = ms_gate_evolution(g, t)
        ref = ms_populations_closed_form(g, t)
        for k in ("p_SS", "p_DD", "p_mixed"):
            np.testing.assert_allclose(num[k], ref[k], atol=1e-3)

    def test_mixed_population_peaks_mid_gate(self):
        g = GateParams()
        t = np.linspace(0, g.gate_time, 201)
        res = ms_gate_evolution(g, t)
        t_peak = t[int(np.argmax(res["p_mixed"]))]
        assert abs(t_peak - g.gate_time / 2) <= 0.1 * g.gate_time

    def test_truncation_overflow(self):
        g = GateParams(n_motional_max=2)
        with pytest.raises(MotionalTruncationError):
            ms_gate_evolution(g, np.linspace(0, g.gate_time, 50))

    def test_cutoff_population_small(self):
        g = GateParams()
        res = ms_gate_evolution(g, np.linspace(0, 1.2 * g.gate_time, 121))
        assert res["p_top"].max() < 1e-3

    def test_purity_of_joint_state(self):
        g = GateParams()
        res = ms_gate_evolution(g, [0.3 * g.gate_time])
        assert res["final_state"].norm() == pytest.approx(1.0, abs=1e-10)


class TestParity:
    def test_bell_amplitude(self):
        values = parity_scan(prepare_bell("Phi").rho, PHASES)
        assert fidelity_bound(values, PHASES) == pytest.approx(1.0, abs=1e-3)
        assert np.max(np.abs(values)) == pytest.approx(1.0, abs=1e-10)

    def test_fully_mixed(self):
        mixed = embed_two_level(np.eye(4) / 4)
        np.testing.assert_allclose(parity_scan(mixed, PHASES), 0.0, atol=1e-12)

    def test_depolarized_bound(self):
        phi = phi_state_vector()
        rho = embed_two_level(0.0 + np.eye(4) / 4)
        ideal = prepare_bell("Phi").rho.matrix
        p = (0.95 - 0.25) / 0.75
        noisy = DensityMatrix(REGISTER, p * ideal + (1 - p) * rho.matrix)
        fidelity = np.real(phi.conj() @ noisy.matrix @ phi)
        assert fidelity == pytest.approx(0.95)
        amp = fidelity_bound(parity_scan(noisy, PHASES), PHASES)
        assert amp <= 0.95 + 0.01
        assert amp <= fidelity

    def test_psi_plus_phase(self):
        u = global_rotation(math.pi / 2, PSI_PLUS_PHASE)
        out = u @ phi_state_vector()
        assert abs(np.vdot(psi_phi_vector(0.0), out)) ** 2 == pytest.approx(1.0, abs=1e-12)

    @given(st.integers(0, 10_000), st.floats(0, 2 * math.pi))
    @settings(max_examples=25, deadline=None)
    def test_global_phase_invariance(self, seed, theta):
        rng = np.random.default_rng(seed)
        v = rng.normal(size=16) + 1j * rng.normal(size=16)
        v /= np.linalg.norm(v)
        a = DensityMatrix(REGISTER, np.outer(v, v.conj()))
        w = np.exp(1j * theta) * v
        b = DensityMatrix(REGISTER, np.outer(w, w.conj()))
        np.testing.assert_allclose(parity_scan(a, PHASES[:8]), parity_scan(b, PHASES[:8]), atol=1e-12)

    def test_fit_requirements(self):
        with pytest.raises(FitError):
            fit_parity(PHASES[:5], np.zeros(5))
        with pytest.raises(FitError):
            fit_parity(np.linspace(0, 0.5, 10), np.zeros(10))

    def test_fit_recovers_parameters(self):
        values = 0.1 + 0.8 * np.cos(2 * PHASES + 0.4)
        fit = fit_parity(PHASES, values)
        assert fit["amplitude"] == pytest.approx(0.8)
        assert fit["offset"] == pytest.approx(0.1)


class TestStark:
    def test_zero_duration(self):
        rho = random_register_state(1)
        np.testing.assert_allclose(stark_phase_gate(rho, 0.0, GateParams()).matrix, rho.matrix, atol=1e-15)

    def test_half_period_ramsey(self):
        g = GateParams()
        res = stark_ramsey([g.stark_period / 2], g)
        assert res["p_SD"][0] == pytest.approx(1.0, abs=1e-3)

    def test_full_period_is_identity(self):
        g = GateParams()
        rho = random_register_state(2)
        out = stark_phase_gate(rho, g.stark_period, g)
        np.testing.assert_allclose(out.matrix, rho.matrix, atol=1e-10)

    @given(st.floats(0, 20e-6), st.floats(0, 20e-6))
    @settings(max_examples=30, deadline=None)
    def test_additive_composition(self, t1, t2):
        g = GateParams()
        np.testing.assert_allclose(stark_unitary(t1, g) @ stark_unitary(t2, g), stark_unitary(t1 + t2, g), atol=1e-12)

    def test_negative_duration(self):
        with pytest.raises(ValueError):
            stark_phase_gate(random_register_state(3), -1e-6, GateParams())

    def test_ramsey_period(self):
        from ioncavity.experiments import fitted_period
        g = GateParams()
        t = np.linspace(0, 16e-6, 161)
        res = stark_ramsey(t, g)
        assert fitted_period(t, res["p_SD"]) == pytest.approx(5.3e-6, rel=0.01)

    @given(st.integers(0, 1000), st.floats(0, 2e-5))
    @settings(max_examples=20, deadline=None)
    def test_gates_preserve_trace_and_purity(self, seed, duration):
        rho = random_register_state(seed, pure=True)
        out = stark_phase_gate(rho, duration, GateParams())
        out = DensityMatrix(REGISTER, global_rotation(math.pi / 2, 0.7) @ out.matrix @ global_rotation(math.pi / 2, 0.7).conj().T)
        assert np.trace(out.matrix).real == pytest.approx(1.0, abs=1e-10)
        assert out.purity() == pytest.approx(1.0, abs=1e-10)


class TestPreparation:
    def test_ideal_overlap(self):
        st_ = prepare_psi_phi(0.7, PhysicalParams(), noisy=False)
        v = psi_phi_vector(0.7)
        assert np.real(v.conj() @ st_.rho.matrix @ v) == pytest.approx(1.0)

    def test_noisy_overlap(self):
        st_ = prepare_psi_phi(0.7, PhysicalParams(), noisy=True)
        v = psi_phi_vector(0.7)
        assert np.real(v.conj() @ st_.rho.matrix @ v) == pytest.approx(0.95)
        assert st_.rho.purity() < 1
        m = st_.rho.matrix
        assert m[0, 0].real == pytest.approx(0.025)
        idx_dd = D * 4 + D
        assert m[idx_dd, idx_dd].real == pytest.approx(0.025)
        assert abs(m[0, idx_dd]) == 0

    @given(st.floats(-10, 10))
    @settings(max_examples=30, deadline=None)
    def test_phase_periodicity(self, phi):
        a = prepare_psi_phi(phi, PhysicalParams()).rho.matrix
        b = prepare_psi_phi(phi + 2 * math.pi, PhysicalParams()).rho.matrix
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_single_ion_states(self):
        p1 = prepare_single_ion("psi1", noisy=False).rho.matrix
        p2 = prepare_single_ion("psi2", noisy=False).rho.matrix
        assert p1[S * 4 + DP, S * 4 + DP].real == pytest.approx(1.0)
        assert p2[DP * 4 + S, DP * 4 + S].real == pytest.approx(1.0)
        noisy = prepare_single_ion("psi1", PhysicalParams())
        assert noisy.fidelity_target == pytest.approx(0.95)
        with pytest.raises(ValueError):
            prepare_single_ion("psi3")

    def test_superposition_identity(self):
        base = prepare_psi_phi(0.3, PhysicalParams())
        out = prepare_superposition(0.0, 0.0, base)
        np.testing.assert_allclose(out.rho.matrix, base.rho.matrix, atol=1e-15)

    def test_superposition_flip(self):
        base = prepare_single_ion("psi1", noisy=False)
        out = prepare_superposition(math.pi / 2, 0.0, base).rho.matrix
        assert out[SP * 4 + DP, SP * 4 + DP].real == pytest.approx(1.0)

    def test_superposition_equal_weights_with_phase(self):
        base = prepare_single_ion("psi1", noisy=False)
        out = prepare_superposition(math.pi / 4, math.pi / 2, base).rho.matrix
        i, j = S * 4 + DP, SP * 4 + DP
        assert out[i, i].real == pytest.approx(0.5)
        assert out[j, j].real == pytest.approx(0.5)
        assert out[j, i] == pytest.approx(0.5j)

    def test_readout(self):
        pops = readout_populations(DensityMatrix(REGISTER, np.outer(ket(S, D), ket(S, D))))
        assert pops == {"p_SS": 0.0, "p_DD": 0.0, "p_SD": 1.0}
