import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ioncavity import kernels
from ioncavity.control import prepare_psi_phi, prepare_single_ion
from ioncavity.dynamics import (
    IntegratorConfig, NumericalError, apply_imperfection_scalings, cumulative_efficiency,
    detection_probability, evolve, photon_shape, qubit_decoherence_factor, series_to_csv,
)
from ioncavity.experiments import run_single_ion, run_two_ion, subradiant_phase, superradiant_phase
from ioncavity.model import (
    LindbladModel, PhysicalParams, build_effective_bichromatic_model, build_effective_model,
)
from ioncavity.qcore import DensityMatrix, HilbertSpace, Operator, annihilation, dagger

TWO_PI = 2 * math.pi


def cavity_only(n_max=2, kappa=50e3):
    space = HilbertSpace([n_max + 1])
    a = annihilation(n_max)
    H = Operator(space, np.zeros((n_max + 1, n_max + 1)))
    return LindbladModel(space, H, ((a, 2 * TWO_PI * kappa),), {"n_H": dagger(a) @ a}, ("n_H",))


def fock(n, n_max=2):
    m = np.zeros((n_max + 1, n_max + 1))
    m[n, n] = 1
    return DensityMatrix(n_max + 1, m)


class TestEvolve:
    def test_static_without_generator(self):
        space = HilbertSpace([2, 2])
        rng = np.random.default_rng(0)
        x = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        rho = DensityMatrix(space, x @ x.conj().T / np.trace(x @ x.conj().T))
        model = LindbladModel(space, Operator(space, np.zeros((4, 4))), (), {}, ())
        for method in ("rk4", "expm", "adaptive"):
            _, final = evolve(model, rho, IntegratorConfig(t_end=1e-6, method=method))
            np.testing.assert_allclose(final.matrix, rho.matrix, atol=1e-14)

    @pytest.mark.parametrize("method", ["rk4", "expm", "adaptive"])
    def test_cavity_decay_oracle(self, method):
        kappa = 50e3
        traj, _ = evolve(cavity_only(kappa=kappa), fock(1), IntegratorConfig(t_end=10e-6, method=method))
        expected = np.exp(-2 * kappa * TWO_PI * traj.times)
        np.testing.assert_allclose(traj["n_H"], expected, atol=1e-9)
        integral = (1 - expected) / (2 * kappa * TWO_PI)
        np.testing.assert_allclose(traj["int_n_H"], integral, rtol=1e-7, atol=1e-15)

    def test_backends_agree(self):
        if kernels.rk4_compiled is None:
            pytest.skip("compiled kernel not built")
        p = PhysicalParams()
        model, rho0 = build_effective_model(p, 0.3)
        cfg = dict(t_end=3e-6, dt=1e-8, sample_dt=1e-7)
        a, fa = evolve(model, rho0, IntegratorConfig(backend="cython", **cfg))
        b, fb = evolve(model, rho0, IntegratorConfig(backend="python", **cfg))
        for k in a.series:
            np.testing.assert_allclose(a[k], b[k], atol=1e-13)
        np.testing.assert_allclose(fa.matrix, fb.matrix, atol=1e-13)

    def test_methods_agree(self):
        p = PhysicalParams()
        model, rho0 = build_effective_model(p, superradiant_phase(p))
        ref, _ = evolve(model, rho0, IntegratorConfig(t_end=6e-6, method="expm"))
        for method in ("rk4", "adaptive"):
            tr, _ = evolve(model, rho0, IntegratorConfig(t_end=6e-6, method=method, rel_tol=1e-10, abs_tol=1e-12))
            np.testing.assert_allclose(tr["int_n_H"], ref["int_n_H"], rtol=1e-6, atol=1e-14)

    def test_convergence_order(self):
        p = PhysicalParams()
        model, rho0 = build_effective_model(p, 0.3)

        def end(dt):
            return evolve(model, rho0, IntegratorConfig(t_end=4e-6, dt=dt, sample_dt=4e-7))[1].matrix

        dt = 5e-8
        ref = end(dt / 4)
        order = math.log2(np.abs(end(dt) - ref).max() / np.abs(end(dt / 2) - ref).max())
        assert abs(order - 4) <= 0.2 * 4

    def test_unstable_step_reports_time(self):
        model, rho0 = build_effective_model(PhysicalParams(), 0.3)
        with pytest.raises(NumericalError) as info:
            evolve(model, rho0, IntegratorConfig(t_end=2e-4, dt=5e-6, sample_dt=5e-6))
        assert info.value.time is not None and 0 < info.value.time <= 2e-4

    def test_config_validation(self):
        with pytest.raises(ValueError):
            IntegratorConfig(t_end=0)
        with pytest.raises(ValueError):
            IntegratorConfig(t_end=1e-6, dt=-1)
        with pytest.raises(ValueError):
            IntegratorConfig(t_end=1e-6, method="euler")
        with pytest.raises(ValueError):
            IntegratorConfig(t_end=1e-6, dt=3e-9, sample_dt=5e-8).steps_per_sample()


class TestInvariants:
    """Trace and positivity across the model matrix used by the experiments."""

    @pytest.mark.parametrize("case", ["super", "sub", "psi1", "psi2", "ideal_super", "bichromatic", "full"])
    def test_trace_positivity_truncation(self, case):
        p = PhysicalParams()
        cfg = IntegratorConfig(t_end=20e-6)
        if case in ("super", "sub", "ideal_super"):
            q = PhysicalParams.ideal() if case == "ideal_super" else p
            phi = superradiant_phase(q) if case != "sub" else subradiant_phase(q)
            model, rho0 = build_effective_model(q, phi)
        elif case in ("psi1", "psi2"):
            model, rho0 = build_effective_model(p, 0.0, initial=prepare_single_ion(case, p).rho)
        elif case == "bichromatic":
            from ioncavity.experiments import encoding_state
            model = build_effective_bichromatic_model(p)
            ions = encoding_state(p, "super").rho.matrix
            vac = np.zeros((9, 9))
            vac[0, 0] = 1
            rho0 = DensityMatrix(model.space, np.kron(ions, vac))
            cfg = IntegratorConfig(t_end=55e-6)
        else:
            from ioncavity.model import D, S, build_full_model, ion_state_full
            q = PhysicalParams.ideal()
            model = build_full_model(q, "monochromatic")
            psi = (ion_state_full([S, D]).amplitudes + ion_state_full([D, S]).amplitudes) / math.sqrt(2)
            rho0 = DensityMatrix(model.space, np.outer(psi, psi.conj()))
            cfg = IntegratorConfig(t_end=10e-6, method="expm", sample_dt=1e-7)
        traj, final = evolve(model, rho0, cfg)
        assert np.max(np.abs(traj["trace"] - 1)) <= 1e-8
        assert min(lam for _, lam in traj.checkpoints) >= -1e-8
        assert len(traj.checkpoints) >= 2
        for key, series in traj.series.items():
            if key in ("p_top_fock_H", "p_top_fock_V"):
                assert series.max() < 1e-4
            if key.startswith("p_") or key.startswith("n_"):
                assert series.min() >= -1e-10
            if key.startswith("p_"):
                assert series.max() <= 1 + 1e-10

    def test_single_photon_cutoff_is_adequate(self):
        # only the SS admixture can put two photons in the mode
        p = PhysicalParams()
        probs = []
        for cutoff in (1, 2):
            model, rho0 = build_effective_model(p, superradiant_phase(p), photon_cutoff=cutoff)
            probs.append(detection_probability(evolve(model, rho0, IntegratorConfig(t_end=6e-6))[0], p, [0, 6e-6]))
        assert probs[0] == pytest.approx(probs[1], rel=0.01)

    def test_dark_state_stasis(self):
        p = PhysicalParams.ideal()
        traj = run_two_ion(p, subradiant_phase(p), 20e-6)
        assert np.max(traj["n_H"]) <= 1e-10


class TestPhotonShape:
    def test_zero_field_zero_dark(self):
        p = PhysicalParams(dark_rate_1=0.0, dark_rate_2=0.0)
        traj, _ = evolve(cavity_only(), fock(0), IntegratorConfig(t_end=5e-6))
        _, values = photon_shape(traj, p)
        assert np.all(values == 0)

    def test_zero_field_dark_counts(self):
        traj, _ = evolve(cavity_only(), fock(0), IntegratorConfig(t_end=5e-6))
        starts, values = photon_shape(traj, PhysicalParams())
        assert len(starts) == 5
        np.testing.assert_allclose(values, 7e-6, rtol=1e-12)

    def test_single_photon_fully_collected(self):
        p = PhysicalParams(dark_rate_1=0.0, dark_rate_2=0.0)
        traj, _ = evolve(cavity_only(), fock(1), IntegratorConfig(t_end=40e-6))
        _, values = photon_shape(traj, p)
        assert values.sum() == pytest.approx(p.detection_efficiency, rel=1e-4)

    def test_missing_series(self):
        traj, _ = evolve(cavity_only(), fock(0), IntegratorConfig(t_end=1e-6))
        with pytest.raises(KeyError):
            photon_shape(traj, PhysicalParams(), modes=["n_V"])

    def test_superradiant_first_bin_doubles(self):
        p = PhysicalParams.ideal()
        sup = run_two_ion(p, superradiant_phase(p), 2e-6)
        single = run_single_ion(p, "psi1", 2e-6)
        ratio = photon_shape(sup, p)[1][0] / photon_shape(single, p)[1][0]
        assert ratio == pytest.approx(2.0, abs=0.02)

    def test_single_ion_shape_rises_then_decays(self):
        p = PhysicalParams()
        _, values = photon_shape(run_single_ion(p, "psi1", 40e-6), p)
        k = int(np.argmax(values))
        assert 0 < k < 15
        assert values[-1] < 0.3 * values[k]


class TestDetection:
    def test_zero_length_window(self):
        traj = run_single_ion(PhysicalParams(), "psi1", 2e-6)
        assert detection_probability(traj, PhysicalParams(), [1e-6, 1e-6]) == 0.0

    def test_empty_window(self):
        traj = run_single_ion(PhysicalParams(), "psi1", 2e-6)
        with pytest.raises(ValueError):
            detection_probability(traj, PhysicalParams(), [1e-6, 0.5e-6])
        with pytest.raises(ValueError):
            detection_probability(traj, PhysicalParams(), [0, 3e-6])

    def test_single_ion_full_window(self):
        # the measured single-ion value is 0.054(3); the model gives about 0.060
        p = PhysicalParams()
        traj = run_single_ion(p, "psi1", 55e-6)
        assert detection_probability(traj, p, [0, 55e-6]) == pytest.approx(0.054, rel=0.15)

    def test_cumulative_efficiency(self):
        p = PhysicalParams()
        edges, eps = cumulative_efficiency(run_single_ion(p, "psi1", 20e-6), p)
        assert eps[0] == 0.0
        assert np.all(np.diff(eps) >= 0)
        assert eps[-1] == pytest.approx(detection_probability(run_single_ion(p, "psi1", 20e-6), p, [0, 20e-6]))
        assert len(edges) == len(eps)


class TestImperfections:
    def test_factor_at_zero(self):
        assert qubit_decoherence_factor(PhysicalParams(), 0.0) == pytest.approx(0.96, abs=0)

    def test_long_coherence(self):
        p = PhysicalParams(tau_SSp=math.inf)
        assert qubit_decoherence_factor(p, 1e-3) == pytest.approx(0.96)
        assert qubit_decoherence_factor(PhysicalParams(tau_SSp=1e9), 55e-6) / 0.96 == pytest.approx(1.0)

    def test_gaussian_at_55us(self):
        f = qubit_decoherence_factor(PhysicalParams(), 55e-6) / 0.96
        assert f == pytest.approx(math.exp(-0.335), abs=2e-3)
        assert f == pytest.approx(0.715, abs=2e-3)

    def test_nonpositive_tau(self):
        with pytest.raises(ValueError):
            qubit_decoherence_factor(SimpleNamespace(tau_SSp=0.0, coherence_scale=0.96), 0.0)
        with pytest.raises(ValueError):
            PhysicalParams(tau_SSp=-1.0)

    @given(st.integers(0, 1000), st.floats(0, 1e-4))
    @settings(max_examples=20, deadline=None)
    def test_scaling_is_a_dephasing(self, seed, t):
        rng = np.random.default_rng(seed)
        space = HilbertSpace([4, 4, 2, 2])
        x = rng.normal(size=(64, 64)) + 1j * rng.normal(size=(64, 64))
        rho = DensityMatrix(space, x @ x.conj().T / np.trace(x @ x.conj().T))
        out = apply_imperfection_scalings(rho, PhysicalParams(), t)
        np.testing.assert_allclose(np.diag(out.matrix), np.diag(rho.matrix), atol=1e-15)
        assert np.linalg.eigvalsh(out.matrix)[0] >= -1e-12
        off = np.abs(out.matrix) < np.abs(rho.matrix) - 1e-15
        assert off.any()

    def test_series_needs_times(self):
        rho = DensityMatrix.maximally_mixed([4, 4, 2, 2])
        with pytest.raises(ValueError):
            apply_imperfection_scalings([rho, rho, rho], PhysicalParams(), [0.0, 1e-6])


def test_csv_export():
    text = series_to_csv(np.array([0.0, 1e-6]), {"n_H": np.array([1 / 3, 2 / 3])})
    lines = text.strip().split("\n")
    assert lines[0] == "time_us,n_H"
    assert lines[1] == "0,0.333333333"
    assert lines[2] == "1,0.666666667"
