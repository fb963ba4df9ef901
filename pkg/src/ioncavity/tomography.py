"""Polarisation measurements of the emitted photon and maximum-likelihood process tomography.

Channels are handled through their Choi matrix ``J = sum_kl E(|k><l|) (x) |k><l|``
(output factor first), related to the Pauli-basis process matrix by
``J = B chi B^dagger`` where column ``i`` of ``B`` is the row-major flattening of
the Pauli matrix ``sigma_i``. Qubit basis: ``|0> = H``, ``|1> = V``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import sqrtm
from scipy.optimize import minimize

from .dynamics import Trajectory, qubit_decoherence_factor
from .model import PhysicalParams, TWO_PI
from .qcore import PAULI, DensityMatrix, HilbertSpace

SIGMAS = (PAULI["I"], PAULI["X"], PAULI["Y"], PAULI["Z"])
PAULI_LABELS = ("I", "X", "Y", "Z")
_B = np.column_stack([s.reshape(-1) for s in SIGMAS])

BASES = ("HV", "DA", "RL")
_KETS = {
    "H": np.array([1, 0], dtype=complex),
    "V": np.array([0, 1], dtype=complex),
    "D": np.array([1, 1], dtype=complex) / math.sqrt(2),
    "A": np.array([1, -1], dtype=complex) / math.sqrt(2),
    "R": np.array([1, 1j], dtype=complex) / math.sqrt(2),
    "L": np.array([1, -1j], dtype=complex) / math.sqrt(2),
}
# the four logical inputs (alpha, beta): H, V, D, R
INPUT_STATES = ((0.0, 0.0), (math.pi / 2, 0.0), (math.pi / 4, 0.0), (math.pi / 4, math.pi / 2))

DEFAULT_SHOTS = 2000
DEFAULT_ASYMMETRY = 0.10
MAX_ITER = 5000
OBJ_TOL = 1e-10


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, grad_norm: float = float("nan")):
        super().__init__(f"{message} (final gradient norm {grad_norm:.3e})")
        self.grad_norm = grad_norm


def projectors(basis: str) -> tuple[np.ndarray, np.ndarray]:
    """(first, second) outcome projectors: H/V, D/A or R/L."""
    if basis not in BASES:
        raise ValueError(f"unknown basis {basis!r}")
    return tuple(np.outer(_KETS[c], _KETS[c].conj()) for c in basis)


def input_ket(alpha: float, beta: float) -> np.ndarray:
    return np.array([math.cos(alpha), np.exp(1j * beta) * math.sin(alpha)], dtype=complex)


def input_density(alpha: float, beta: float) -> np.ndarray:
    v = input_ket(alpha, beta)
    return np.outer(v, v.conj())


# ---------------------------------------------------------------------------------
# records

@dataclass(frozen=True)
class MeasurementRecord:
    """Counts of one measurement setting.

    ``counts`` are ordered by outcome (first, second) of ``basis``, whatever the
    detector assignment; ``detector_swap`` records that the outcomes were routed
    to the opposite detectors.
    """

    input_state: tuple[float, float]
    basis: str
    detector_swap: bool
    counts: tuple[int, int]
    attempts: int

    def __post_init__(self):
        if self.basis not in BASES:
            raise ValueError(f"unknown basis {self.basis!r}")
        n1, n2 = (int(c) for c in self.counts)
        if n1 < 0 or n2 < 0:
            raise ValueError("counts must be nonnegative")
        if n1 + n2 > self.attempts:
            raise ValueError("counts exceed attempts")
        object.__setattr__(self, "counts", (n1, n2))
        object.__setattr__(self, "input_state", tuple(float(x) for x in self.input_state))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MeasurementRecord":
        return cls(tuple(d["input_state"]), d["basis"], bool(d["detector_swap"]),
                   tuple(d["counts"]), int(d["attempts"]))


def _input_key(state) -> tuple[float, float]:
    return (round(float(state[0]), 12), round(float(state[1]), 12))


def summed_counts(records: Sequence[MeasurementRecord]) -> dict:
    """Counts per (input, basis) summed over detector assignments."""
    out: dict = {}
    for r in records:
        key = (_input_key(r.input_state), r.basis)
        n = out.get(key, (0, 0))
        out[key] = (n[0] + r.counts[0], n[1] + r.counts[1])
    return out


# ---------------------------------------------------------------------------------
# process matrices

def chi_to_choi(chi: np.ndarray) -> np.ndarray:
    return _B @ chi @ _B.conj().T


def choi_to_chi(choi: np.ndarray) -> np.ndarray:
    return _B.conj().T @ choi @ _B / 4.0


def apply_choi(choi: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """E(rho) = Tr_in[J (1 (x) rho^T)]."""
    j = choi.reshape(2, 2, 2, 2)
    return np.einsum("aibj,ji->ab", j, rho)


@dataclass(frozen=True, eq=False)
class ProcessMatrix:
    chi: np.ndarray
    log_likelihood: float = float("nan")
    iterations: int = 0
    objective_trace: tuple = field(default=(), repr=False)

    def __post_init__(self):
        chi = np.array(self.chi, dtype=complex)
        if chi.shape != (4, 4):
            raise ValueError("chi must be 4x4")
        chi.setflags(write=False)
        object.__setattr__(self, "chi", chi)

    @classmethod
    def from_choi(cls, choi: np.ndarray, **kw) -> "ProcessMatrix":
        return cls(choi_to_chi(choi), **kw)

    @classmethod
    def from_unitary(cls, u: np.ndarray) -> "ProcessMatrix":
        v = u.reshape(-1)
        return cls.from_choi(np.outer(v, v.conj()))

    @property
    def choi(self) -> np.ndarray:
        return chi_to_choi(self.chi)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        out = np.zeros((2, 2), dtype=complex)
        for i in range(4):
            for j in range(4):
                out += self.chi[i, j] * SIGMAS[i] @ rho @ SIGMAS[j]
        return out

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.chi - self.chi.conj().T)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.chi + self.chi.conj().T))[0])

    def tp_error(self) -> float:
        s = sum(self.chi[i, j] * SIGMAS[j] @ SIGMAS[i] for i in range(4) for j in range(4))
        return float(np.max(np.abs(s - np.eye(2))))

    def is_physical(self, herm_tol: float = 1e-9, pos_tol: float = 1e-9, tp_tol: float = 1e-6) -> bool:
        return (self.hermiticity_error() <= herm_tol and self.min_eigenvalue() >= -pos_tol
                and self.tp_error() <= tp_tol)

    def to_dict(self) -> dict:
        return {"basis": list(PAULI_LABELS),
                "chi": [[[float(z.real), float(z.imag)] for z in row] for row in self.chi],
                "log_likelihood": self.log_likelihood, "iterations": self.iterations}

    @classmethod
    def from_dict(cls, d: dict) -> "ProcessMatrix":
        chi = np.array([[complex(re, im) for re, im in row] for row in d["chi"]])
        return cls(chi, d.get("log_likelihood", float("nan")), d.get("iterations", 0))


def process_fidelity(chi: ProcessMatrix | np.ndarray) -> float:
    """Fidelity with the identity process, Re chi_00."""
    m = chi.chi if isinstance(chi, ProcessMatrix) else np.asarray(chi)
    return float(np.real(m[0, 0]))


# ---------------------------------------------------------------------------------
# photon polarisation from a trajectory

def polarization_state(traj: Trajectory, params: PhysicalParams, window: Sequence[float],
                       scalings: bool = True) -> np.ndarray:
    """Unnormalised polarisation matrix of photons detected in ``window``.

    Diagonal: detection probabilities of H and V photons (efficiency included,
    dark counts excluded). Off-diagonal: the integrated output coherence, scaled
    at every emission time by ``coherence_scale * exp(-(2t/tau)^2)`` when
    ``scalings`` is set.
    """
    t0, t1 = float(window[0]), float(window[1])
    if not t1 > t0:
        raise ValueError(f"empty window [{t0}, {t1}]")
    if t0 < -1e-15 or t1 > traj.times[-1] * (1 + 1e-12):
        raise ValueError("window outside trajectory span")
    for name in ("int_n_H", "int_n_V", "coh_HV_re", "coh_HV_im"):
        if name not in traj.series:
            raise KeyError(f"trajectory lacks {name}; use the bichromatic model")
    k = 2.0 * TWO_PI * params.kappa * params.detection_efficiency
    nH = k * np.diff(np.interp([t0, t1], traj.times, traj["int_n_H"]))[0]
    nV = k * np.diff(np.interp([t0, t1], traj.times, traj["int_n_V"]))[0]
    t = traj.times
    coh = traj["coh_HV_re"] + 1j * traj["coh_HV_im"]
    if scalings:
        coh = coh * qubit_decoherence_factor(params, t)
    grid = np.concatenate([[t0], t[(t > t0) & (t < t1)], [t1]])
    vals = np.interp(grid, t, coh.real) + 1j * np.interp(grid, t, coh.imag)
    c = k * np.trapezoid(vals, grid)
    # <a^dagger b> is the V,H element of the photon density matrix
    return np.array([[nH, np.conj(c)], [c, nV]], dtype=complex)


# ---------------------------------------------------------------------------------
# synthetic measurements

def _detector_rates(rho_pol: np.ndarray, basis: str, swap: bool, eff: tuple[float, float],
                    dark: tuple[float, float]) -> tuple[float, float]:
    """Click probabilities per attempt for the (first, second) outcome."""
    p = [float(np.real(np.trace(rho_pol @ P))) for P in projectors(basis)]
    det = (1, 0) if swap else (0, 1)
    q = [eff[det[k]] * max(p[k], 0.0) + dark[det[k]] for k in range(2)]
    return q[0], q[1]


def simulate_measurements(states: dict, shots: int = DEFAULT_SHOTS, params: Optional[PhysicalParams] = None,
                          window: Optional[Sequence[float]] = None, seed: Optional[int] = 0,
                          asymmetry: float = DEFAULT_ASYMMETRY, expected: bool = False) -> list[MeasurementRecord]:
    """Records for every input, basis and detector assignment.

    ``states`` maps ``(alpha, beta)`` to an unnormalised polarisation matrix whose
    trace is the photon detection probability per attempt. Detector 2 has relative
    efficiency ``1 - asymmetry``; dark counts over ``window`` are added per
    detector. ``shots`` is the number of registered clicks per setting; the
    attempts needed to collect them are recorded alongside. ``expected`` replaces
    multinomial sampling by rounded expectations.
    """
    if shots <= 0:
        raise ValueError("shots must be > 0")
    if not 0 <= asymmetry < 1:
        raise ValueError("asymmetry must lie in [0, 1)")
    if params is not None and window is not None:
        span = float(window[1]) - float(window[0])
        dark = (params.dark_rate_1 * span, params.dark_rate_2 * span)
    else:
        dark = (0.0, 0.0)
    eff = (1.0, 1.0 - asymmetry)
    seqs = np.random.SeedSequence(seed).spawn(len(states) * len(BASES) * 2)
    records = []
    k = 0
    for state, rho in states.items():
        rho = np.asarray(rho, dtype=complex)
        for basis in BASES:
            for swap in (False, True):
                q1, q2 = _detector_rates(rho, basis, swap, eff, dark)
                total = q1 + q2
                if total > 1 + 1e-12:
                    raise ValueError("click probabilities exceed 1")
                if total <= 0:
                    raise ValueError(f"setting {state}/{basis} never produces a click")
                f1 = q1 / total
                if expected:
                    n1 = int(round(shots * f1))
                    counts = (n1, shots - n1)
                else:
                    n1 = int(np.random.default_rng(seqs[k]).binomial(shots, f1))
                    counts = (n1, shots - n1)
                attempts = max(int(math.ceil(shots / total)), shots)
                records.append(MeasurementRecord(tuple(state), basis, swap, counts, attempts))
                k += 1
    return records


def process_states(process: ProcessMatrix, detection: float = 1.0) -> dict:
    """Polarisation matrices produced by ``process`` for the four logical inputs."""
    return {s: detection * process.apply(input_density(*s)) for s in INPUT_STATES}


# ---------------------------------------------------------------------------------
# maximum likelihood

def _cholesky_params(x: np.ndarray, n: int) -> np.ndarray:
    """Lower-triangular complex T from n^2 reals (real diagonal)."""
    T = np.zeros((n, n), dtype=complex)
    idx = np.tril_indices(n, -1)
    T[np.diag_indices(n)] = x[:n]
    m = len(idx[0])
    T[idx] = x[n:n + m] + 1j * x[n + m:n + 2 * m]
    return T


def _params_from_cholesky(T: np.ndarray) -> np.ndarray:
    n = T.shape[0]
    idx = np.tril_indices(n, -1)
    return np.concatenate([np.real(np.diag(T)), T[idx].real, T[idx].imag])


def _inv_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    w = np.maximum(w, 1e-300)
    return (v / np.sqrt(w)) @ v.conj().T


def _tp_choi(x: np.ndarray) -> np.ndarray:
    T = _cholesky_params(x, 4)
    J = T.conj().T @ T
    y = np.einsum("aiaj->ij", J.reshape(2, 2, 2, 2))
    s = np.kron(np.eye(2), _inv_sqrt(y))
    J = s @ J @ s
    return 0.5 * (J + J.conj().T)


def _setting_table(records: Sequence[MeasurementRecord]):
    summed = summed_counts(records)
    inputs = {key[0] for key in summed}
    bases = {(i, b) for (i, b) in summed}
    for i in inputs:
        if {b for (j, b) in bases if j == i} != set(BASES):
            raise ValueError(f"input {i} lacks one of the bases {BASES}")
    ops, counts = [], []
    for (inp, basis), (n1, n2) in sorted(summed.items()):
        rho_t = input_density(*inp).T
        for P, n in zip(projectors(basis), (n1, n2)):
            ops.append(np.kron(P, rho_t))
            counts.append(n)
    return np.array(ops), np.array(counts, dtype=float), len(inputs)


def _linear_start(ops: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Least-squares Choi matrix from outcome frequencies, mixed towards the identity-scaled channel."""
    freqs = counts.reshape(-1, 2)
    tot = freqs.sum(axis=1, keepdims=True)
    f = np.where(tot > 0, freqs / np.maximum(tot, 1), 0.5).reshape(-1)
    A = ops.reshape(len(ops), -1).conj()
    j, *_ = np.linalg.lstsq(A, f.astype(complex), rcond=None)
    J = j.reshape(4, 4)
    J = 0.5 * (J + J.conj().T)
    w, v = np.linalg.eigh(J)
    J = (v * np.maximum(w, 0)) @ v.conj().T
    return 0.9 * J + 0.1 * np.eye(4) / 2


def _likelihood_terms(ops: np.ndarray, counts: np.ndarray):
    def nll(x):
        J = _tp_choi(x)
        p = np.real(np.einsum("kij,ji->k", ops, J))
        return -float(np.sum(counts * np.log(np.clip(p, 1e-15, None))))
    return nll


def mle_process(records: Sequence[MeasurementRecord], max_iter: int = MAX_ITER,
                tol: float = OBJ_TOL) -> ProcessMatrix:
    """Maximum-likelihood process matrix under complete positivity and trace preservation.

    Counts of both detector assignments are summed per setting; each setting
    contributes a binomial term conditioned on its total count. The Choi matrix
    is ``T^dagger T`` with ``T`` lower triangular, re-projected onto the
    trace-preserving set at every evaluation; L-BFGS minimises the negative
    log-likelihood from a deterministic start.
    """
    ops, counts, n_inputs = _setting_table(records)
    if n_inputs < 4:
        raise ValueError("process tomography needs four input states")
    if counts.sum() <= 0:
        raise ValueError("no counts")
    nll = _likelihood_terms(ops, counts)
    J0 = _linear_start(ops, counts)
    x0 = _params_from_cholesky(np.linalg.cholesky(J0 + 1e-9 * np.eye(4)).conj().T)
    scale = max(counts.sum(), 1.0)
    trace = [nll(x0) / scale]

    def objective(x):
        return nll(x) / scale

    def callback(xk):
        trace.append(objective(xk))

    res = minimize(objective, x0, method="L-BFGS-B", callback=callback,
                   options={"maxiter": max_iter, "ftol": tol / max(abs(trace[0]), 1.0),
                            "gtol": 1e-12, "maxfun": 50 * max_iter})
    if not res.success and res.nit >= max_iter:
        raise ConvergenceError(f"MLE did not converge in {max_iter} iterations",
                               float(np.linalg.norm(res.jac)))
    J = _tp_choi(res.x)
    return ProcessMatrix.from_choi(J, log_likelihood=-float(res.fun) * scale, iterations=int(res.nit),
                                   objective_trace=tuple(-v * scale for v in trace))


def state_tomography(records: Sequence[MeasurementRecord]) -> DensityMatrix:
    """Maximum-likelihood single-qubit state from the three bases of one input."""
    inputs = {_input_key(r.input_state) for r in records}
    if len(inputs) != 1:
        raise ValueError("records must belong to a single input state")
    summed = summed_counts(records)
    if {b for (_, b) in summed} != set(BASES):
        raise ValueError(f"all three bases {BASES} are required")
    ops, counts = [], []
    for (_, basis), (n1, n2) in sorted(summed.items()):
        for P, n in zip(projectors(basis), (n1, n2)):
            ops.append(P)
            counts.append(n)
    ops, counts = np.array(ops), np.array(counts, dtype=float)
    if counts.sum() <= 0:
        raise ValueError("no counts")

    def rho_of(x):
        T = _cholesky_params(x, 2)
        r = T.conj().T @ T
        return r / np.real(np.trace(r))

    def objective(x):
        p = np.real(np.einsum("kij,ji->k", ops, rho_of(x)))
        return -float(np.sum(counts * np.log(np.clip(p, 1e-15, None)))) / counts.sum()

    res = minimize(objective, np.array([1.0, 1.0, 0.0, 0.0]), method="L-BFGS-B",
                   options={"maxiter": MAX_ITER, "ftol": OBJ_TOL, "gtol": 1e-12})
    if not res.success and res.nit >= MAX_ITER:
        raise ConvergenceError("state MLE did not converge", float(np.linalg.norm(res.jac)))
    rho = rho_of(res.x)
    return DensityMatrix(HilbertSpace([2]), 0.5 * (rho + rho.conj().T))


# ---------------------------------------------------------------------------------
# bootstrap

def _resample(records: Sequence[MeasurementRecord], rng: np.random.Generator) -> list[MeasurementRecord]:
    out = []
    for r in records:
        n1, n2 = r.counts
        a = r.attempts
        p = np.array([n1, n2, a - n1 - n2], dtype=float) / a
        k = rng.multinomial(a, p)
        out.append(MeasurementRecord(r.input_state, r.basis, r.detector_swap, (int(k[0]), int(k[1])), a))
    return out


def bootstrap(records: Sequence[MeasurementRecord], resamples: int = 200, seed: int = 0,
              threads: int = 1, max_skip_fraction: float = 0.05) -> dict:
    """Standard deviation of chi_00 over multinomial resamples of the counts.

    Every resample has its own seed spawned from ``seed``, so results do not
    depend on ``threads`` or scheduling.
    """
    if resamples < 100:
        raise ValueError("at least 100 resamples are required")
    seqs = np.random.SeedSequence(seed).spawn(resamples)

    def task(k):
        try:
            return process_fidelity(mle_process(_resample(records, np.random.default_rng(seqs[k]))))
        except ConvergenceError:
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(task, range(resamples)))
    else:
        values = [task(k) for k in range(resamples)]
    good = np.array([v for v in values if v is not None])
    skipped = resamples - len(good)
    if skipped > max_skip_fraction * resamples:
        raise ConvergenceError(f"{skipped} of {resamples} bootstrap fits failed")
    return {"std": float(np.std(good, ddof=1)), "mean": float(np.mean(good)),
            "resamples": resamples, "skipped": skipped}


# ---------------------------------------------------------------------------------
# serialisation

def records_to_json(records: Sequence[MeasurementRecord]) -> str:
    return json.dumps([r.to_dict() for r in records], indent=2, sort_keys=True)


def records_from_json(text: str) -> list[MeasurementRecord]:
    return [MeasurementRecord.from_dict(d) for d in json.loads(text)]


def fidelity_curve_csv(rows: Sequence[dict]) -> str:
    """CSV of fidelity against detection window; each row needs window_us and fidelity keys."""
    if not rows:
        raise ValueError("no rows")
    keys = list(rows[0])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    for r in rows:
        w.writerow([f"{float(r[k]):.9g}" for k in keys])
    return buf.getvalue()
