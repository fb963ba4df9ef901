"""Master-equation integration and photon-detection observables.

The density matrix is vectorised row-major, ``vec(rho)[i*d + j] = rho[i, j]``,
so that ``vec(A rho B) = (A kron B^T) vec(rho)``. Before integrating, the model
is restricted to the basis states reachable from the initial support; this is
exact because every operator entering the generator maps that set into itself.
"""
from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from . import kernels
from .model import LindbladModel, PhysicalParams, TWO_PI
from .qcore import DensityMatrix, HilbertSpace

SERIES_DIGITS = 9


class NumericalError(RuntimeError):
    """Integration failure: step-size control, trace drift or loss of positivity."""

    def __init__(self, message: str, time: Optional[float] = None):
        super().__init__(message if time is None else f"{message} (t = {time:.6e} s)")
        self.time = time


@dataclass(frozen=True)
class IntegratorConfig:
    t_end: float
    dt: float = 5e-9
    method: Literal["rk4", "adaptive", "expm"] = "rk4"
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    bin_width: float = 1e-6
    sample_dt: float = 5e-8
    trace_tol: float = 1e-8
    positivity_tol: float = 1e-8
    max_checkpoints: int = 64
    backend: Optional[Literal["cython", "python"]] = None

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError("t_end must be > 0")
        if self.method not in ("rk4", "adaptive", "expm"):
            raise ValueError(f"unknown integration method {self.method!r}")
        if self.method == "rk4" and not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.method == "adaptive" and not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be > 0")
        if not (self.sample_dt > 0 and self.bin_width > 0):
            raise ValueError("sample_dt and bin_width must be > 0")

    @property
    def n_samples(self) -> int:
        return int(round(self.t_end / self.sample_dt))

    def steps_per_sample(self) -> int:
        k = self.sample_dt / self.dt
        if abs(k - round(k)) > 1e-9 * k:
            raise ValueError("sample_dt must be an integer multiple of dt")
        return int(round(k))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled observables.

    ``series`` holds instantaneous expectation values; names starting with
    ``int_`` are running time integrals (in s) of the named observable.
    """

    times: np.ndarray
    series: dict
    attempts_normalization: bool = False
    checkpoints: tuple = ()
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.series[name]

    def to_csv(self, columns: Optional[Sequence[str]] = None) -> str:
        return series_to_csv(self.times, {k: self.series[k] for k in (columns or self.series)})

    def interp(self, name: str, t: float) -> float:
        return float(np.interp(t, self.times, self.series[name]))


def series_to_csv(times: np.ndarray, columns: dict, time_column: str = "time_us",
                  time_scale: float = 1e6) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([time_column] + list(columns))
    fmt = f"{{:.{SERIES_DIGITS}g}}"
    for k, t in enumerate(times):
        writer.writerow([fmt.format(t * time_scale)] + [fmt.format(float(v[k])) for v in columns.values()])
    return buf.getvalue()


# ---------------------------------------------------------------------------------
# generator construction

def reachable_states(model: LindbladModel, support: Sequence[int]) -> np.ndarray:
    """Smallest basis set containing ``support`` that is closed under H, every c and c^dagger c.

    Density matrices supported on this set stay there, so restricting the
    generator to it is exact.
    """
    h = abs(model.hamiltonian.csr())
    pattern = h + h.T
    for op, rate in model.collapse_ops:
        if rate <= 0:
            continue
        c = op.csr()
        cc = abs((c.conj().T @ c).tocsr())
        # row i of the pattern lists the states reachable from i
        pattern = pattern + abs(c).T + cc + cc.T
    pattern = sp.csr_matrix(pattern)
    pattern.eliminate_zeros()
    seen = np.zeros(model.space.dim, dtype=bool)
    queue = deque(int(i) for i in support)
    for i in support:
        seen[i] = True
    while queue:
        i = queue.popleft()
        for j in pattern.indices[pattern.indptr[i]:pattern.indptr[i + 1]]:
            if not seen[j]:
                seen[j] = True
                queue.append(int(j))
    return np.flatnonzero(seen)


def _restrict(op, keep: np.ndarray) -> sp.csr_matrix:
    return sp.csr_matrix(op.csr()[keep][:, keep])


def liouvillian(hamiltonian: sp.spmatrix, collapse: Sequence[tuple[sp.spmatrix, float]]) -> sp.csr_matrix:
    """Row-major vectorised Lindblad generator."""
    d = hamiltonian.shape[0]
    eye = sp.identity(d, format="csr", dtype=complex)
    H = sp.csr_matrix(hamiltonian, dtype=complex)
    L = -1j * (sp.kron(H, eye) - sp.kron(eye, H.T))
    for c, rate in collapse:
        if rate == 0:
            continue
        c = sp.csr_matrix(c, dtype=complex)
        cdc = (c.conj().T @ c).tocsr()
        L = L + rate * (sp.kron(c, c.conj()) - 0.5 * sp.kron(cdc, eye) - 0.5 * sp.kron(eye, cdc.T))
    L = sp.csr_matrix(L)
    L.eliminate_zeros()
    L.sort_indices()
    return L


def model_liouvillian(model: LindbladModel, keep: Optional[np.ndarray] = None) -> sp.csr_matrix:
    if keep is None:
        keep = np.arange(model.space.dim)
    H = _restrict(model.hamiltonian, keep)
    cs = [(_restrict(op, keep), rate) for op, rate in model.collapse_ops]
    return liouvillian(H, cs)


def _observable_row(op, keep: np.ndarray) -> np.ndarray:
    """Row w with <O> = w . vec(rho) on the restricted space."""
    sub = op.csr()[keep][:, keep].toarray()
    return sub.T.reshape(-1)


# ---------------------------------------------------------------------------------
# integration

def evolve(model: LindbladModel, rho0: DensityMatrix, cfg: IntegratorConfig,
           integrate: Optional[Sequence[str]] = None):
    """Integrate the master equation from ``rho0``.

    Returns ``(trajectory, final_state)``. The trajectory samples every model
    observable plus ``trace`` every ``cfg.sample_dt``, and running integrals
    ``int_<name>`` of the observables in ``integrate`` (default: the model's
    photon-number observables and, when present, ``coh_HV``).
    """
    rho0.space.check_same(model.space)
    support = np.flatnonzero(np.any(np.abs(rho0.matrix) > 0, axis=1))
    keep = reachable_states(model, support)
    d = len(keep)
    L = model_liouvillian(model, keep)
    y0 = rho0.matrix[np.ix_(keep, keep)].reshape(-1).astype(complex)

    if integrate is None:
        integrate = list(model.mode_observables)
        if "coh_HV" in model.observables:
            integrate.append("coh_HV")
    names = list(integrate) + [k for k in model.observables if k not in integrate]
    rows = [_observable_row(model.observables[k], keep) for k in names]
    rows.append(np.eye(d).reshape(-1).astype(complex))
    names.append("trace")
    W = np.array(rows, dtype=complex)
    n_int = len(integrate)

    n_samples = cfg.n_samples
    times = np.arange(n_samples + 1) * cfg.sample_dt
    chk_every = max(1, int(math.ceil(n_samples / max(cfg.max_checkpoints - 1, 1))))

    if cfg.method == "rk4":
        per = cfg.steps_per_sample()
        kernel = {"cython": kernels.rk4_compiled, "python": kernels.rk4_python}.get(cfg.backend, kernels.rk4_csr)
        if kernel is None:
            raise RuntimeError("compiled backend requested but not built")
        obs, ints, chk, y_end = kernel(L.indptr.astype(np.int64), L.indices.astype(np.int32), L.data,
                                       W, n_int, y0, cfg.dt, n_samples * per, per, chk_every)
        chk = list(chk)
    elif cfg.method == "expm":
        obs, ints, chk, y_end = _evolve_expm(L, W, n_int, y0, cfg.sample_dt, n_samples, chk_every)
    else:
        obs, ints, chk, y_end = _evolve_adaptive(L, W, n_int, y0, times, chk_every, cfg)

    trace = obs[:, names.index("trace")].real
    bad = np.flatnonzero(np.abs(trace - 1) > cfg.trace_tol)
    if bad.size:
        raise NumericalError(f"trace drifted to {trace[bad[0]]:.12f}", times[bad[0]])
    checkpoints = []
    for k, y in enumerate(chk):
        rho = y.reshape(d, d)
        lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
        t_chk = times[min(k * chk_every, n_samples)]
        if lam < -cfg.positivity_tol:
            raise NumericalError(f"density matrix lost positivity (min eigenvalue {lam:.3e})", t_chk)
        checkpoints.append((float(t_chk), float(lam)))

    series = {}
    for j, name in enumerate(names):
        col = obs[:, j]
        if name.startswith("coh"):
            series[f"{name}_re"] = col.real.copy()
            series[f"{name}_im"] = col.imag.copy()
        else:
            series[name] = col.real.copy()
    for j, name in enumerate(integrate):
        col = ints[:, j]
        if name.startswith("coh"):
            series[f"int_{name}_re"] = col.real.copy()
            series[f"int_{name}_im"] = col.imag.copy()
        else:
            series[f"int_{name}"] = col.real.copy()

    full = np.zeros((model.space.dim, model.space.dim), dtype=complex)
    full[np.ix_(keep, keep)] = y_end.reshape(d, d)
    final = DensityMatrix(model.space, full, trace_tol=cfg.trace_tol, herm_tol=1e-8,
                          pos_tol=cfg.positivity_tol)
    traj = Trajectory(times, series, checkpoints=tuple(checkpoints),
                      meta={"reduced_dim": d, "method": cfg.method, "model": model.description,
                            "backend": kernels.BACKEND if cfg.method == "rk4" else cfg.method})
    return traj, final


def _evolve_expm(L, W, n_int, y0, h, n_samples, chk_every):
    n = L.shape[0]
    aug = np.zeros((n + n_int, n + n_int), dtype=complex)
    aug[:n, :n] = L.toarray()
    aug[n:, :n] = W[:n_int]
    prop = expm(aug * h)
    P, Q = prop[:n, :n], prop[n:, :n]
    obs = np.zeros((n_samples + 1, W.shape[0]), dtype=complex)
    ints = np.zeros((n_samples + 1, n_int), dtype=complex)
    chk = [y0.copy()]
    y = y0.copy()
    obs[0] = W @ y
    for s in range(1, n_samples + 1):
        ints[s] = ints[s - 1] + Q @ y
        y = P @ y
        obs[s] = W @ y
        if s % chk_every == 0:
            chk.append(y.copy())
    return obs, ints, chk, y


def _evolve_adaptive(L, W, n_int, y0, times, chk_every, cfg):
    n = L.shape[0]
    w_int = W[:n_int]

    def rhs(_t, z):
        y = z[:n]
        return np.concatenate([L @ y, w_int @ y])

    z0 = np.concatenate([y0, np.zeros(n_int, dtype=complex)])
    sol = solve_ivp(rhs, (0.0, times[-1]), z0, method="DOP853", t_eval=times,
                    rtol=cfg.rel_tol, atol=cfg.abs_tol)
    if sol.status != 0 or sol.y.shape[1] != len(times):
        t_fail = float(sol.t[-1]) if len(sol.t) else 0.0
        raise NumericalError(f"adaptive step-size control failed: {sol.message}", t_fail)
    Y = sol.y[:n].T
    obs = Y @ W.T
    ints = sol.y[n:].T
    chk = [Y[k] for k in range(0, len(times), chk_every)]
    return obs, ints, chk, Y[-1].copy()


# ---------------------------------------------------------------------------------
# detection observables

def _flux_factor(params: PhysicalParams) -> float:
    """Output photon rate per intracavity photon, 2 kappa (angular)."""
    return 2.0 * TWO_PI * params.kappa


def emitted_photons(traj: Trajectory, params: PhysicalParams, t: float | np.ndarray,
                    modes: Optional[Sequence[str]] = None):
    """Mean number of photons that left the cavity by time ``t``."""
    names = _mode_names(traj, modes)
    total = sum(np.interp(t, traj.times, traj.series[f"int_{m}"]) for m in names)
    return _flux_factor(params) * total


def _mode_names(traj: Trajectory, modes):
    if modes is not None:
        names = list(modes)
    else:
        names = [k[4:] for k in traj.series if k.startswith("int_n_")]
    missing = [m for m in names if f"int_{m}" not in traj.series]
    if missing or not names:
        raise KeyError(f"trajectory lacks the photon-number series {missing or ['n_*']}")
    return names


def photon_shape(traj: Trajectory, params: PhysicalParams, bin_width: Optional[float] = None,
                 modes: Optional[Sequence[str]] = None, include_dark: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Detection probability per time bin: ``(bin_starts, values)``.

    value = detection_efficiency * integral over the bin of 2 kappa <n> + dark counts.
    """
    bw = bin_width if bin_width is not None else traj.meta.get("bin_width", 1e-6)
    n_bins = int(math.floor(traj.times[-1] / bw + 1e-9))
    edges = np.arange(n_bins + 1) * bw
    emitted = emitted_photons(traj, params, edges, modes)
    values = params.detection_efficiency * np.diff(emitted)
    if include_dark:
        values = values + params.dark_rate_total * bw
    return edges[:-1], np.clip(values, 0.0, None)


def detection_probability(traj: Trajectory, params: PhysicalParams, window: Sequence[float],
                          modes: Optional[Sequence[str]] = None, include_dark: bool = True) -> float:
    """Probability to detect a photon (or dark count) in ``[t0, t1]``."""
    t0, t1 = float(window[0]), float(window[1])
    if t1 < t0:
        raise ValueError(f"empty window [{t0}, {t1}]")
    if t0 < -1e-15 or t1 > traj.times[-1] * (1 + 1e-12):
        raise ValueError(f"window [{t0}, {t1}] outside trajectory span")
    if t1 == t0:
        return 0.0
    em = emitted_photons(traj, params, np.array([t0, t1]), modes)
    p = params.detection_efficiency * (em[1] - em[0])
    if include_dark:
        p += params.dark_rate_total * (t1 - t0)
    return float(max(p, 0.0))


def cumulative_efficiency(traj: Trajectory, params: PhysicalParams, bin_width: Optional[float] = None,
                          modes: Optional[Sequence[str]] = None,
                          include_dark: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """epsilon(t) on bin edges: probability to detect a photon before t."""
    starts, values = photon_shape(traj, params, bin_width, modes, include_dark)
    bw = starts[1] - starts[0] if len(starts) > 1 else (bin_width or 1e-6)
    edges = np.append(starts, starts[-1] + bw) if len(starts) else np.array([0.0])
    return edges, np.concatenate([[0.0], np.cumsum(values)])


# ---------------------------------------------------------------------------------
# post-hoc qubit imperfections

def qubit_decoherence_factor(params: PhysicalParams, t) -> np.ndarray:
    """coherence_scale * exp(-(2 t / tau)^2) for the S/S' (H/V) qubit."""
    if params.tau_SSp <= 0:
        raise ValueError("tau must be > 0")
    t = np.asarray(t, dtype=float)
    if math.isinf(params.tau_SSp):
        return params.coherence_scale * np.ones_like(t)
    return params.coherence_scale * np.exp(-(2.0 * t / params.tau_SSp) ** 2)


def qubit_sector_labels(space: HilbertSpace) -> np.ndarray:
    """Number of V-type excitations (ions in S' or P(+1/2), photons in mode V) per basis state.

    Defined for the ``[4, 4, nH, nV]`` effective and ``[6, 6, nH, nV]`` full layouts.
    """
    f = space.factors
    if len(f) != 4 or f[0] != f[1] or f[0] not in (4, 6):
        raise ValueError(f"no qubit sectors defined for space {list(f)}")
    v_levels = {4: (1,), 6: (1, 5)}[f[0]]
    labels = np.zeros(space.dim, dtype=int)
    grid = np.indices(f).reshape(4, -1)
    for slot in (0, 1):
        labels += np.isin(grid[slot], v_levels).astype(int)
    labels += grid[3]
    return labels


def apply_imperfection_scalings(rho_t: Sequence[DensityMatrix] | DensityMatrix, params: PhysicalParams,
                                t) -> list[DensityMatrix] | DensityMatrix:
    """Scale qubit coherences of rho(t) by ``coherence_scale * exp(-(2t/tau)^2)``.

    Elements connecting basis states with different numbers of V-type excitations
    are multiplied by the factor; everything else (including all populations) is
    untouched. The map is a dephasing channel, so outputs stay valid states.
    """
    single = isinstance(rho_t, DensityMatrix)
    states = [rho_t] if single else list(rho_t)
    times = np.atleast_1d(np.asarray(t, dtype=float))
    if len(times) == 1 and len(states) > 1:
        times = np.repeat(times, len(states))
    if len(times) != len(states):
        raise ValueError("one time per state required")
    factors = qubit_decoherence_factor(params, times)
    out = []
    for rho, c in zip(states, factors):
        labels = qubit_sector_labels(rho.space)
        mask = labels[:, None] != labels[None, :]
        m = np.array(rho.matrix)
        m[mask] *= c
        out.append(DensityMatrix(rho.space, m))
    return out[0] if single else out
