"""Operator algebra on composite Hilbert spaces.

Spaces are ordered lists of subsystem dimensions. Operators and states carry
their space so that products, tensor products and partial traces can check
compatibility. Operators above :data:`SPARSE_THRESHOLD` total dimension are
stored as CSR matrices, smaller ones as dense arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence, Union

import numpy as np
import scipy.sparse as sp

SPARSE_THRESHOLD = 128

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-9
NORM_TOL = 1e-10

Matrix = Union[np.ndarray, sp.csr_matrix]


class SpaceMismatchError(ValueError):
    """Raised when operands live on incompatible Hilbert spaces."""


@dataclass(frozen=True)
class HilbertSpace:
    factors: tuple[int, ...]

    def __init__(self, factors: Iterable[int]):
        factors = tuple(int(d) for d in factors)
        if not factors:
            raise ValueError("a Hilbert space needs at least one factor")
        if any(d < 1 for d in factors):
            raise ValueError(f"all factor dimensions must be >= 1, got {factors}")
        object.__setattr__(self, "factors", factors)

    @property
    def dim(self) -> int:
        return int(np.prod(self.factors))

    def __len__(self) -> int:
        return len(self.factors)

    def __add__(self, other: "HilbertSpace") -> "HilbertSpace":
        return HilbertSpace(self.factors + other.factors)

    def check_same(self, other: "HilbertSpace") -> None:
        if self.factors != other.factors:
            raise SpaceMismatchError(f"space {list(self.factors)} != {list(other.factors)}")

    def basis_index(self, labels: Sequence[int]) -> int:
        """Flat index of the product basis state with the given per-factor labels."""
        if len(labels) != len(self.factors):
            raise ValueError("one label per factor required")
        return int(np.ravel_multi_index(tuple(labels), self.factors))

    def basis_labels(self, index: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(index, self.factors))


def _as_space(space) -> HilbertSpace:
    if isinstance(space, HilbertSpace):
        return space
    if isinstance(space, (int, np.integer)):
        return HilbertSpace([space])
    return HilbertSpace(space)


def _store(mat, dim: int) -> Matrix:
    if dim > SPARSE_THRESHOLD:
        return sp.csr_matrix(mat, dtype=complex)
    if sp.issparse(mat):
        return np.asarray(mat.toarray(), dtype=complex)
    return np.array(mat, dtype=complex)


def _dense(mat: Matrix) -> np.ndarray:
    return mat.toarray() if sp.issparse(mat) else mat


@dataclass(frozen=True, eq=False)
class Operator:
    space: HilbertSpace
    matrix: Matrix

    def __init__(self, space, matrix):
        space = _as_space(space)
        shape = matrix.shape
        if shape != (space.dim, space.dim):
            raise SpaceMismatchError(
                f"matrix of shape {shape} does not fit space {list(space.factors)}"
            )
        object.__setattr__(self, "space", space)
        stored = _store(matrix, space.dim)
        if isinstance(stored, np.ndarray):
            stored.setflags(write=False)
        object.__setattr__(self, "matrix", stored)

    @property
    def dim(self) -> int:
        return self.space.dim

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def dense(self) -> np.ndarray:
        return np.array(_dense(self.matrix))

    def csr(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.matrix)

    # algebra -----------------------------------------------------------
    def _coerce(self, other: "Operator") -> Matrix:
        self.space.check_same(other.space)
        return other.matrix

    def __add__(self, other):
        if isinstance(other, Operator):
            return Operator(self.space, self.matrix + self._coerce(other))
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, Operator):
            return Operator(self.space, self.matrix - self._coerce(other))
        return NotImplemented

    def __neg__(self):
        return Operator(self.space, -self.matrix)

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return Operator(self.space, self.matrix * scalar)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return Operator(self.space, self.matrix / scalar)

    def __matmul__(self, other):
        if isinstance(other, Operator):
            return Operator(self.space, self.matrix @ self._coerce(other))
        if isinstance(other, StateVector):
            self.space.check_same(other.space)
            return StateVector(self.space, self.matrix @ other.amplitudes, normalize=False)
        return NotImplemented

    def apply(self, state: "StateVector") -> np.ndarray:
        """Raw amplitude vector O|psi> (not renormalised)."""
        self.space.check_same(state.space)
        return np.asarray(self.matrix @ state.amplitudes)

    def dag(self) -> "Operator":
        return dagger(self)

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        diff = self.matrix - self.matrix.conj().T
        return _max_abs(diff) <= tol

    def is_unitary(self, tol: float = 1e-10) -> bool:
        prod = self.matrix.conj().T @ self.matrix
        return _max_abs(prod - sp.identity(self.dim) if sp.issparse(prod) else prod - np.eye(self.dim)) <= tol

    def norm(self) -> float:
        return float(np.linalg.norm(_dense(self.matrix)))


def _max_abs(mat) -> float:
    if sp.issparse(mat):
        return float(abs(mat).max()) if mat.nnz else 0.0
    return float(np.max(np.abs(mat))) if mat.size else 0.0


@dataclass(frozen=True, eq=False)
class StateVector:
    space: HilbertSpace
    amplitudes: np.ndarray

    def __init__(self, space, amplitudes, normalize: bool = True):
        space = _as_space(space)
        amps = np.array(amplitudes, dtype=complex).reshape(-1)
        if amps.size != space.dim:
            raise SpaceMismatchError(f"{amps.size} amplitudes do not fit space {list(space.factors)}")
        if normalize:
            nrm = np.linalg.norm(amps)
            if nrm == 0:
                raise ValueError("cannot normalise the zero vector")
            amps = amps / nrm
        amps.setflags(write=False)
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def basis(cls, space, labels: Sequence[int]) -> "StateVector":
        space = _as_space(space)
        amps = np.zeros(space.dim, dtype=complex)
        amps[space.basis_index(labels)] = 1.0
        return cls(space, amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def overlap(self, other: "StateVector") -> complex:
        self.space.check_same(other.space)
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def to_density(self) -> "DensityMatrix":
        return DensityMatrix(self.space, np.outer(self.amplitudes, self.amplitudes.conj()))

    def __add__(self, other: "StateVector") -> "StateVector":
        self.space.check_same(other.space)
        return StateVector(self.space, self.amplitudes + other.amplitudes, normalize=False)

    def __mul__(self, scalar) -> "StateVector":
        return StateVector(self.space, self.amplitudes * scalar, normalize=False)

    __rmul__ = __mul__


class InvalidStateError(ValueError):
    """Raised when a density matrix violates trace, Hermiticity or positivity."""


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Dense density matrix; validated on construction unless ``check=False``."""

    space: HilbertSpace
    matrix: np.ndarray

    def __init__(self, space, matrix, check: bool = True,
                 trace_tol: float = TRACE_TOL, herm_tol: float = HERMITIAN_TOL,
                 pos_tol: float = POSITIVITY_TOL):
        space = _as_space(space)
        mat = np.array(_dense(matrix), dtype=complex)
        if mat.shape != (space.dim, space.dim):
            raise SpaceMismatchError(f"matrix of shape {mat.shape} does not fit space {list(space.factors)}")
        if check:
            tr = np.trace(mat)
            if abs(tr - 1) > trace_tol:
                raise InvalidStateError(f"trace {tr} differs from 1")
            if np.max(np.abs(mat - mat.conj().T)) > herm_tol:
                raise InvalidStateError("density matrix is not Hermitian")
            lam = np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))[0]
            if lam < -pos_tol:
                raise InvalidStateError(f"minimum eigenvalue {lam:.3e} is negative")
        mat.setflags(write=False)
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "matrix", mat)

    @property
    def dim(self) -> int:
        return self.space.dim

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def purity(self) -> float:
        return float(np.real(np.vdot(self.matrix.conj().T, self.matrix)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T))[0])

    def fidelity_pure(self, psi: StateVector) -> float:
        """<psi|rho|psi> for a pure reference state."""
        self.space.check_same(psi.space)
        return float(np.real(np.vdot(psi.amplitudes, self.matrix @ psi.amplitudes)))

    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.matrix)).copy()

    def conjugate_by(self, op: Operator) -> "DensityMatrix":
        """U rho U^dagger."""
        self.space.check_same(op.space)
        u = op.dense()
        return DensityMatrix(self.space, u @ self.matrix @ u.conj().T)

    @classmethod
    def mixture(cls, weighted: Sequence[tuple[float, "DensityMatrix"]]) -> "DensityMatrix":
        space = weighted[0][1].space
        total = np.zeros((space.dim, space.dim), dtype=complex)
        for w, rho in weighted:
            space.check_same(rho.space)
            total = total + w * rho.matrix
        return cls(space, total)

    @classmethod
    def maximally_mixed(cls, space) -> "DensityMatrix":
        space = _as_space(space)
        return cls(space, np.eye(space.dim) / space.dim)


# constructors ---------------------------------------------------------------

def identity(dim: int | Sequence[int]) -> Operator:
    space = _as_space(dim)
    return Operator(space, sp.identity(space.dim, dtype=complex, format="csr"))


def annihilation(n_max: int) -> Operator:
    """Truncated bosonic lowering operator on Fock states 0..n_max."""
    if n_max < 1:
        raise ValueError("truncation n_max must be >= 1")
    return Operator(n_max + 1, np.diag(np.sqrt(np.arange(1, n_max + 1)), k=1))


def creation(n_max: int) -> Operator:
    return dagger(annihilation(n_max))


def projector(dim: int, i: int, j: int | None = None) -> Operator:
    """|i><j| on a single factor of dimension ``dim``."""
    mat = np.zeros((dim, dim), dtype=complex)
    mat[i, i if j is None else j] = 1.0
    return Operator(dim, mat)


def sigma_minus() -> Operator:
    """Two-level lowering operator with |e> = index 0 and |g> = index 1."""
    return projector(2, 1, 0)


PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


# algebra ----------------------------------------------------------------------

def dagger(op: Operator) -> Operator:
    return Operator(op.space, op.matrix.conj().T)


def commutator(a: Operator, b: Operator) -> Operator:
    a.space.check_same(b.space)
    return Operator(a.space, a.matrix @ b.matrix - b.matrix @ a.matrix)


def tensor(ops: Sequence[Operator]) -> Operator:
    """Kronecker product in operand order; the space concatenates the factor lists."""
    if not ops:
        raise ValueError("tensor of an empty operator list")
    space = reduce(lambda s, o: s + o.space, ops[1:], ops[0].space)
    if space.dim > SPARSE_THRESHOLD:
        mat = reduce(lambda m, o: sp.kron(m, o.csr(), format="csr"), ops[1:], ops[0].csr())
    else:
        mat = reduce(lambda m, o: np.kron(m, o.dense()), ops[1:], ops[0].dense())
    return Operator(space, mat)


def tensor_states(states: Sequence[StateVector]) -> StateVector:
    space = reduce(lambda s, st: s + st.space, states[1:], states[0].space)
    amps = reduce(lambda a, st: np.kron(a, st.amplitudes), states[1:], states[0].amplitudes)
    return StateVector(space, amps)


def embed(op: Operator, target_slot: int, space) -> Operator:
    """Lift a single-factor operator into ``space``, acting as identity elsewhere."""
    space = _as_space(space)
    if not 0 <= target_slot < len(space):
        raise IndexError(f"slot {target_slot} outside space with {len(space)} factors")
    if op.dim != space.factors[target_slot]:
        raise SpaceMismatchError(
            f"operator dimension {op.dim} does not match factor {target_slot} "
            f"of dimension {space.factors[target_slot]}"
        )
    left = int(np.prod(space.factors[:target_slot]))
    right = int(np.prod(space.factors[target_slot + 1:]))
    mat = sp.kron(sp.kron(sp.identity(left, format="csr"), op.csr()),
                  sp.identity(right, format="csr"), format="csr")
    return Operator(space, mat)


def expectation(state: DensityMatrix | StateVector, op: Operator) -> complex:
    """Tr(rho O), or <psi|O|psi> for a pure state."""
    state.space.check_same(op.space)
    if isinstance(state, StateVector):
        return complex(np.vdot(state.amplitudes, op.matrix @ state.amplitudes))
    # Tr(rho O) = sum_ij rho_ij O_ji
    if op.is_sparse:
        o = op.matrix.tocoo()
        return complex(np.sum(state.matrix[o.col, o.row] * o.data))
    return complex(np.sum(state.matrix * op.matrix.T))


def partial_trace(rho: DensityMatrix, remove: Sequence[int]) -> DensityMatrix:
    """Trace out the factors listed in ``remove``; the rest keep their order."""
    factors = rho.space.factors
    remove = sorted(set(int(r) for r in remove))
    if any(r < 0 or r >= len(factors) for r in remove):
        raise IndexError(f"cannot remove slots {remove} from {len(factors)} factors")
    keep = [i for i in range(len(factors)) if i not in remove]
    if not keep:
        raise ValueError("partial trace must keep at least one factor")
    n = len(factors)
    t = rho.matrix.reshape(factors + factors)
    letters = "abcdefghijklmnopqrstuvwxyz"
    row = [letters[i] for i in range(n)]
    col = [letters[n + i] for i in range(n)]
    for r in remove:
        col[r] = row[r]
    out = "".join(row[i] for i in keep) + "".join(col[i] for i in keep)
    reduced = np.einsum("".join(row) + "".join(col) + "->" + out, t)
    kept = [factors[i] for i in keep]
    d = int(np.prod(kept))
    return DensityMatrix(kept, reduced.reshape(d, d), check=False)


def von_neumann_entropy(rho: DensityMatrix) -> float:
    lam = np.linalg.eigvalsh(0.5 * (rho.matrix + rho.matrix.conj().T))
    lam = lam[lam > 1e-15]
    return float(-np.sum(lam * np.log(lam)))
