"""Labeled-register state vectors and the multilinear algebra on them.

A quantum system is a tuple of named registers; a pure state stores one
complex amplitude per joint computational-basis label.  The first
register is the slowest-varying (most significant) digit of the
mixed-radix index, which makes the flat amplitude vector the C-order
flattening of the dims-shaped tensor.  All values are immutable;
operations return new objects.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from .config import ORTHONORMALITY_TOL, RANK_RTOL
from .errors import (
    BadPermutation,
    DuplicateRegister,
    NonIsometry,
    ShapeMismatch,
    UnknownRegister,
)


@dataclass(frozen=True)
class Register:
    """One named subsystem: identity, dimension, owning party, and a role tag."""

    id: str
    dim: int
    owner: str
    role: str = "physical"

    def __post_init__(self):
        if self.dim < 1:
            raise ShapeMismatch(f"register {self.id!r} has dimension {self.dim}")

    def with_owner(self, owner: str) -> Register:
        return replace(self, owner=owner)


def _check_unique(registers) -> None:
    seen = set()
    for r in registers:
        if r.id in seen:
            raise DuplicateRegister(f"duplicate register id {r.id!r}")
        seen.add(r.id)


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=complex).reshape(-1)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PureState:
    """A normalized (or deliberately unnormalized) state vector over registers."""

    registers: tuple[Register, ...]
    amplitudes: np.ndarray

    def __post_init__(self):
        regs = tuple(self.registers)
        _check_unique(regs)
        amps = _frozen(self.amplitudes)
        dim = int(np.prod([r.dim for r in regs], dtype=object)) if regs else 1
        if amps.size != dim:
            raise ShapeMismatch(
                f"amplitude vector has length {amps.size}, registers give {dim}"
            )
        object.__setattr__(self, "registers", regs)
        object.__setattr__(self, "amplitudes", amps)

    # -- basic queries --------------------------------------------------------

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(r.dim for r in self.registers)

    @property
    def dim(self) -> int:
        return int(self.amplitudes.size)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.registers)

    def register(self, rid: str) -> Register:
        for r in self.registers:
            if r.id == rid:
                return r
        raise UnknownRegister(f"no register {rid!r} in state")

    def positions(self, rids) -> list[int]:
        index = {r.id: k for k, r in enumerate(self.registers)}
        out = []
        for rid in rids:
            if rid not in index:
                raise UnknownRegister(f"no register {rid!r} in state")
            out.append(index[rid])
        return out

    def tensor(self) -> np.ndarray:
        """Amplitudes reshaped to one axis per register (C order)."""
        return self.amplitudes.reshape(self.dims if self.registers else (1,))

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> PureState:
        n = self.norm()
        if n == 0.0:
            raise ShapeMismatch("cannot normalize the zero vector")
        return PureState(self.registers, self.amplitudes / n)

    def with_amplitudes(self, amps: np.ndarray) -> PureState:
        return PureState(self.registers, amps)


@dataclass(frozen=True)
class DensityOp:
    """A density operator over a register tuple (matrix in the joint basis)."""

    registers: tuple[Register, ...]
    matrix: np.ndarray

    def __post_init__(self):
        regs = tuple(self.registers)
        _check_unique(regs)
        mat = np.array(self.matrix, dtype=complex)
        dim = int(np.prod([r.dim for r in regs], dtype=object)) if regs else 1
        if mat.shape != (dim, dim):
            raise ShapeMismatch(f"density matrix shape {mat.shape}, expected {(dim, dim)}")
        mat.setflags(write=False)
        object.__setattr__(self, "registers", regs)
        object.__setattr__(self, "matrix", mat)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def validate(self, tol: float = 1e-8) -> None:
        """Check Hermiticity, unit trace, and positivity within ``tol``."""
        m = self.matrix
        if np.abs(m - m.conj().T).max() > tol:
            raise ShapeMismatch("density matrix is not Hermitian")
        if abs(np.trace(m) - 1.0) > tol:
            raise ShapeMismatch("density matrix trace differs from 1")
        if np.linalg.eigvalsh((m + m.conj().T) / 2).min() < -tol:
            raise ShapeMismatch("density matrix has a negative eigenvalue")


@dataclass(frozen=True)
class LinearMap:
    """A linear map between register tuples; matrix rows index the outputs."""

    in_registers: tuple[Register, ...]
    out_registers: tuple[Register, ...]
    matrix: np.ndarray

    def __post_init__(self):
        ins = tuple(self.in_registers)
        outs = tuple(self.out_registers)
        _check_unique(ins)
        _check_unique(outs)
        mat = np.array(self.matrix, dtype=complex)
        din = int(np.prod([r.dim for r in ins], dtype=object)) if ins else 1
        dout = int(np.prod([r.dim for r in outs], dtype=object)) if outs else 1
        if mat.shape != (dout, din):
            raise ShapeMismatch(f"map has shape {mat.shape}, expected {(dout, din)}")
        mat.setflags(write=False)
        object.__setattr__(self, "in_registers", ins)
        object.__setattr__(self, "out_registers", outs)
        object.__setattr__(self, "matrix", mat)


@dataclass(frozen=True)
class SchmidtDecomposition:
    """Result of a bipartite Schmidt decomposition.

    ``coefficients`` are the positive Schmidt coefficients in descending
    order (entries below the relative rank tolerance dropped);
    ``left_basis`` / ``right_basis`` hold the matching orthonormal
    vectors as rows.  The state equals sum_k c_k |left_k> ⊗ |right_k>.
    """

    cut: tuple[tuple[Register, ...], tuple[Register, ...]]
    coefficients: np.ndarray
    left_basis: np.ndarray
    right_basis: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.coefficients.size)


# -- construction helpers ------------------------------------------------------


def basis_state(registers, index) -> PureState:
    """Computational basis state; ``index`` is one label per register."""
    regs = tuple(registers)
    dims = [r.dim for r in regs]
    flat = 0
    for d, i in zip(dims, index):
        if not 0 <= i < d:
            raise ShapeMismatch(f"basis label {i} out of range for dimension {d}")
        flat = flat * d + i
    amps = np.zeros(int(np.prod(dims, dtype=object)) if regs else 1, dtype=complex)
    amps[flat] = 1.0
    return PureState(regs, amps)


def max_entangled_pair(reg_a: Register, reg_b: Register) -> PureState:
    """|Phi+_K> = K^(-1/2) sum_l |l>|l> on two registers of equal dimension."""
    if reg_a.dim != reg_b.dim:
        raise ShapeMismatch("maximally entangled pair needs equal dimensions")
    k = reg_a.dim
    amps = np.zeros(k * k, dtype=complex)
    amps[np.arange(k) * k + np.arange(k)] = 1.0 / np.sqrt(k)
    return PureState((reg_a, reg_b), amps)


def random_state(registers, rng) -> PureState:
    """Haar-distributed pure state on the given registers."""
    regs = tuple(registers)
    dim = int(np.prod([r.dim for r in regs], dtype=object)) if regs else 1
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return PureState(regs, v / np.linalg.norm(v))


# -- core operations -----------------------------------------------------------


def tensor_product(a: PureState, b: PureState) -> PureState:
    """Joint state with ``a``'s registers first (slowest-varying)."""
    _check_unique(a.registers + b.registers)
    return PureState(a.registers + b.registers, np.kron(a.amplitudes, b.amplitudes))


def permute_registers(state: PureState, order) -> PureState:
    """Reorder registers to the id sequence ``order`` (a bijection)."""
    ids = list(state.ids)
    new = list(order)
    if sorted(new) != sorted(ids) or len(new) != len(ids):
        raise BadPermutation(f"{new!r} is not a permutation of {ids!r}")
    perm = [ids.index(rid) for rid in new]
    tens = state.tensor().transpose(perm)
    regs = tuple(state.registers[p] for p in perm)
    return PureState(regs, tens.reshape(-1))


def _group_first(state: PureState, rids) -> tuple[np.ndarray, list[Register], list[Register]]:
    """Tensor reshaped to (dim(rids), dim(rest)); returns kept/rest registers."""
    pos = state.positions(rids)
    if len(set(pos)) != len(pos):
        raise BadPermutation("repeated register id in group")
    rest = [k for k in range(len(state.registers)) if k not in set(pos)]
    kept_regs = [state.registers[k] for k in pos]
    rest_regs = [state.registers[k] for k in rest]
    dk = int(np.prod([r.dim for r in kept_regs], dtype=object)) if kept_regs else 1
    tens = state.tensor().transpose(pos + rest) if state.registers else state.amplitudes
    return np.ascontiguousarray(tens).reshape(dk, -1), kept_regs, rest_regs


def partial_trace(state: PureState, keep) -> DensityOp:
    """Reduced density operator on ``keep`` (ids, original order preserved)."""
    keep_set = set(keep)
    ordered = [r.id for r in state.registers if r.id in keep_set]
    missing = keep_set - set(ordered)
    if missing:
        raise UnknownRegister(f"no register {sorted(missing)[0]!r} in state")
    mat, kept, _ = _group_first(state, ordered)
    return DensityOp(tuple(kept), mat @ mat.conj().T)


def marginal_matrix(state: PureState, keep) -> np.ndarray:
    """Like :func:`partial_trace` but returning the bare matrix."""
    return partial_trace(state, keep).matrix


def schmidt(state: PureState, cut, rel_tol: float = RANK_RTOL) -> SchmidtDecomposition:
    """Schmidt decomposition across ``cut = (left_ids, right_ids)``.

    The two groups must partition the state's registers.  Register order
    inside each group follows the order given in the cut.
    """
    left_ids, right_ids = list(cut[0]), list(cut[1])
    if sorted(left_ids + right_ids) != sorted(state.ids):
        raise BadPermutation("cut does not partition the state's registers")
    perm = permute_registers(state, left_ids + right_ids)
    dl = int(np.prod([perm.register(i).dim for i in left_ids], dtype=object)) if left_ids else 1
    mat = perm.amplitudes.reshape(dl, -1)
    u, s, vh = np.linalg.svd(mat, full_matrices=False)
    cutoff = rel_tol * (s[0] if s.size else 0.0)
    r = int(np.sum(s > cutoff))
    left = tuple(state.register(i) for i in left_ids)
    right = tuple(state.register(i) for i in right_ids)
    return SchmidtDecomposition(
        cut=(left, right),
        coefficients=s[:r].copy(),
        left_basis=u[:, :r].T.copy(),
        right_basis=vh[:r].copy(),
    )


def numerical_rank(op, rel_tol: float = RANK_RTOL) -> int:
    """Rank of a Hermitian operator relative to its largest eigenvalue."""
    mat = op.matrix if isinstance(op, DensityOp) else np.asarray(op)
    evals = np.linalg.eigvalsh((mat + mat.conj().T) / 2)
    top = float(evals.max(initial=0.0))
    if top <= 0.0:
        return 0
    return int(np.sum(evals > rel_tol * top))


def is_isometry(m, tol: float = 1e-9) -> bool:
    """True iff M†M = I on the input space within ``tol`` (entrywise)."""
    mat = m.matrix if isinstance(m, LinearMap) else np.asarray(m)
    gram = mat.conj().T @ mat
    return bool(np.abs(gram - np.eye(gram.shape[0])).max() <= tol)


def apply_map(
    state: PureState,
    m: LinearMap,
    *,
    enforce_isometry: bool = False,
    tol: float = 1e-9,
) -> PureState:
    """Apply ``m`` to its input registers inside ``state``.

    The output registers replace the inputs, spliced in at the position
    of the earliest input register; untouched registers keep their
    relative order.  Maps with no input registers attach fresh
    registers (state preparation).
    """
    if enforce_isometry and not is_isometry(m, tol):
        raise NonIsometry("map is not an isometry within tolerance")
    _check_unique(m.out_registers)
    in_ids = [r.id for r in m.in_registers]
    for r in m.in_registers:
        have = state.register(r.id)
        if have.dim != r.dim:
            raise ShapeMismatch(
                f"register {r.id!r} has dimension {have.dim}, map expects {r.dim}"
            )
    if not in_ids:
        extra = PureState(m.out_registers, m.matrix[:, 0])
        _check_unique(state.registers + extra.registers)
        return tensor_product(state, extra)

    mat, _, rest_regs = _group_first(state, in_ids)
    out = m.matrix @ mat
    new_regs = m.out_registers + tuple(rest_regs)
    _check_unique(new_regs)
    produced = PureState(new_regs, out.reshape(-1))

    # splice outputs where the first input register sat
    first = min(state.positions(in_ids))
    order: list[str] = []
    for k, r in enumerate(state.registers):
        if k == first:
            order.extend(o.id for o in m.out_registers)
        if r.id in set(in_ids):
            continue
        order.append(r.id)
    if not m.out_registers and first == len(order):
        pass
    return permute_registers(produced, order) if order else produced


def project_onto(state: PureState, rids, vector: np.ndarray) -> PureState:
    """Contract <vector| against the group ``rids`` (unnormalized result).

    The projector vector is indexed with the first id in ``rids``
    slowest.  The contracted registers are removed.
    """
    mat, kept, rest = _group_first(state, rids)
    vec = np.asarray(vector, dtype=complex).reshape(-1)
    if vec.size != mat.shape[0]:
        raise ShapeMismatch("projector vector length does not match register group")
    amps = vec.conj() @ mat
    produced = PureState(tuple(rest), amps)
    return produced


def drop_trivial_registers(state: PureState) -> PureState:
    """Remove dimension-1 registers (they carry no amplitude structure)."""
    keep = tuple(r for r in state.registers if r.dim > 1)
    if len(keep) == len(state.registers):
        return state
    return PureState(keep, state.amplitudes)


def overlap(a: PureState, b: PureState) -> complex:
    """<a|b> after aligning register order by id."""
    if set(a.ids) == set(b.ids) and a.ids != b.ids:
        b = permute_registers(b, list(a.ids))
    if a.dims != b.dims:
        raise ShapeMismatch(f"dims {a.dims} vs {b.dims} cannot be compared")
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def states_equal_up_to_phase(a: PureState, b: PureState, tol: float = 1e-9) -> bool:
    """True iff |<a|b>| = |a||b| within ``tol`` (identical up to global phase).

    Register orders are aligned by id when both states carry the same id
    set; otherwise dims must already agree positionally.
    """
    na, nb = a.norm(), b.norm()
    if na == 0.0 or nb == 0.0:
        return False
    return abs(abs(overlap(a, b)) / (na * nb) - 1.0) <= tol


def fidelity_up_to_phase(a: PureState, b: PureState) -> float:
    """|<a|b>| for normalized inputs (registers aligned by id)."""
    return abs(overlap(a.normalized(), b.normalized()))


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    """(1/2) * trace norm of (rho - sigma) for Hermitian inputs."""
    delta = np.asarray(rho) - np.asarray(sigma)
    delta = (delta + delta.conj().T) / 2
    return float(0.5 * np.abs(np.linalg.eigvalsh(delta)).sum())


def canonical_phase(v: np.ndarray) -> np.ndarray:
    """Rotate a vector's global phase so its largest entry is real positive."""
    vec = np.asarray(v, dtype=complex)
    if not vec.size:
        return vec
    mags = np.abs(vec)
    # earliest entry within a relative whisker of the max, so that exact
    # ties broken only by floating-point noise pick a stable pivot
    k = int(np.argmax(mags >= mags.max() * (1.0 - 1e-9)))
    piv = vec[k]
    if abs(piv) == 0.0:
        return vec.copy()
    return vec * (abs(piv) / piv)


def orthonormal_completion(cols: np.ndarray, dim: int) -> np.ndarray:
    """Orthonormal basis of the complement of ``cols``'s column space in C^dim.

    Deterministic: projects the standard basis and orthonormalizes by SVD.
    """
    have = 0 if cols.size == 0 else cols.shape[1]
    need = dim - have
    if need <= 0:
        return np.zeros((dim, 0), dtype=complex)
    proj = np.eye(dim, dtype=complex)
    if have:
        proj -= cols @ cols.conj().T
    u, s, _ = np.linalg.svd(proj)
    keep = u[:, np.argsort(-s)[:need]]
    return np.ascontiguousarray(keep)


def mixed_radix_labels(dims) -> list[tuple[int, ...]]:
    """All joint basis labels, first digit slowest (matching amplitude order)."""
    return list(itertools.product(*[range(d) for d in dims]))
