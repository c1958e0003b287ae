"""Block decomposition of a tripartite pure state and the merging cost.

For a pure state on R′ ⊗ A ⊗ B this module computes the decomposition

    H^A = ⊕_j a_j^L ⊗ a_j^R,    H^B ⊇ ⊕_j b_j^L ⊗ b_j^R,
    |ψ⟩ = ⊕_j √p_j |ω_j⟩^{a_j^L b_j^L} ⊗ |φ_j⟩^{R′ a_j^R b_j^R},

separating the part of A that is redundant with B (the junk ω_j) from
the part genuinely correlated with the reference R′.  The cost of
handing A's share to B is K = max_j ⌈λ₀(j)·dim a_j^R⌉ with λ₀ the top
junk eigenvalue.

Algorithm: restrict to the marginal supports, form the B-contracted
transfer operators T_{rr′}, compute their joint commutant and its
center by null-space linear algebra, split along the center's spectral
projections, and factor each central block through the commutant's
matrix-unit structure.  The spectral split can cut finer than the
redundancy structure (it also separates distinct junk eigenvalues), so
a greedy merge pass follows: block pairs whose φ parts agree up to
local frame rotations are re-united, gated by a certificate that the
united block still factors as ω ⊗ φ.  Every emitted decomposition is
re-verified against the input state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ORTHONORMALITY_TOL, RANK_RTOL, VERIFY_TOL
from .errors import BadPermutation, NumericalDegeneracy, ShapeMismatch
from .tensors import PureState, Register, canonical_phase, permute_registers

_CLUSTER_COARSE = 1e-7
_CLUSTER_FINE = 1e-10
_RESAMPLE_BUDGET = 5


@dataclass(frozen=True)
class KiBlock:
    """One direct summand: junk ω_j on (a^L, b^L), content φ_j on (R′, a^R, b^R)."""

    j: int
    p: float
    dimL_A: int
    dimR_A: int
    dimL_B: int
    dimR_B: int
    omega: PureState
    phi: PureState
    lambda0: float


@dataclass(frozen=True)
class KiDecomposition:
    """All blocks plus the isometries locating them inside H^A and H^B.

    ``embed_A`` has one column per (block, l, ρ) with l slowest within a
    block; ``embed_B`` one column per (block, s, t).  Support projectors
    are the corresponding P = E E†.
    """

    blocks: tuple[KiBlock, ...]
    embed_A: np.ndarray
    embed_B: np.ndarray
    proj_A: np.ndarray
    proj_B: np.ndarray
    r_registers: tuple[Register, ...]
    a_registers: tuple[Register, ...]
    b_registers: tuple[Register, ...]

    def a_offset(self, j: int) -> int:
        return sum(b.dimL_A * b.dimR_A for b in self.blocks[:j])

    def b_offset(self, j: int) -> int:
        return sum(b.dimL_B * b.dimR_B for b in self.blocks[:j])

    def a_block_embed(self, j: int) -> np.ndarray:
        blk = self.blocks[j]
        off = self.a_offset(j)
        return self.embed_A[:, off : off + blk.dimL_A * blk.dimR_A]

    def b_block_embed(self, j: int) -> np.ndarray:
        blk = self.blocks[j]
        off = self.b_offset(j)
        return self.embed_B[:, off : off + blk.dimL_B * blk.dimR_B]


def merge_cost_K(dec: KiDecomposition) -> int:
    """K = max_j ⌈λ₀(j) · dim a_j^R⌉ (at least 1)."""
    k = 1
    for blk in dec.blocks:
        k = max(k, math.ceil(blk.lambda0 * blk.dimR_A - 1e-9))
    return k


def spread_rank_bound(dec: KiDecomposition) -> int:
    """rank ρ^A = Σ_j dimL_A · dimR_A; always ≥ merge_cost_K."""
    bound = sum(blk.dimL_A * blk.dimR_A for blk in dec.blocks)
    if merge_cost_K(dec) > bound:
        raise NumericalDegeneracy("block data violates K ≤ rank(ρ^A)")
    return bound


def rebuild(dec: KiDecomposition) -> PureState:
    """Reassemble ⊕_j √p_j ω_j ⊗ φ_j on the original registers (R′, A, B)."""
    dR = int(np.prod([r.dim for r in dec.r_registers], dtype=object)) if dec.r_registers else 1
    dA = int(np.prod([r.dim for r in dec.a_registers], dtype=object))
    dB = int(np.prod([r.dim for r in dec.b_registers], dtype=object)) if dec.b_registers else 1
    out = np.zeros((dR, dA, dB), dtype=complex)
    for j, blk in enumerate(dec.blocks):
        m, n = blk.dimL_A, blk.dimR_A
        nL, nR = blk.dimL_B, blk.dimR_B
        omega = blk.omega.amplitudes.reshape(m, nL)
        phi = blk.phi.amplitudes.reshape(dR, n, nR)
        emb_a = dec.a_block_embed(j).reshape(dA, m, n)
        emb_b = dec.b_block_embed(j).reshape(dB, nL, nR)
        out += math.sqrt(blk.p) * np.einsum(
            "ls,rqt,alq,bst->rab", omega, phi, emb_a, emb_b, optimize=True
        )
    regs = dec.r_registers + dec.a_registers + dec.b_registers
    return PureState(regs, out.reshape(-1))


# -- internals ---------------------------------------------------------------


def _support_basis(rho: np.ndarray, rank_rtol: float) -> np.ndarray:
    """Orthonormal eigenbasis of supp(rho), descending eigenvalues.

    Raises NumericalDegeneracy when an eigenvalue sits inside the
    ambiguity band around the rank cutoff.
    """
    vals, vecs = np.linalg.eigh(rho)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    top = max(float(vals[0]), 0.0)
    if top <= 0.0:
        raise ShapeMismatch("zero marginal has no support")
    cut = rank_rtol * top
    band = (vals > cut / 16) & (vals < cut * 16)
    if band.any():
        raise NumericalDegeneracy(
            "marginal eigenvalue falls inside the rank tolerance band"
        )
    keep = vals > cut
    basis = vecs[:, keep]
    return np.column_stack([canonical_phase(basis[:, k]) for k in range(basis.shape[1])])


def _commutant_basis(ops, dim: int) -> list[np.ndarray]:
    """Basis of {X : [X, T] = 0 for all T} via one stacked null space.

    Singular values are thresholded against the scale of the generating
    operators themselves, not of the stacked commutator matrix — when
    every T is (near) proportional to the identity, the stacked matrix
    is pure floating-point noise and a relative cutoff would mistake
    that noise for genuine constraints.
    """
    eye = np.eye(dim)
    scale = max((float(np.linalg.norm(t)) for t in ops), default=0.0)
    if scale <= 0.0:
        return [_unit(dim, k) for k in range(dim * dim)]
    stacked = np.vstack([np.kron(eye, t.T) - np.kron(t, eye) for t in ops])
    _, sv, vh = np.linalg.svd(stacked, full_matrices=True)
    rank = int(np.sum(sv > 1e-10 * scale))
    ns = vh[rank:].conj().T
    return [ns[:, k].reshape(dim, dim) for k in range(ns.shape[1])]


def _unit(dim: int, k: int) -> np.ndarray:
    m = np.zeros((dim, dim), dtype=complex)
    m[k // dim, k % dim] = 1.0
    return m


def _random_hermitian(basis, rng) -> np.ndarray:
    dim = basis[0].shape[0]
    acc = np.zeros((dim, dim), dtype=complex)
    for x in basis:
        acc += rng.standard_normal() * (x + x.conj().T)
        acc += rng.standard_normal() * 1j * (x - x.conj().T)
    return acc


def _random_element(basis, rng) -> np.ndarray:
    dim = basis[0].shape[0]
    acc = np.zeros((dim, dim), dtype=complex)
    for x in basis:
        acc += (rng.standard_normal() + 1j * rng.standard_normal()) * x
    return acc


def _cluster(vals: np.ndarray):
    """Group sorted eigenvalues by gaps; None when a gap is ambiguous."""
    scale = max(float(vals[-1] - vals[0]), float(np.abs(vals).max()), 1e-300)
    groups, start = [], 0
    for k in range(1, len(vals)):
        gap = float(vals[k] - vals[k - 1])
        if gap > _CLUSTER_COARSE * scale:
            groups.append((start, k))
            start = k
        elif gap > _CLUSTER_FINE * scale:
            return None
    groups.append((start, len(vals)))
    return groups


def _central_split(t_ops, comm, rng) -> list[np.ndarray]:
    """Frames (columns orthonormal) of the minimal central subspaces."""
    dim = comm[0].shape[0]
    closure = list(t_ops)
    for x in comm:
        closure.append(x)
        closure.append(x.conj().T)
    center = _commutant_basis(closure, dim)
    for _ in range(_RESAMPLE_BUDGET):
        z = _random_hermitian(center, rng)
        vals, vecs = np.linalg.eigh(z)
        groups = _cluster(vals)
        if groups is None:
            continue
        return [vecs[:, a:b] for a, b in groups]
    raise NumericalDegeneracy("central eigenvalue clustering stayed ambiguous")


def _factor_block(frame: np.ndarray, comm, rng) -> tuple[np.ndarray, int, int]:
    """Tensor frame V of one central block: columns (l, ρ), l slowest.

    On the block, the commutant is a full matrix algebra M_m ⊗ 1_n; m
    is recovered from the spectrum of a random Hermitian commutant
    element and the n-side frames are aligned through a generic linking
    element.
    """
    s_c = frame.shape[1]
    restricted = [frame.conj().T @ x @ frame for x in comm]
    for _ in range(_RESAMPLE_BUDGET):
        c = _random_hermitian(restricted, rng)
        vals, vecs = np.linalg.eigh(c)
        groups = _cluster(vals)
        if groups is None:
            continue
        sizes = {b - a for a, b in groups}
        if len(sizes) != 1:
            continue
        n = sizes.pop()
        m = len(groups)
        if m * n != s_c:
            continue
        if m == 1:
            return np.eye(s_c, dtype=complex), 1, s_c
        w0 = vecs[:, groups[0][0] : groups[0][1]]
        for _ in range(_RESAMPLE_BUDGET):
            g = _random_element(restricted, rng)
            cols = [w0]
            ok = True
            for a, b in groups[1:]:
                p_a = vecs[:, a:b] @ vecs[:, a:b].conj().T
                t = p_a @ g @ w0
                z = float(np.linalg.norm(t[:, 0]))
                if z < 1e-8 * max(1.0, float(np.linalg.norm(g))):
                    ok = False
                    break
                cols.append(t / z)
            if not ok:
                continue
            v = np.hstack(cols)
            if np.abs(v.conj().T @ v - np.eye(s_c)).max() < 1e-8:
                return v, m, n
    raise NumericalDegeneracy("commutant factor structure could not be resolved")


@dataclass
class _BlockData:
    """Working record for one (candidate) block during refinement."""

    emb: np.ndarray  # dA × (m·n), columns (l, ρ) with l slowest
    m: int
    n: int
    p: float
    mu: np.ndarray  # junk spectrum, descending (length m)
    lvecs: np.ndarray  # m × m junk eigenframe
    nu: np.ndarray  # content spectrum, descending (length nR)
    evecs: np.ndarray  # (dR·n) × nR content eigenframe
    w: np.ndarray  # dB × (m·nR) B-side frame, (s, t) with s slowest

    @property
    def fingerprint(self):
        proj = self.emb @ self.emb.conj().T
        return tuple(np.round(proj, 6).reshape(-1).view(float))


def _degenerate_groups(vals: np.ndarray, atol: float):
    groups, start = [], 0
    for k in range(1, len(vals)):
        if abs(float(vals[k] - vals[k - 1])) > atol:
            groups.append((start, k))
            start = k
    groups.append((start, len(vals)))
    return groups


def _extract_block(psi3: np.ndarray, emb: np.ndarray, m: int, n: int, rank_rtol: float):
    """Factor ψ's component in the block as ω ⊗ φ; None if it does not factor.

    Frame gauges left open by degenerate spectra are pinned against the
    computational position operator so repeated runs (and the worked
    branch displays built on top) come out in a fixed basis.
    """
    dR, dA, dB = psi3.shape
    pos = np.arange(dA, dtype=float)
    if n > 1:
        emb3 = emb.reshape(dA, m, n)
        m_a = np.einsum("alp,a,alq->pq", emb3.conj(), pos, emb3, optimize=True)
        _, gauge = np.linalg.eigh(m_a)
        emb = (emb3 @ gauge).reshape(dA, m * n)
    emb3 = emb.reshape(dA, m, n)

    chi = np.einsum("rab,ax->rxb", psi3, emb.conj(), optimize=True)
    p = float(np.linalg.norm(chi) ** 2)
    if p < 1e-24:
        return None
    chi = (chi / math.sqrt(p)).reshape(dR, m, n, dB)

    sigma = np.einsum("rlqb,rkqb->lk", chi, chi.conj(), optimize=True)
    mu, lvecs = np.linalg.eigh(sigma)
    mu, lvecs = mu[::-1].copy(), lvecs[:, ::-1].copy()
    if mu[-1] < rank_rtol * mu[0]:
        return None  # junk marginal must fill the block
    for a, b in _degenerate_groups(mu, 1e-9 * float(mu[0])):
        if b - a < 2:
            continue
        g = np.einsum("alq,ls->aqs", emb3, lvecs[:, a:b], optimize=True)
        m_op = np.einsum("aqs,a,aqt->st", g.conj(), pos, g, optimize=True)
        _, u = np.linalg.eigh(m_op)
        lvecs[:, a:b] = lvecs[:, a:b] @ u
    lvecs = np.column_stack([canonical_phase(lvecs[:, k]) for k in range(m)])

    flat = chi.transpose(0, 2, 1, 3).reshape(dR * n, m * dB)
    rho_c = flat @ flat.conj().T
    nu, evecs = np.linalg.eigh(rho_c)
    nu, evecs = nu[::-1].copy(), evecs[:, ::-1].copy()
    n_r = int(np.sum(nu > rank_rtol * nu[0]))
    nu, evecs = nu[:n_r].copy(), evecs[:, :n_r].copy()
    m_a = np.einsum("alp,a,alq->pq", emb3.conj(), pos, emb3, optimize=True)
    big = np.kron(np.diag(np.arange(dR, dtype=float)) * (dA + 1.0), np.eye(n)) + np.kron(
        np.eye(dR), m_a
    )
    for a, b in _degenerate_groups(nu, 1e-9 * float(nu[0])):
        if b - a < 2:
            continue
        sub = evecs[:, a:b]
        _, u = np.linalg.eigh(sub.conj().T @ big @ sub)
        evecs[:, a:b] = sub @ u
    evecs = np.column_stack([canonical_phase(evecs[:, k]) for k in range(n_r)])

    ev3 = evecs.reshape(dR, n, n_r)
    w = np.einsum(
        "rlqb,ls,rqt->stb", chi, lvecs.conj(), ev3.conj(), optimize=True
    ) / np.sqrt(np.outer(mu, nu))[:, :, None]
    w_mat = w.reshape(m * n_r, dB).T
    if np.abs(w_mat.conj().T @ w_mat - np.eye(m * n_r)).max() > 1e-8:
        return None
    return _BlockData(emb=emb, m=m, n=n, p=p, mu=mu, lvecs=lvecs, nu=nu, evecs=evecs, w=w_mat)


def _align_phis(bi: _BlockData, bj: _BlockData, dR: int, rng):
    """Search unitaries u (aR), w (bR) with (1⊗u⊗w)φ_j ≈ φ_i; None if overlap < 1."""
    n, n_r = bi.n, bi.nu.size
    fi = (bi.evecs * np.sqrt(bi.nu)).reshape(dR, n, n_r)
    fj = (bj.evecs * np.sqrt(bj.nu)).reshape(dR, n, n_r)

    def polar_max(mat):
        uu, _, vv = np.linalg.svd(mat)
        return vv.conj().T @ uu.conj().T

    best = None
    inits = [np.eye(n_r, dtype=complex)]
    for _ in range(2):
        g = rng.standard_normal((n_r, n_r)) + 1j * rng.standard_normal((n_r, n_r))
        inits.append(np.linalg.qr(g)[0])
    for w in inits:
        u = np.eye(n, dtype=complex)
        f = 0.0
        for _ in range(60):
            a_w = np.einsum("rqs,ts,rpt->qp", fj, w, fi.conj(), optimize=True)
            u = polar_max(a_w)
            b_u = np.einsum("rqs,qp,rpt->st", fj, u.T, fi.conj(), optimize=True)
            w = polar_max(b_u)
            f_new = abs(np.einsum("rqs,qp,ts,rpt->", fj, u.T, w, fi.conj(), optimize=True))
            if abs(f_new - f) < 1e-13:
                f = f_new
                break
            f = f_new
        if best is None or f > best[0]:
            best = (f, u)
    f, u = best
    return u if f >= 1.0 - 1e-9 else None


def _try_merge(psi3, bi: _BlockData, bj: _BlockData, dR: int, rank_rtol: float, rng):
    """Candidate union of two blocks; None unless the union re-certifies."""
    if bi.n != bj.n or bi.nu.size != bj.nu.size:
        return None
    if not np.allclose(bi.nu, bj.nu, atol=1e-7):
        return None
    u = _align_phis(bi, bj, dR, rng)
    if u is None:
        return None
    eye_mj = np.eye(bj.m)
    for variant in (u.conj(), u.T, u, u.conj().T):
        emb = np.hstack([bi.emb, bj.emb @ np.kron(eye_mj, variant)])
        data = _extract_block(psi3, emb, bi.m + bj.m, bi.n, rank_rtol)
        if data is not None:
            return data
    return None


def _canonical_order(blocks: list[_BlockData]) -> list[_BlockData]:
    return sorted(
        blocks, key=lambda b: (-round(b.p, 9), b.n, b.m, b.fingerprint)
    )


def _parse_roles(psi: PureState, roles):
    if isinstance(roles, dict):
        r_ids = tuple(roles.get("R", ()))
        a_ids = tuple(roles["A"])
        b_ids = tuple(roles.get("B", ()))
    else:
        r_ids, a_ids, b_ids = (tuple(x) for x in roles)
    if not a_ids:
        raise BadPermutation("A-side of the role partition is empty")
    claimed = list(r_ids) + list(a_ids) + list(b_ids)
    if sorted(claimed) != sorted(psi.ids):
        raise BadPermutation("roles must partition the state's registers")
    return r_ids, a_ids, b_ids


def ki_decompose(
    psi: PureState,
    roles,
    *,
    rank_rtol: float = RANK_RTOL,
    tol: float = VERIFY_TOL,
    rng=None,
) -> KiDecomposition:
    """Decompose ψ^{R′AB}; ``roles`` maps "R"/"A"/"B" to register id sets."""
    if rng is None:
        rng = np.random.default_rng(0)
    r_ids, a_ids, b_ids = _parse_roles(psi, roles)
    perm = permute_registers(psi.normalized(), list(r_ids) + list(a_ids) + list(b_ids))
    r_regs = tuple(perm.register(i) for i in r_ids)
    a_regs = tuple(perm.register(i) for i in a_ids)
    b_regs = tuple(perm.register(i) for i in b_ids)
    dR = int(np.prod([r.dim for r in r_regs], dtype=object)) if r_regs else 1
    dA = int(np.prod([r.dim for r in a_regs], dtype=object))
    dB = int(np.prod([r.dim for r in b_regs], dtype=object)) if b_regs else 1
    psi3 = perm.amplitudes.reshape(dR, dA, dB)

    rho_a = np.einsum("rab,rcb->ac", psi3, psi3.conj(), optimize=True)
    e_a = _support_basis(rho_a, rank_rtol)
    s_a = e_a.shape[1]
    rho_b = np.einsum("rab,rad->bd", psi3, psi3.conj(), optimize=True)
    _support_basis(rho_b, rank_rtol)  # degeneracy guard on the B side

    psi_r = np.einsum("rab,ax->rxb", psi3, e_a.conj(), optimize=True)
    t_ops = []
    for r in range(dR):
        for rp in range(dR):
            t = psi_r[r] @ psi_r[rp].conj().T
            t_ops.append(t + t.conj().T)
            t_ops.append(1j * (t - t.conj().T))

    comm = _commutant_basis(t_ops, s_a)
    frames = _central_split(t_ops, comm, rng)

    blocks: list[_BlockData] = []
    for frame in frames:
        v, m, n = _factor_block(frame, comm, rng)
        emb = e_a @ frame @ v
        data = _extract_block(psi3, emb, m, n, rank_rtol)
        if data is None:
            raise NumericalDegeneracy("a central block failed to factor as ω ⊗ φ")
        blocks.append(data)

    # merge pass: re-unite blocks that the spectral split cut apart
    blocks = _canonical_order(blocks)
    merged = True
    while merged:
        merged = False
        for i in range(len(blocks)):
            for j in range(i + 1, len(blocks)):
                union = _try_merge(psi3, blocks[i], blocks[j], dR, rank_rtol, rng)
                if union is not None:
                    rest = [b for k, b in enumerate(blocks) if k not in (i, j)]
                    blocks = _canonical_order(rest + [union])
                    merged = True
                    break
            if merged:
                break

    return _assemble(perm, psi3, blocks, r_regs, a_regs, b_regs, dR, dA, dB, s_a, tol)


def _assemble(perm, psi3, blocks, r_regs, a_regs, b_regs, dR, dA, dB, s_a, tol):
    embed_a = np.hstack([b.emb for b in blocks])
    embed_b = np.hstack([b.w for b in blocks])
    if np.abs(embed_a.conj().T @ embed_a - np.eye(embed_a.shape[1])).max() > 1e-7:
        raise NumericalDegeneracy("A-side block images are not orthonormal")
    if np.abs(embed_b.conj().T @ embed_b - np.eye(embed_b.shape[1])).max() > 1e-7:
        raise NumericalDegeneracy("B-side block images are not orthonormal")
    if embed_a.shape[1] != s_a:
        raise NumericalDegeneracy("blocks do not span supp(ρ^A)")

    ki_blocks = []
    p_total = 0.0
    for j, b in enumerate(blocks):
        n_r = b.nu.size
        omega_regs = (
            Register(f"aL{j}", b.m, "A", role="ki"),
            Register(f"bL{j}", b.m, "B", role="ki"),
        )
        omega = PureState(omega_regs, (b.lvecs * np.sqrt(b.mu)).reshape(-1))
        phi_regs = r_regs + (
            Register(f"aR{j}", b.n, "A", role="ki"),
            Register(f"bR{j}", n_r, "B", role="ki"),
        )
        phi = PureState(phi_regs, (b.evecs * np.sqrt(b.nu)).reshape(-1))
        ki_blocks.append(
            KiBlock(
                j=j,
                p=b.p,
                dimL_A=b.m,
                dimR_A=b.n,
                dimL_B=b.m,
                dimR_B=n_r,
                omega=omega,
                phi=phi,
                lambda0=float(b.mu[0]),
            )
        )
        p_total += b.p
    if abs(p_total - 1.0) > 1e-10:
        raise NumericalDegeneracy(f"block probabilities sum to {p_total}, not 1")

    dec = KiDecomposition(
        blocks=tuple(ki_blocks),
        embed_A=embed_a,
        embed_B=embed_b,
        proj_A=embed_a @ embed_a.conj().T,
        proj_B=embed_b @ embed_b.conj().T,
        r_registers=r_regs,
        a_registers=a_regs,
        b_registers=b_regs,
    )
    residual = float(np.linalg.norm(rebuild(dec).amplitudes - perm.amplitudes))
    if residual > tol:
        raise NumericalDegeneracy(f"reconstruction residual {residual:.2e} exceeds {tol}")
    return dec
