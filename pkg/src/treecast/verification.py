"""Channel-level checks: replay stored protocols on fresh random inputs.

The tree drivers certify themselves branch-exhaustively on the encoded
maximally entangled state.  Because any linear map is determined by its
action on that state, the exhaustive check already pins every branch's
Kraus operator on the code subspace — so the induced channel is exact
on *every* input.  This module witnesses that conclusion directly: it
draws random density operators, purifies them through the reference
register, pushes the purification through the stored protocol operators
along sampled outcome paths, and measures the trace distance between
the output density operator and the target.

Two structural facts make the replay well-defined:

* every intermediate branch state keeps the reference marginal
  maximally mixed, so outcome probabilities do not depend on the input
  (the recorded path probabilities are reproduced verbatim), and
* an outcome pruned at (numerically) zero probability during the
  encoded-pair run has a Kraus operator annihilating the whole code
  subspace, so no valid input can steer the protocol onto a missing
  branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codes import REFERENCE_ID, IsometryCode, encoded_pair
from .errors import VerificationFailed
from .merge_split import execute_split, merge_post_state
from .network import RootedTree
from .protocols import (
    ConcentrateResult,
    SpreadResult,
    _replay_root_corrections,
    run_concentrating,
    run_spreading,
)
from .tensors import PureState, Register, marginal_matrix

DEFAULT_CHANNEL_TOL = 1e-8


@dataclass(frozen=True)
class ChannelCheck:
    """Outcome of replaying one protocol on random inputs."""

    direction: str  # "spread" | "concentrate"
    samples: int
    paths_per_sample: int
    max_trace_distance: float
    max_probability_deviation: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_trace_distance <= self.tol


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    """(1/2)‖rho − sigma‖₁ for Hermitian matrices."""
    return 0.5 * float(np.abs(np.linalg.eigvalsh(rho - sigma)).sum())


def random_input(rng, dim: int) -> np.ndarray:
    """Purification amplitudes psi[r, l] of a Hilbert-Schmidt random density.

    Tracing out the first (reference) index of the normalized Ginibre
    matrix yields a generically full-rank density operator on C^dim.
    """
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return g / np.linalg.norm(g)


def _encoded_input(code: IsometryCode, psi: np.ndarray) -> PureState:
    """(1 ⊗ U)|psi⟩ on (R, physical registers), same ids as encoded_pair."""
    amps = np.einsum("pl,rl->rp", code.matrix, psi).reshape(-1)
    ref = Register(REFERENCE_ID, code.logical_dim, "reference", role="reference")
    return PureState((ref,) + code.physical_registers(), amps)


def verify_spreading_channel(
    code: IsometryCode,
    tree: RootedTree,
    result: SpreadResult | None = None,
    *,
    samples: int = 20,
    extra_paths: int = 2,
    seed: int = 0,
    tol: float = DEFAULT_CHANNEL_TOL,
    labeling=None,
) -> ChannelCheck:
    """Replay the stored spreading protocol on random density inputs.

    Each input is purified through the reference register, pushed
    through every split along the all-zero outcome path plus
    ``extra_paths`` uniformly sampled paths, and the reduced output on
    the physical registers is compared to U rho U† in trace distance.
    """
    if result is None:
        result = run_spreading(code, tree, labeling)
    rng = np.random.default_rng(seed)
    phys = list(code.parties)
    worst_td = 0.0
    worst_pdev = 0.0
    n_paths = 1 + extra_paths
    for _ in range(samples):
        psi = random_input(rng, code.logical_dim)
        target = _encoded_input(code, psi)
        start = PureState(
            tuple(
                r if r.id == REFERENCE_ID else r.with_owner(tree.root)
                for r in target.registers
            ),
            target.amplitudes,
        )
        rho_target = marginal_matrix(target, phys)
        for p in range(n_paths):
            state = start
            for step in result.steps:
                n_out = step.protocol.k**2
                m = 0 if p == 0 else int(rng.integers(n_out))
                (branch,) = execute_split(
                    step.protocol,
                    state,
                    outcomes=[m],
                    a0_id=f"sp:{step.child}:A0",
                    b0_id=f"sp:{step.child}:B0",
                )
                worst_pdev = max(worst_pdev, abs(branch.probability - 1.0 / n_out))
                state = branch.state
            worst_td = max(worst_td, trace_distance(marginal_matrix(state, phys), rho_target))
    return ChannelCheck(
        direction="spread",
        samples=samples,
        paths_per_sample=n_paths,
        max_trace_distance=worst_td,
        max_probability_deviation=worst_pdev,
        tol=tol,
    )


def _pick_branch_paths(result: ConcentrateResult, extra_paths: int, rng):
    """The all-zero branch when present, plus sampled distinct others."""
    all_paths = [br.outcomes for br in result.branches]
    if not all_paths:
        raise VerificationFailed("concentrating result holds no verified branches")
    zeros = [p for p in all_paths if all(m == 0 for m in p)]
    first = zeros[0] if zeros else all_paths[0]
    rest = [p for p in all_paths if p != first]
    take = min(extra_paths, len(rest))
    picked = rng.choice(len(rest), size=take, replace=False) if take else []
    return [first] + [rest[int(i)] for i in sorted(picked)]


def verify_concentrating_channel(
    code: IsometryCode,
    tree: RootedTree,
    result: ConcentrateResult | None = None,
    *,
    samples: int = 20,
    extra_paths: int = 2,
    seed: int = 0,
    tol: float = DEFAULT_CHANNEL_TOL,
    labeling=None,
) -> ChannelCheck:
    """Replay the stored concentrating protocol on random density inputs.

    Each input rho is encoded as a purified U rho U†, walked down the
    stored measurement records along sampled recorded branches, replayed
    through the deferred corrections, decoded, and compared to rho on
    the logical register in trace distance.  The recorded branch
    probability must reappear identically for every input.
    """
    if result is None:
        result = run_concentrating(code, tree, labeling)
    rng = np.random.default_rng(seed)
    order = result.labeling
    n = len(order)
    by_path = {br.outcomes: br.probability for br in result.branches}
    paths = _pick_branch_paths(result, extra_paths, rng)
    worst_td = 0.0
    worst_pdev = 0.0
    for _ in range(samples):
        psi = random_input(rng, code.logical_dim)
        start = _encoded_input(code, psi)
        rho_target = np.einsum("rl,rm->lm", psi, psi.conj())
        for path in paths:
            state = start
            p_acc = 1.0
            for k in range(n, 1, -1):
                rec = result.steps[k][path[: n - k]]
                p_m, post = merge_post_state(rec.protocol, state, path[n - k])
                p_acc *= p_m
                state = post.normalized()
            final = _replay_root_corrections(code, order, result.steps, path, state)
            worst_pdev = max(worst_pdev, abs(p_acc - by_path[path]))
            rho_out = marginal_matrix(final.normalized(), ["L"])
            worst_td = max(worst_td, trace_distance(rho_out, rho_target))
    return ChannelCheck(
        direction="concentrate",
        samples=samples,
        paths_per_sample=len(paths),
        max_trace_distance=worst_td,
        max_probability_deviation=worst_pdev,
        tol=tol,
    )


def verify_channels(
    code: IsometryCode,
    tree: RootedTree,
    *,
    labeling=None,
    samples: int = 20,
    extra_paths: int = 2,
    seed: int = 0,
    tol: float = DEFAULT_CHANNEL_TOL,
    spread_result: SpreadResult | None = None,
    concentrate_result: ConcentrateResult | None = None,
) -> dict[str, ChannelCheck]:
    """Both directions at once; builds any result not supplied."""
    return {
        "spread": verify_spreading_channel(
            code,
            tree,
            spread_result,
            samples=samples,
            extra_paths=extra_paths,
            seed=seed,
            tol=tol,
            labeling=labeling,
        ),
        "concentrate": verify_concentrating_channel(
            code,
            tree,
            concentrate_result,
            samples=samples,
            extra_paths=extra_paths,
            seed=seed,
            tol=tol,
            labeling=labeling,
        ),
    }
