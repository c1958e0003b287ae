"""Single-step splitting and merging protocols, checked exhaustively."""

import dataclasses
import math

import numpy as np
import pytest

from treecast.codes import encoded_pair, five_qubit_code
from treecast.errors import DimensionMismatch, InsufficientResource, SynthesisFailed
from treecast.merge_split import (
    apply_merge_correction,
    build_merge_protocol,
    build_split_protocol,
    execute_merge,
    execute_split,
    merge_cost,
    merge_post_state,
    split_cost,
    verify_merge,
)
from treecast.tensors import (
    PureState,
    Register,
    max_entangled_pair,
    overlap,
    random_state,
    tensor_product,
)


def regs(*spec):
    return tuple(Register(i, d, o) for i, d, o in spec)


def star_phi2():
    """Merge-step state of the four-party star example: v2's share into v1."""
    amps = np.zeros(8, dtype=complex)
    amps[0b000] = 1 / math.sqrt(2)
    amps[0b110] = 0.5
    amps[0b111] = 0.5
    return PureState(regs(("R", 2, "ref"), ("v2", 2, "v2"), ("v1", 2, "v1")), amps)


def five_qubit_phi2():
    """Merge-step state of the five-qubit example: v2's share into v1."""
    amps = np.zeros(8, dtype=complex)
    amps[0b000] = 0.5
    amps[0b011] = 0.5
    amps[0b101] = -0.5
    amps[0b110] = -0.5
    return PureState(regs(("R", 2, "ref"), ("v2", 2, "v2"), ("v1", 2, "v1")), amps)


def branch_matches(branch_state, psi, receiver):
    """Branch must reproduce ψ with the A registers re-owned, up to phase."""
    val = abs(overlap(branch_state, psi.normalized()))
    return abs(val - 1.0) < 1e-9


# -- splitting ----------------------------------------------------------------


class TestSplitting:
    def test_teleportation_oracle(self):
        psi = max_entangled_pair(Register("R", 2, "ref"), Register("S", 2, "alice"))
        proto = build_split_protocol(psi, ["S"], receiver="bob")
        assert proto.rank == 2 and proto.k == 2
        branches = execute_split(proto, psi)
        assert len(branches) == 4
        for br in branches:
            assert abs(br.probability - 0.25) < 1e-12
            assert br.state.register("S").owner == "bob"
            # exact reproduction, global phase included
            diff = br.state.amplitudes - psi.amplitudes
            assert np.linalg.norm(diff) < 1e-10

    def test_five_qubit_cut_ranks(self):
        psi = encoded_pair(five_qubit_code())
        cuts = [
            (["v2", "v3", "v4", "v5"], 4),
            (["v3", "v4", "v5"], 8),
            (["v4", "v5"], 4),
            (["v5"], 2),
        ]
        for ids, rank in cuts:
            assert split_cost(psi, ids) == rank

    def test_insufficient_resource(self):
        psi = max_entangled_pair(Register("R", 2, "ref"), Register("S", 2, "alice"))
        with pytest.raises(InsufficientResource):
            build_split_protocol(psi, ["S"], 1, receiver="bob")

    def test_oversized_resource_still_exact(self):
        rng = np.random.default_rng(7)
        psi = random_state(regs(("R", 2, "ref"), ("S", 2, "alice")), rng)
        proto = build_split_protocol(psi, ["S"], 3, receiver="bob")
        branches = execute_split(proto, psi)
        assert len(branches) == 9
        total = 0.0
        for br in branches:
            total += br.probability
            assert branch_matches(br.state, psi, "bob")
        assert abs(total - 1.0) < 1e-9

    def test_product_block_costs_nothing(self):
        pair = max_entangled_pair(Register("R", 2, "ref"), Register("S", 2, "alice"))
        psi = tensor_product(
            PureState(regs(("X", 2, "alice"),), np.array([1, 0], dtype=complex)), pair
        )
        assert split_cost(psi, ["X"]) == 1
        proto = build_split_protocol(psi, ["X"], receiver="bob")
        branches = execute_split(proto, psi)
        assert len(branches) == 1
        assert abs(branches[0].probability - 1.0) < 1e-12
        assert branches[0].state.register("X").owner == "bob"

    def test_multi_register_block(self):
        rng = np.random.default_rng(11)
        psi = random_state(
            regs(("R", 2, "ref"), ("S1", 2, "alice"), ("S2", 2, "alice")), rng
        )
        rank = split_cost(psi, ["S1", "S2"])
        assert rank == 2  # purifying system R is a qubit
        proto = build_split_protocol(psi, ["S1", "S2"], receiver="bob")
        for br in execute_split(proto, psi):
            assert branch_matches(br.state, psi, "bob")


# -- merging ------------------------------------------------------------------


class TestMergeGolden:
    def test_star_step_is_single_block_teleport(self):
        psi = star_phi2()
        proto = build_merge_protocol(
            psi, {"R": ["R"], "A": ["v2"], "B": ["v1"]}, receiver="v1"
        )
        assert proto.strategy == "single-block"
        assert proto.kmin == 2 and proto.k == 2
        report = verify_merge(proto, psi)
        assert report.passed, report
        branches = execute_merge(proto, psi)
        assert len(branches) == 4
        for br in branches:
            assert abs(br.probability - 0.25) < 1e-9
            assert branch_matches(br.state, psi, "v1")
            assert br.state.register("v2").owner == "v1"

    def test_five_qubit_step_is_scalar_fourier(self):
        psi = five_qubit_phi2()
        proto = build_merge_protocol(
            psi, {"R": ["R"], "A": ["v2"], "B": ["v1"]}, receiver="v1"
        )
        assert proto.strategy == "scalar-fourier"
        assert proto.kmin == 1 and proto.k == 1
        # canonical measurement: the computational basis on v2
        assert np.allclose(np.abs(proto.measurement), np.eye(2), atol=1e-9)
        assert np.allclose(sorted(proto.probs), [0.5, 0.5], atol=1e-9)
        report = verify_merge(proto, psi)
        assert report.passed, report
        for br in execute_merge(proto, psi):
            assert branch_matches(br.state, psi, "v1")

    def test_five_qubit_last_vertex_junk_basis(self):
        psi = encoded_pair(five_qubit_code())
        roles = {"R": ["R"], "A": ["v5"], "B": ["v1", "v2", "v3", "v4"]}
        proto = build_merge_protocol(psi, roles, receiver="v4")
        assert proto.strategy == "single-block"
        assert proto.kmin == 1 and proto.k == 1
        assert np.allclose(np.abs(proto.measurement), np.eye(2), atol=1e-9)
        assert np.allclose(proto.probs, [0.5, 0.5], atol=1e-9)
        report = verify_merge(proto, psi)
        assert report.passed, report

    def test_uniform_junk_merges_entangled_content_for_free(self):
        junk = max_entangled_pair(Register("jA", 2, "v2"), Register("jB", 2, "v1"))
        psi = tensor_product(junk, star_phi2())
        roles = {"R": ["R"], "A": ["jA", "v2"], "B": ["jB", "v1"]}
        assert merge_cost(psi, roles) == 1
        proto = build_merge_protocol(psi, roles, receiver="v1")
        assert proto.strategy == "uniform-junk"
        assert proto.k == 1
        report = verify_merge(proto, psi)
        assert report.passed, report
        for br in execute_merge(proto, psi):
            assert branch_matches(br.state, psi, "v1")


class TestMergeResource:
    def test_insufficient_resource(self):
        psi = star_phi2()
        with pytest.raises(InsufficientResource):
            build_merge_protocol(
                psi, {"R": ["R"], "A": ["v2"], "B": ["v1"]}, k=1, receiver="v1"
            )

    def test_resource_override_consumes_more(self):
        # K may exceed the tight minimum up to dim H^A; the whole resource
        # is consumed and every branch stays exact.
        rng = np.random.default_rng(41)
        small = random_state(regs(("R", 2, "ref"), ("a", 2, "A"), ("b", 3, "B")), rng)
        padded = np.zeros((2, 3, 3), dtype=complex)
        padded[:, :2, :] = small.amplitudes.reshape(2, 2, 3)
        psi = PureState(regs(("R", 2, "ref"), ("a", 3, "A"), ("b", 3, "B")), padded)
        roles = {"R": ["R"], "A": ["a"], "B": ["b"]}
        assert merge_cost(psi, roles) == 2
        proto = build_merge_protocol(psi, roles, k=3, receiver="B")
        assert proto.k == 3 and proto.kmin == 2
        report = verify_merge(proto, psi)
        assert report.passed, report
        branches = execute_merge(proto, psi)
        assert len(branches) == 6  # 2·3 live outcomes, 3 zero-probability
        for br in branches:
            assert abs(br.probability - 1 / 6) < 1e-9
            assert branch_matches(br.state, psi, "B")

    def test_resource_beyond_share_dimension_rejected(self):
        psi = star_phi2()
        with pytest.raises(DimensionMismatch):
            build_merge_protocol(
                psi, {"R": ["R"], "A": ["v2"], "B": ["v1"]}, k=3, receiver="v1"
            )

    def test_zero_probability_outcomes_masked(self):
        pair = max_entangled_pair(Register("R", 2, "ref"), Register("v1", 2, "v1"))
        psi = tensor_product(
            PureState(regs(("v2", 2, "v2"),), np.array([1, 0], dtype=complex)), pair
        )
        proto = build_merge_protocol(
            psi, {"R": ["R"], "A": ["v2"], "B": ["v1"]}, receiver="v1"
        )
        assert proto.k == 1
        assert proto.zero_mask == (False, True)
        report = verify_merge(proto, psi)
        assert report.passed, report
        assert abs(sum(proto.probs) - 1.0) < 1e-9

    def test_tight_never_beats_fallback(self):
        rng = np.random.default_rng(23)
        for _ in range(6):
            psi = random_state(
                regs(("R", 2, "ref"), ("a", 2, "A"), ("b1", 2, "B"), ("b2", 2, "B")),
                rng,
            )
            roles = {"R": ["R"], "A": ["a"], "B": ["b1", "b2"]}
            tight = merge_cost(psi, roles, mode="tight")
            loose = merge_cost(psi, roles, mode="fallback")
            assert 1 <= tight <= loose


class TestMergeFallback:
    def test_fallback_teleport_always_exact(self):
        rng = np.random.default_rng(31)
        psi = random_state(
            regs(("R", 3, "ref"), ("a", 3, "A"), ("b", 3, "B")), rng
        )
        proto = build_merge_protocol(
            psi, {"R": ["R"], "A": ["a"], "B": ["b"]}, mode="fallback", receiver="B"
        )
        assert proto.strategy == "fallback-teleport"
        assert proto.kmin == 3
        report = verify_merge(proto, psi)
        assert report.passed, report
        for br in execute_merge(proto, psi):
            assert branch_matches(br.state, psi, "B")

    def test_skewed_junk_tight_or_fallback(self):
        # Non-uniform junk over an entangled content block: the tight
        # resource is K = ⌈0.8·2⌉ = 2 and needs the synthesized strategy.
        amps = np.zeros(4, dtype=complex)
        amps[0] = math.sqrt(0.8)
        amps[3] = math.sqrt(0.2)
        junk = PureState(regs(("jA", 2, "v2"), ("jB", 2, "v1")), amps)
        psi = tensor_product(junk, star_phi2())
        roles = {"R": ["R"], "A": ["jA", "v2"], "B": ["jB", "v1"]}
        assert merge_cost(psi, roles) == 2
        try:
            proto = build_merge_protocol(psi, roles, receiver="v1")
        except SynthesisFailed:
            proto = build_merge_protocol(psi, roles, mode="fallback", receiver="v1")
            assert proto.kmin == 4
        else:
            assert proto.strategy == "synthesized"
            assert proto.k == 2
        report = verify_merge(proto, psi)
        assert report.passed, report
        for br in execute_merge(proto, psi):
            assert branch_matches(br.state, psi, "v1")


class TestMergeNegativeControl:
    def test_corrupted_correction_detected(self):
        psi = star_phi2()
        proto = build_merge_protocol(
            psi, {"R": ["R"], "A": ["v2"], "B": ["v1"]}, receiver="v1"
        )
        bad = list(proto.corrections)
        swap = np.eye(bad[1].shape[0], dtype=complex)[::-1]
        bad[1] = swap @ bad[1]
        corrupted = dataclasses.replace(proto, corrections=tuple(bad))
        report = verify_merge(corrupted, psi)
        assert not report.passed
        assert report.max_deviation > 0.1

    def test_corrupted_measurement_detected(self):
        psi = five_qubit_phi2()
        proto = build_merge_protocol(
            psi, {"R": ["R"], "A": ["v2"], "B": ["v1"]}, receiver="v1"
        )
        qbad = proto.measurement.copy()
        qbad[:, 0] = qbad[:, 0] * 0.5
        corrupted = dataclasses.replace(proto, measurement=qbad)
        report = verify_merge(corrupted, psi)
        assert not report.passed


class TestMergeRandomSweep:
    @pytest.mark.parametrize("seed", range(8))
    def test_random_states_merge_exactly(self, seed):
        rng = np.random.default_rng(100 + seed)
        psi = random_state(
            regs(("R", 2, "ref"), ("a", 2, "A"), ("b1", 2, "B"), ("b2", 2, "B")),
            rng,
        )
        roles = {"R": ["R"], "A": ["a"], "B": ["b1", "b2"]}
        try:
            proto = build_merge_protocol(psi, roles, rng=rng, receiver="B")
        except SynthesisFailed:
            proto = build_merge_protocol(
                psi, roles, mode="fallback", rng=rng, receiver="B"
            )
        report = verify_merge(proto, psi)
        assert report.passed, report
        total = 0.0
        for br in execute_merge(proto, psi):
            total += br.probability
            assert branch_matches(br.state, psi, "B")
        assert abs(total - 1.0) < 1e-9

    def test_no_reference_register(self):
        rng = np.random.default_rng(5)
        psi = random_state(regs(("a", 2, "A"), ("b", 2, "B")), rng)
        proto = build_merge_protocol(psi, ((), ("a",), ("b",)), rng=rng, receiver="B")
        report = verify_merge(proto, psi)
        assert report.passed, report

    def test_deferred_execution_path(self):
        psi = star_phi2()
        proto = build_merge_protocol(
            psi, {"R": ["R"], "A": ["v2"], "B": ["v1"]}, receiver="v1"
        )
        prob, post = merge_post_state(proto, psi, 0)
        assert prob > 0
        assert set(post.ids) == {"R", "v1", "merge:B0"}
        final = apply_merge_correction(proto, 0, post)
        assert set(final.ids) == {"R", "v1", "v2"}
        assert branch_matches(final.normalized(), psi, "v1")
