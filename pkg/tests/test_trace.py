"""Trace documents: event grammar, replay, hashing, tamper detection."""

import itertools
import json

import numpy as np
import pytest

from treecast.codes import (
    five_qubit_code,
    identity_code,
    random_code,
    star4_code,
)
from treecast.errors import InputError, SchemaError, ShapeMismatch
from treecast.network import line_tree, star_tree
from treecast.protocols import run_concentrating, run_spreading
from treecast.tensors import overlap, permute_registers
from treecast.trace import (
    concentrate_trace,
    load_trace,
    replay_trace,
    save_trace,
    spread_trace,
    state_hash,
    trace_json,
    verify_trace,
)


@pytest.fixture(scope="module")
def five_line():
    return five_qubit_code(), line_tree(5)


@pytest.fixture(scope="module")
def five_spread(five_line):
    code, tree = five_line
    return run_spreading(code, tree)


@pytest.fixture(scope="module")
def five_concentrate(five_line):
    code, tree = five_line
    return run_concentrating(code, tree)


def events_of(doc, kind):
    return [e for e in doc["events"] if e["type"] == kind]


class TestSpreadTrace:
    def test_verifies_and_is_consistent(self, five_line, five_spread):
        code, tree = five_line
        doc = spread_trace(code, tree, five_spread, code_name="fq")
        verdict = verify_trace(doc)
        assert verdict["passed"]
        assert verdict["hash_match"]
        assert verdict["cost_consistent"]
        assert verdict["max_probability_deviation"] == 0.0

    def test_event_grammar(self, five_line, five_spread):
        code, tree = five_line
        doc = spread_trace(code, tree, five_spread)
        events = doc["events"]
        assert events[0]["type"] == "local-isometry"
        assert events[0]["party"] == "v1"
        ks = [e["k"] for e in events_of(doc, "resource-consumed")]
        assert ks == [4, 8, 4, 2]
        probs = [e["probability"] for e in events_of(doc, "measurement")]
        assert probs == pytest.approx([1 / 16, 1 / 64, 1 / 16, 1 / 4])
        # each teleport block: resource, compress, measure, broadcast,
        # correction, decompress
        kinds = [e["type"] for e in events]
        assert len(kinds) == 1 + 4 * 6
        block = kinds[1:7]
        assert block == [
            "resource-consumed",
            "local-isometry",
            "measurement",
            "broadcast",
            "local-isometry",
            "local-isometry",
        ]

    def test_resource_events_reproduce_cost_report(self, five_line, five_spread):
        code, tree = five_line
        doc = spread_trace(code, tree, five_spread)
        consumed = sorted(
            (e["edge"][0], e["edge"][1], e["k"])
            for e in events_of(doc, "resource-consumed")
        )
        recorded = sorted(
            (e["parent"], e["child"], e["k"]) for e in doc["cost_report"]["edges"]
        )
        assert consumed == recorded
        total = sum(np.log2(k) for _, _, k in consumed)
        assert total == pytest.approx(doc["cost_report"]["total_log2"])

    def test_star4_block_structure(self):
        code, tree = star4_code(), star_tree(4)
        result = run_spreading(code, tree)
        doc = spread_trace(code, tree, result, code_name="star4")
        assert verify_trace(doc)["passed"]
        assert len(events_of(doc, "measurement")) == 3
        # one encoder isometry plus three blocks of three isometries
        assert len(events_of(doc, "local-isometry")) == 1 + 3 * 3

    def test_trivial_blocks_relabel_without_measuring(self):
        code, tree = identity_code(2, 3), line_tree(3)
        result = run_spreading(code, tree)
        doc = spread_trace(code, tree, result)
        assert verify_trace(doc)["passed"]
        assert events_of(doc, "measurement") == []
        assert [e["k"] for e in events_of(doc, "resource-consumed")] == [1, 1]

    def test_any_outcome_path_lands_on_the_same_state(self, five_line, five_spread):
        code, tree = five_line
        base = spread_trace(code, tree, five_spread)
        other = spread_trace(code, tree, five_spread, outcomes=(3, 17, 9, 2))
        assert verify_trace(other)["passed"]
        a = replay_trace(base)["final_state"]
        b = replay_trace(other)["final_state"]
        assert abs(overlap(a.normalized(), b.normalized())) == pytest.approx(1.0)

    def test_bad_outcomes_rejected(self, five_line, five_spread):
        code, tree = five_line
        with pytest.raises(ShapeMismatch):
            spread_trace(code, tree, five_spread, outcomes=(0, 0))
        with pytest.raises(ShapeMismatch):
            spread_trace(code, tree, five_spread, outcomes=(99, 0, 0, 0))


class TestConcentrateTrace:
    def test_verifies_with_exact_probabilities(self, five_line, five_concentrate):
        code, tree = five_line
        doc = concentrate_trace(code, tree, five_concentrate, code_name="fq")
        verdict = verify_trace(doc)
        assert verdict["passed"]
        probs = [e["probability"] for e in events_of(doc, "measurement")]
        assert probs == pytest.approx([0.5] * 4)
        assert doc["events"][-1]["type"] == "root-correction"

    def test_root_correction_is_the_sign_flip(self, five_line, five_concentrate):
        code, tree = five_line
        doc = concentrate_trace(code, tree, five_concentrate)
        ref = doc["events"][-1]["matrix"]
        item = doc["operators"][ref]
        mat = np.array([complex(a, b) for a, b in item["data"]]).reshape(
            item["shape"]
        )
        assert mat.shape == (2, 2)
        assert np.allclose(np.abs(mat), np.eye(2), atol=1e-9)
        assert mat[1, 1] / mat[0, 0] == pytest.approx(-1.0)

    def test_every_branch_builds_a_passing_trace(self, five_line, five_concentrate):
        code, tree = five_line
        for outcomes in itertools.product(range(2), repeat=4):
            doc = concentrate_trace(code, tree, five_concentrate, outcomes=outcomes)
            assert verify_trace(doc)["passed"], outcomes

    def test_star4_resource_events(self):
        code, tree = star4_code(), star_tree(4)
        result = run_concentrating(code, tree)
        doc = concentrate_trace(code, tree, result)
        assert verify_trace(doc)["passed"]
        resources = events_of(doc, "resource-consumed")
        assert sorted(e["k"] for e in resources) == [1, 1, 2]
        for e in resources:
            assert ("a0" in e) == (e["k"] > 1)

    def test_fallback_mode_traces(self, five_line):
        code, tree = five_line
        result = run_concentrating(code, tree, mode="fallback", branch_budget=8)
        doc = concentrate_trace(code, tree, result, code_name="fq")
        assert verify_trace(doc)["passed"]
        ks = [e["k"] for e in events_of(doc, "resource-consumed")]
        assert ks == [2, 4, 8, 4]  # descending stages v5, v4, v3, v2

    def test_unrecorded_branch_rejected(self, five_line):
        code, tree = five_line
        result = run_concentrating(code, tree, branch_budget=2)
        # a prefix never explored at stage 3 cannot be traced
        missing_prefix = next(
            p
            for p in itertools.product(range(2), repeat=2)
            if p not in result.steps[3]
        )
        with pytest.raises(InputError):
            concentrate_trace(
                code, tree, result, outcomes=missing_prefix + (0, 0)
            )

    def test_random_code_trace(self):
        rng = np.random.default_rng(5)
        code, tree = random_code(rng, 2, (2, 2, 2)), line_tree(3)
        result = run_concentrating(code, tree)
        doc = concentrate_trace(code, tree, result, code_name="random")
        assert verify_trace(doc)["passed"]

    def test_single_vertex(self):
        code, tree = identity_code(2, 1), line_tree(1)
        doc = concentrate_trace(code, tree, run_concentrating(code, tree))
        assert verify_trace(doc)["passed"]
        assert [e["type"] for e in doc["events"]] == ["root-correction"]
        sdoc = spread_trace(code, tree, run_spreading(code, tree))
        assert verify_trace(sdoc)["passed"]
        assert [e["type"] for e in sdoc["events"]] == ["local-isometry"]


class TestTamperDetection:
    def tampered(self, doc, mutate):
        copy = json.loads(trace_json(doc))
        mutate(copy)
        return copy

    def test_outcome_flip_breaks_the_hash(self, five_line, five_concentrate):
        code, tree = five_line
        doc = concentrate_trace(code, tree, five_concentrate)

        def flip(d):
            ev = next(e for e in d["events"] if e["type"] == "measurement")
            ev["outcome"] = 1 - ev["outcome"]

        verdict = verify_trace(self.tampered(doc, flip))
        assert not verdict["passed"]
        assert not verdict["hash_match"]

    def test_probability_tamper_is_caught(self, five_line, five_concentrate):
        code, tree = five_line
        doc = concentrate_trace(code, tree, five_concentrate)

        def bump(d):
            ev = next(e for e in d["events"] if e["type"] == "measurement")
            ev["probability"] = 0.75

        verdict = verify_trace(self.tampered(doc, bump))
        assert not verdict["passed"]
        assert verdict["hash_match"]  # state replay unaffected
        assert verdict["max_probability_deviation"] == pytest.approx(0.25)

    def test_cost_tamper_is_caught(self, five_line, five_spread):
        code, tree = five_line
        doc = spread_trace(code, tree, five_spread)

        def bump(d):
            d["cost_report"]["edges"][0]["k"] = 16

        verdict = verify_trace(self.tampered(doc, bump))
        assert not verdict["passed"]
        assert not verdict["cost_consistent"]

    def test_operator_tamper_breaks_the_hash(self, five_line, five_spread):
        code, tree = five_line
        doc = spread_trace(code, tree, five_spread)

        def corrupt(d):
            ref = d["events"][0]["matrix"]
            d["operators"][ref]["data"][0] = [0.7, 0.1]

        verdict = verify_trace(self.tampered(doc, corrupt))
        assert not verdict["hash_match"]


class TestSerializationAndHash:
    def test_hash_ignores_register_order(self, five_line, five_spread):
        code, tree = five_line
        doc = spread_trace(code, tree, five_spread)
        state = replay_trace(doc)["final_state"]
        shuffled = permute_registers(state, sorted(state.ids, reverse=True))
        assert state_hash(state) == state_hash(shuffled)

    def test_rebuilds_are_byte_identical(self, five_line):
        code, tree = five_line
        a = trace_json(
            concentrate_trace(code, tree, run_concentrating(code, tree), seed=3)
        )
        b = trace_json(
            concentrate_trace(code, tree, run_concentrating(code, tree), seed=3)
        )
        assert a == b
        sa = trace_json(spread_trace(code, tree, run_spreading(code, tree), seed=3))
        sb = trace_json(spread_trace(code, tree, run_spreading(code, tree), seed=3))
        assert sa == sb

    def test_save_load_round_trip(self, tmp_path, five_line, five_concentrate):
        code, tree = five_line
        doc = concentrate_trace(code, tree, five_concentrate)
        path = tmp_path / "trace.json"
        save_trace(doc, str(path))
        loaded = load_trace(str(path))
        assert trace_json(loaded) == trace_json(doc)
        assert verify_trace(loaded)["passed"]

    def test_malformed_documents_rejected(self, tmp_path):
        with pytest.raises(SchemaError):
            verify_trace({"format": "nope"})
        p = tmp_path / "bad.json"
        p.write_text("{]")
        with pytest.raises(SchemaError):
            load_trace(str(p))
        p2 = tmp_path / "empty.json"
        p2.write_text("{}")
        with pytest.raises(SchemaError):
            load_trace(str(p2))
