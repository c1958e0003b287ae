"""Tree-level driver tests: spreading and concentrating end to end."""

import numpy as np
import pytest

from treecast.codes import (
    encoded_pair,
    five_qubit_code,
    ghz_code,
    identity_code,
    product_code,
    random_code,
    star4_code,
)
from treecast.errors import (
    InsufficientResource,
    NotAscending,
    TooLarge,
    UnknownEdge,
)
from treecast.merge_split import merge_post_state
from treecast.network import line_tree, star_tree
from treecast.protocols import (
    compare_costs,
    concentrating_cost,
    optimize_labeling,
    run_concentrating,
    run_spreading,
    spreading_cost,
    spreading_tightness,
)
from treecast.tensors import PureState, Register, overlap

EXACT = 1.0 - 1e-9

S2 = 1 / np.sqrt(2.0)


def state_on(names, table):
    """State on (R, qubits *names) with amplitudes {bitstring: coeff}.

    The first bit indexes R, the rest the named registers in order; each
    named register is owned by the party of the same name.
    """
    regs = (Register("R", 2, "reference", role="reference"),) + tuple(
        Register(n, 2, n) for n in names
    )
    amps = np.zeros(2 ** len(regs), dtype=complex)
    for bits, coeff in table.items():
        amps[int(bits, 2)] = coeff
    return PureState(regs, amps)


# The intermediate states of the five-qubit all-|0> concentrating branch.
PHI4 = state_on(
    ("v1", "v2", "v3", "v4"),
    {
        "00000": 0.25, "01100": 0.25, "00110": 0.25, "00011": 0.25,
        "01010": -0.25, "00101": -0.25, "01001": -0.25, "01111": -0.25,
        "11110": 0.25, "10111": 0.25,
        "11101": -0.25, "11011": -0.25, "11000": -0.25, "10100": -0.25,
        "10010": -0.25, "10001": -0.25,
    },
)
PHI3 = state_on(
    ("v1", "v2", "v3"),
    {
        "0000": 0.5 * S2, "0110": 0.5 * S2, "0011": 0.5 * S2, "0101": -0.5 * S2,
        "1111": 0.5 * S2, "1100": -0.5 * S2, "1010": -0.5 * S2, "1001": -0.5 * S2,
    },
)
PHI2 = state_on(
    ("v1", "v2"),
    {"000": 0.5, "011": 0.5, "101": -0.5, "110": -0.5},
)
PHI1 = state_on(("v1",), {"00": S2, "11": -S2})


def matches(state, expected):
    """|<expected|state>| for normalized states: 1 iff equal up to phase."""
    return abs(overlap(state.normalized(), expected.normalized()))


def all_zero_chain(result, code):
    """(stage, outcome probability, post state) along the all-|0> branch."""
    state = encoded_pair(code).normalized()
    n = len(result.labeling)
    chain = []
    for k in range(n, 1, -1):
        rec = result.steps[k][(0,) * (n - k)]
        p, post = merge_post_state(rec.protocol, state, 0)
        state = post.normalized()
        chain.append((k, p, state))
    return chain


@pytest.fixture(scope="module")
def five_line():
    return five_qubit_code(), line_tree(5)


@pytest.fixture(scope="module")
def five_spread(five_line):
    return run_spreading(*five_line)


@pytest.fixture(scope="module")
def five_concentrate(five_line):
    return run_concentrating(*five_line)


class TestSpreading:
    def test_five_qubit_line_costs(self, five_spread):
        assert five_spread.cost_report.by_child() == {"v2": 4, "v3": 8, "v4": 4, "v5": 2}
        assert five_spread.cost_report.total_log2 == 8.0
        assert [e.log2 for e in five_spread.cost_report.edges] == [2.0, 3.0, 2.0, 1.0]
        assert five_spread.fidelity >= EXACT
        assert five_spread.branch_deviation <= 1e-9
        assert five_spread.passed

    def test_cost_report_matches_rank_scan(self, five_line, five_spread):
        assert spreading_cost(*five_line).by_child() == five_spread.cost_report.by_child()

    def test_star4_costs_any_labeling(self):
        code, tree = star4_code(), star_tree(4)
        for labeling in [None, ("v1", "v3", "v2", "v4"), ("v1", "v4", "v3", "v2")]:
            res = run_spreading(code, tree, labeling)
            assert res.cost_report.by_child() == {"v2": 2, "v3": 2, "v4": 2}
            assert res.fidelity >= EXACT

    def test_product_code_spreads_free(self):
        res = run_spreading(product_code((2, 2, 2)), line_tree(3))
        assert res.cost_report.by_child() == {"v2": 1, "v3": 1}
        assert res.cost_report.total_log2 == 0.0
        assert res.fidelity >= EXACT

    def test_ghz_line(self):
        res = run_spreading(ghz_code(3), line_tree(3))
        assert res.cost_report.by_child() == {"v2": 2, "v3": 2}
        assert res.fidelity >= EXACT

    def test_override_below_rank_raises(self, five_line):
        with pytest.raises(InsufficientResource):
            run_spreading(*five_line, k_overrides={"v5": 1})

    def test_override_above_rank_works(self, five_line):
        res = run_spreading(*five_line, k_overrides={"v5": 3})
        assert res.cost_report.cost_of("v5") == 3
        assert res.fidelity >= EXACT

    def test_tightness_report(self, five_line):
        report = spreading_tightness(*five_line)
        assert {c: r["rank"] for c, r in report.items()} == {
            "v2": 4, "v3": 8, "v4": 4, "v5": 2,
        }
        for entry in report.values():
            assert entry["consumed"] == entry["rank"]
            assert entry["below_rank_rejected"] is True

    def test_party_mismatch(self):
        with pytest.raises(UnknownEdge):
            run_spreading(five_qubit_code(), line_tree(4))

    def test_bad_labeling(self, five_line):
        code, tree = five_line
        with pytest.raises(NotAscending):
            run_spreading(code, tree, ("v2", "v1", "v3", "v4", "v5"))


class TestConcentratingFiveQubit:
    def test_costs(self, five_concentrate):
        res = five_concentrate
        assert res.cost_report.by_child() == {"v2": 1, "v3": 1, "v4": 1, "v5": 1}
        assert res.cost_report.total_log2 == 0.0
        assert res.cost_report.direction == "concentrate"

    def test_branches_exhaustive_and_exact(self, five_concentrate):
        res = five_concentrate
        assert len(res.branches) == 16
        assert res.explored_all
        assert abs(res.coverage - 1.0) <= 1e-9
        assert res.min_fidelity >= EXACT
        assert res.passed
        assert res.fallback_edges == ()
        for br in res.branches:
            assert abs(br.probability - 1 / 16) <= 1e-9

    def test_all_zero_branch_reproduces_displayed_states(
        self, five_line, five_concentrate
    ):
        code, _ = five_line
        chain = all_zero_chain(five_concentrate, code)
        expected = {5: PHI4, 4: PHI3, 3: PHI2, 2: PHI1}
        for stage, prob, state in chain:
            assert abs(prob - 0.5) <= 1e-9
            assert matches(state, expected[stage]) >= EXACT

    def test_each_step_measures_a_single_qubit_basis(self, five_concentrate):
        for records in five_concentrate.steps.values():
            for rec in records.values():
                proto = rec.protocol
                assert proto.k == 1
                assert rec.kmin == 1
                assert proto.measurement.shape == (2, 2)
                assert np.allclose(np.abs(proto.measurement), np.eye(2), atol=1e-9)


class TestConcentratingStar4:
    def test_default_labeling(self):
        res = run_concentrating(star4_code(), star_tree(4))
        assert res.cost_report.by_child() == {"v2": 2, "v3": 1, "v4": 1}
        assert [e.log2 for e in res.cost_report.edges] == [1.0, 0.0, 0.0]
        assert res.min_fidelity >= EXACT
        assert res.explored_all and abs(res.coverage - 1.0) <= 1e-9

    def test_swapped_labeling_moves_the_cost(self):
        res = run_concentrating(star4_code(), star_tree(4), ("v1", "v3", "v2", "v4"))
        assert res.cost_report.by_child() == {"v2": 1, "v3": 2, "v4": 1}
        assert [e.log2 for e in res.cost_report.edges] == [0.0, 1.0, 0.0]
        assert res.min_fidelity >= EXACT


class TestConcentratingMore:
    def test_ghz_concentrates_free(self):
        res = run_concentrating(ghz_code(3), line_tree(3))
        assert res.cost_report.by_child() == {"v2": 1, "v3": 1}
        assert res.min_fidelity >= EXACT
        assert res.explored_all

    def test_product_code_free(self):
        res = run_concentrating(product_code((2, 2)), line_tree(2))
        assert res.cost_report.by_child() == {"v2": 1}
        assert res.min_fidelity >= EXACT

    def test_branch_budget_sampling(self, five_line):
        res = run_concentrating(*five_line, branch_budget=5, seed=3)
        assert not res.explored_all
        assert len(res.branches) == 5
        assert any(br.outcomes == (0, 0, 0, 0) for br in res.branches)
        assert res.coverage < 1.0
        assert res.min_fidelity >= EXACT
        assert res.cost_report.by_child() == {"v2": 1, "v3": 1, "v4": 1, "v5": 1}

    def test_fallback_mode_costs_match_spreading(self, five_line, five_spread):
        res = run_concentrating(*five_line, mode="fallback", branch_budget=3, seed=1)
        assert res.cost_report.by_child() == five_spread.cost_report.by_child()
        assert res.fallback_edges == ("v2", "v3", "v4", "v5")
        assert res.min_fidelity >= EXACT
        assert res.mode == "fallback"

    def test_cost_only_entry_point(self, five_line, five_concentrate):
        report = concentrating_cost(*five_line)
        assert report.by_child() == five_concentrate.cost_report.by_child()
        assert report.direction == "concentrate"

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_random_codes_are_exact(self, seed):
        rng = np.random.default_rng(seed)
        for tree in (line_tree(3), star_tree(3)):
            code = random_code(rng, 2, (2, 2, 2))
            res = run_concentrating(code, tree)
            assert res.min_fidelity >= EXACT
            assert abs(res.coverage - 1.0) <= 1e-9
            spread = spreading_cost(code, tree).by_child()
            for edge in res.cost_report.edges:
                assert edge.k <= spread[edge.child]

    def test_single_vertex_tree(self):
        code, tree = identity_code(2, 1), line_tree(1)
        sp = run_spreading(code, tree)
        assert sp.cost_report.edges == ()
        assert sp.fidelity >= EXACT
        con = run_concentrating(code, tree)
        assert con.cost_report.edges == ()
        assert len(con.branches) == 1
        assert con.branches[0].outcomes == ()
        assert con.min_fidelity >= EXACT


class TestComparisonsAndSearch:
    def test_compare_costs_random(self):
        rng = np.random.default_rng(11)
        for tree in (line_tree(3), line_tree(4)):
            code = random_code(rng, 2, (2,) * tree.size)
            cmp = compare_costs(code, tree)
            assert cmp.concentrate_never_exceeds
            assert cmp.spread.direction == "spread"
            assert cmp.concentrate.direction == "concentrate"

    def test_compare_costs_five_qubit(self, five_line):
        cmp = compare_costs(*five_line)
        assert cmp.spread.total_log2 == 8.0
        assert cmp.concentrate.total_log2 == 0.0
        assert cmp.concentrate_never_exceeds

    def test_optimize_labeling_star4(self):
        best, report, totals = optimize_labeling(star4_code(), star_tree(4))
        assert best == ("v1", "v2", "v3", "v4")
        assert report.total_log2 == 1.0
        assert len(totals) == 6
        assert all(abs(t - 1.0) <= 1e-12 for t in totals.values())

    def test_optimize_labeling_line_is_unique(self):
        best, report, totals = optimize_labeling(ghz_code(3), line_tree(3))
        assert best == ("v1", "v2", "v3")
        assert list(totals) == [("v1", "v2", "v3")]
        assert report.total_log2 == 0.0

    def test_optimize_labeling_too_large(self):
        with pytest.raises(TooLarge):
            optimize_labeling(ghz_code(9), star_tree(9), limit=100)
