"""treecast: entanglement costs and exact protocols on tree networks.

Compute the per-edge entanglement cost of spreading (encoding) and
concentrating (decoding) quantum information for an arbitrary isometry
code over a tree of parties, synthesize the exact one-shot LOCC
protocols that achieve those costs, and verify them by exhaustive
branch simulation and random-input channel replay.
"""

from .codes import (
    REFERENCE_ID,
    IsometryCode,
    code_from_json,
    code_to_document,
    encoded_pair,
    five_qubit_code,
    ghz_code,
    identity_code,
    load_code,
    load_code_named,
    parse_code_spec,
    product_code,
    random_code,
    reference_pair,
    star4_code,
)
from .errors import (
    InputError,
    InsufficientResource,
    NotIsometry,
    SchemaError,
    SynthesisFailed,
    TreecastError,
    VerificationFailed,
)
from .koashi_imoto import (
    KiBlock,
    KiDecomposition,
    ki_decompose,
    merge_cost_K,
    spread_rank_bound,
)
from .merge_split import (
    MergeBranch,
    MergeProtocol,
    MergeReport,
    SplitBranch,
    SplitProtocol,
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
from .network import (
    RootedTree,
    line_tree,
    load_tree,
    parse_tree,
    star_tree,
    tree_from_json,
    tree_to_document,
)
from .protocols import (
    ConcentrateResult,
    CostComparison,
    CostReport,
    EdgeCost,
    SpreadResult,
    compare_costs,
    concentrating_cost,
    optimize_labeling,
    run_concentrating,
    run_spreading,
    spreading_cost,
    spreading_lower_bound_check,
    spreading_tightness,
)
from .tensors import LinearMap, PureState, Register
from .trace import (
    concentrate_trace,
    load_trace,
    replay_trace,
    save_trace,
    spread_trace,
    state_hash,
    trace_json,
    verify_trace,
)
from .verification import (
    ChannelCheck,
    trace_distance,
    verify_channels,
    verify_concentrating_channel,
    verify_spreading_channel,
)

__version__ = "0.1.0"

__all__ = [
    "REFERENCE_ID",
    "ChannelCheck",
    "ConcentrateResult",
    "CostComparison",
    "CostReport",
    "EdgeCost",
    "InputError",
    "InsufficientResource",
    "IsometryCode",
    "KiBlock",
    "KiDecomposition",
    "LinearMap",
    "MergeBranch",
    "MergeProtocol",
    "MergeReport",
    "NotIsometry",
    "PureState",
    "Register",
    "RootedTree",
    "SchemaError",
    "SplitBranch",
    "SplitProtocol",
    "SpreadResult",
    "SynthesisFailed",
    "TreecastError",
    "VerificationFailed",
    "apply_merge_correction",
    "build_merge_protocol",
    "build_split_protocol",
    "code_from_json",
    "code_to_document",
    "compare_costs",
    "concentrate_trace",
    "concentrating_cost",
    "encoded_pair",
    "execute_merge",
    "execute_split",
    "five_qubit_code",
    "ghz_code",
    "identity_code",
    "ki_decompose",
    "line_tree",
    "load_code",
    "load_code_named",
    "load_trace",
    "load_tree",
    "merge_cost",
    "merge_cost_K",
    "merge_post_state",
    "optimize_labeling",
    "parse_code_spec",
    "parse_tree",
    "product_code",
    "random_code",
    "reference_pair",
    "replay_trace",
    "run_concentrating",
    "run_spreading",
    "save_trace",
    "split_cost",
    "spread_rank_bound",
    "spread_trace",
    "spreading_cost",
    "spreading_lower_bound_check",
    "spreading_tightness",
    "star4_code",
    "star_tree",
    "state_hash",
    "trace_distance",
    "trace_json",
    "tree_from_json",
    "tree_to_document",
    "verify_channels",
    "verify_concentrating_channel",
    "verify_merge",
    "verify_spreading_channel",
    "verify_trace",
]
