"""Command-line interface.

Subcommands: ``cost-spread``, ``cost-concentrate``, ``run-spread``,
``run-concentrate``, ``compare``, ``ki``, ``verify-trace``.

Structured output is a single self-describing JSON document per run,
dumped with sorted keys and no whitespace so identical inputs and seed
produce byte-identical bytes; the human format is rendered from that
same document.  Exit codes: 0 success, 2 input/validation error,
3 protocol synthesis failure, 4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .codes import REFERENCE_ID, code_to_document, encoded_pair, load_code_named
from .config import RANK_RTOL
from .errors import InputError, SynthesisFailed, VerificationFailed
from .koashi_imoto import ki_decompose, merge_cost_K
from .merge_split import merge_post_state
from .network import load_tree, tree_to_document
from .protocols import (
    compare_costs,
    concentrating_cost,
    optimize_labeling,
    run_concentrating,
    run_spreading,
    spreading_cost,
    spreading_lower_bound_check,
)
from .tensors import PureState, Register
from .trace import (
    concentrate_trace,
    load_trace,
    save_trace,
    spread_trace,
    verify_trace,
)
from .verification import (
    DEFAULT_CHANNEL_TOL,
    verify_concentrating_channel,
    verify_spreading_channel,
)

REPORT_FORMAT = "treecast.report/1"
ERROR_FORMAT = "treecast.error/1"
CHANNEL_SAMPLES = 20


# -- argument parsing -----------------------------------------------------------


def _add_common(p, *, needs_inputs=True, inputs_required=True, run=False, concentrating=False):
    if needs_inputs:
        p.add_argument("--code", required=inputs_required, help="builtin name or JSON file")
        p.add_argument("--tree", required=inputs_required, help="line:N, star:N, edge list, or JSON file")
        p.add_argument(
            "--labeling",
            choices=("given", "auto", "search"),
            default="auto",
            help="use the file's labeling, derive one, or search all of them",
        )
    if concentrating:
        p.add_argument("--mode", choices=("tight", "fallback"), default="tight")
        p.add_argument(
            "--branches",
            default="all",
            help="'all' for exhaustive outcome branches, or sample:N",
        )
    p.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    p.add_argument("--tol-rank", type=float, default=RANK_RTOL, dest="tol_rank")
    p.add_argument(
        "--tol-verify", type=float, default=DEFAULT_CHANNEL_TOL, dest="tol_verify"
    )
    p.add_argument("--format", choices=("human", "structured"), default="human")
    if run:
        p.add_argument("--trace-out", dest="trace_out", help="write the protocol trace here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treecast",
        description=(
            "Entanglement costs and exact LOCC protocols for spreading and "
            "concentrating quantum information over tree networks."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cost-spread", help="per-edge spreading costs")
    _add_common(p)

    p = sub.add_parser("cost-concentrate", help="per-edge concentrating costs")
    _add_common(p, concentrating=True)

    p = sub.add_parser("run-spread", help="execute and verify a spreading protocol")
    _add_common(p, run=True)

    p = sub.add_parser(
        "run-concentrate", help="execute and verify a concentrating protocol"
    )
    _add_common(p, run=True, concentrating=True)

    p = sub.add_parser("compare", help="spreading vs concentrating costs")
    _add_common(p, concentrating=True)

    p = sub.add_parser("ki", help="decompose a mid-protocol state")
    _add_common(p, inputs_required=False, concentrating=True)
    p.add_argument(
        "--prefix",
        default="",
        help="comma-separated outcomes already measured (default: none)",
    )
    p.add_argument(
        "--state",
        help="JSON state file {registers, amplitudes, roles} instead of --code/--tree",
    )

    p = sub.add_parser("verify-trace", help="replay a stored trace and check it")
    p.add_argument("trace", help="trace JSON file written by run-*")
    _add_common(p, needs_inputs=False)
    return parser


# -- shared plumbing --------------------------------------------------------------


def _check_seed(seed: int) -> int:
    if not 0 <= seed < 2**64:
        raise InputError(f"seed must fit in 64 bits, got {seed}")
    return int(seed)


def _parse_branches(text: str) -> int | None:
    if text == "all":
        return None
    if text.startswith("sample:"):
        try:
            n = int(text.split(":", 1)[1])
        except ValueError:
            raise InputError(f"bad branch policy {text!r}")
        if n < 1:
            raise InputError("branch sample count must be at least 1")
        return n
    raise InputError(f"branch policy must be 'all' or 'sample:N', got {text!r}")


def _inputs(args):
    """Load code and tree; resolve the labeling policy.

    Returns (code, code_name, tree, labeling) where labeling is None
    when the policy is 'search' (resolved later, per command).
    """
    code, name = load_code_named(args.code)
    tree, doc_labeling = load_tree(args.tree)
    if args.labeling == "given":
        if doc_labeling is None:
            raise InputError(
                "--labeling given requires a 'labeling' field in the tree document"
            )
        labeling = tree.check_ascending(doc_labeling)
    elif args.labeling == "auto":
        labeling = (
            tree.check_ascending(doc_labeling)
            if doc_labeling is not None
            else tree.default_labeling()
        )
    else:
        labeling = None
    return code, name, tree, labeling


def _resolve_search(args, code, tree, labeling):
    """For --labeling search on concentrating tasks: pick the best order."""
    if labeling is not None:
        return labeling, None
    budget = _parse_branches(args.branches)
    best, _report, totals = optimize_labeling(
        code,
        tree,
        mode=args.mode,
        branch_budget=budget,
        seed=_check_seed(args.seed),
    )
    search_doc = {
        "candidates": len(totals),
        "best_total_log2": _num(min(totals.values())),
    }
    return best, search_doc


def _num(x):
    """Render integral floats as JSON integers (costs are log2 of ints)."""
    f = float(x)
    return int(f) if f.is_integer() else f


def _config_doc(args) -> dict:
    keys = (
        "code",
        "tree",
        "labeling",
        "mode",
        "branches",
        "seed",
        "tol_rank",
        "tol_verify",
        "format",
        "trace_out",
        "prefix",
        "state",
    )
    out = {}
    for k in keys:
        if hasattr(args, k):
            out[k] = getattr(args, k)
    return out


def _base_doc(task: str, args, code=None, name=None, tree=None, labeling=None) -> dict:
    doc = {"format": REPORT_FORMAT, "task": task, "config": _config_doc(args)}
    if code is not None:
        doc["code"] = code_to_document(code, name=name)
        doc["code_name"] = name
    if tree is not None:
        doc["tree"] = tree_to_document(tree)
    if labeling is not None:
        doc["labeling"] = list(labeling)
    return doc


def _report_doc(report) -> dict:
    return {
        "direction": report.direction,
        "edges": [
            {"parent": e.parent, "child": e.child, "k": e.k, "log2": _num(e.log2)}
            for e in report.edges
        ],
        "total_log2": _num(report.total_log2),
    }


def _channel_doc(check) -> dict:
    return {
        "direction": check.direction,
        "samples": check.samples,
        "paths_per_sample": check.paths_per_sample,
        "max_trace_distance": check.max_trace_distance,
        "max_probability_deviation": check.max_probability_deviation,
        "tol": check.tol,
        "passed": check.passed,
    }


def _trace_section(args, doc_trace, tol) -> dict:
    verdict = verify_trace(doc_trace, tol=tol)
    written = getattr(args, "trace_out", None)
    if written:
        save_trace(doc_trace, written)
    return {
        "written_to": written,
        "final_state_hash": doc_trace["final_state"]["hash"],
        "verify": verdict,
    }


# -- command handlers --------------------------------------------------------------


def _cmd_cost_spread(args):
    code, name, tree, labeling = _inputs(args)
    if labeling is None:  # search: spreading costs do not depend on the order
        labeling = tree.default_labeling()
    report = spreading_cost(code, tree, args.tol_rank)
    bound = spreading_lower_bound_check(code, tree, report, rank_rtol=args.tol_rank)
    doc = _base_doc("cost-spread", args, code, name, tree, labeling)
    doc["cost_report"] = _report_doc(report)
    doc["lower_bound"] = {
        "feasible": bound["feasible"],
        "tight": bound["tight"],
        "verdict": bound["verdict"],
        "edges": {
            child: {
                "rank": e["rank"],
                "consumed": e["consumed"],
                "slack_log2": _num(e["slack_log2"]),
            }
            for child, e in bound["edges"].items()
        },
    }
    return doc, 0


def _cmd_cost_concentrate(args):
    code, name, tree, labeling = _inputs(args)
    labeling, search_doc = _resolve_search(args, code, tree, labeling)
    budget = _parse_branches(args.branches)
    report = concentrating_cost(
        code,
        tree,
        labeling,
        mode=args.mode,
        branch_budget=budget,
        seed=_check_seed(args.seed),
        rank_rtol=args.tol_rank,
    )
    doc = _base_doc("cost-concentrate", args, code, name, tree, labeling)
    doc["cost_report"] = _report_doc(report)
    doc["mode"] = args.mode
    if search_doc:
        doc["labeling_search"] = search_doc
    return doc, 0


def _cmd_run_spread(args):
    code, name, tree, labeling = _inputs(args)
    if labeling is None:
        labeling = tree.default_labeling()
    seed = _check_seed(args.seed)
    result = run_spreading(code, tree, labeling, rank_rtol=args.tol_rank)
    channel = verify_spreading_channel(
        code,
        tree,
        result,
        samples=CHANNEL_SAMPLES,
        seed=seed,
        tol=args.tol_verify,
    )
    trace_doc = spread_trace(
        code,
        tree,
        result,
        code_name=name,
        seed=seed,
        tolerances={"rank_rtol": args.tol_rank, "verify_tol": args.tol_verify},
    )
    trace_sec = _trace_section(args, trace_doc, args.tol_verify)
    passed = result.passed and channel.passed and trace_sec["verify"]["passed"]
    doc = _base_doc("run-spread", args, code, name, tree, labeling)
    doc["cost_report"] = _report_doc(result.cost_report)
    doc["verification"] = {
        "branch_fidelity": result.fidelity,
        "branch_deviation": result.branch_deviation,
        "channel": _channel_doc(channel),
        "max_deviation": max(result.branch_deviation, channel.max_trace_distance),
        "passed": passed,
    }
    doc["trace"] = trace_sec
    return doc, 0 if passed else 4


def _cmd_run_concentrate(args):
    code, name, tree, labeling = _inputs(args)
    labeling, search_doc = _resolve_search(args, code, tree, labeling)
    seed = _check_seed(args.seed)
    budget = _parse_branches(args.branches)
    result = run_concentrating(
        code,
        tree,
        labeling,
        mode=args.mode,
        branch_budget=budget,
        seed=seed,
        rank_rtol=args.tol_rank,
    )
    channel = verify_concentrating_channel(
        code,
        tree,
        result,
        samples=CHANNEL_SAMPLES,
        seed=seed,
        tol=args.tol_verify,
    )
    trace_doc = concentrate_trace(
        code,
        tree,
        result,
        code_name=name,
        seed=seed,
        tolerances={"rank_rtol": args.tol_rank, "verify_tol": args.tol_verify},
    )
    trace_sec = _trace_section(args, trace_doc, args.tol_verify)
    passed = result.passed and channel.passed and trace_sec["verify"]["passed"]
    doc = _base_doc("run-concentrate", args, code, name, tree, labeling)
    doc["cost_report"] = _report_doc(result.cost_report)
    doc["mode"] = result.mode
    doc["branches"] = {
        "count": len(result.branches),
        "coverage": result.coverage,
        "explored_all": result.explored_all,
        "min_fidelity": result.min_fidelity,
        "fallback_edges": list(result.fallback_edges),
    }
    doc["verification"] = {
        "channel": _channel_doc(channel),
        "max_deviation": channel.max_trace_distance,
        "passed": passed,
    }
    doc["trace"] = trace_sec
    if search_doc:
        doc["labeling_search"] = search_doc
    return doc, 0 if passed else 4


def _cmd_compare(args):
    code, name, tree, labeling = _inputs(args)
    labeling, search_doc = _resolve_search(args, code, tree, labeling)
    budget = _parse_branches(args.branches)
    comparison = compare_costs(
        code,
        tree,
        labeling,
        mode=args.mode,
        branch_budget=budget,
        seed=_check_seed(args.seed),
    )
    sp = comparison.spread.by_child()
    doc = _base_doc("compare", args, code, name, tree, comparison.labeling)
    doc["spread"] = _report_doc(comparison.spread)
    doc["concentrate"] = _report_doc(comparison.concentrate)
    doc["edges"] = [
        {
            "parent": e.parent,
            "child": e.child,
            "spread_k": sp[e.child],
            "concentrate_k": e.k,
            "concentrate_leq_spread": e.k <= sp[e.child],
        }
        for e in comparison.concentrate.edges
    ]
    doc["concentrate_never_exceeds"] = comparison.concentrate_never_exceeds
    if search_doc:
        doc["labeling_search"] = search_doc
    return doc, 0


def _load_state_file(path: str):
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read state file {path!r}: {exc}")
    except json.JSONDecodeError as exc:
        raise InputError(f"bad JSON in state file {path!r}: {exc}")
    if not isinstance(payload, dict):
        raise InputError("state file must hold a JSON object")
    missing = {"registers", "amplitudes", "roles"} - set(payload)
    if missing:
        raise InputError(f"state file is missing fields {sorted(missing)}")
    regs = tuple(
        Register(s["id"], int(s["dim"]), s.get("owner", s["id"]))
        for s in payload["registers"]
    )
    amps = np.array(
        [complex(x[0], x[1]) if isinstance(x, list) else complex(x) for x in payload["amplitudes"]],
        dtype=complex,
    )
    psi = PureState(regs, amps).normalized()
    roles = payload["roles"]
    try:
        triple = (tuple(roles["R"]), tuple(roles["A"]), tuple(roles["B"]))
    except (TypeError, KeyError):
        raise InputError("state 'roles' must map R, A, and B to register id lists")
    return psi, triple, roles["A"]


def _cmd_ki(args):
    seed = _check_seed(args.seed)
    rng = np.random.default_rng(seed)
    if args.state:
        psi, triple, a_label = _load_state_file(args.state)
        doc = _base_doc("ki", args)
        doc["A"] = list(a_label)
    elif args.code is None or args.tree is None:
        raise InputError("ki needs either --state or both --code and --tree")
    else:
        code, name, tree, labeling = _inputs(args)
        labeling, _ = _resolve_search(args, code, tree, labeling)
        budget = _parse_branches(args.branches)
        prefix = tuple(
            int(x) for x in args.prefix.split(",") if x.strip() != ""
        )
        n = len(labeling)
        if len(prefix) > n - 2:
            raise InputError(
                f"prefix of length {len(prefix)} leaves no merge to analyze "
                f"({n} parties)"
            )
        result = run_concentrating(
            code,
            tree,
            labeling,
            mode=args.mode,
            branch_budget=budget,
            seed=seed,
            rank_rtol=args.tol_rank,
            replay=False,
        )
        psi = encoded_pair(code)
        for j in range(n, n - len(prefix), -1):
            rec = result.steps[j].get(prefix[: n - j])
            if rec is None:
                raise InputError(
                    f"branch prefix {list(prefix)} was not explored; try --branches all"
                )
            _p, post = merge_post_state(rec.protocol, psi, prefix[n - j])
            psi = post.normalized()
        stage = n - len(prefix)
        vertex = result.steps[stage][prefix].vertex
        a_ids = tuple(r.id for r in psi.registers if r.owner == vertex)
        b_ids = tuple(
            r.id
            for r in psi.registers
            if r.id != REFERENCE_ID and r.owner != vertex
        )
        triple = ((REFERENCE_ID,), a_ids, b_ids)
        doc = _base_doc("ki", args, code, name, tree, labeling)
        doc["A"] = vertex
        doc["prefix"] = list(prefix)
        doc["stage"] = stage
    dec = ki_decompose(psi, triple, rank_rtol=args.tol_rank, rng=rng)
    doc["blocks"] = [
        {
            "j": blk.j,
            "p": blk.p,
            "dimL_A": blk.dimL_A,
            "dimR_A": blk.dimR_A,
            "dimL_B": blk.dimL_B,
            "dimR_B": blk.dimR_B,
            "lambda0": blk.lambda0,
        }
        for blk in dec.blocks
    ]
    k = merge_cost_K(dec)
    doc["K"] = k
    doc["log2_K"] = _num(np.log2(k))
    return doc, 0


def _cmd_verify_trace(args):
    trace_doc = load_trace(args.trace)
    verdict = verify_trace(trace_doc, tol=args.tol_verify)
    doc = {
        "format": REPORT_FORMAT,
        "task": "verify-trace",
        "config": _config_doc(args) | {"trace": args.trace},
        "metadata": trace_doc["metadata"],
        "verdict": verdict,
    }
    return doc, 0 if verdict["passed"] else 4


_HANDLERS = {
    "cost-spread": _cmd_cost_spread,
    "cost-concentrate": _cmd_cost_concentrate,
    "run-spread": _cmd_run_spread,
    "run-concentrate": _cmd_run_concentrate,
    "compare": _cmd_compare,
    "ki": _cmd_ki,
    "verify-trace": _cmd_verify_trace,
}


# -- human rendering ---------------------------------------------------------------


def _fmt_edges(report: dict) -> list[str]:
    lines = ["  edge            M_e    log2"]
    for e in report["edges"]:
        lines.append(
            f"  {e['parent']} -> {e['child']:<10} {e['k']:<6} {e['log2']}"
        )
    lines.append(f"  total log2: {report['total_log2']}")
    return lines


def render_human(doc: dict) -> str:
    task = doc.get("task", "?")
    lines = [f"task: {task}"]
    if "code_name" in doc and doc["code_name"]:
        lines.append(f"code: {doc['code_name']}")
    if "labeling" in doc:
        lines.append("labeling: " + " ".join(doc["labeling"]))
    if "mode" in doc:
        lines.append(f"mode: {doc['mode']}")
    if task in ("cost-spread", "cost-concentrate", "run-spread", "run-concentrate"):
        lines.append("cost report:")
        lines.extend(_fmt_edges(doc["cost_report"]))
    if "lower_bound" in doc:
        lines.append(f"lower bound: {doc['lower_bound']['verdict']}")
    if "branches" in doc:
        b = doc["branches"]
        lines.append(
            f"branches: {b['count']} explored, coverage {b['coverage']:.6f}, "
            f"min fidelity {b['min_fidelity']:.12f}"
        )
        if b["fallback_edges"]:
            lines.append("fallback edges: " + " ".join(b["fallback_edges"]))
    if "verification" in doc:
        v = doc["verification"]
        lines.append(f"max deviation: {v['max_deviation']:.3e}")
        ch = v["channel"]
        lines.append(
            f"channel check: {ch['samples']} random inputs, "
            f"max trace distance {ch['max_trace_distance']:.3e}"
        )
        lines.append(f"verdict: {'PASS' if v['passed'] else 'FAIL'}")
    if "trace" in doc:
        t = doc["trace"]
        if t["written_to"]:
            lines.append(f"trace written: {t['written_to']}")
        lines.append(f"final state hash: {t['final_state_hash']}")
    if task == "compare":
        lines.append("spreading:")
        lines.extend(_fmt_edges(doc["spread"]))
        lines.append("concentrating:")
        lines.extend(_fmt_edges(doc["concentrate"]))
        lines.append(
            "concentrating never exceeds spreading: "
            + str(doc["concentrate_never_exceeds"]).lower()
        )
    if task == "ki":
        if "A" in doc:
            a = doc["A"]
            lines.append(f"A side: {' '.join(a) if isinstance(a, list) else a}")
        if "stage" in doc:
            lines.append(f"stage: {doc['stage']} (prefix {doc.get('prefix')})")
        lines.append("  j   p           dimL_A dimR_A dimL_B dimR_B lambda0")
        for blk in doc["blocks"]:
            lines.append(
                f"  {blk['j']:<3} {blk['p']:<11.9f} {blk['dimL_A']:<6} "
                f"{blk['dimR_A']:<6} {blk['dimL_B']:<6} {blk['dimR_B']:<6} "
                f"{blk['lambda0']:.9f}"
            )
        lines.append(f"K = {doc['K']}  (log2 = {doc['log2_K']})")
    if task == "verify-trace":
        v = doc["verdict"]
        lines.append(f"events replayed: {v['events_replayed']}")
        lines.append(f"hash match: {v['hash_match']}")
        lines.append(f"cost consistent: {v['cost_consistent']}")
        lines.append(
            f"max probability deviation: {v['max_probability_deviation']:.3e}"
        )
        lines.append(f"verdict: {'PASS' if v['passed'] else 'FAIL'}")
    return "\n".join(lines)


# -- entry point --------------------------------------------------------------------


def _emit(doc: dict, args) -> None:
    if args.format == "structured":
        print(json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False))
    else:
        print(render_human(doc))


def _fail(args, exc, exit_code: int) -> int:
    if args is not None and getattr(args, "format", "human") == "structured":
        payload = {
            "format": ERROR_FORMAT,
            "error": {"type": type(exc).__name__, "message": str(exc)},
            "exit_code": exit_code,
        }
        print(json.dumps(payload, sort_keys=True, separators=(",", ":")))
    else:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
    return exit_code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if hasattr(args, "seed"):
            _check_seed(args.seed)
        doc, exit_code = _HANDLERS[args.command](args)
    except InputError as exc:
        return _fail(args, exc, 2)
    except SynthesisFailed as exc:
        return _fail(args, exc, 3)
    except VerificationFailed as exc:
        return _fail(args, exc, 4)
    _emit(doc, args)
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
