"""Self-contained LOCC protocol traces.

A trace is a JSON document recording one fixed-outcome run of a
spreading or concentrating protocol: the initial state, an ordered
event list (local isometries, measurements, broadcasts, resource
consumption, and the composed root correction), an operator side
table, the per-edge cost report, and a hash of the final state.
Replaying the stored events against the stored initial state re-derives
every branch probability and the final state with no other context, so
a trace can be verified long after the run that produced it.

Builders evolve the state through the same event engine used by
``replay_trace``, which makes the recorded hash reproducible by
construction; an independent fidelity gate against the ideal target
state keeps the builders honest.
"""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np

from .codes import (
    REFERENCE_ID,
    IsometryCode,
    code_to_document,
    encoded_pair,
    reference_pair,
)
from .config import PROB_TOL, RANK_RTOL, VERIFY_TOL
from .errors import (
    InputError,
    SchemaError,
    ShapeMismatch,
    VerificationFailed,
    ZeroProbabilityBranch,
)
from .network import RootedTree, tree_to_document
from .protocols import (
    ConcentrateResult,
    CostReport,
    SpreadResult,
    _replay_root_corrections,
)
from .tensors import (
    LinearMap,
    PureState,
    Register,
    apply_map,
    max_entangled_pair,
    overlap,
    permute_registers,
    project_onto,
    tensor_product,
)

TRACE_FORMAT = "treecast.trace/1"
HASH_DECIMALS = 12


# -- register and operator plumbing -------------------------------------------


def _regspec(reg: Register) -> dict:
    return {"id": reg.id, "dim": reg.dim, "owner": reg.owner}


def _reg_from(spec: dict) -> Register:
    return Register(spec["id"], int(spec["dim"]), spec["owner"])


class _OpTable:
    """Deduplicating matrix store; matrices are referenced by name."""

    def __init__(self):
        self._by_key: dict[tuple, str] = {}
        self._ops: dict[str, np.ndarray] = {}

    def add(self, matrix: np.ndarray) -> str:
        mat = np.ascontiguousarray(matrix, dtype=complex)
        key = (mat.shape, mat.tobytes())
        ref = self._by_key.get(key)
        if ref is None:
            ref = f"op{len(self._ops)}"
            self._by_key[key] = ref
            self._ops[ref] = mat
        return ref

    def __getitem__(self, ref: str) -> np.ndarray:
        return self._ops[ref]

    def to_doc(self) -> dict:
        out = {}
        for ref, mat in self._ops.items():
            flat = mat.reshape(-1)
            out[ref] = {
                "shape": [int(mat.shape[0]), int(mat.shape[1])],
                "data": [[float(x.real), float(x.imag)] for x in flat],
            }
        return out


def _ops_from_doc(doc: dict) -> dict[str, np.ndarray]:
    ops = {}
    for ref, item in doc.items():
        rows, cols = (int(x) for x in item["shape"])
        data = item["data"]
        if len(data) != rows * cols:
            raise SchemaError(f"operator {ref!r} data length does not match shape")
        flat = np.array([complex(re, im) for re, im in data], dtype=complex)
        ops[ref] = flat.reshape(rows, cols)
    return ops


def _state_doc(state: PureState) -> dict:
    return {
        "registers": [_regspec(r) for r in state.registers],
        "amplitudes": [
            [float(x.real), float(x.imag)] for x in state.amplitudes
        ],
    }


def _state_from_doc(doc: dict) -> PureState:
    regs = tuple(_reg_from(s) for s in doc["registers"])
    amps = np.array(
        [complex(re, im) for re, im in doc["amplitudes"]], dtype=complex
    )
    return PureState(regs, amps)


def state_hash(state: PureState) -> str:
    """Order-independent digest of a state, rounded to spare float dust."""
    ordered = permute_registers(state, sorted(state.ids))
    amps = np.round(ordered.amplitudes, HASH_DECIMALS)
    payload = {
        "registers": [[r.id, r.dim] for r in ordered.registers],
        "amplitudes": [
            [float(x.real) + 0.0, float(x.imag) + 0.0] for x in amps
        ],
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(blob.encode()).hexdigest()


# -- the event engine ----------------------------------------------------------


def _apply_event(state: PureState, ev: dict, ops) -> tuple[PureState, float | None]:
    """Advance the state by one event; measurements return their probability."""
    kind = ev.get("type")
    if kind == "resource-consumed":
        if "a0" in ev:
            pair = max_entangled_pair(_reg_from(ev["a0"]), _reg_from(ev["b0"]))
            state = tensor_product(state, pair)
        return state, None
    if kind in ("local-isometry", "root-correction"):
        in_regs = tuple(state.register(s["id"]) for s in ev["in"])
        for reg, spec in zip(in_regs, ev["in"]):
            if reg.dim != int(spec["dim"]):
                raise ShapeMismatch(
                    f"event register {reg.id!r} has dim {reg.dim}, "
                    f"trace says {spec['dim']}"
                )
        out_regs = tuple(_reg_from(s) for s in ev["out"])
        return apply_map(state, LinearMap(in_regs, out_regs, ops[ev["matrix"]])), None
    if kind == "measurement":
        basis = ops[ev["basis"]]
        outcome = int(ev["outcome"])
        if not 0 <= outcome < basis.shape[1]:
            raise SchemaError(f"measurement outcome {outcome} outside basis")
        post = project_onto(
            state, [s["id"] for s in ev["targets"]], basis[:, outcome]
        )
        prob = float(post.norm() ** 2)
        if prob < PROB_TOL:
            raise ZeroProbabilityBranch(
                f"trace outcome {outcome} at {ev.get('party')!r} has zero probability"
            )
        return post.normalized(), prob
    if kind == "broadcast":
        return state, None
    raise SchemaError(f"unknown trace event type {kind!r}")


def _emit(events: list, state: PureState, ev: dict, ops) -> PureState:
    """Record the event and advance the state through the engine."""
    state, prob = _apply_event(state, ev, ops)
    if prob is not None:
        ev["probability"] = prob
    events.append(ev)
    return state


# -- builders -------------------------------------------------------------------


def _metadata(
    task: str,
    code: IsometryCode,
    tree: RootedTree,
    labeling,
    *,
    code_name: str | None,
    mode: str,
    seed: int,
    tolerances: dict | None,
    outcomes,
) -> dict:
    tols = {"rank_rtol": RANK_RTOL, "verify_tol": VERIFY_TOL}
    if tolerances:
        tols.update(tolerances)
    return {
        "task": task,
        "code": code_to_document(code, name=code_name),
        "code_name": code_name,
        "tree": tree_to_document(tree),
        "labeling": list(labeling),
        "mode": mode,
        "seed": int(seed),
        "tolerances": {k: float(v) for k, v in sorted(tols.items())},
        "outcomes": [int(m) for m in outcomes],
    }


def _cost_report_doc(report: CostReport) -> dict:
    return {
        "direction": report.direction,
        "edges": [
            {
                "parent": e.parent,
                "child": e.child,
                "k": e.k,
                "log2": e.log2,
            }
            for e in report.edges
        ],
        "total_log2": report.total_log2,
    }


def _assemble(metadata, initial, events, ops, report, state, target, gate_tol):
    fid = abs(overlap(state.normalized(), target))
    if fid < 1.0 - gate_tol:
        raise VerificationFailed(
            f"trace construction drifted from the target state "
            f"(fidelity {fid:.12f})"
        )
    return {
        "format": TRACE_FORMAT,
        "metadata": metadata,
        "initial_state": initial,
        "events": events,
        "operators": ops.to_doc(),
        "cost_report": _cost_report_doc(report),
        "final_state": {
            "registers": [
                _regspec(r) for r in sorted(state.registers, key=lambda r: r.id)
            ],
            "fidelity": fid,
            "hash": state_hash(state),
        },
    }


def spread_trace(
    code: IsometryCode,
    tree: RootedTree,
    result: SpreadResult,
    *,
    outcomes=None,
    code_name: str | None = None,
    seed: int = 0,
    tolerances: dict | None = None,
    gate_tol: float = VERIFY_TOL,
) -> dict:
    """Trace one fixed-outcome spreading run (default: all outcomes 0).

    Events: the encoder isometry at the root, then one teleportation
    block per edge in execution order — resource consumption, the
    sender's compression, the Bell-basis measurement and broadcast, and
    the receiver's correction and decompression.
    """
    steps = result.steps
    if outcomes is None:
        outcomes = (0,) * len(steps)
    outcomes = tuple(int(m) for m in outcomes)
    if len(outcomes) != len(steps):
        raise ShapeMismatch(
            f"need {len(steps)} outcomes (one per edge), got {len(outcomes)}"
        )
    root = result.labeling[0]
    ops = _OpTable()
    events: list[dict] = []
    logical = Register("L", code.logical_dim, root)
    ref = Register(REFERENCE_ID, code.logical_dim, "reference")
    state = max_entangled_pair(ref, logical)
    phys_at_root = tuple(
        Register(p, d, root) for p, d in zip(code.parties, code.physical_dims)
    )
    state = _emit(
        events,
        state,
        {
            "type": "local-isometry",
            "party": root,
            "matrix": ops.add(code.matrix),
            "in": [_regspec(logical)],
            "out": [_regspec(r) for r in phys_at_root],
        },
        ops,
    )
    for step, m in zip(steps, outcomes):
        proto = step.protocol
        if not 0 <= m < proto.k**2:
            raise ShapeMismatch(
                f"edge ({step.parent}, {step.child}) has {proto.k ** 2} outcomes, "
                f"got {m}"
            )
        moved = [state.register(i) for i in proto.moved_ids]
        moved_out = [r.with_owner(step.child) for r in moved]
        resource = {
            "type": "resource-consumed",
            "edge": [step.parent, step.child],
            "k": proto.k,
        }
        if all(r.dim == 1 for r in moved):
            state = _emit(events, state, resource, ops)
            state = _emit(
                events,
                state,
                {
                    "type": "local-isometry",
                    "party": step.child,
                    "matrix": ops.add(np.eye(1, dtype=complex)),
                    "in": [_regspec(r) for r in moved],
                    "out": [_regspec(r) for r in moved_out],
                },
                ops,
            )
            continue
        sender = proto.sender
        buf = Register(f"buf:{proto.moved_ids[0]}", proto.k, sender)
        a0 = Register(f"sp:{step.child}:A0", proto.k, sender)
        b0 = Register(f"sp:{step.child}:B0", proto.k, step.child)
        resource["a0"] = _regspec(a0)
        resource["b0"] = _regspec(b0)
        state = _emit(events, state, resource, ops)
        state = _emit(
            events,
            state,
            {
                "type": "local-isometry",
                "party": sender,
                "matrix": ops.add(proto.compress),
                "in": [_regspec(r) for r in moved],
                "out": [_regspec(buf)],
            },
            ops,
        )
        state = _emit(
            events,
            state,
            {
                "type": "measurement",
                "party": sender,
                "basis": ops.add(proto.bell),
                "targets": [_regspec(buf), _regspec(a0)],
                "outcome": m,
            },
            ops,
        )
        state = _emit(
            events, state, {"type": "broadcast", "party": sender, "outcome": m}, ops
        )
        state = _emit(
            events,
            state,
            {
                "type": "local-isometry",
                "party": step.child,
                "matrix": ops.add(proto.corrections[m]),
                "in": [_regspec(b0)],
                "out": [_regspec(b0)],
            },
            ops,
        )
        state = _emit(
            events,
            state,
            {
                "type": "local-isometry",
                "party": step.child,
                "matrix": ops.add(proto.decompress),
                "in": [_regspec(b0)],
                "out": [_regspec(r) for r in moved_out],
            },
            ops,
        )
    metadata = _metadata(
        "spread",
        code,
        tree,
        result.labeling,
        code_name=code_name,
        mode="exact",
        seed=seed,
        tolerances=tolerances,
        outcomes=outcomes,
    )
    initial = _state_doc(max_entangled_pair(ref, logical))
    return _assemble(
        metadata,
        initial,
        events,
        ops,
        result.cost_report,
        state,
        encoded_pair(code),
        gate_tol,
    )


def concentrate_trace(
    code: IsometryCode,
    tree: RootedTree,
    result: ConcentrateResult,
    *,
    outcomes=None,
    code_name: str | None = None,
    seed: int = 0,
    tolerances: dict | None = None,
    gate_tol: float = VERIFY_TOL,
) -> dict:
    """Trace one branch of a concentrating run (default: all outcomes 0).

    Events: per stage, descending — resource consumption on the stage
    edge, the merging vertex's measurement, and its broadcast — then the
    single composed correction isometry at the root, which also inverts
    the encoding.
    """
    labeling = result.labeling
    n = len(labeling)
    if outcomes is None:
        outcomes = (0,) * (n - 1)
    outcomes = tuple(int(m) for m in outcomes)
    if len(outcomes) != n - 1:
        raise ShapeMismatch(
            f"need {n - 1} outcomes (one per stage), got {len(outcomes)}"
        )
    ops = _OpTable()
    events: list[dict] = []
    state = encoded_pair(code)
    initial = _state_doc(state)
    for j in range(n, 1, -1):
        prefix = outcomes[: n - j]
        stage = result.steps.get(j, {})
        rec = stage.get(prefix)
        if rec is None:
            raise InputError(
                f"branch {list(outcomes)} was not recorded in this run "
                f"(stage {j} prefix {list(prefix)})"
            )
        proto = rec.protocol
        m = outcomes[n - j]
        if not 0 <= m < proto.measurement.shape[1]:
            raise ShapeMismatch(
                f"stage {j} has {proto.measurement.shape[1]} outcomes, got {m}"
            )
        resource = {
            "type": "resource-consumed",
            "edge": [rec.parent, rec.vertex],
            "k": proto.k,
        }
        targets = [_regspec(state.register(i)) for i in proto.a_ids]
        if proto.k > 1:
            a0 = Register(proto.a0_id, proto.k, rec.vertex)
            b0 = Register(proto.b0_id, proto.k, proto.b0_owner)
            resource["a0"] = _regspec(a0)
            resource["b0"] = _regspec(b0)
            targets.append(_regspec(a0))
        state = _emit(events, state, resource, ops)
        state = _emit(
            events,
            state,
            {
                "type": "measurement",
                "party": rec.vertex,
                "basis": ops.add(proto.measurement),
                "targets": targets,
                "outcome": m,
            },
            ops,
        )
        state = _emit(
            events,
            state,
            {"type": "broadcast", "party": rec.vertex, "outcome": m},
            ops,
        )
    rest = [r for r in state.registers if r.id != REFERENCE_ID]
    dim = int(np.prod([r.dim for r in rest], dtype=object))
    columns = []
    for idx in range(dim):
        amps = np.zeros(dim, dtype=complex)
        amps[idx] = 1.0
        pushed = _replay_root_corrections(
            code, labeling, result.steps, outcomes, PureState(tuple(rest), amps)
        )
        if pushed.ids != ("L",):
            raise VerificationFailed(
                "root correction did not close onto the logical register"
            )
        columns.append(pushed.amplitudes)
    composed = np.column_stack(columns)
    root = labeling[0]
    state = _emit(
        events,
        state,
        {
            "type": "root-correction",
            "party": root,
            "matrix": ops.add(composed),
            "in": [_regspec(r) for r in rest],
            "out": [_regspec(Register("L", code.logical_dim, root))],
        },
        ops,
    )
    metadata = _metadata(
        "concentrate",
        code,
        tree,
        labeling,
        code_name=code_name,
        mode=result.mode,
        seed=seed,
        tolerances=tolerances,
        outcomes=outcomes,
    )
    return _assemble(
        metadata,
        initial,
        events,
        ops,
        result.cost_report,
        state,
        reference_pair(code.logical_dim),
        gate_tol,
    )


# -- replay and verification -----------------------------------------------------


def _check_sections(doc) -> None:
    if not isinstance(doc, dict):
        raise SchemaError("trace document must be a JSON object")
    if doc.get("format") != TRACE_FORMAT:
        raise SchemaError(f"trace format must be {TRACE_FORMAT!r}")
    missing = {
        "metadata",
        "initial_state",
        "events",
        "operators",
        "cost_report",
        "final_state",
    } - set(doc)
    if missing:
        raise SchemaError(f"trace document is missing sections {sorted(missing)}")


def replay_trace(doc: dict) -> dict:
    """Re-execute a trace's fixed outcomes from its stored initial state."""
    _check_sections(doc)
    ops = _ops_from_doc(doc["operators"])
    state = _state_from_doc(doc["initial_state"])
    max_pdev = 0.0
    consumed: list[tuple[str, str, int]] = []
    for ev in doc["events"]:
        state, prob = _apply_event(state, ev, ops)
        if prob is not None:
            max_pdev = max(max_pdev, abs(prob - float(ev["probability"])))
        if ev.get("type") == "resource-consumed":
            consumed.append((ev["edge"][0], ev["edge"][1], int(ev["k"])))
    digest = state_hash(state)
    report = doc["cost_report"]
    recorded = sorted(
        (e["parent"], e["child"], int(e["k"])) for e in report["edges"]
    )
    total = float(sum(math.log2(k) for _, _, k in consumed))
    cost_consistent = (
        sorted(consumed) == recorded
        and abs(total - float(report["total_log2"])) <= 1e-9
    )
    return {
        "final_state": state,
        "hash": digest,
        "hash_match": digest == doc["final_state"]["hash"],
        "max_probability_deviation": max_pdev,
        "cost_consistent": cost_consistent,
        "resource_total_log2": total,
        "events_replayed": len(doc["events"]),
    }


def verify_trace(doc: dict, *, tol: float = VERIFY_TOL) -> dict:
    """Replay a trace and judge it: hash, probabilities, cost consistency."""
    replay = replay_trace(doc)
    passed = (
        replay["hash_match"]
        and replay["cost_consistent"]
        and replay["max_probability_deviation"] <= tol
    )
    return {
        "passed": passed,
        "hash_match": replay["hash_match"],
        "cost_consistent": replay["cost_consistent"],
        "max_probability_deviation": replay["max_probability_deviation"],
        "resource_total_log2": replay["resource_total_log2"],
        "events_replayed": replay["events_replayed"],
        "recorded_hash": doc["final_state"]["hash"],
        "replayed_hash": replay["hash"],
    }


# -- serialization ----------------------------------------------------------------


def trace_json(doc: dict) -> str:
    """Canonical byte-deterministic serialization of a trace document."""
    return json.dumps(
        doc, sort_keys=True, separators=(",", ":"), allow_nan=False
    )


def save_trace(doc: dict, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(trace_json(doc))
        fh.write("\n")


def load_trace(path: str) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise SchemaError(f"cannot read trace file {path!r}: {exc}")
    except json.JSONDecodeError as exc:
        raise SchemaError(f"bad JSON in trace file {path!r}: {exc}")
    _check_sections(doc)
    return doc
