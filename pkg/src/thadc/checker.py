"""Static verification of call-order dependencies over a program model.

The engine is a forward must-completed dataflow per dependency and
descriptor token: a monitor fact "a call matching the dependency pattern
(with this token) has completed" is generated at matching call nodes and
survives a control-flow merge only when it holds on every incoming
path.  A dependency is then judged at each call node matching its
dependent pattern: fact present means the node is fine, fact absent
means some entry-to-node path lacks the required prior call, which on a
graph where every node lies on an entry-to-exit walk is exactly a
violating execution, reported with a shortest witness path.

Precision notes, fixed here:

- Branch conditions are never evaluated; both arms count as feasible.
  Witnesses may therefore be concretely infeasible; they are reported
  as violations anyway and marked "feasibility: not-proven" upstream.
- Calls whose discriminator did not resolve never complete anything,
  and where they might match a dependent pattern they can only degrade
  the verdict to Inconclusive, never prove it Satisfied.
- Dependents whose descriptor argument has no must-token make a bound
  dependency Inconclusive (the binding cannot be checked statically).
- A dependency between two patterns of the same routine is checked only
  when some call resolves to the dependency pattern; a generic routine's
  optional-configuration request imposes nothing on programs that never
  issue it.  With no such call the dependency counts as trivially
  satisfied, unless an unresolved call might be one (Inconclusive).
- A dependency whose dependent pattern matches no call (not even
  possibly) is trivially satisfied.

Verdict precedence per dependency: trivially satisfied, then the
same-routine relevance rule, then Violated, then Inconclusive, then
Satisfied.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

from .cfg import Cfg, CfgNode, NodeKind, ProgramModel, enumerate_paths, has_loops
from .model import (
    BindingSource,
    CallEvent,
    Thad,
    ThadSet,
    match_event,
    trace_satisfies,
)

__all__ = [
    "Completion",
    "MonitorState",
    "Status",
    "WitnessStep",
    "WitnessTrace",
    "ThadVerdict",
    "dataflow_fixpoint",
    "check",
    "find_witness",
    "brute_force_paths",
]

MonitorKey = tuple[str, Optional[str]]  # (thad id, token or None for unbound)


class Completion(Enum):
    UNREACHABLE = "unreachable"
    COMPLETED = "completed"
    NOT_COMPLETED = "not-completed"


@dataclass(frozen=True)
class MonitorState:
    """Must-completed facts entering one CFG node.

    ``completed`` holds the (dependency id, token) pairs whose required
    prior call has happened on every path to the node; everything else
    is NotCompleted.  Unreachable appears only on nodes the fixpoint
    never visited, which a well-formed CFG does not have.
    """

    reachable: bool
    completed: frozenset[MonitorKey]

    def completion(self, thad_id: str, token: Optional[str] = None) -> Completion:
        if not self.reachable:
            return Completion.UNREACHABLE
        if (thad_id, token) in self.completed:
            return Completion.COMPLETED
        return Completion.NOT_COMPLETED


class Status(Enum):
    SATISFIED = "satisfied"
    VIOLATED = "violated"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class WitnessStep:
    event: CallEvent
    line: int
    node_id: int


@dataclass(frozen=True)
class WitnessTrace:
    """One CFG path projected to its HAL calls, ending at the violating
    call.  The event sequence fails the trace semantics for its thad."""

    steps: tuple[WitnessStep, ...]

    @property
    def events(self) -> tuple[CallEvent, ...]:
        return tuple(s.event for s in self.steps)


@dataclass(frozen=True)
class ThadVerdict:
    thad_id: str
    status: Status
    witness: Optional[WitnessTrace] = None
    reason: Optional[str] = None
    trivial: bool = False
    via_alias: bool = False

    def __post_init__(self) -> None:
        if (self.witness is not None) != (self.status is Status.VIOLATED):
            raise ValueError("witness present iff status is violated")


# ---------------------------------------------------------------------------
# Event classification
# ---------------------------------------------------------------------------

def _hal_nodes(model: ProgramModel, thad_set: ThadSet) -> list[CfgNode]:
    """Entry-function call nodes of spec routines, with resolved events."""
    spec_names = {r.name for r in thad_set.routines}
    nodes = []
    for node in model.entry_body.cfg.call_nodes():
        if node.callee in spec_names:
            if node.event is None:
                raise ValueError(
                    f"call node {node.id} ({node.callee}) has no resolved event; "
                    "run the preparation passes first"
                )
            nodes.append(node)
    return nodes


def _possibly_matches(pattern, ev: CallEvent) -> bool:
    """Could this event match the constrained pattern at run time, for
    all we know?  Only unresolved discriminators leave that open."""
    return (
        pattern.discriminator_constraint is not None
        and pattern.name == ev.routine
        and ev.discriminator_unknown
    )


def _dependency_token_of(thad: Thad, ev: CallEvent) -> Optional[str]:
    assert thad.binding is not None
    if thad.binding.source is BindingSource.RETURN_VALUE:
        return ev.produced_token
    return ev.descriptor_token


def _gen_keys(thad_set: ThadSet, ev: CallEvent) -> Iterable[MonitorKey]:
    for thad in thad_set.thads:
        if not match_event(thad.dependency, ev, thad_set.aliases):
            continue
        if thad.binding is None:
            yield (thad.id, None)
        else:
            token = _dependency_token_of(thad, ev)
            if token is not None:
                yield (thad.id, token)


# ---------------------------------------------------------------------------
# Fixpoint
# ---------------------------------------------------------------------------

def dataflow_fixpoint(
    model: ProgramModel, thad_set: ThadSet
) -> dict[int, MonitorState]:
    """Per-node entry states of the must-completed monitor analysis.

    The state at a node describes the moment before the node acts, so a
    call's own completion is not visible to the assertion evaluated at
    that same call.  Merge is set intersection; the loop converges
    because states only shrink once reached.
    """
    cfg = model.entry_body.cfg
    _hal_nodes(model, thad_set)  # validates events are present
    gen: dict[int, frozenset[MonitorKey]] = {}
    for node in cfg.nodes.values():
        if node.kind is NodeKind.CALL and node.event is not None:
            gen[node.id] = frozenset(_gen_keys(thad_set, node.event))

    ins: dict[int, Optional[frozenset[MonitorKey]]] = {n: None for n in cfg.nodes}
    ins[cfg.entry] = frozenset()
    work = deque([cfg.entry])
    while work:
        nid = work.popleft()
        state = ins[nid]
        assert state is not None
        out = state | gen.get(nid, frozenset())
        for edge in cfg.edges(nid):
            cur = ins[edge.dst]
            new = out if cur is None else (cur & out)
            if new != cur:
                ins[edge.dst] = new
                work.append(edge.dst)

    return {
        nid: MonitorState(state is not None, state or frozenset())
        for nid, state in ins.items()
    }


# ---------------------------------------------------------------------------
# Witness search
# ---------------------------------------------------------------------------

def _completer_nodes(
    model: ProgramModel, thad_set: ThadSet, thad: Thad, token: Optional[str]
) -> set[int]:
    out = set()
    for node in _hal_nodes(model, thad_set):
        ev = node.event
        if not match_event(thad.dependency, ev, thad_set.aliases):
            continue
        if thad.binding is None or _dependency_token_of(thad, ev) == token:
            out.add(node.id)
    return out


def find_witness(
    model: ProgramModel, thad_set: ThadSet, thad: Thad, offending_node: int
) -> WitnessTrace:
    """Shortest entry-to-offender path with no dependency completion.

    Shortest by node count; among equally short paths the one taking
    the lowest source line (then lowest node id) at the first point of
    divergence.  The projection keeps HAL call events only, so the
    witness ends with the offending call itself.
    """
    cfg = model.entry_body.cfg
    offender = cfg.node(offending_node)
    token = offender.event.descriptor_token if (
        thad.binding is not None and offender.event is not None
    ) else None
    blocked = _completer_nodes(model, thad_set, thad, token)
    blocked.discard(offending_node)

    dist = _distances_to(cfg, offending_node, blocked)
    if cfg.entry not in dist:
        raise ValueError(
            f"no completion-free path from entry to node {offending_node}"
        )
    path = [cfg.entry]
    node = cfg.entry
    while node != offending_node:
        candidates = [
            e.dst
            for e in cfg.edges(node)
            if e.dst in dist and dist[e.dst] == dist[node] - 1
        ]
        node = min(candidates, key=lambda n: (cfg.node(n).line, n))
        path.append(node)

    steps = tuple(
        WitnessStep(cfg.node(n).event, cfg.node(n).line, n)
        for n in path
        if cfg.node(n).event is not None
    )
    return WitnessTrace(steps)


def _distances_to(cfg: Cfg, target: int, blocked: set[int]) -> dict[int, int]:
    """Distance (in nodes) to the target through non-blocked nodes."""
    preds: dict[int, list[int]] = {n: [] for n in cfg.nodes}
    for src, edges in cfg.succ.items():
        for e in edges:
            preds[e.dst].append(src)
    dist = {target: 0}
    queue = deque([target])
    while queue:
        nid = queue.popleft()
        for p in preds[nid]:
            if p in blocked or p in dist:
                continue
            dist[p] = dist[nid] + 1
            queue.append(p)
    return dist


# ---------------------------------------------------------------------------
# Verdicts
# ---------------------------------------------------------------------------

def _natural_key(thad_id: str):
    digits = "".join(c for c in thad_id if c.isdigit())
    return (int(digits) if digits else 0, thad_id)


def _uses_alias(thad: Thad, events: Sequence[CallEvent],
                aliases: Mapping[str, str]) -> bool:
    if not aliases:
        return False
    for ev in events:
        for pattern in (thad.dependent, thad.dependency):
            if match_event(pattern, ev, aliases) and not match_event(pattern, ev):
                return True
    return False


def check(model: ProgramModel, thad_set: ThadSet) -> list[ThadVerdict]:
    """Verdict for every dependency in the set, sorted by id.

    Requires a prepared model (inlined, arguments resolved, tokens
    threaded); see the module docstring for the exact semantics of the
    three verdicts and the relevance rules.
    """
    states = dataflow_fixpoint(model, thad_set)
    nodes = _hal_nodes(model, thad_set)
    events = [n.event for n in nodes]
    aliases = thad_set.aliases

    verdicts = []
    for thad in thad_set.thads:
        verdicts.append(
            _check_one(model, thad_set, thad, nodes, events, states, aliases)
        )
    verdicts.sort(key=lambda v: _natural_key(v.thad_id))
    return verdicts


def _check_one(
    model: ProgramModel,
    thad_set: ThadSet,
    thad: Thad,
    nodes: list[CfgNode],
    events: list[CallEvent],
    states: dict[int, MonitorState],
    aliases: Mapping[str, str],
) -> ThadVerdict:
    via_alias = _uses_alias(thad, events, aliases)

    dependent_nodes = [
        n for n in nodes if match_event(thad.dependent, n.event, aliases)
    ]
    possible_dependent = [
        n for n in nodes if not match_event(thad.dependent, n.event, aliases)
        and _possibly_matches(thad.dependent, n.event)
    ]
    if not dependent_nodes and not possible_dependent:
        # A trivial verdict rests on the dependent never occurring, not
        # on any alias rewrite, so the flag stays off.
        return ThadVerdict(thad.id, Status.SATISFIED, trivial=True)

    if thad.dependency.name == thad.dependent.name:
        has_dependency = any(
            match_event(thad.dependency, ev, aliases) for ev in events
        )
        if not has_dependency:
            if any(_possibly_matches(thad.dependency, ev) for ev in events):
                return ThadVerdict(
                    thad.id, Status.INCONCLUSIVE,
                    reason=f"unresolved discriminator: a call of "
                           f"{thad.dependency.name} may or may not be "
                           f"{thad.dependency.describe()}",
                    via_alias=via_alias,
                )
            return ThadVerdict(thad.id, Status.SATISFIED, trivial=True)

    violations: list[tuple[int, CfgNode]] = []  # (witness length, node)
    inconclusive: list[str] = []

    for node in dependent_nodes:
        ev = node.event
        if thad.binding is not None and ev.descriptor_token is None:
            inconclusive.append(
                f"unresolved descriptor: the {ev.routine} call at line "
                f"{node.line} has no single statically-known descriptor"
            )
            continue
        token = ev.descriptor_token if thad.binding is not None else None
        if states[node.id].completion(thad.id, token) is not Completion.COMPLETED:
            blocked = _completer_nodes(model, thad_set, thad, token)
            blocked.discard(node.id)
            dist = _distances_to(model.entry_body.cfg, node.id, blocked)
            length = dist.get(model.entry_body.cfg.entry)
            assert length is not None, "must-analysis promised a free path"
            violations.append((length, node))

    for node in possible_dependent:
        ev = node.event
        if thad.binding is not None and ev.descriptor_token is None:
            inconclusive.append(
                f"unresolved descriptor: the {ev.routine} call at line "
                f"{node.line} has no single statically-known descriptor"
            )
            continue
        token = ev.descriptor_token if thad.binding is not None else None
        if states[node.id].completion(thad.id, token) is not Completion.COMPLETED:
            inconclusive.append(
                f"unresolved discriminator: the {ev.routine} call at line "
                f"{node.line} may match {thad.dependent.describe()} before "
                f"{thad.dependency.describe()} completed"
            )

    if violations:
        _, best = min(
            violations, key=lambda item: (item[0], item[1].line, item[1].id)
        )
        witness = find_witness(model, thad_set, thad, best.id)
        return ThadVerdict(thad.id, Status.VIOLATED, witness=witness,
                           via_alias=via_alias)
    if inconclusive:
        return ThadVerdict(thad.id, Status.INCONCLUSIVE,
                           reason=inconclusive[0], via_alias=via_alias)
    return ThadVerdict(thad.id, Status.SATISFIED, via_alias=via_alias)


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------

def brute_force_paths(
    model: ProgramModel, thad_set: ThadSet, path_bound: int = 1_000_000
) -> dict[str, bool]:
    """Exhaustive ground truth on loop-free models: for each dependency,
    do all entry-to-exit path traces satisfy it?

    Applies the same same-routine relevance rule as :func:`check` (a
    dependency pattern no call resolves to obligates nothing), then
    evaluates the reference trace semantics per enumerated path.
    Raises ValueError on cyclic graphs; unroll loops first.
    """
    cfg = model.entry_body.cfg
    if has_loops(cfg):
        raise ValueError("the model has loops; unroll before enumerating paths")
    nodes = _hal_nodes(model, thad_set)
    events_by_node = {n.id: n.event for n in nodes}
    all_events = [n.event for n in nodes]
    aliases = thad_set.aliases

    traces = []
    for path in enumerate_paths(cfg, path_bound):
        traces.append(
            [events_by_node[n] for n in path if n in events_by_node]
        )

    result: dict[str, bool] = {}
    for thad in thad_set.thads:
        if thad.dependency.name == thad.dependent.name and not any(
            match_event(thad.dependency, ev, aliases) for ev in all_events
        ):
            result[thad.id] = True
            continue
        result[thad.id] = all(
            trace_satisfies(thad, trace, aliases) for trace in traces
        )
    return result
