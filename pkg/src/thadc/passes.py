"""Model preparation passes: inlining, argument resolution, token flow.

The checker wants a single flat CFG per analyzed entry point whose HAL
call nodes carry ready-made :class:`~thadc.model.CallEvent` values.
Three passes get it there:

``inline_calls``
    splices the bodies of defined functions into their call sites
    (bottom-up, so the result has no calls to defined functions left).
    Recursion and call chains deeper than the limit are rejected.

``resolve_discriminators``
    computes, per function, which integer constant each discriminator
    argument must hold, by forward propagation of must-known constants
    over the CFG (meet = agreement on both branch arms).  Values come
    from integer literals, ``#define``, the platform constants table,
    and copies through locals.  A spec constant used by name resolves
    even when no integer encoding was supplied for it.

``build_token_flow``
    gives every descriptor-returning HAL call a fresh token and
    propagates tokens through assignments the same must-style way, so a
    call's descriptor argument maps to the ``open`` that produced it
    exactly when that holds on every path.

Passes mutate CFG node payloads in place (``inline_calls`` returns a
new model) and may be re-run; event fields are refined, not stacked.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from typing import Callable, Optional

from .cfg import (
    Cfg,
    CfgNode,
    Edge,
    FunctionBody,
    NodeKind,
    ProgramModel,
    return_var,
)
from .minic import Binary, CallExpr, Expr, Num, Str, Unary, Var
from .model import CallEvent, RoutineSpec, ThadSet

__all__ = [
    "RecursionDetected",
    "DepthLimitExceeded",
    "TokenFlow",
    "inline_calls",
    "resolve_discriminators",
    "build_token_flow",
    "preprocess",
]


class RecursionDetected(Exception):
    """The call graph has a cycle; inlining cannot terminate."""

    def __init__(self, cycle: list[str]):
        self.cycle = cycle
        super().__init__("recursive call chain: " + " -> ".join(cycle))


class DepthLimitExceeded(Exception):
    """A call chain is longer than the configured inlining depth."""

    def __init__(self, function: str, depth: int, limit: int):
        self.function = function
        self.depth = depth
        self.limit = limit
        super().__init__(
            f"call chain from {function!r} spans {depth} functions, "
            f"limit is {limit}"
        )


# ---------------------------------------------------------------------------
# Inlining
# ---------------------------------------------------------------------------

def _defined_callees(body: FunctionBody, defined: set[str]) -> list[str]:
    seen: list[str] = []
    for node in body.cfg.call_nodes():
        if node.callee in defined and node.callee not in seen:
            seen.append(node.callee)
    return seen


def _find_cycle(model: ProgramModel, defined: set[str]) -> Optional[list[str]]:
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {name: WHITE for name in defined}

    def visit(name: str, path: list[str]) -> Optional[list[str]]:
        color[name] = GRAY
        path.append(name)
        for callee in _defined_callees(model.functions[name], defined):
            if color[callee] == GRAY:
                return path[path.index(callee):] + [callee]
            if color[callee] == WHITE:
                cycle = visit(callee, path)
                if cycle is not None:
                    return cycle
        path.pop()
        color[name] = BLACK
        return None

    for name in sorted(defined):
        if color[name] == WHITE:
            cycle = visit(name, [])
            if cycle is not None:
                return cycle
    return None


def _chain_depths(model: ProgramModel, defined: set[str]) -> dict[str, int]:
    """Longest call chain (counted in functions) starting at each function."""
    memo: dict[str, int] = {}

    def depth(name: str) -> int:
        if name in memo:
            return memo[name]
        callees = _defined_callees(model.functions[name], defined)
        memo[name] = 1 + max((depth(c) for c in callees), default=0)
        return memo[name]

    for name in defined:
        depth(name)
    return memo


def _rename_expr(expr: Optional[Expr], mapping: dict[str, str]) -> Optional[Expr]:
    if expr is None:
        return None
    if isinstance(expr, Var):
        new = mapping.get(expr.name)
        return Var(new, expr.line) if new else expr
    if isinstance(expr, Unary):
        return Unary(expr.op, _rename_expr(expr.operand, mapping), expr.line)
    if isinstance(expr, Binary):
        return Binary(
            expr.op,
            _rename_expr(expr.lhs, mapping),
            _rename_expr(expr.rhs, mapping),
            expr.line,
        )
    if isinstance(expr, CallExpr):  # pragma: no cover - lowering hoists calls
        return CallExpr(expr.callee,
                        tuple(_rename_expr(a, mapping) for a in expr.args),
                        expr.line)
    return expr


def _owned_names(body: FunctionBody) -> set[str]:
    """Names an inlined copy must rename: everything the function writes
    or declares, plus its synthetic return slot.  Free names (platform
    constants, defines, globals) stay untouched."""
    names = set(body.params) | set(body.locals) | {return_var(body.name)}
    for node in body.cfg.nodes.values():
        if node.kind is NodeKind.ASSIGN and node.var:
            names.add(node.var)
        elif node.kind is NodeKind.CALL and node.lhs:
            names.add(node.lhs)
    return names


class _Splicer:
    """Rebuilds one caller CFG with every defined call expanded."""

    def __init__(self, caller: FunctionBody,
                 flat: Callable[[str], FunctionBody], defined: set[str]):
        self.caller = caller
        self.flat = flat
        self.defined = defined
        self.nodes: dict[int, CfgNode] = {}
        self.succ: dict[int, tuple[Edge, ...]] = {}
        self.next_id = 0
        self.instances = 0
        self.extra_locals: list[str] = []

    def _add(self, node_id: int, node: CfgNode) -> None:
        self.nodes[node_id] = node
        self.succ.setdefault(node_id, ())

    def _alloc(self) -> int:
        node_id = self.next_id
        self.next_id += 1
        return node_id

    def _connect(self, src: int, label: Optional[str], dst: int) -> None:
        self.succ[src] = self.succ.get(src, ()) + (Edge(label, dst),)

    def _copy_plain(self, node: CfgNode) -> int:
        node_id = self._alloc()
        self._add(node_id, replace(node, id=node_id, event=None))
        return node_id

    def _expand_call(self, call: CfgNode) -> tuple[int, int]:
        """Splice one callee instance; returns (head, tail) node ids."""
        callee = self.flat(call.callee)
        self.instances += 1
        ren = {n: f"{n}__inl{self.instances}" for n in sorted(_owned_names(callee))}
        self.extra_locals.extend(ren.values())

        bind_ids: list[int] = []
        for pname, arg in zip(callee.params, call.args):
            bid = self._alloc()
            self._add(bid, CfgNode(bid, NodeKind.ASSIGN, call.line,
                                   var=ren[pname], expr=arg))
            bind_ids.append(bid)

        if call.lhs is not None:
            tail_id = self._alloc()
            self._add(tail_id, CfgNode(
                tail_id, NodeKind.ASSIGN, call.line, var=call.lhs,
                expr=Var(ren[return_var(callee.name)], call.line)))
        else:
            tail_id = self._alloc()
            self._add(tail_id, CfgNode(tail_id, NodeKind.JOIN, call.line))

        inner: dict[int, int] = {}
        ccfg = callee.cfg
        for cid in sorted(ccfg.nodes):
            cn = ccfg.nodes[cid]
            if cn.kind in (NodeKind.ENTRY, NodeKind.EXIT):
                continue
            nid = self._alloc()
            inner[cid] = nid
            self._add(nid, CfgNode(
                nid, cn.kind, cn.line,
                callee=cn.callee,
                args=tuple(_rename_expr(a, ren) for a in cn.args),
                lhs=ren.get(cn.lhs, cn.lhs) if cn.lhs else None,
                var=ren.get(cn.var, cn.var) if cn.var else None,
                expr=_rename_expr(cn.expr, ren),
            ))

        def target(cid: int) -> int:
            return tail_id if cid == ccfg.exit else inner[cid]

        for cid, edges in ccfg.succ.items():
            if cid == ccfg.entry or cid not in inner:
                continue
            for e in edges:
                self._connect(inner[cid], e.label, target(e.dst))

        first = target(ccfg.edges(ccfg.entry)[0].dst)
        for a, b in zip(bind_ids, bind_ids[1:]):
            self._connect(a, None, b)
        if bind_ids:
            self._connect(bind_ids[-1], None, first)
            head_id = bind_ids[0]
        else:
            head_id = first
        return head_id, tail_id

    def run(self) -> FunctionBody:
        head: dict[int, int] = {}
        tail: dict[int, int] = {}
        old = self.caller.cfg
        for nid in sorted(old.nodes):
            node = old.nodes[nid]
            if node.kind is NodeKind.CALL and node.callee in self.defined:
                head[nid], tail[nid] = self._expand_call(node)
            else:
                head[nid] = tail[nid] = self._copy_plain(node)
        for nid, edges in old.succ.items():
            for e in edges:
                self._connect(tail[nid], e.label, head[e.dst])
        cfg = Cfg(self.nodes, self.succ, head[old.entry], head[old.exit])
        return FunctionBody(
            self.caller.name,
            self.caller.params,
            self.caller.locals + tuple(self.extra_locals),
            cfg,
        )


def inline_calls(model: ProgramModel, depth_limit: int = 16) -> ProgramModel:
    """A new model in which no function calls another defined function.

    Raises :class:`RecursionDetected` when the call graph is cyclic and
    :class:`DepthLimitExceeded` when some call chain involves more than
    ``depth_limit`` functions.
    """
    defined = set(model.functions)
    cycle = _find_cycle(model, defined)
    if cycle is not None:
        raise RecursionDetected(cycle)
    depths = _chain_depths(model, defined)
    for name in sorted(defined):
        if depths[name] > depth_limit:
            raise DepthLimitExceeded(name, depths[name], depth_limit)

    flat: dict[str, FunctionBody] = {}

    def flatten(name: str) -> FunctionBody:
        if name not in flat:
            flat[name] = _Splicer(model.functions[name], flatten, defined).run()
        return flat[name]

    functions = {name: flatten(name) for name in model.functions}
    return ProgramModel(functions, model.entry, model.program, model.path)


# ---------------------------------------------------------------------------
# Forward must-propagation (shared by the two resolution passes)
# ---------------------------------------------------------------------------

def _must_forward(
    cfg: Cfg,
    transfer: Callable[[CfgNode, dict], dict],
) -> dict[int, dict]:
    """Entry-state map per node for a gen/kill environment analysis where
    a fact survives a merge only if every incoming path agrees on it."""
    ins: dict[int, Optional[dict]] = {n: None for n in cfg.nodes}
    ins[cfg.entry] = {}
    work = deque([cfg.entry])
    while work:
        nid = work.popleft()
        state = ins[nid]
        assert state is not None
        out = transfer(cfg.nodes[nid], state)
        for e in cfg.edges(nid):
            cur = ins[e.dst]
            new = dict(out) if cur is None else {
                k: v for k, v in cur.items() if out.get(k) == v
            }
            if new != cur:
                ins[e.dst] = new
                work.append(e.dst)
    return {n: (s if s is not None else {}) for n, s in ins.items()}


# ---------------------------------------------------------------------------
# Discriminator resolution
# ---------------------------------------------------------------------------

def _c_div(a: int, b: int) -> Optional[int]:
    if b == 0:
        return None
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def _eval_expr(expr: Expr, env: dict[str, int],
               lookup: Callable[[str], Optional[int]]) -> Optional[int]:
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Str):
        return None
    if isinstance(expr, Var):
        if expr.name in env:
            return env[expr.name]
        return lookup(expr.name)
    if isinstance(expr, Unary):
        v = _eval_expr(expr.operand, env, lookup)
        if v is None or expr.op == "&":
            return None
        if expr.op == "-":
            return -v
        if expr.op == "~":
            return ~v
        if expr.op == "!":
            return int(v == 0)
        return None
    if isinstance(expr, Binary):
        a = _eval_expr(expr.lhs, env, lookup)
        b = _eval_expr(expr.rhs, env, lookup)
        if a is None or b is None:
            return None
        op = expr.op
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            return _c_div(a, b)
        if op == "%":
            q = _c_div(a, b)
            return None if q is None else a - q * b
        if op == "<<":
            return a << b if 0 <= b < 64 else None
        if op == ">>":
            return a >> b if 0 <= b < 64 else None
        if op == "&":
            return a & b
        if op == "|":
            return a | b
        if op == "^":
            return a ^ b
        if op == "==":
            return int(a == b)
        if op == "!=":
            return int(a != b)
        if op == "<":
            return int(a < b)
        if op == "<=":
            return int(a <= b)
        if op == ">":
            return int(a > b)
        if op == ">=":
            return int(a >= b)
        if op == "&&":
            return int(a != 0 and b != 0)
        if op == "||":
            return int(a != 0 or b != 0)
    return None


def _program_vars(body: FunctionBody) -> set[str]:
    names = set(body.params) | set(body.locals)
    for node in body.cfg.nodes.values():
        if node.kind is NodeKind.ASSIGN and node.var:
            names.add(node.var)
        elif node.kind is NodeKind.CALL and node.lhs:
            names.add(node.lhs)
    return names


def _routine_of(node: CfgNode, spec_set: ThadSet) -> Optional[RoutineSpec]:
    try:
        return spec_set.routine(node.callee) if node.callee else None
    except KeyError:
        return None


def _param_index(routine: RoutineSpec, param: Optional[str]) -> Optional[int]:
    if param is None:
        return None
    for i, p in enumerate(routine.params):
        if p.name == param:
            return i
    return None


def resolve_discriminators(model: ProgramModel, spec_set: ThadSet) -> ProgramModel:
    """Attach discriminator constants to HAL call events, in place.

    Resolution precedence for a name: function-local variables first
    (through the propagated environment), then the platform constants
    table by name, then ``#define`` values, then arithmetic over those.
    An integer with no entry in the constants table becomes its decimal
    spelling, which matches no constrained pattern.
    """
    rev: dict[int, str] = {}
    for cname, value in spec_set.constants.items():
        if value is None:
            continue
        if value not in rev or cname < rev[value]:
            rev[value] = cname

    for body in model.functions.values():
        program_vars = _program_vars(body)

        def lookup(name: str) -> Optional[int]:
            if name in program_vars:
                return None  # a real variable; only the env may know it
            value = spec_set.constants.get(name)
            if value is not None:
                return value
            return model.defines.get(name)

        def transfer(node: CfgNode, env: dict) -> dict:
            if node.kind is NodeKind.ASSIGN and node.var:
                out = dict(env)
                value = _eval_expr(node.expr, env, lookup)
                if value is None:
                    out.pop(node.var, None)
                else:
                    out[node.var] = value
                return out
            if node.kind is NodeKind.CALL and node.lhs:
                out = dict(env)
                out.pop(node.lhs, None)
                return out
            return env

        ins = _must_forward(body.cfg, transfer)

        for node in body.cfg.call_nodes():
            routine = _routine_of(node, spec_set)
            if routine is None:
                continue
            idx = _param_index(routine, routine.discriminator_param)
            value_name: Optional[str] = None
            if idx is not None:
                arg = node.args[idx] if idx < len(node.args) else None
                if (isinstance(arg, Var) and arg.name not in program_vars
                        and arg.name in spec_set.constants):
                    value_name = arg.name
                elif arg is not None:
                    value = _eval_expr(arg, ins[node.id], lookup)
                    if value is not None:
                        value_name = rev.get(value, str(value))
            base = node.event or CallEvent(routine=node.callee)
            event = replace(
                base,
                discriminator_value=value_name,
                discriminator_unknown=(idx is not None and value_name is None),
            )
            body.cfg.replace_node(replace(node, event=event))
    return model


# ---------------------------------------------------------------------------
# Descriptor token flow
# ---------------------------------------------------------------------------

@dataclass
class TokenFlow:
    """Which node produced each descriptor token, per function."""

    origins: dict[str, dict[str, int]]


def build_token_flow(model: ProgramModel,
                     spec_set: ThadSet) -> tuple[ProgramModel, TokenFlow]:
    """Attach descriptor tokens to HAL call events, in place.

    Every call of a descriptor-returning routine mints one token.  A
    later call's descriptor argument carries that token exactly when the
    argument variable must hold that call's result on every path to the
    argument's use; otherwise the argument stays unknown.
    """
    origins: dict[str, dict[str, int]] = {}
    for fname, body in model.functions.items():
        produced: dict[int, str] = {}
        counter = 0
        for node in body.cfg.call_nodes():
            routine = _routine_of(node, spec_set)
            if routine is not None and routine.returns_descriptor:
                counter += 1
                produced[node.id] = f"t{counter}"
        origins[fname] = {tok: nid for nid, tok in produced.items()}

        def transfer(node: CfgNode, env: dict) -> dict:
            if node.kind is NodeKind.CALL and node.lhs:
                out = dict(env)
                if node.id in produced:
                    out[node.lhs] = produced[node.id]
                else:
                    out.pop(node.lhs, None)
                return out
            if node.kind is NodeKind.ASSIGN and node.var:
                out = dict(env)
                if isinstance(node.expr, Var) and node.expr.name in env:
                    out[node.var] = env[node.expr.name]
                else:
                    out.pop(node.var, None)
                return out
            return env

        ins = _must_forward(body.cfg, transfer)

        for node in body.cfg.call_nodes():
            routine = _routine_of(node, spec_set)
            if routine is None:
                continue
            idx = _param_index(routine, routine.descriptor_param)
            token: Optional[str] = None
            if idx is not None and idx < len(node.args):
                arg = node.args[idx]
                if isinstance(arg, Var):
                    token = ins[node.id].get(arg.name)
            base = node.event or CallEvent(routine=node.callee)
            event = replace(
                base,
                descriptor_token=token,
                descriptor_unknown=(idx is not None and token is None),
                produced_token=produced.get(node.id),
            )
            body.cfg.replace_node(replace(node, event=event))
    return model, TokenFlow(origins)


def preprocess(model: ProgramModel, spec_set: ThadSet,
               depth_limit: int = 16) -> ProgramModel:
    """Inline, resolve arguments, and thread tokens; the checker's input."""
    flat = inline_calls(model, depth_limit)
    resolve_discriminators(flat, spec_set)
    build_token_flow(flat, spec_set)
    return flat
