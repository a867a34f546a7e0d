"""Lexer, parser and syntax tree for the analyzable C subset.

The subset ("MiniC") covers the control and data skeleton of embedded
HAL client code: function definitions over ints and opaque pointers,
``int`` locals, assignments, direct calls, ``if``/``else``, ``while``,
``for``, ``switch`` over constants, ``return``, and ``#define NAME
<integer>``.  Everything a HAL call receives beyond its descriptor and
discriminator arguments is opaque and carried along unparsed (string
literals, ``&var``, arbitrary arithmetic).

Deliberate exclusions surface as diagnostics rather than crashes:
``goto`` and labels, pointer arithmetic/dereference writes, function
pointers, arrays, struct/typedef/enum, ``break`` outside ``switch``,
``continue``, and preprocessor machinery beyond ``#define`` of an
integer literal.  ``#include`` lines are tolerated and ignored so that
instrumented sources (which gain an ``assert.h`` include) stay
parseable, and comments of every kind are skipped, including ``/*@ ...
*/`` annotation comments.

Calls may appear anywhere in an expression; the control-flow lowering
hoists them out.  ``switch`` cases must end in ``break`` or ``return``
(fallthrough is rejected); several case labels may stack on one body.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from .diagnostics import Diagnostic, DiagnosticError

__all__ = [
    "MiniCError",
    "Program",
    "FunctionDef",
    "GlobalDecl",
    "parse_source",
    "unroll_loops",
]


class MiniCError(DiagnosticError):
    """Raised when a source file falls outside the accepted subset."""


# ---------------------------------------------------------------------------
# Syntax tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: int
    line: int = 0


@dataclass(frozen=True)
class Str:
    value: str
    line: int = 0


@dataclass(frozen=True)
class Var:
    name: str
    line: int = 0


@dataclass(frozen=True)
class Unary:
    op: str  # "-", "!", "~", "&"
    operand: "Expr"
    line: int = 0


@dataclass(frozen=True)
class Binary:
    op: str
    lhs: "Expr"
    rhs: "Expr"
    line: int = 0


@dataclass(frozen=True)
class CallExpr:
    callee: str
    args: tuple["Expr", ...]
    line: int = 0


Expr = Union[Num, Str, Var, Unary, Binary, CallExpr]


@dataclass(frozen=True)
class Declare:
    type_text: str
    name: str
    init: Optional[Expr]
    line: int = 0


@dataclass(frozen=True)
class Assign:
    name: str
    value: Expr
    line: int = 0


@dataclass(frozen=True)
class ExprStmt:
    expr: Expr
    line: int = 0


@dataclass(frozen=True)
class Return:
    value: Optional[Expr]
    line: int = 0


@dataclass(frozen=True)
class Block:
    stmts: tuple["Stmt", ...]
    line: int = 0


@dataclass(frozen=True)
class If:
    cond: Expr
    then: Block
    orelse: Optional[Block]
    line: int = 0


@dataclass(frozen=True)
class While:
    cond: Expr
    body: Block
    line: int = 0


@dataclass(frozen=True)
class For:
    init: Optional["Stmt"]
    cond: Optional[Expr]
    step: Optional["Stmt"]
    body: Block
    line: int = 0


@dataclass(frozen=True)
class SwitchCase:
    labels: tuple[Optional[Expr], ...]  # None = default
    body: Block
    line: int = 0


@dataclass(frozen=True)
class Switch:
    expr: Expr
    cases: tuple[SwitchCase, ...]
    line: int = 0


Stmt = Union[Declare, Assign, ExprStmt, Return, Block, If, While, For, Switch]


@dataclass(frozen=True)
class ParamDecl:
    type_text: str
    name: str
    line: int = 0


@dataclass(frozen=True)
class FunctionDef:
    name: str
    params: tuple[ParamDecl, ...]
    body: Block
    return_type: str = "int"
    varargs: bool = False
    line: int = 0


@dataclass(frozen=True)
class GlobalDecl:
    type_text: str
    name: str
    init: Optional[Expr]
    line: int = 0


@dataclass(frozen=True)
class Program:
    functions: tuple[FunctionDef, ...]
    globals: tuple[GlobalDecl, ...] = ()
    defines: dict[str, int] = field(default_factory=dict)
    path: str = "<input>"

    def function(self, name: str) -> FunctionDef:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Token:
    kind: str  # IDENT, NUM, STR, PUNCT, EOF
    text: str
    line: int
    col: int


_PUNCT2 = {
    "==", "!=", "<=", ">=", "&&", "||", "<<", ">>",
    "+=", "-=", "*=", "/=", "%=", "|=", "&=", "^=", "++", "--", "->",
}
_PUNCT1 = set("+-*/%<>=!&|^~(){}[];,.?:")

_TYPE_WORDS = {
    "void", "char", "short", "int", "long", "unsigned", "signed",
    "float", "double", "bool", "size_t", "ssize_t",
    "int8_t", "int16_t", "int32_t", "int64_t",
    "uint8_t", "uint16_t", "uint32_t", "uint64_t",
}


class _Lexer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1
        self.col = 1
        self.tokens: list[Token] = []
        self.defines: dict[str, int] = {}
        self.diags: list[Diagnostic] = []

    def error(self, message: str, code: str = "syntax", line: int | None = None,
              col: int | None = None) -> None:
        self.diags.append(
            Diagnostic(line or self.line, col or self.col, message, code)
        )

    def _advance(self, n: int = 1) -> None:
        for _ in range(n):
            if self.pos < len(self.text) and self.text[self.pos] == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
            self.pos += 1

    def _peek(self, offset: int = 0) -> str:
        i = self.pos + offset
        return self.text[i] if i < len(self.text) else ""

    def _at_line_start(self) -> bool:
        i = self.pos - 1
        while i >= 0 and self.text[i] in " \t":
            i -= 1
        return i < 0 or self.text[i] == "\n"

    def _directive(self) -> None:
        line, col = self.line, self.col
        start = self.pos
        while self.pos < len(self.text) and self._peek() != "\n":
            self._advance()
        body = self.text[start:self.pos].strip()
        parts = body.split()
        if parts[0] == "#include" or (parts[0] == "#" and parts[1:2] == ["include"]):
            return
        if parts[0] == "#define" and len(parts) == 3:
            name, value = parts[1], parts[2]
            try:
                self.defines[name] = int(value, 0)
                return
            except ValueError:
                self.error(
                    f"#define {name} must expand to an integer literal",
                    "unsupported-construct", line, col,
                )
                return
        self.error(
            f"unsupported preprocessor directive {body.split()[0]!r}",
            "unsupported-construct", line, col,
        )

    def run(self) -> None:
        while self.pos < len(self.text):
            ch = self._peek()
            if ch in " \t\r\n":
                self._advance()
                continue
            if ch == "#" and self._at_line_start():
                self._directive()
                continue
            if ch == "/" and self._peek(1) == "/":
                while self.pos < len(self.text) and self._peek() != "\n":
                    self._advance()
                continue
            if ch == "/" and self._peek(1) == "*":
                line, col = self.line, self.col
                self._advance(2)
                while self.pos < len(self.text) and not (
                    self._peek() == "*" and self._peek(1) == "/"
                ):
                    self._advance()
                if self.pos >= len(self.text):
                    self.error("unterminated comment", line=line, col=col)
                    return
                self._advance(2)
                continue
            if ch == '"':
                self._string()
                continue
            if ch == "'":
                self._char()
                continue
            if ch.isdigit():
                self._number()
                continue
            if ch.isalpha() or ch == "_":
                self._ident()
                continue
            two = ch + self._peek(1)
            if self.text.startswith("...", self.pos):
                self.tokens.append(Token("PUNCT", "...", self.line, self.col))
                self._advance(3)
                continue
            if two in _PUNCT2:
                self.tokens.append(Token("PUNCT", two, self.line, self.col))
                self._advance(2)
                continue
            if ch in _PUNCT1:
                self.tokens.append(Token("PUNCT", ch, self.line, self.col))
                self._advance()
                continue
            self.error(f"unexpected character {ch!r}")
            self._advance()
        self.tokens.append(Token("EOF", "", self.line, self.col))

    def _string(self) -> None:
        line, col = self.line, self.col
        self._advance()
        start = self.pos
        while self.pos < len(self.text) and self._peek() != '"':
            if self._peek() == "\\":
                self._advance()
            self._advance()
        if self.pos >= len(self.text):
            self.error("unterminated string literal", line=line, col=col)
            return
        value = self.text[start:self.pos]
        self._advance()
        self.tokens.append(Token("STR", value, line, col))

    def _char(self) -> None:
        line, col = self.line, self.col
        self._advance()
        start = self.pos
        while self.pos < len(self.text) and self._peek() != "'":
            if self._peek() == "\\":
                self._advance()
            self._advance()
        raw = self.text[start:self.pos]
        self._advance()
        # a char literal is just a small integer
        try:
            value = ord(raw.encode().decode("unicode_escape"))
        except (ValueError, UnicodeDecodeError):
            value = 0
        self.tokens.append(Token("NUM", str(value), line, col))

    def _number(self) -> None:
        line, col = self.line, self.col
        start = self.pos
        if self._peek() == "0" and self._peek(1) in "xX":
            self._advance(2)
            while self._peek() and self._peek() in "0123456789abcdefABCDEF":
                self._advance()
        else:
            while self._peek().isdigit():
                self._advance()
        # integer suffixes are irrelevant to the analysis
        while self._peek() and self._peek() in "uUlL":
            self._advance()
        text = self.text[start:self.pos].rstrip("uUlL")
        self.tokens.append(Token("NUM", text, line, col))

    def _ident(self) -> None:
        line, col = self.line, self.col
        start = self.pos
        while self._peek() and (self._peek().isalnum() or self._peek() == "_"):
            self._advance()
        self.tokens.append(Token("IDENT", self.text[start:self.pos], line, col))


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _Parser:
    def __init__(self, tokens: list[Token], defines: dict[str, int]):
        self.tokens = tokens
        self.pos = 0
        self.defines = defines
        self.diags: list[Diagnostic] = []

    # -- token helpers ------------------------------------------------------

    def peek(self, offset: int = 0) -> Token:
        i = min(self.pos + offset, len(self.tokens) - 1)
        return self.tokens[i]

    def next(self) -> Token:
        tok = self.peek()
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def at(self, text: str) -> bool:
        tok = self.peek()
        return tok.text == text and tok.kind in ("PUNCT", "IDENT")

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.next()
            return True
        return False

    def expect(self, text: str) -> Token:
        tok = self.peek()
        if not self.accept(text):
            raise _Reject(tok, f"expected {text!r}, found {tok.text!r}")
        return tok

    def error(self, tok: Token, message: str, code: str = "syntax") -> None:
        self.diags.append(Diagnostic(tok.line, tok.col, message, code))

    # -- types --------------------------------------------------------------

    def at_type(self) -> bool:
        tok = self.peek()
        return tok.kind == "IDENT" and (tok.text in _TYPE_WORDS or tok.text == "const")

    def parse_type(self) -> str:
        words = []
        while self.at_type():
            words.append(self.next().text)
        while self.accept("*"):
            words.append("*")
        # "const char *path" style post-star const
        while self.at("const"):
            words.append(self.next().text)
            while self.accept("*"):
                words.append("*")
        return " ".join(words)

    # -- top level ----------------------------------------------------------

    def parse_program(self, path: str) -> Program:
        functions: list[FunctionDef] = []
        globals_: list[GlobalDecl] = []
        while self.peek().kind != "EOF":
            tok = self.peek()
            if tok.kind == "IDENT" and tok.text in ("struct", "typedef", "enum", "union"):
                self.error(
                    tok, f"{tok.text} is outside the accepted subset",
                    "unsupported-construct",
                )
                self._skip_past(";", "}")
                continue
            while self.peek().kind == "IDENT" and self.peek().text in (
                "extern", "static", "inline",
            ):
                self.next()
            if not self.at_type():
                self.error(tok, f"expected a declaration, found {tok.text!r}")
                self._skip_past(";", "}")
                continue
            try:
                item = self._top_level_item()
            except _Reject as r:
                self.error(r.token, r.message)
                self._skip_past(";", "}")
                continue
            if isinstance(item, FunctionDef):
                functions.append(item)
            elif isinstance(item, GlobalDecl):
                globals_.append(item)
        return Program(
            tuple(functions), tuple(globals_), dict(self.defines), path
        )

    def _top_level_item(self):
        type_text = self.parse_type()
        name_tok = self.next()
        if name_tok.kind != "IDENT":
            raise _Reject(name_tok, f"expected a name, found {name_tok.text!r}")
        if self.at("("):
            return self._function_rest(type_text, name_tok)
        init = None
        if self.accept("="):
            init = self.parse_expr()
        self.expect(";")
        return GlobalDecl(type_text, name_tok.text, init, name_tok.line)

    def _function_rest(self, return_type: str, name_tok: Token):
        self.expect("(")
        params: list[ParamDecl] = []
        varargs = False
        if not self.at(")"):
            while True:
                if self.at("..."):
                    self.next()
                    varargs = True
                    break
                if self.at("void") and self.peek(1).text == ")":
                    self.next()
                    break
                ptype = self.parse_type()
                ptok = self.next()
                if ptok.kind != "IDENT":
                    raise _Reject(ptok, f"expected a param name, found {ptok.text!r}")
                params.append(ParamDecl(ptype, ptok.text, ptok.line))
                if not self.accept(","):
                    break
        self.expect(")")
        if self.accept(";"):
            return None  # prototype only; externals need no body
        body = self.parse_block()
        return FunctionDef(
            name_tok.text, tuple(params), body, return_type, varargs, name_tok.line
        )

    def _skip_past(self, *stops: str) -> None:
        depth = 0
        while self.peek().kind != "EOF":
            tok = self.next()
            if tok.text == "{":
                depth += 1
            elif tok.text == "}":
                depth -= 1
                if depth <= 0 and "}" in stops:
                    return
            elif tok.text in stops and depth == 0:
                return

    # -- statements ----------------------------------------------------------

    def parse_block(self) -> Block:
        open_tok = self.expect("{")
        stmts: list[Stmt] = []
        while not self.at("}") and self.peek().kind != "EOF":
            stmt = self.parse_stmt()
            if stmt is not None:
                stmts.append(stmt)
        self.expect("}")
        return Block(tuple(stmts), open_tok.line)

    def parse_stmt(self) -> Optional[Stmt]:
        tok = self.peek()
        try:
            return self._stmt_inner(tok)
        except _Reject as r:
            self.error(r.token, r.message, r.code)
            self._skip_past(";", "}")
            return None

    def _stmt_inner(self, tok: Token) -> Optional[Stmt]:
        if tok.text == "{":
            return self.parse_block()
        if self.accept(";"):
            return None
        if tok.kind == "IDENT":
            if tok.text == "goto":
                raise _Reject(tok, "goto is outside the accepted subset",
                              "unsupported-construct")
            if tok.text == "continue":
                raise _Reject(tok, "continue is outside the accepted subset",
                              "unsupported-construct")
            if tok.text == "break":
                raise _Reject(tok, "break outside switch is outside the accepted "
                                   "subset", "unsupported-construct")
            if tok.text == "if":
                return self._parse_if()
            if tok.text == "while":
                return self._parse_while()
            if tok.text == "for":
                return self._parse_for()
            if tok.text == "switch":
                return self._parse_switch()
            if tok.text == "return":
                self.next()
                value = None if self.at(";") else self.parse_expr()
                self.expect(";")
                return Return(value, tok.line)
            if self.at_type():
                return self._parse_declare()
            # label?  `name:` is goto territory
            if self.peek(1).text == ":":
                raise _Reject(tok, "labels are outside the accepted subset",
                              "unsupported-construct")
            return self._parse_simple_stmt()
        if tok.text == "*":
            raise _Reject(tok, "pointer-dereference writes are outside the "
                               "accepted subset", "unsupported-construct")
        raise _Reject(tok, f"cannot parse statement at {tok.text!r}")

    def _parse_declare(self) -> Declare:
        start = self.peek()
        type_text = self.parse_type()
        name_tok = self.next()
        if name_tok.kind != "IDENT":
            raise _Reject(name_tok, f"expected a name, found {name_tok.text!r}")
        if self.at("["):
            raise _Reject(name_tok, "arrays are outside the accepted subset",
                          "unsupported-construct")
        if self.at(","):
            raise _Reject(self.peek(), "one declarator per statement",
                          "unsupported-construct")
        init = None
        if self.accept("="):
            init = self.parse_expr()
        self.expect(";")
        return Declare(type_text, name_tok.text, init, start.line)

    def _parse_simple_stmt(self, terminated: bool = True) -> Stmt:
        """Assignment, compound assignment, ++/--, or a bare call."""
        tok = self.next()
        name = tok.text
        if self.at("="):
            self.next()
            value = self.parse_expr()
            if terminated:
                self.expect(";")
            return Assign(name, value, tok.line)
        for op in ("+=", "-=", "*=", "/=", "%=", "|=", "&=", "^="):
            if self.at(op):
                self.next()
                value = self.parse_expr()
                if terminated:
                    self.expect(";")
                return Assign(name, Binary(op[0], Var(name, tok.line), value, tok.line),
                              tok.line)
        for op, delta in (("++", 1), ("--", -1)):
            if self.at(op):
                self.next()
                if terminated:
                    self.expect(";")
                return Assign(
                    name,
                    Binary("+", Var(name, tok.line), Num(delta, tok.line), tok.line),
                    tok.line,
                )
        if self.at("("):
            call = self._parse_call(tok)
            if terminated:
                self.expect(";")
            return ExprStmt(call, tok.line)
        raise _Reject(tok, f"cannot parse statement at {name!r}")

    def _parse_if(self) -> If:
        tok = self.next()
        self.expect("(")
        cond = self.parse_expr()
        self.expect(")")
        then = self._branch_body()
        orelse = None
        if self.accept("else"):
            if self.at("if"):
                nested = self._parse_if()
                orelse = Block((nested,), nested.line)
            else:
                orelse = self._branch_body()
        return If(cond, then, orelse, tok.line)

    def _branch_body(self) -> Block:
        if self.at("{"):
            return self.parse_block()
        tok = self.peek()
        stmt = self.parse_stmt()
        return Block(() if stmt is None else (stmt,), tok.line)

    def _parse_while(self) -> While:
        tok = self.next()
        self.expect("(")
        cond = self.parse_expr()
        self.expect(")")
        return While(cond, self._branch_body(), tok.line)

    def _parse_for(self) -> For:
        tok = self.next()
        self.expect("(")
        init: Optional[Stmt] = None
        if not self.at(";"):
            if self.at_type():
                init = self._parse_declare()
            else:
                init = self._parse_simple_stmt()
        else:
            self.next()
        cond = None if self.at(";") else self.parse_expr()
        self.expect(";")
        step = None if self.at(")") else self._parse_simple_stmt(terminated=False)
        self.expect(")")
        return For(init, cond, step, self._branch_body(), tok.line)

    def _parse_switch(self) -> Switch:
        tok = self.next()
        self.expect("(")
        expr = self.parse_expr()
        self.expect(")")
        self.expect("{")
        cases: list[SwitchCase] = []
        while not self.at("}") and self.peek().kind != "EOF":
            labels: list[Optional[Expr]] = []
            label_tok = self.peek()
            while True:
                if self.accept("case"):
                    labels.append(self.parse_expr())
                    self.expect(":")
                elif self.accept("default"):
                    labels.append(None)
                    self.expect(":")
                else:
                    break
            if not labels:
                raise _Reject(self.peek(), "expected a case label")
            stmts: list[Stmt] = []
            closed = False
            while not self.at("}") and self.peek().kind != "EOF":
                if self.at("case") or self.at("default"):
                    break
                if self.accept("break"):
                    self.expect(";")
                    closed = True
                    break
                inner = self.parse_stmt()
                if inner is not None:
                    stmts.append(inner)
                    if isinstance(inner, Return):
                        closed = True
                        break
            if not closed and not self.at("}"):
                raise _Reject(
                    label_tok,
                    "switch fallthrough is outside the accepted subset "
                    "(end the case with break or return)",
                    "unsupported-construct",
                )
            cases.append(SwitchCase(tuple(labels), Block(tuple(stmts), label_tok.line),
                                    label_tok.line))
        self.expect("}")
        return Switch(expr, tuple(cases), tok.line)

    # -- expressions ---------------------------------------------------------

    _BINARY_LEVELS = [
        ["||"],
        ["&&"],
        ["|"],
        ["^"],
        ["&"],
        ["==", "!="],
        ["<", "<=", ">", ">="],
        ["<<", ">>"],
        ["+", "-"],
        ["*", "/", "%"],
    ]

    def parse_expr(self, level: int = 0) -> Expr:
        if level >= len(self._BINARY_LEVELS):
            return self._parse_unary()
        lhs = self.parse_expr(level + 1)
        ops = self._BINARY_LEVELS[level]
        while self.peek().kind == "PUNCT" and self.peek().text in ops:
            op_tok = self.next()
            rhs = self.parse_expr(level + 1)
            lhs = Binary(op_tok.text, lhs, rhs, op_tok.line)
        return lhs

    def _parse_unary(self) -> Expr:
        tok = self.peek()
        if tok.text in ("-", "!", "~", "&") and tok.kind == "PUNCT":
            self.next()
            operand = self._parse_unary()
            if tok.text == "&" and not isinstance(operand, Var):
                raise _Reject(tok, "address-of applies to plain variables only",
                              "unsupported-construct")
            return Unary(tok.text, operand, tok.line)
        if tok.text == "*" and tok.kind == "PUNCT":
            raise _Reject(tok, "pointer dereference is outside the accepted subset",
                          "unsupported-construct")
        return self._parse_primary()

    def _parse_primary(self) -> Expr:
        tok = self.next()
        if tok.kind == "NUM":
            return Num(int(tok.text, 0), tok.line)
        if tok.kind == "STR":
            return Str(tok.text, tok.line)
        if tok.kind == "IDENT":
            if tok.text == "sizeof":
                raise _Reject(tok, "sizeof is outside the accepted subset",
                              "unsupported-construct")
            if self.at("("):
                return self._parse_call(tok)
            return Var(tok.text, tok.line)
        if tok.text == "(":
            if self.at_type():
                self.parse_type()  # a cast changes nothing the analyses see
                self.expect(")")
                return self._parse_unary()
            inner = self.parse_expr()
            self.expect(")")
            return inner
        raise _Reject(tok, f"cannot parse expression at {tok.text!r}")

    def _parse_call(self, name_tok: Token) -> CallExpr:
        self.expect("(")
        args: list[Expr] = []
        if not self.at(")"):
            while True:
                args.append(self.parse_expr())
                if not self.accept(","):
                    break
        self.expect(")")
        return CallExpr(name_tok.text, tuple(args), name_tok.line)


class _Reject(Exception):
    def __init__(self, token: Token, message: str, code: str = "syntax"):
        self.token = token
        self.message = message
        self.code = code
        super().__init__(message)


def parse_source(text: str, path: str = "<input>") -> Program:
    """Parse MiniC source into a syntax tree, or raise :class:`MiniCError`."""
    lexer = _Lexer(text)
    lexer.run()
    parser = _Parser(lexer.tokens, lexer.defines)
    program = parser.parse_program(path)
    diags = sorted(lexer.diags + parser.diags, key=lambda d: (d.line, d.column))
    if diags:
        raise MiniCError(diags, path)
    return program


# ---------------------------------------------------------------------------
# Loop unrolling (feeds the exhaustive path oracle)
# ---------------------------------------------------------------------------

def unroll_loops(program: Program, k: int) -> Program:
    """Replace every loop with ``k`` nested guarded copies of its body.

    The result is loop-free and every one of its control-flow paths
    projects onto a path of the original program (iterations beyond the
    k-th are simply not represented), which is exactly what a must-style
    checker needs from an under-approximating oracle.
    """
    if k < 1:
        raise ValueError("unroll factor must be >= 1")

    def stmt(s: Stmt) -> Stmt:
        if isinstance(s, Block):
            return block(s)
        if isinstance(s, If):
            return If(s.cond, block(s.then),
                      block(s.orelse) if s.orelse else None, s.line)
        if isinstance(s, While):
            body = block(s.body)
            out: Optional[If] = None
            for _ in range(k):
                inner = body.stmts + ((out,) if out else ())
                out = If(s.cond, Block(inner, s.line), None, s.line)
            assert out is not None
            return out
        if isinstance(s, For):
            body = block(s.body)
            cond = s.cond if s.cond is not None else Num(1, s.line)
            out = None
            for _ in range(k):
                inner = body.stmts
                if s.step is not None:
                    inner = inner + (s.step,)
                if out is not None:
                    inner = inner + (out,)
                out = If(cond, Block(inner, s.line), None, s.line)
            assert out is not None
            if s.init is not None:
                return Block((s.init, out), s.line)
            return out
        if isinstance(s, Switch):
            cases = tuple(
                SwitchCase(c.labels, block(c.body), c.line) for c in s.cases
            )
            return Switch(s.expr, cases, s.line)
        return s

    def block(b: Block) -> Block:
        return Block(tuple(stmt(s) for s in b.stmts), b.line)

    functions = tuple(
        FunctionDef(f.name, f.params, block(f.body), f.return_type, f.varargs, f.line)
        for f in program.functions
    )
    return Program(functions, program.globals, dict(program.defines), program.path)
