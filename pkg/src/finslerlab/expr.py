"""Coordinate/fiber scalar expressions: parsing, exact symbolic derivatives,
and numeric evaluation.

Expressions are immutable, hash-consed DAG nodes. Structural equality is
object identity, so shared subexpressions are stored and evaluated once
(common-subexpression caching falls out of the representation). Smart
constructors fold constants and prune arithmetic identities (0+e, 1*e, 0*e,
e^1, ...) but perform no further simplification.

Symbols are position variables ``x1..xn``, fiber variables ``v1..vn`` and
declared named parameters. ``sqrt(e)`` is represented as ``e^0.5`` so that
power laws compose; the printer renders it back as ``sqrt``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Expr",
    "ParseDiagnostic",
    "ParseError",
    "EvalError",
    "UnboundSymbolError",
    "DomainError",
    "const",
    "sym",
    "xvar",
    "vvar",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "call",
    "parse_expression",
    "differentiate",
    "evaluate",
    "substitute",
    "free_symbols",
    "to_string",
    "is_const",
    "const_value",
    "ExprProgram",
]

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt")

_UNARY_FUNCS = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "log": math.log,
}


class ParseError(Exception):
    """Raised on syntax errors, unknown identifiers and out-of-range indices."""

    def __init__(self, diagnostic: "ParseDiagnostic"):
        super().__init__(f"at offset {diagnostic.offset}: {diagnostic.message}")
        self.diagnostic = diagnostic


@dataclass(frozen=True)
class ParseDiagnostic:
    offset: int
    token: str
    message: str


class EvalError(Exception):
    pass


class UnboundSymbolError(EvalError):
    def __init__(self, name: str):
        super().__init__(f"unbound symbol '{name}'")
        self.name = name


class DomainError(EvalError):
    """Evaluation hit an undefined operation; carries the offending subexpression."""

    def __init__(self, message: str, subexpression: "Expr"):
        text = to_string(subexpression)
        if len(text) > 120:
            text = text[:117] + "..."
        super().__init__(f"{message} in '{text}'")
        self.subexpression = subexpression


class Expr:
    """Interned expression node. Do not instantiate directly; use the
    constructor functions (``const``, ``sym``, ``add``, ...)."""

    __slots__ = ("op", "args", "payload", "uid")

    _intern: dict = {}
    _uids = itertools.count()

    def __new__(cls, op: str, args: tuple, payload):
        key = (op, payload, tuple(a.uid for a in args))
        node = cls._intern.get(key)
        if node is None:
            node = object.__new__(cls)
            node.op = op
            node.args = args
            node.payload = payload
            node.uid = next(cls._uids)
            cls._intern[key] = node
        return node

    def __str__(self) -> str:
        return to_string(self)

    def __repr__(self) -> str:
        return f"Expr<{to_string(self)}>"

    # identity-based __eq__/__hash__ are correct under interning


def const(value: float) -> Expr:
    value = float(value)
    if value == 0.0:
        value = 0.0  # normalize -0.0 so interning treats it as +0.0
    return Expr("const", (), value)


def sym(name: str) -> Expr:
    return Expr("sym", (), name)


def xvar(i: int) -> Expr:
    return sym(f"x{i}")


def vvar(i: int) -> Expr:
    return sym(f"v{i}")


def is_const(e: Expr) -> bool:
    return e.op == "const"


def const_value(e: Expr) -> float:
    return e.payload


_ZERO = const(0.0)
_ONE = const(1.0)


def add(a: Expr, b: Expr) -> Expr:
    if is_const(a) and is_const(b):
        return const(a.payload + b.payload)
    if is_const(a) and a.payload == 0.0:
        return b
    if is_const(b) and b.payload == 0.0:
        return a
    return Expr("add", (a, b), None)


def sub(a: Expr, b: Expr) -> Expr:
    if is_const(a) and is_const(b):
        return const(a.payload - b.payload)
    if is_const(b) and b.payload == 0.0:
        return a
    if is_const(a) and a.payload == 0.0:
        return neg(b)
    return Expr("sub", (a, b), None)


def neg(a: Expr) -> Expr:
    if is_const(a):
        return const(-a.payload)
    if a.op == "neg":
        return a.args[0]
    return Expr("neg", (a,), None)


def mul(a: Expr, b: Expr) -> Expr:
    if is_const(a) and is_const(b):
        return const(a.payload * b.payload)
    if is_const(a):
        if a.payload == 0.0:
            return _ZERO
        if a.payload == 1.0:
            return b
    if is_const(b):
        if b.payload == 0.0:
            return _ZERO
        if b.payload == 1.0:
            return a
    return Expr("mul", (a, b), None)


def div(a: Expr, b: Expr) -> Expr:
    if is_const(b) and b.payload != 0.0:
        if is_const(a):
            return const(a.payload / b.payload)
        if b.payload == 1.0:
            return a
    if is_const(a) and a.payload == 0.0:
        return _ZERO
    return Expr("div", (a, b), None)


def _is_integral(p: float) -> bool:
    return float(p).is_integer()


def power(a: Expr, b: Expr) -> Expr:
    if is_const(b):
        p = b.payload
        if p == 1.0:
            return a
        if p == 0.0:
            return _ONE
        if is_const(a):
            try:
                r = a.payload**p
            except (ValueError, ZeroDivisionError, OverflowError):
                r = None  # out of domain; keep the node so evaluation reports it
            if isinstance(r, float):  # a**p is complex for negative a, fractional p
                return const(r)
        # (e^q)^p = e^(qp) whenever q forces e >= 0 (non-integral q) or both
        # exponents are integral; not valid for e.g. (e^2)^0.5 = |e|.
        if a.op == "pow" and is_const(a.args[1]):
            q = a.args[1].payload
            if not _is_integral(q) or (_is_integral(q) and _is_integral(p)):
                return power(a.args[0], const(q * p))
    return Expr("pow", (a, b), None)


def call(fname: str, a: Expr) -> Expr:
    if fname == "sqrt":
        return power(a, const(0.5))
    if fname not in _UNARY_FUNCS:
        raise ValueError(f"unknown function '{fname}'")
    if is_const(a):
        try:
            return const(_UNARY_FUNCS[fname](a.payload))
        except (ValueError, OverflowError):
            pass
    return Expr("call", (a,), fname)


# ---------------------------------------------------------------------------
# parsing


_TOKEN_KINDS = ("number", "ident", "op", "lparen", "rparen", "end")


def _tokenize(text: str):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            lit = text[i:j]
            try:
                value = float(lit)
            except ValueError:
                raise ParseError(ParseDiagnostic(i, lit, f"malformed number '{lit}'"))
            tokens.append(("number", lit, i, value))
            i = j
        elif c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("ident", text[i:j], i, None))
            i = j
        elif c in "+-*/^":
            tokens.append(("op", c, i, None))
            i += 1
        elif c == "(":
            tokens.append(("lparen", c, i, None))
            i += 1
        elif c == ")":
            tokens.append(("rparen", c, i, None))
            i += 1
        else:
            raise ParseError(ParseDiagnostic(i, c, f"unexpected character '{c}'"))
    tokens.append(("end", "", n, None))
    return tokens


class _Parser:
    def __init__(self, text: str, dim: int, params):
        self.text = text
        self.dim = dim
        self.params = frozenset(params)
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def fail(self, tok, message):
        raise ParseError(ParseDiagnostic(tok[2], tok[1], message))

    def expression(self) -> Expr:
        node = self.term()
        while self.peek()[:2] in (("op", "+"), ("op", "-")):
            op = self.advance()[1]
            rhs = self.term()
            node = add(node, rhs) if op == "+" else sub(node, rhs)
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek()[:2] in (("op", "*"), ("op", "/")):
            op = self.advance()[1]
            rhs = self.unary()
            node = mul(node, rhs) if op == "*" else div(node, rhs)
        return node

    def unary(self) -> Expr:
        if self.peek()[:2] == ("op", "-"):
            self.advance()
            return neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        node = self.atom()
        while self.peek()[:2] == ("op", "^"):
            self.advance()
            node = power(node, self.exponent())
        return node

    def exponent(self) -> Expr:
        # exponents are atoms (optionally negated); '^' itself is left-associative
        if self.peek()[:2] == ("op", "-"):
            self.advance()
            return neg(self.exponent())
        return self.atom()

    def atom(self) -> Expr:
        tok = self.advance()
        kind, text, offset, value = tok
        if kind == "number":
            return const(value)
        if kind == "lparen":
            node = self.expression()
            closing = self.advance()
            if closing[0] != "rparen":
                self.fail(closing, "expected ')'")
            return node
        if kind == "ident":
            if self.peek()[0] == "lparen":
                if text not in FUNCTIONS:
                    self.fail(tok, f"unknown function '{text}'")
                self.advance()
                arg = self.expression()
                closing = self.advance()
                if closing[0] != "rparen":
                    self.fail(closing, "expected ')' closing function argument")
                return call(text, arg)
            return self.symbol(tok)
        self.fail(tok, f"unexpected token '{text}'" if text else "unexpected end of input")

    def symbol(self, tok) -> Expr:
        text = tok[1]
        if text in self.params:
            return sym(text)
        if len(text) >= 2 and text[0] in "xv" and text[1:].isdigit():
            index = int(text[1:])
            if not 1 <= index <= self.dim:
                self.fail(tok, f"variable index out of range: '{text}' with dim {self.dim}")
            return sym(text)
        if text in FUNCTIONS:
            self.fail(tok, f"function '{text}' requires an argument list")
        self.fail(tok, f"unknown identifier '{text}'")


def parse_expression(text: str, dim: int, params=()) -> Expr:
    """Parse an infix expression over x1..xdim, v1..vdim and named parameters.

    Grammar: standard infix with precedence power > unary minus > ``*``, ``/``
    > ``+``, ``-``; all binary operators associate to the left; parentheses
    group; functions are ``sin cos tan exp log sqrt``. Raises :class:`ParseError`
    with a byte-offset diagnostic on malformed input.
    """
    if not text or not text.strip():
        raise ParseError(ParseDiagnostic(0, "", "empty expression"))
    if dim < 1:
        raise ValueError("dim must be a positive integer")
    for p in params:
        if p in FUNCTIONS or (len(p) >= 2 and p[0] in "xv" and p[1:].isdigit()):
            raise ValueError(f"parameter name '{p}' collides with a builtin symbol")
    parser = _Parser(text, dim, params)
    node = parser.expression()
    trailing = parser.peek()
    if trailing[0] != "end":
        parser.fail(trailing, f"unexpected trailing input '{trailing[1]}'")
    return node


# ---------------------------------------------------------------------------
# differentiation


_DIFF_CACHE: dict = {}


def _sym_name(var) -> str:
    if isinstance(var, Expr):
        if var.op != "sym":
            raise ValueError("differentiation variable must be a symbol")
        return var.payload
    return str(var)


def _diff_node(node: Expr, var: str, dargs) -> Expr:
    op = node.op
    if op == "const":
        return _ZERO
    if op == "sym":
        return _ONE if node.payload == var else _ZERO
    if op == "add":
        return add(dargs[0], dargs[1])
    if op == "sub":
        return sub(dargs[0], dargs[1])
    if op == "neg":
        return neg(dargs[0])
    if op == "mul":
        a, b = node.args
        return add(mul(dargs[0], b), mul(a, dargs[1]))
    if op == "div":
        a, b = node.args
        return div(sub(mul(dargs[0], b), mul(a, dargs[1])), power(b, const(2.0)))
    if op == "pow":
        a, b = node.args
        da, db = dargs
        if is_const(b):
            return mul(mul(b, power(a, const(b.payload - 1.0))), da)
        # general a^b: a^b * (db*log(a) + b*da/a)
        return mul(node, add(mul(db, call("log", a)), mul(b, div(da, a))))
    if op == "call":
        (a,) = node.args
        (da,) = dargs
        f = node.payload
        if f == "sin":
            return mul(call("cos", a), da)
        if f == "cos":
            return neg(mul(call("sin", a), da))
        if f == "tan":
            return div(da, power(call("cos", a), const(2.0)))
        if f == "exp":
            return mul(node, da)
        if f == "log":
            return div(da, a)
    raise AssertionError(f"unhandled node op '{op}'")


def differentiate(e: Expr, var) -> Expr:
    """Exact partial derivative of ``e`` with respect to a symbol.

    ``var`` may be a symbol name ("x1", "v2", a parameter) or a symbol node.
    Results are memoized globally over the interned DAG, so repeated and
    higher derivatives stay proportional to the DAG size.
    """
    name = _sym_name(var)
    cache = _DIFF_CACHE
    key = (e.uid, name)
    if key in cache:
        return cache[key]
    stack = [e]
    while stack:
        node = stack[-1]
        nkey = (node.uid, name)
        if nkey in cache:
            stack.pop()
            continue
        pending = [c for c in node.args if (c.uid, name) not in cache]
        if pending:
            stack.extend(pending)
            continue
        cache[nkey] = _diff_node(node, name, [cache[(c.uid, name)] for c in node.args])
        stack.pop()
    return cache[key]


# ---------------------------------------------------------------------------
# evaluation


def _apply_pow(base: float, expo: float, node: Expr) -> float:
    if _is_integral(expo):
        if base == 0.0 and expo < 0.0:
            raise DomainError("zero raised to a negative power", node)
    else:
        if base < 0.0:
            raise DomainError("negative base under a fractional power", node)
        if base == 0.0 and expo <= 0.0:
            raise DomainError("zero raised to a non-positive fractional power", node)
    try:
        return float(base**expo)
    except OverflowError:
        raise DomainError("overflow in power", node)


def evaluate(e: Expr, bindings: dict) -> float:
    """Evaluate with all free symbols bound to reals.

    Raises :class:`UnboundSymbolError` for missing symbols and
    :class:`DomainError` (naming the offending subexpression) for log of a
    non-positive value, division by zero and invalid powers.
    """
    values: dict = {}
    stack = [e]
    while stack:
        node = stack[-1]
        if node.uid in values:
            stack.pop()
            continue
        pending = [c for c in node.args if c.uid not in values]
        if pending:
            stack.extend(pending)
            continue
        stack.pop()
        op = node.op
        if op == "const":
            r = node.payload
        elif op == "sym":
            try:
                r = float(bindings[node.payload])
            except KeyError:
                raise UnboundSymbolError(node.payload)
        else:
            a = values[node.args[0].uid]
            if op == "add":
                r = a + values[node.args[1].uid]
            elif op == "sub":
                r = a - values[node.args[1].uid]
            elif op == "neg":
                r = -a
            elif op == "mul":
                r = a * values[node.args[1].uid]
            elif op == "div":
                b = values[node.args[1].uid]
                if b == 0.0:
                    raise DomainError("division by zero", node)
                r = a / b
            elif op == "pow":
                r = _apply_pow(a, values[node.args[1].uid], node)
            else:  # call
                f = node.payload
                if f == "log":
                    if a <= 0.0:
                        raise DomainError("log of a non-positive value", node)
                    r = math.log(a)
                else:
                    try:
                        r = _UNARY_FUNCS[f](a)
                    except (ValueError, OverflowError):
                        raise DomainError(f"domain error in {f}", node)
        values[node.uid] = r
    return values[e.uid]


# ---------------------------------------------------------------------------
# structure utilities


def free_symbols(e: Expr) -> set:
    seen = set()
    names = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if node.uid in seen:
            continue
        seen.add(node.uid)
        if node.op == "sym":
            names.add(node.payload)
        stack.extend(node.args)
    return names


def substitute(e: Expr, mapping: dict) -> Expr:
    """Replace symbols by expressions; ``mapping`` maps symbol names to Expr."""
    out: dict = {}
    stack = [e]
    while stack:
        node = stack[-1]
        if node.uid in out:
            stack.pop()
            continue
        pending = [c for c in node.args if c.uid not in out]
        if pending:
            stack.extend(pending)
            continue
        stack.pop()
        if node.op == "sym" and node.payload in mapping:
            out[node.uid] = mapping[node.payload]
        elif not node.args:
            out[node.uid] = node
        else:
            args = [out[c.uid] for c in node.args]
            if node.op == "add":
                r = add(*args)
            elif node.op == "sub":
                r = sub(*args)
            elif node.op == "neg":
                r = neg(*args)
            elif node.op == "mul":
                r = mul(*args)
            elif node.op == "div":
                r = div(*args)
            elif node.op == "pow":
                r = power(*args)
            else:
                r = call(node.payload, *args)
            out[node.uid] = r
    return out[e.uid]


# ---------------------------------------------------------------------------
# printing


_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def _prec(e: Expr) -> int:
    if e.op == "const" and e.payload < 0:
        return _PREC["neg"]
    return _PREC.get(e.op, 5)


def _fmt_const(value: float) -> str:
    if value.is_integer() and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def to_string(e: Expr) -> str:
    op = e.op
    if op == "const":
        return _fmt_const(e.payload)
    if op == "sym":
        return e.payload
    if op == "neg":
        inner = to_string(e.args[0])
        if _prec(e.args[0]) < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}"
    if op == "call":
        return f"{e.payload}({to_string(e.args[0])})"
    if op == "pow":
        base, expo = e.args
        if is_const(expo) and expo.payload == 0.5:
            return f"sqrt({to_string(base)})"
        base_s = to_string(base)
        if _prec(base) < 5:  # powers of non-atoms always parenthesized
            base_s = f"({base_s})"
        if is_const(expo):
            expo_s = _fmt_const(expo.payload)
        elif expo.op == "sym":
            expo_s = expo.payload
        else:
            expo_s = f"({to_string(expo)})"
        return f"{base_s}^{expo_s}"
    a, b = e.args
    prec = _PREC[op]
    left = to_string(a)
    if _prec(a) < prec:
        left = f"({left})"
    right = to_string(b)
    if _prec(b) <= prec:
        right = f"({right})"
    if op in ("add", "sub"):
        glyph = " + " if op == "add" else " - "
    else:
        glyph = "*" if op == "mul" else "/"
    return f"{left}{glyph}{right}"


# ---------------------------------------------------------------------------
# compiled programs


_CODEGEN_NODE_LIMIT = 50_000

_SCALAR_NS = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "log": math.log,
}
_ARRAY_NS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
}


class ExprProgram:
    """Fast evaluator for a fixed list of expression roots.

    Produces a linear tape over the shared DAG and, for moderate sizes,
    compiles it to a Python function. ``run_scalar`` evaluates at one
    ``(x, v)`` point; ``run_batch`` evaluates at many points at once with
    numpy, returning an array of shape ``(npoints, nroots)``. The compiled
    paths do not diagnose domain violations; they surface as exceptions
    (scalar) or non-finite entries (batch). Use :func:`evaluate` when precise
    diagnostics are needed.
    """

    def __init__(self, roots, dim: int, params: dict | None = None):
        self.roots = list(roots)
        self.dim = dim
        self.params = dict(params or {})
        self._tape, self._root_slots, self._sym_slots = self._linearize()
        self._scalar_fn = None
        self._array_fn = None
        if len(self._tape) <= _CODEGEN_NODE_LIMIT:
            src = self._emit()
            self._scalar_fn = self._compile(src, _SCALAR_NS)
            self._array_fn = self._compile(src, _ARRAY_NS)

    def _linearize(self):
        order = []
        slot: dict = {}
        stack = [r for r in reversed(self.roots)]
        while stack:
            node = stack[-1]
            if node.uid in slot:
                stack.pop()
                continue
            pending = [c for c in node.args if c.uid not in slot]
            if pending:
                stack.extend(pending)
                continue
            stack.pop()
            slot[node.uid] = len(order)
            order.append(node)
        sym_slots = {}
        for node in order:
            if node.op == "sym":
                sym_slots[node.payload] = slot[node.uid]
        return order, [slot[r.uid] for r in self.roots], sym_slots

    def _sym_source(self, name: str) -> str:
        if len(name) >= 2 and name[0] == "x" and name[1:].isdigit():
            return f"x[{int(name[1:]) - 1}]"
        if len(name) >= 2 and name[0] == "v" and name[1:].isdigit():
            return f"v[{int(name[1:]) - 1}]"
        if name in self.params:
            return repr(float(self.params[name]))
        raise UnboundSymbolError(name)

    def _emit(self) -> str:
        slot_of = {node.uid: i for i, node in enumerate(self._tape)}
        lines = ["def _program(x, v):"]
        for i, node in enumerate(self._tape):
            op = node.op
            if op == "const":
                rhs = repr(node.payload)
            elif op == "sym":
                rhs = self._sym_source(node.payload)
            else:
                a = [f"t{slot_of[c.uid]}" for c in node.args]
                if op == "add":
                    rhs = f"{a[0]} + {a[1]}"
                elif op == "sub":
                    rhs = f"{a[0]} - {a[1]}"
                elif op == "neg":
                    rhs = f"-{a[0]}"
                elif op == "mul":
                    rhs = f"{a[0]} * {a[1]}"
                elif op == "div":
                    rhs = f"{a[0]} / {a[1]}"
                elif op == "pow":
                    rhs = f"{a[0]} ** {a[1]}"
                else:
                    rhs = f"{node.payload}({a[0]})"
            lines.append(f"    t{i} = {rhs}")
        rets = ", ".join(f"t{s}" for s in self._root_slots)
        lines.append(f"    return ({rets},)")
        return "\n".join(lines)

    @staticmethod
    def _compile(src: str, namespace: dict):
        env = dict(namespace)
        exec(compile(src, "<expr-program>", "exec"), env)
        return env["_program"]

    def run_scalar(self, x, v) -> tuple:
        if self._scalar_fn is not None:
            return self._scalar_fn(tuple(map(float, x)), tuple(map(float, v)))
        out = self.run_batch(np.asarray(x, float)[None, :], np.asarray(v, float)[None, :])
        return tuple(out[0])

    def run_batch(self, X, V) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        V = np.atleast_2d(np.asarray(V, float))
        cols_x = tuple(X[:, i] for i in range(X.shape[1]))
        cols_v = tuple(V[:, i] for i in range(V.shape[1]))
        with np.errstate(all="ignore"):
            if self._array_fn is not None:
                vals = self._array_fn(cols_x, cols_v)
            else:
                vals = self._interpret(cols_x, cols_v)
        m = X.shape[0]
        out = np.empty((m, len(self.roots)))
        for j, col in enumerate(vals):
            out[:, j] = col
        return out

    def _interpret(self, cols_x, cols_v):
        regs = [None] * len(self._tape)
        for i, node in enumerate(self._tape):
            op = node.op
            if op == "const":
                regs[i] = node.payload
            elif op == "sym":
                name = node.payload
                if name[0] == "x" and name[1:].isdigit():
                    regs[i] = cols_x[int(name[1:]) - 1]
                elif name[0] == "v" and name[1:].isdigit():
                    regs[i] = cols_v[int(name[1:]) - 1]
                elif name in self.params:
                    regs[i] = float(self.params[name])
                else:
                    raise UnboundSymbolError(name)
            elif op == "add":
                regs[i] = regs[self._slot(node.args[0])] + regs[self._slot(node.args[1])]
            elif op == "sub":
                regs[i] = regs[self._slot(node.args[0])] - regs[self._slot(node.args[1])]
            elif op == "neg":
                regs[i] = -regs[self._slot(node.args[0])]
            elif op == "mul":
                regs[i] = regs[self._slot(node.args[0])] * regs[self._slot(node.args[1])]
            elif op == "div":
                regs[i] = regs[self._slot(node.args[0])] / regs[self._slot(node.args[1])]
            elif op == "pow":
                regs[i] = regs[self._slot(node.args[0])] ** regs[self._slot(node.args[1])]
            else:
                regs[i] = _ARRAY_NS[node.payload](regs[self._slot(node.args[0])])
        return [regs[s] for s in self._root_slots]

    def _slot(self, node: Expr) -> int:
        # only used on the interpreter path; build the map lazily
        cache = getattr(self, "_slot_map", None)
        if cache is None:
            cache = {n.uid: i for i, n in enumerate(self._tape)}
            self._slot_map = cache
        return cache[node.uid]

    @property
    def size(self) -> int:
        return len(self._tape)
