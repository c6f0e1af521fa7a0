"""Scalar expression trees: parsing, evaluation, symbolic differentiation.

Models are written as text, e.g. ``"-sin(x1) - 0.5 + (1+x3)/(2+x3)"``.
Grammar (recursive descent, standard precedence, right-assoc ``^``)::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := base ('^' ['-'] integer)?
    base   := number | ident | ident '(' expr ')' | '(' expr ')' | '-' base

Variables are ``x<i>``, ``u<i>``, ``y<i>`` (1-based) and ``s``, an alias for
the only input of a single-input function.  Functions: sin, cos, tanh, exp,
sqrt, abs and sign (sign appears as the derivative of abs, sign(0) = 0).

Expressions are immutable; equality checks in this package are pointwise,
there is no general simplifier beyond constant folding and 0/1 identities.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Expr", "Const", "Var", "Neg", "Call", "BinOp", "Pow",
    "ExprError", "ParseError", "EvalError",
    "parse", "evaluate", "diff", "to_string", "substitute", "free_vars",
    "VectorFunction", "jacobian", "compile_exprs", "as_expr",
]

FUNCTIONS = ("sin", "cos", "tanh", "exp", "sqrt", "abs", "sign")
BLOCKS = ("x", "u", "y")
_VAR_RE = re.compile(r"^([xuy])([1-9][0-9]*)$")


class ExprError(Exception):
    """Base class for expression errors."""


class ParseError(ExprError):
    def __init__(self, message: str, pos: int, text: str = ""):
        self.pos = pos
        self.text = text
        super().__init__(f"{message} at position {pos}")


class EvalError(ExprError, ArithmeticError):
    """Evaluation failed: unbound variable or a domain error."""


# ---------------------------------------------------------------- nodes

class Expr:
    """Base class of expression nodes.  Operators build simplified trees."""

    __slots__ = ()

    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n: int):
        return power(self, n)

    def __str__(self):
        return to_string(self)


@dataclass(frozen=True, eq=True, repr=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Call(Expr):
    fn: str
    arg: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int


ZERO = Const(0.0)
ONE = Const(1.0)


def as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, str):
        return parse(v)
    return Const(float(v))


def _is_const(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


# ----------------------------------------------- simplifying constructors

def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a, -1.0):
        return neg(b)
    if _is_const(b, -1.0):
        return neg(a)
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return ZERO
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b) and b.value != 0.0:
        return Const(a.value / b.value)
    return BinOp("/", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a: Expr, n: int) -> Expr:
    n = int(n)
    if n == 0:
        return ONE
    if n == 1:
        return a
    if isinstance(a, Const) and (a.value != 0.0 or n > 0):
        return Const(a.value ** n)
    return Pow(a, n)


def call(fn: str, a: Expr) -> Expr:
    if isinstance(a, Const):
        try:
            return Const(_SCALAR_FUNCS[fn](a.value))
        except (ValueError, OverflowError):
            pass
    return Call(fn, a)


def _sign(v: float) -> float:
    return float((v > 0) - (v < 0))


def _sqrt(v: float) -> float:
    if v < 0:
        raise ValueError("sqrt of negative number")
    return math.sqrt(v)


_SCALAR_FUNCS: dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "tanh": math.tanh,
    "exp": math.exp,
    "sqrt": _sqrt,
    "abs": abs,
    "sign": _sign,
}


# --------------------------------------------------------------- parser

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    stripped_end = len(text.rstrip())
    while pos < stripped_end:
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ParseError(f"unexpected character {text[bad]!r}", bad, text)
        kind = m.lastgroup
        value = m.group(kind)
        start = m.start(kind)
        if kind == "op" and value == "**":
            value = "^"
        tokens.append((kind, value, start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, v, pos = self.take()
        if v != value or kind == "end":
            what = "end of input" if kind == "end" else repr(v)
            raise ParseError(f"expected {value!r}, found {what}", pos, self.text)

    def parse(self) -> Expr:
        e = self.expr()
        kind, v, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {v!r}", pos, self.text)
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.factor())
        return left

    def factor(self) -> Expr:
        # unary minus binds looser than '^', so -x1^2 is -(x1^2)
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Neg(self.factor())
        base = self.base()
        if self.peek()[1] == "^":
            self.take()
            sign = 1
            if self.peek()[1] == "-":
                self.take()
                sign = -1
            kind, v, pos = self.take()
            if kind != "num" or not re.fullmatch(r"\d+", v):
                raise ParseError("exponent must be a constant integer", pos, self.text)
            return Pow(base, sign * int(v))
        return base

    def base(self) -> Expr:
        kind, v, pos = self.take()
        if kind == "num":
            return Const(float(v))
        if kind == "op" and v == "-":
            return Neg(self.base())
        if kind == "op" and v == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "ident":
            if self.peek()[1] == "(":
                if v not in FUNCTIONS:
                    raise ParseError(f"unknown function {v!r}", pos, self.text)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Call(v, arg)
            if v in FUNCTIONS:
                raise ParseError(f"function {v!r} needs an argument", pos, self.text)
            if v == "s" or _VAR_RE.match(v):
                return Var(v)
            raise ParseError(f"unknown identifier {v!r}", pos, self.text)
        what = "end of input" if kind == "end" else repr(v)
        raise ParseError(f"unexpected {what}", pos, self.text)


def parse(text: str) -> Expr:
    """Parse ``text`` into an expression tree (no simplification)."""
    return _Parser(text).parse()


# ------------------------------------------------------------- printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _fmt_const(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        s = str(int(v))
    else:
        s = repr(v)
    return f"({s})" if v < 0 or s.startswith("-") else s


def _is_base(e: Expr) -> bool:
    return isinstance(e, (Const, Var, Call, Neg))


def to_string(e: Expr) -> str:
    """Render ``e`` in the parser's grammar; ``parse(to_string(e))`` is equivalent."""
    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.fn}({to_string(e.arg)})"
    if isinstance(e, Neg):
        inner = to_string(e.arg)
        return f"-{inner}" if _is_base(e.arg) else f"-({inner})"
    if isinstance(e, Pow):
        b = to_string(e.base)
        if not isinstance(e.base, (Var, Call, Const)):
            b = f"({b})"
        return f"{b}^{e.exponent}"
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        left = to_string(e.left)
        right = to_string(e.right)
        if isinstance(e.left, BinOp) and _PREC[e.left.op] < p:
            left = f"({left})"
        if isinstance(e.right, BinOp) and _PREC[e.right.op] <= p:
            right = f"({right})"
        return f"{left} {e.op} {right}"
    raise TypeError(f"not an expression: {e!r}")


# ------------------------------------------------------------ traversal

def free_vars(e: Expr) -> frozenset[str]:
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, Const):
        return frozenset()
    if isinstance(e, (Neg, Call)):
        return free_vars(e.arg)
    if isinstance(e, Pow):
        return free_vars(e.base)
    return free_vars(e.left) | free_vars(e.right)


def substitute(e: Expr, mapping: Mapping[str, Expr | str | float]) -> Expr:
    """Replace variables by expressions (or rename them, given names as strings)."""
    def conv(v):
        if isinstance(v, str):
            return Var(v) if (v == "s" or _VAR_RE.match(v)) else parse(v)
        return as_expr(v)

    table = {k: conv(v) for k, v in mapping.items()}

    def go(node: Expr) -> Expr:
        if isinstance(node, Var):
            return table.get(node.name, node)
        if isinstance(node, Const):
            return node
        if isinstance(node, Neg):
            return Neg(go(node.arg))
        if isinstance(node, Call):
            return Call(node.fn, go(node.arg))
        if isinstance(node, Pow):
            return Pow(go(node.base), node.exponent)
        return BinOp(node.op, go(node.left), go(node.right))

    return go(e)


def evaluate(e: Expr, env: Mapping[str, float]) -> float:
    """Evaluate ``e`` in IEEE double precision.

    Raises :class:`EvalError` for unbound variables, division by zero and
    square roots of negative numbers.
    """
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return float(env[e.name])
        except KeyError:
            raise EvalError(f"unbound variable {e.name!r}") from None
    if isinstance(e, Neg):
        return -evaluate(e.arg, env)
    if isinstance(e, Call):
        a = evaluate(e.arg, env)
        try:
            return _SCALAR_FUNCS[e.fn](a)
        except ValueError as exc:
            raise EvalError(f"{e.fn}({a}): {exc}") from None
        except OverflowError:
            return math.inf
    if isinstance(e, Pow):
        b = evaluate(e.base, env)
        if b == 0.0 and e.exponent < 0:
            raise EvalError("division by zero")
        return b ** e.exponent
    a = evaluate(e.left, env)
    b = evaluate(e.right, env)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if b == 0.0:
        raise EvalError("division by zero")
    return a / b


def diff(e: Expr, var: str) -> Expr:
    """Symbolic derivative of ``e`` with respect to the variable ``var``."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Neg):
        return neg(diff(e.arg, var))
    if isinstance(e, Call):
        du = diff(e.arg, var)
        if _is_const(du, 0.0):
            return ZERO
        u = e.arg
        if e.fn == "sin":
            outer = call("cos", u)
        elif e.fn == "cos":
            outer = neg(call("sin", u))
        elif e.fn == "tanh":
            outer = sub(ONE, power(call("tanh", u), 2))
        elif e.fn == "exp":
            outer = call("exp", u)
        elif e.fn == "sqrt":
            outer = div(Const(0.5), call("sqrt", u))
        elif e.fn == "abs":
            outer = call("sign", u)
        else:  # sign: piecewise constant
            return ZERO
        return mul(outer, du)
    if isinstance(e, Pow):
        du = diff(e.base, var)
        if _is_const(du, 0.0):
            return ZERO
        n = e.exponent
        return mul(mul(Const(float(n)), power(e.base, n - 1)), du)
    da = diff(e.left, var)
    db = diff(e.right, var)
    if e.op == "+":
        return add(da, db)
    if e.op == "-":
        return sub(da, db)
    if e.op == "*":
        return add(mul(da, e.right), mul(e.left, db))
    # quotient rule
    num = sub(mul(da, e.right), mul(e.left, db))
    return div(num, power(e.right, 2))


# ---------------------------------------------------------- compilation

_NP_FUNCS = {
    "sin": "np.sin", "cos": "np.cos", "tanh": "np.tanh", "exp": "np.exp",
    "sqrt": "np.sqrt", "abs": "np.abs", "sign": "np.sign",
}


def _source(e: Expr) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        m = _VAR_RE.match(e.name)
        if m is None:
            raise ExprError(f"alias {e.name!r} must be resolved before compiling")
        return f"{m.group(1)}[..., {int(m.group(2)) - 1}]"
    if isinstance(e, Neg):
        return f"(-{_source(e.arg)})"
    if isinstance(e, Call):
        return f"{_NP_FUNCS[e.fn]}({_source(e.arg)})"
    if isinstance(e, Pow):
        n = e.exponent
        if n < 0:
            return f"(1.0 / ({_source(e.base)}) ** {-n})"
        return f"(({_source(e.base)}) ** {n})"
    return f"({_source(e.left)} {e.op} {_source(e.right)})"


def compile_exprs(exprs: Sequence[Expr]) -> Callable[..., np.ndarray]:
    """Compile expressions into one vectorised numpy function.

    The result is called as ``fn(x=..., u=..., y=...)`` with arrays whose last
    axis indexes the block variables; it returns an array of shape
    ``batch + (len(exprs),)``.
    """
    exprs = tuple(exprs)
    used = set()
    for e in exprs:
        for name in free_vars(e):
            m = _VAR_RE.match(name)
            if m is None:
                raise ExprError(f"alias {name!r} must be resolved before compiling")
            used.add(m.group(1))
    body = ", ".join(_source(e) for e in exprs)
    code = f"def _fn(x, u, y):\n    return ({body}{',' if len(exprs) == 1 else ''})\n"
    ns: dict = {"np": np}
    exec(compile(code, "<kcontract.expr>", "exec"), ns)
    raw = ns["_fn"]
    count = len(exprs)

    def fn(x=None, u=None, y=None) -> np.ndarray:
        args = {"x": x, "u": u, "y": y}
        batch: tuple[int, ...] = ()
        for blk in BLOCKS:
            a = args[blk]
            if a is not None:
                a = np.asarray(a, dtype=float)
                args[blk] = a
                batch = np.broadcast_shapes(batch, a.shape[:-1])
            elif blk in used:
                raise EvalError(f"unbound variable block {blk!r}")
        if count == 0:
            return np.zeros(batch + (0,))
        try:
            with np.errstate(divide="raise", invalid="raise", over="ignore"):
                vals = raw(args["x"], args["u"], args["y"])
        except FloatingPointError as exc:
            raise EvalError(f"domain error during evaluation: {exc}") from None
        except IndexError as exc:
            raise EvalError(f"variable index out of range: {exc}") from None
        out = np.empty(batch + (count,))
        for i, v in enumerate(vals):
            out[..., i] = v
        return out

    fn.source = code
    return fn


# ------------------------------------------------------ vector functions

@dataclass(frozen=True)
class VectorFunction:
    """An ordered tuple of expressions over declared x/u/y blocks."""

    components: tuple[Expr, ...]
    nx: int = 0
    nu: int = 0
    ny: int = 0

    def __post_init__(self):
        comps = tuple(as_expr(c) for c in self.components)
        n_inputs = self.nx + self.nu + self.ny
        if any("s" in free_vars(c) for c in comps):
            if n_inputs != 1:
                raise ExprError("alias 's' requires exactly one declared input")
            blk = "x" if self.nx else ("u" if self.nu else "y")
            comps = tuple(substitute(c, {"s": f"{blk}1"}) for c in comps)
        limits = {"x": self.nx, "u": self.nu, "y": self.ny}
        for c in comps:
            for name in free_vars(c):
                m = _VAR_RE.match(name)
                if int(m.group(2)) > limits[m.group(1)]:
                    raise ExprError(
                        f"variable {name!r} exceeds declared arity "
                        f"{m.group(1)}:{limits[m.group(1)]}"
                    )
        object.__setattr__(self, "components", comps)

    @classmethod
    def parse(cls, texts: Iterable[str | float | Expr], nx=0, nu=0, ny=0) -> "VectorFunction":
        return cls(tuple(as_expr(t) for t in texts), nx=nx, nu=nu, ny=ny)

    @property
    def output_dim(self) -> int:
        return len(self.components)

    def arity(self, block: str) -> int:
        return {"x": self.nx, "u": self.nu, "y": self.ny}[block]

    @cached_property
    def _compiled(self):
        return compile_exprs(self.components)

    def __call__(self, x=None, u=None, y=None) -> np.ndarray:
        return self._compiled(x=x, u=u, y=y)

    def jacobian(self, block: str) -> tuple[tuple[Expr, ...], ...]:
        return jacobian(self, block)

    def compiled_jacobian(self, block: str) -> Callable[..., np.ndarray]:
        cache = self.__dict__.setdefault("_jac_cache", {})
        if block not in cache:
            cache[block] = compile_matrix(self.jacobian(block))
        return cache[block]

    def __str__(self):
        return "[" + ", ".join(to_string(c) for c in self.components) + "]"


def jacobian(F: VectorFunction, block: str) -> tuple[tuple[Expr, ...], ...]:
    """Matrix of symbolic partial derivatives of ``F`` w.r.t. one block."""
    if block not in BLOCKS:
        raise ValueError(f"unknown block {block!r}")
    n = F.arity(block)
    if n <= 0:
        raise ValueError(f"block {block!r} has no variables")
    return tuple(
        tuple(diff(c, f"{block}{j + 1}") for j in range(n)) for c in F.components
    )


def compile_matrix(rows: Sequence[Sequence[Expr]]) -> Callable[..., np.ndarray]:
    """Compile a matrix of expressions; result has shape ``batch + (r, c)``."""
    rows = [tuple(as_expr(e) for e in r) for r in rows]
    r = len(rows)
    c = len(rows[0]) if r else 0
    flat = compile_exprs([e for row in rows for e in row])

    def fn(x=None, u=None, y=None) -> np.ndarray:
        out = flat(x=x, u=u, y=y)
        return out.reshape(out.shape[:-1] + (r, c))

    return fn
