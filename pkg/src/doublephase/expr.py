"""Small analytic expression language for exponents, weights and sources.

Grammar (lowest to highest precedence)::

    sum     := product (('+' | '-') product)*
    product := signed (('*' | '/') signed)*
    signed  := '-' signed | power
    power   := atom ('^' signed)?          # right associative
    atom    := NUMBER | NAME | NAME '(' args ')' | '(' sum ')'

Names are the variables ``x``, ``y``, ``t``, the constants ``pi`` and ``e``,
the unary functions ``sin cos exp log abs sqrt`` and the binary functions
``min max``.  Every evaluation either returns a finite float or raises
:class:`ExprDomainError`; NaN is never returned silently.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

__all__ = [
    "ExprError",
    "ExprSyntaxError",
    "ExprNameError",
    "ExprArityError",
    "ExprDomainError",
    "Num",
    "Var",
    "Unary",
    "Binary",
    "Expr",
    "parse",
    "evaluate",
    "to_source",
    "VARIABLES",
    "UNARY_FUNCS",
    "BINARY_FUNCS",
]

VARIABLES = ("x", "y", "t")
CONSTANTS = {"pi": math.pi, "e": math.e}
UNARY_FUNCS = ("sin", "cos", "exp", "log", "abs", "sqrt")
BINARY_FUNCS = ("min", "max")


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    """Malformed expression text; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class ExprNameError(ExprError):
    """Unknown identifier, or a variable not permitted for this role."""


class ExprArityError(ExprError):
    """Function called with the wrong number of arguments."""


class ExprDomainError(ExprError, ArithmeticError):
    """Evaluation left the domain of an operation (log of nonpositive, 0^negative, ...)."""


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or one of UNARY_FUNCS
    arg: "Node"


@dataclass(frozen=True)
class Binary:
    op: str  # one of + - * / ^ min max
    left: "Node"
    right: "Node"


Node = Union[Num, Var, Unary, Binary]


def _free_vars(node: Node) -> frozenset:
    if isinstance(node, Num):
        return frozenset()
    if isinstance(node, Var):
        return frozenset((node.name,))
    if isinstance(node, Unary):
        return _free_vars(node.arg)
    return _free_vars(node.left) | _free_vars(node.right)


# ---------------------------------------------------------------------------
# tokenizer / parser

_TOKEN = re.compile(
    rb"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    rb"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    rb"|(?P<op>[-+*/^(),]))"
)


def _tokenize(raw: bytes):
    pos = 0
    toks = []
    while True:
        m = _TOKEN.match(raw, pos)
        if m is None or m.lastgroup is None:
            rest = raw[pos:]
            stripped = rest.lstrip()
            if not stripped:
                break
            bad = len(raw) - len(stripped)
            raise ExprSyntaxError(f"unexpected character {stripped[:1]!r}", bad)
        kind = m.lastgroup
        start = m.start(kind)
        toks.append((kind, m.group(kind).decode("ascii"), start))
        pos = m.end()
    toks.append(("end", "", len(raw)))
    return toks


class _Parser:
    def __init__(self, raw: bytes, allowed: frozenset):
        self.toks = _tokenize(raw)
        self.i = 0
        self.allowed = allowed

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, off = self.take()
        if kind != "op" or text != value:
            what = "end of input" if kind == "end" else repr(text)
            raise ExprSyntaxError(f"expected {value!r}, found {what}", off)

    def parse(self) -> Node:
        node = self.sum()
        kind, text, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", off)
        return node

    def sum(self) -> Node:
        node = self.product()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = Binary(op, node, self.product())
        return node

    def product(self) -> Node:
        node = self.signed()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = Binary(op, node, self.signed())
        return node

    def signed(self) -> Node:
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Unary("neg", self.signed())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            return Binary("^", base, self.signed())
        return base

    def atom(self) -> Node:
        kind, text, off = self.take()
        if kind == "num":
            value = float(text)
            if not math.isfinite(value):
                raise ExprSyntaxError("number literal out of range", off)
            return Num(value)
        if kind == "name":
            if self.peek()[:2] == ("op", "("):
                return self.call(text, off)
            if text in CONSTANTS:
                return Num(CONSTANTS[text])
            if text in VARIABLES:
                if text not in self.allowed:
                    raise ExprNameError(f"variable {text!r} not allowed here (offset {off})")
                return Var(text)
            if text in UNARY_FUNCS or text in BINARY_FUNCS:
                raise ExprSyntaxError(f"function {text!r} needs arguments", off)
            raise ExprNameError(f"unknown identifier {text!r} at offset {off}")
        if kind == "op" and text == "(":
            node = self.sum()
            self.expect(")")
            return node
        what = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {what}", off)

    def call(self, name: str, off: int) -> Node:
        if name in UNARY_FUNCS:
            arity = 1
        elif name in BINARY_FUNCS:
            arity = 2
        else:
            raise ExprNameError(f"unknown identifier {name!r} at offset {off}")
        self.expect("(")
        args = [self.sum()]
        while self.peek()[:2] == ("op", ","):
            self.take()
            args.append(self.sum())
        self.expect(")")
        if len(args) != arity:
            raise ExprArityError(
                f"{name} takes {arity} argument{'s' if arity > 1 else ''}, "
                f"got {len(args)} (offset {off})"
            )
        if arity == 1:
            return Unary(name, args[0])
        return Binary(name, args[0], args[1])


# ---------------------------------------------------------------------------
# scalar evaluation (pure Python math, used for single bindings)


def _domain(msg: str):
    raise ExprDomainError(msg)


def _eval(node: Node, env: Mapping[str, float]) -> float:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        try:
            return float(env[node.name])
        except KeyError:
            raise ExprError(f"unbound variable {node.name!r}") from None
    if isinstance(node, Unary):
        a = _eval(node.arg, env)
        op = node.op
        if op == "neg":
            return -a
        if op == "abs":
            return abs(a)
        if op == "sin":
            return math.sin(a)
        if op == "cos":
            return math.cos(a)
        if op == "log":
            if a <= 0.0:
                _domain(f"log of nonpositive value {a!r}")
            return math.log(a)
        if op == "sqrt":
            if a < 0.0:
                _domain(f"sqrt of negative value {a!r}")
            return math.sqrt(a)
        if op == "exp":
            try:
                return math.exp(a)
            except OverflowError:
                _domain(f"exp overflow at {a!r}")
        raise AssertionError(op)
    a = _eval(node.left, env)
    b = _eval(node.right, env)
    op = node.op
    if op == "+":
        r = a + b
    elif op == "-":
        r = a - b
    elif op == "*":
        r = a * b
    elif op == "/":
        if b == 0.0:
            _domain("division by zero")
        r = a / b
    elif op == "^":
        if a == 0.0 and b < 0.0:
            _domain("zero raised to a negative power")
        try:
            r = math.pow(a, b)
        except ValueError:
            _domain(f"negative base {a!r} with non-integer exponent {b!r}")
        except OverflowError:
            _domain(f"overflow in {a!r}^{b!r}")
    elif op == "min":
        r = min(a, b)
    elif op == "max":
        r = max(a, b)
    else:
        raise AssertionError(op)
    if not math.isfinite(r):
        _domain(f"non-finite result of {op!r}")
    return r


# ---------------------------------------------------------------------------
# vectorized evaluation (numpy, used for quadrature and sampling)


def _veval(node: Node, env: Mapping[str, np.ndarray]) -> np.ndarray:
    if isinstance(node, Num):
        return np.float64(node.value)
    if isinstance(node, Var):
        try:
            return np.asarray(env[node.name], dtype=float)
        except KeyError:
            raise ExprError(f"unbound variable {node.name!r}") from None
    if isinstance(node, Unary):
        a = _veval(node.arg, env)
        op = node.op
        if op == "neg":
            return -a
        if op == "abs":
            return np.abs(a)
        if op == "sin":
            return np.sin(a)
        if op == "cos":
            return np.cos(a)
        if op == "log":
            if np.any(a <= 0.0):
                _domain("log of nonpositive value")
            return np.log(a)
        if op == "sqrt":
            if np.any(a < 0.0):
                _domain("sqrt of negative value")
            return np.sqrt(a)
        if op == "exp":
            r = np.exp(a)
            if not np.all(np.isfinite(r)):
                _domain("exp overflow")
            return r
        raise AssertionError(op)
    a = _veval(node.left, env)
    b = _veval(node.right, env)
    op = node.op
    if op == "+":
        r = a + b
    elif op == "-":
        r = a - b
    elif op == "*":
        r = a * b
    elif op == "/":
        if np.any(b == 0.0):
            _domain("division by zero")
        r = a / b
    elif op == "^":
        a_b, b_b = np.broadcast_arrays(a, b)
        if np.any((a_b == 0.0) & (b_b < 0.0)):
            _domain("zero raised to a negative power")
        if np.any((a_b < 0.0) & (b_b != np.floor(b_b))):
            _domain("negative base with non-integer exponent")
        r = np.power(a, b)
    elif op == "min":
        r = np.minimum(a, b)
    elif op == "max":
        r = np.maximum(a, b)
    else:
        raise AssertionError(op)
    if not np.all(np.isfinite(r)):
        _domain(f"non-finite result of {op!r}")
    return r


# ---------------------------------------------------------------------------
# canonical printer



def _print(node: Node) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        inner = _print(node.arg)
        if node.op == "neg":
            return f"(-{inner})"
        return f"{node.op}({inner})"
    if node.op in BINARY_FUNCS:
        return f"{node.op}({_print(node.left)}, {_print(node.right)})"
    return f"({_print(node.left)} {node.op} {_print(node.right)})"


def to_source(node: Node) -> str:
    """Fully parenthesized text that parses back to the same tree."""
    return _print(node)


# ---------------------------------------------------------------------------
# public wrapper


class Expr:
    """A parsed expression with its source text and free-variable set."""

    __slots__ = ("root", "source", "variables")

    def __init__(self, root: Node, source: str | None = None):
        self.root = root
        self.source = source if source is not None else to_source(root)
        self.variables = _free_vars(root)

    def __repr__(self):
        return f"Expr({self.source!r})"

    def __eq__(self, other):
        return isinstance(other, Expr) and self.root == other.root

    def __hash__(self):
        return hash(self.root)

    def depends_on(self, name: str) -> bool:
        return name in self.variables

    @property
    def is_constant(self) -> bool:
        return not self.variables

    def __call__(self, **binding: float) -> float:
        return _eval(self.root, binding)

    def eval(self, binding: Mapping[str, float] | None = None, **kw: float) -> float:
        env = dict(binding or {})
        env.update(kw)
        return _eval(self.root, env)

    def vec(self, **binding) -> np.ndarray:
        """Evaluate elementwise over broadcast numpy arrays."""
        with np.errstate(all="ignore"):
            out = _veval(self.root, binding)
        out = np.asarray(out, dtype=float)
        shape = np.broadcast_shapes(*(np.shape(v) for v in binding.values())) if binding else ()
        if out.shape != shape:
            out = np.broadcast_to(out, shape).copy()
        return out

    def canonical(self) -> str:
        return to_source(self.root)


def parse(source: str | bytes, variables=VARIABLES) -> Expr:
    """Parse expression text.

    ``variables`` restricts which of x, y, t may appear (the weight
    ``mu`` for instance is parsed with ``("x", "y")``).
    """
    raw = source.encode("utf-8") if isinstance(source, str) else bytes(source)
    text = raw.decode("utf-8")
    root = _Parser(raw, frozenset(variables)).parse()
    return Expr(root, text.strip())


def evaluate(expr: Expr | str, binding: Mapping[str, float] | None = None, **kw) -> float:
    if isinstance(expr, str):
        expr = parse(expr)
    return expr.eval(binding, **kw)
