"""Closed-form smooth functions R^n -> R: parsing, symbolic derivatives, jets.

The grammar is intentionally small (rational arithmetic with nonnegative
integer powers, exp/sin/cos) so that every representable function is C-infinity
wherever denominators do not vanish and symbolic derivative trees stay compact
up to fourth order.  Derivatives are exact AST transformations; simplification
is limited to constant folding and 0/1 identities.

Expressions are immutable; evaluation, differentiation and compilation are
pure and safe to call from multiple threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import singledispatch
from itertools import combinations_with_replacement, permutations

import numpy as np

from . import backend

__all__ = [
    "Expr",
    "ParseError",
    "DomainError",
    "parse",
    "differentiate",
    "eval_jet",
    "JetK",
    "Const",
    "Var",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "Pow",
    "Neg",
    "Exp",
    "Sin",
    "Cos",
]

MAX_JET_ORDER = 4


class ExprError(ValueError):
    pass


class ParseError(ExprError):
    """Malformed expression text; ``offset`` is the byte position."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class DomainError(ExprError):
    """Evaluation hit a zero denominator."""


# --------------------------------------------------------------------------
# AST nodes


@dataclass(frozen=True, slots=True)
class Node:
    pass


@dataclass(frozen=True, slots=True)
class Const(Node):
    value: float


@dataclass(frozen=True, slots=True)
class Var(Node):
    index: int  # zero-based


@dataclass(frozen=True, slots=True)
class Add(Node):
    a: Node
    b: Node


@dataclass(frozen=True, slots=True)
class Sub(Node):
    a: Node
    b: Node


@dataclass(frozen=True, slots=True)
class Mul(Node):
    a: Node
    b: Node


@dataclass(frozen=True, slots=True)
class Div(Node):
    a: Node
    b: Node


@dataclass(frozen=True, slots=True)
class Pow(Node):
    base: Node
    exponent: int  # >= 0


@dataclass(frozen=True, slots=True)
class Neg(Node):
    a: Node


@dataclass(frozen=True, slots=True)
class Exp(Node):
    a: Node


@dataclass(frozen=True, slots=True)
class Sin(Node):
    a: Node


@dataclass(frozen=True, slots=True)
class Cos(Node):
    a: Node


_ZERO = Const(0.0)
_ONE = Const(1.0)


def _is_const(node, value=None):
    if not isinstance(node, Const):
        return False
    return True if value is None else node.value == value


# Smart constructors: constant folding plus 0/1 identities, nothing fancier.

def _add(a, b):
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return Add(a, b)


def _sub(a, b):
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return _neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return Sub(a, b)


def _mul(a, b):
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return _ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return Mul(a, b)


def _div(a, b):
    if _is_const(a, 0.0):
        return _ZERO
    if _is_const(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    return Div(a, b)


def _pow(base, exponent):
    if exponent == 0:
        return _ONE
    if exponent == 1:
        return base
    if isinstance(base, Const):
        return Const(float(base.value**exponent))
    return Pow(base, exponent)


def _neg(a):
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.a
    return Neg(a)


# --------------------------------------------------------------------------
# Printing (inverse of the parser: parse(str(e)) is structurally identical)


def _fmt_number(v):
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(float(v))


@singledispatch
def _to_text(node):
    raise TypeError(f"unknown node {node!r}")


@_to_text.register
def _(node: Const):
    return _fmt_number(node.value)


@_to_text.register
def _(node: Var):
    return f"x{node.index + 1}"


def _wrap_term(node):
    # operand that must bind at least as tightly as '*'
    if isinstance(node, (Add, Sub)):
        return f"({_to_text(node)})"
    return _to_text(node)


@_to_text.register
def _(node: Add):
    rhs = _to_text(node.b)
    if isinstance(node.b, (Add, Sub)):
        rhs = f"({rhs})"
    return f"{_to_text(node.a)}+{rhs}"


@_to_text.register
def _(node: Sub):
    rhs = _to_text(node.b)
    if isinstance(node.b, (Add, Sub)) or (
        isinstance(node.b, Const) and node.b.value < 0
    ):
        rhs = f"({rhs})"
    return f"{_to_text(node.a)}-{rhs}"


@_to_text.register
def _(node: Mul):
    rhs = _wrap_term(node.b)
    if isinstance(node.b, (Mul, Div)):
        rhs = f"({rhs})"
    return f"{_wrap_term(node.a)}*{rhs}"


@_to_text.register
def _(node: Div):
    rhs = _wrap_term(node.b)
    if isinstance(node.b, (Mul, Div)):
        rhs = f"({rhs})"
    return f"{_wrap_term(node.a)}/{rhs}"


@_to_text.register
def _(node: Pow):
    base = _to_text(node.base)
    if not (
        isinstance(node.base, Var)
        or isinstance(node.base, (Exp, Sin, Cos))
        or (isinstance(node.base, Const) and node.base.value >= 0)
    ):
        base = f"({base})"
    return f"{base}^{node.exponent}"


@_to_text.register
def _(node: Neg):
    inner = _to_text(node.a)
    if isinstance(node.a, (Add, Sub, Mul, Div)):
        inner = f"({inner})"
    return f"-{inner}"


@_to_text.register
def _(node: Exp):
    return f"exp({_to_text(node.a)})"


@_to_text.register
def _(node: Sin):
    return f"sin({_to_text(node.a)})"


@_to_text.register
def _(node: Cos):
    return f"cos({_to_text(node.a)})"


# --------------------------------------------------------------------------
# Differentiation (exact, zero-based variable index internally)


@singledispatch
def _diff(node, i):
    raise TypeError(f"unknown node {node!r}")


@_diff.register
def _(node: Const, i):
    return _ZERO


@_diff.register
def _(node: Var, i):
    return _ONE if node.index == i else _ZERO


@_diff.register
def _(node: Add, i):
    return _add(_diff(node.a, i), _diff(node.b, i))


@_diff.register
def _(node: Sub, i):
    return _sub(_diff(node.a, i), _diff(node.b, i))


@_diff.register
def _(node: Mul, i):
    return _add(_mul(_diff(node.a, i), node.b), _mul(node.a, _diff(node.b, i)))


@_diff.register
def _(node: Div, i):
    num = _sub(_mul(_diff(node.a, i), node.b), _mul(node.a, _diff(node.b, i)))
    return _div(num, _pow(node.b, 2))


@_diff.register
def _(node: Pow, i):
    inner = _diff(node.base, i)
    return _mul(_mul(Const(float(node.exponent)), _pow(node.base, node.exponent - 1)), inner)


@_diff.register
def _(node: Neg, i):
    return _neg(_diff(node.a, i))


@_diff.register
def _(node: Exp, i):
    return _mul(Exp(node.a), _diff(node.a, i))


@_diff.register
def _(node: Sin, i):
    return _mul(Cos(node.a), _diff(node.a, i))


@_diff.register
def _(node: Cos, i):
    return _neg(_mul(Sin(node.a), _diff(node.a, i)))


# --------------------------------------------------------------------------
# Scalar reference evaluator (the batch path lives in backend.py)


@singledispatch
def _eval(node, x):
    raise TypeError(f"unknown node {node!r}")


@_eval.register
def _(node: Const, x):
    return node.value


@_eval.register
def _(node: Var, x):
    return x[node.index]


@_eval.register
def _(node: Add, x):
    return _eval(node.a, x) + _eval(node.b, x)


@_eval.register
def _(node: Sub, x):
    return _eval(node.a, x) - _eval(node.b, x)


@_eval.register
def _(node: Mul, x):
    return _eval(node.a, x) * _eval(node.b, x)


@_eval.register
def _(node: Div, x):
    d = _eval(node.b, x)
    if d == 0.0:
        raise DomainError("zero denominator")
    return _eval(node.a, x) / d


@_eval.register
def _(node: Pow, x):
    base = _eval(node.base, x)
    acc = 1.0
    for _ in range(node.exponent):
        acc *= base
    return acc


@_eval.register
def _(node: Neg, x):
    return -_eval(node.a, x)


@_eval.register
def _(node: Exp, x):
    try:
        return math.exp(_eval(node.a, x))
    except OverflowError:
        return math.inf


@_eval.register
def _(node: Sin, x):
    return math.sin(_eval(node.a, x))


@_eval.register
def _(node: Cos, x):
    return math.cos(_eval(node.a, x))


def _max_var(node):
    if isinstance(node, Var):
        return node.index
    if isinstance(node, Const):
        return -1
    if isinstance(node, (Add, Sub, Mul, Div)):
        return max(_max_var(node.a), _max_var(node.b))
    if isinstance(node, Pow):
        return _max_var(node.base)
    return _max_var(node.a)


# --------------------------------------------------------------------------
# Tokenizer / parser


_FUNCTIONS = {"exp": Exp, "sin": Sin, "cos": Cos}
_ALIASES = {"x": 0, "y": 1, "z": 2}


class _Tokenizer:
    def __init__(self, text):
        self.text = text
        self.pos = 0

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self):
        self.skip_ws()
        if self.pos >= len(self.text):
            return None
        return self.text[self.pos]

    def read_number(self):
        start = self.pos
        t = self.text
        n = len(t)
        while self.pos < n and t[self.pos].isdigit():
            self.pos += 1
        if self.pos < n and t[self.pos] == ".":
            self.pos += 1
            while self.pos < n and t[self.pos].isdigit():
                self.pos += 1
        if self.pos < n and t[self.pos] in "eE":
            mark = self.pos
            self.pos += 1
            if self.pos < n and t[self.pos] in "+-":
                self.pos += 1
            if self.pos < n and t[self.pos].isdigit():
                while self.pos < n and t[self.pos].isdigit():
                    self.pos += 1
            else:
                self.pos = mark  # 'e' belongs to an identifier, not this number
        return t[start:self.pos], start

    def read_ident(self):
        start = self.pos
        t = self.text
        while self.pos < len(t) and (t[self.pos].isalnum() or t[self.pos] == "_"):
            self.pos += 1
        return t[start:self.pos], start


class _Parser:
    def __init__(self, text, arity):
        self.tok = _Tokenizer(text)
        self.arity = arity

    def parse(self):
        node = self.expr()
        self.tok.skip_ws()
        if self.tok.pos != len(self.tok.text):
            raise ParseError("unexpected trailing input", self.tok.pos)
        return node

    def expr(self):
        node = self.term()
        while True:
            c = self.tok.peek()
            if c == "+":
                self.tok.pos += 1
                node = Add(node, self.term())
            elif c == "-":
                self.tok.pos += 1
                node = Sub(node, self.term())
            else:
                return node

    def term(self):
        node = self.factor()
        while True:
            c = self.tok.peek()
            if c == "*":
                self.tok.pos += 1
                node = Mul(node, self.factor())
            elif c == "/":
                self.tok.pos += 1
                node = Div(node, self.factor())
            else:
                return node

    def factor(self):
        # Unary minus binds looser than '^' so that -x1^2 means -(x1^2),
        # matching ordinary mathematical notation.
        c = self.tok.peek()
        if c == "-":
            self.tok.pos += 1
            inner = self.factor()
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Neg(inner)
        node = self.base()
        if self.tok.peek() == "^":
            self.tok.pos += 1
            node = Pow(node, self.exponent())
        return node

    def base(self):
        c = self.tok.peek()
        if c is None:
            raise ParseError("expected expression", self.tok.pos)
        if c == "(":
            self.tok.pos += 1
            node = self.expr()
            if self.tok.peek() != ")":
                raise ParseError("expected ')'", self.tok.pos)
            self.tok.pos += 1
            return node
        if c.isdigit() or c == ".":
            text, start = self.tok.read_number()
            try:
                return Const(float(text))
            except ValueError:
                raise ParseError(f"bad number {text!r}", start) from None
        if c.isalpha():
            name, start = self.tok.read_ident()
            if name in _FUNCTIONS:
                if self.tok.peek() != "(":
                    raise ParseError(f"expected '(' after {name}", self.tok.pos)
                self.tok.pos += 1
                node = self.expr()
                if self.tok.peek() != ")":
                    raise ParseError("expected ')'", self.tok.pos)
                self.tok.pos += 1
                return _FUNCTIONS[name](node)
            return Var(self.var_index(name, start))
        raise ParseError(f"unexpected character {c!r}", self.tok.pos)

    def var_index(self, name, start):
        if name in _ALIASES:
            idx = _ALIASES[name]
        elif name.startswith("x") and name[1:].isdigit():
            idx = int(name[1:]) - 1
            if idx < 0:
                raise ParseError("variable indices start at x1", start)
        else:
            raise ParseError(f"unknown identifier {name!r}", start)
        if idx >= self.arity:
            raise ParseError(
                f"variable x{idx + 1} exceeds arity {self.arity}", start
            )
        return idx

    def exponent(self):
        c = self.tok.peek()
        if c == "-":
            raise ParseError("negative exponents are not allowed; use '/'", self.tok.pos)
        if c is None or not (c.isdigit()):
            raise ParseError("expected nonnegative integer exponent", self.tok.pos)
        text, start = self.tok.read_number()
        try:
            value = float(text)
        except ValueError:
            raise ParseError(f"bad exponent {text!r}", start) from None
        if value != int(value):
            raise ParseError("exponent must be an integer", start)
        return int(value)


# --------------------------------------------------------------------------
# Public wrapper


class Expr:
    """Immutable expression tree for a smooth function R^n -> R."""

    __slots__ = ("root", "arity", "_cache")

    def __init__(self, root, arity):
        if arity < 1:
            raise ExprError("arity must be >= 1")
        top = _max_var(root)
        if top >= arity:
            raise ExprError(f"variable x{top + 1} exceeds arity {arity}")
        object.__setattr__(self, "root", root)
        object.__setattr__(self, "arity", arity)
        object.__setattr__(self, "_cache", {})

    def __setattr__(self, name, value):
        raise AttributeError("Expr is immutable")

    def __str__(self):
        return _to_text(self.root)

    def __repr__(self):
        return f"Expr({str(self)!r}, n={self.arity})"

    def __eq__(self, other):
        return (
            isinstance(other, Expr)
            and self.arity == other.arity
            and self.root == other.root
        )

    def __hash__(self):
        return hash((self.root, self.arity))

    # ----- algebra helpers (used to assemble perturbations and differences)

    def _coerce(self, other):
        if isinstance(other, Expr):
            return other.root, max(self.arity, other.arity)
        if isinstance(other, (int, float)):
            return Const(float(other)), self.arity
        return NotImplemented, None

    def __add__(self, other):
        root, n = self._coerce(other)
        if root is NotImplemented:
            return NotImplemented
        return Expr(_add(self.root, root), n)

    __radd__ = __add__

    def __sub__(self, other):
        root, n = self._coerce(other)
        if root is NotImplemented:
            return NotImplemented
        return Expr(_sub(self.root, root), n)

    def __rsub__(self, other):
        root, n = self._coerce(other)
        if root is NotImplemented:
            return NotImplemented
        return Expr(_sub(root, self.root), n)

    def __mul__(self, other):
        root, n = self._coerce(other)
        if root is NotImplemented:
            return NotImplemented
        return Expr(_mul(self.root, root), n)

    __rmul__ = __mul__

    def __neg__(self):
        return Expr(_neg(self.root), self.arity)

    # ----- derivatives

    def partial(self, i):
        """Exact symbolic partial d/dx_i (1-based index)."""
        if not 1 <= i <= self.arity:
            raise ExprError(f"variable index {i} out of range 1..{self.arity}")
        key = ("partial", i)
        cached = self._cache.get(key)
        if cached is None:
            cached = Expr(_diff(self.root, i - 1), self.arity)
            self._cache[key] = cached
        return cached

    def partial_multi(self, indices):
        """Iterated partial for a sorted tuple of 1-based indices."""
        key = ("multi", tuple(indices))
        cached = self._cache.get(key)
        if cached is None:
            cached = self
            for i in indices:
                cached = cached.partial(i)
            self._cache[key] = cached
        return cached

    # ----- evaluation

    def eval(self, point):
        """Scalar reference evaluation (recursive, no compilation)."""
        x = np.atleast_1d(np.asarray(point, dtype=float))
        _require_finite_point(x)
        return float(_eval(self.root, x))

    def program(self):
        prog = self._cache.get("program")
        if prog is None:
            prog = backend.compile_programs([self.root], self.arity)
            self._cache["program"] = prog
        return prog

    def eval_many(self, points, engine=None):
        """Evaluate over an (m, n) batch of points."""
        pts = _as_points(points, self.arity)
        return run_checked(self.program(), pts, engine=engine)[0]

    def jet_program(self, k):
        """Compiled program producing all distinct partials of order <= k."""
        if not 0 <= k <= MAX_JET_ORDER:
            raise ExprError(f"jet order must be in 0..{MAX_JET_ORDER}")
        key = ("jet_program", k)
        cached = self._cache.get(key)
        if cached is None:
            cached = _build_jet_program(self, k)
            self._cache[key] = cached
        return cached


def run_checked(program, points, engine=None):
    """backend.run_program with backend domain faults mapped to DomainError."""
    try:
        return backend.run_program(program, points, engine=engine)
    except backend.BackendDomainError as exc:
        raise DomainError(str(exc)) from None


def _require_finite_point(x):
    if not np.all(np.isfinite(x)):
        raise ExprError("points must have finite coordinates")


def _as_points(points, arity):
    pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
    if pts.shape[1] != arity:
        raise ExprError(f"points have dimension {pts.shape[1]}, expected {arity}")
    return pts


def parse(text, n):
    """Parse expression text over variables x1..xn."""
    root = _Parser(text, n).parse()
    return Expr(root, n)


def differentiate(e, i):
    """Exact symbolic partial derivative of ``e`` with respect to x_i."""
    return e.partial(i)


# --------------------------------------------------------------------------
# Jets


@dataclass(frozen=True)
class JetK:
    """Value plus full symmetric derivative tensors up to order k."""

    order: int
    value: float
    tensors: tuple  # tensors[j-1] has shape (n,)*j

    def truncate(self, k):
        if not 0 <= k <= self.order:
            raise ExprError(f"cannot truncate order-{self.order} jet to {k}")
        return JetK(k, self.value, self.tensors[:k])


class _JetProgramInfo:
    """Compiled multi-output program for all distinct partials up to order k.

    Output 0 is the function value; outputs for order j >= 1 follow in
    combinations_with_replacement order.  ``weights[j]`` carries the
    multinomial multiplicity of each distinct partial inside the full n^j
    tensor, so tensor Euclidean norms are sqrt(weights @ values**2).
    """

    __slots__ = ("program", "order", "arity", "slices", "tuples", "weights")

    def __init__(self, program, order, arity, slices, tuples, weights):
        self.program = program
        self.order = order
        self.arity = arity
        self.slices = slices
        self.tuples = tuples
        self.weights = weights


def _multiplicity(idx):
    counts = {}
    for i in idx:
        counts[i] = counts.get(i, 0) + 1
    m = math.factorial(len(idx))
    for c in counts.values():
        m //= math.factorial(c)
    return m


def _build_jet_program(e, k):
    n = e.arity
    roots = [e.root]
    slices = [slice(0, 1)]
    tuples = [()]
    weights = [np.ones(1)]
    pos = 1
    for j in range(1, k + 1):
        combos = list(combinations_with_replacement(range(1, n + 1), j))
        for idx in combos:
            roots.append(e.partial_multi(idx).root)
        slices.append(slice(pos, pos + len(combos)))
        tuples.append(combos)
        weights.append(np.array([_multiplicity(idx) for idx in combos], dtype=float))
        pos += len(combos)
    program = backend.compile_programs(roots, n)
    return _JetProgramInfo(program, k, n, slices, tuples, weights)


def eval_jet(e, x, k):
    """Value and derivative tensors D^1..D^k at a point.

    Each distinct mixed partial is computed once and fanned out to all index
    permutations, so tensors are exactly symmetric.
    """
    info = e.jet_program(k)
    pts = _as_points(np.asarray(x, dtype=float).reshape(1, -1), e.arity)
    _require_finite_point(pts)
    vals = run_checked(info.program, pts)[:, 0]
    n = e.arity
    tensors = []
    for j in range(1, k + 1):
        tensor = np.zeros((n,) * j)
        for idx, v in zip(info.tuples[j], vals[info.slices[j]]):
            zero_based = tuple(i - 1 for i in idx)
            for perm in set(permutations(zero_based)):
                tensor[perm] = v
        tensors.append(tensor)
    return JetK(k, float(vals[0]), tuple(tensors))
