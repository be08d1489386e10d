# rate_expr.py — age-dependent rates and density dependence written as text
#
# Grammar (one free variable, `a` for rates, `x` for density dependence):
#     expr    :: term [ ('+' | '-') term ]*
#     term    :: factor [ ('*' | '/') factor ]*
#     factor  :: '-' factor | '+' factor | power
#     power   :: atom [ '^' factor ]          (right associative)
#     atom    :: number | fn '(' expr [',' expr]* ')' | name | '(' expr ')'
#     rate    :: 'piecewise' '{' piece [';' piece]* '}' | expr
#     piece   :: '[' expr ',' expr (')' | ']') ':' expr

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Mapping, Optional, Tuple, Union

import numpy as np
import pyparsing as pp

from errors import DegenerateModelError, ExpressionError, ModelValidationError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

CONSTANTS: Dict[str, float] = {"pi": math.pi, "e": math.e}


def _fold(fn: Callable) -> Callable:
    def apply(*args):
        out = args[0]
        for arg in args[1:]:
            out = fn(out, arg)
        return out
    return apply


# name -> (min args, max args, implementation)
FUNCTIONS: Dict[str, Tuple[int, int, Callable]] = {
    "sin": (1, 1, np.sin),
    "cos": (1, 1, np.cos),
    "tan": (1, 1, np.tan),
    "exp": (1, 1, np.exp),
    "max": (2, 16, _fold(np.maximum)),
    "min": (2, 16, _fold(np.minimum)),
}


# -----------------------------------------
# AST
# -----------------------------------------
class Node:
    precedence = 5

    def evaluate(self, env: Mapping[str, Any]) -> Any:
        raise NotImplementedError

    def to_source(self) -> str:
        raise NotImplementedError

    def children(self) -> Tuple["Node", ...]:
        return ()


def _format_number(value: float) -> str:
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


@dataclass(frozen=True)
class Number(Node):
    value: float
    offset: int = field(default=0, compare=False)

    def evaluate(self, env):
        return self.value

    def to_source(self) -> str:
        return _format_number(self.value)


@dataclass(frozen=True)
class Name(Node):
    name: str
    offset: int = field(default=0, compare=False)

    def evaluate(self, env):
        if self.name in env:
            return env[self.name]
        return CONSTANTS[self.name]

    def to_source(self) -> str:
        return self.name


@dataclass(frozen=True)
class Negate(Node):
    operand: Node
    offset: int = field(default=0, compare=False)
    precedence = 3

    def evaluate(self, env):
        return np.negative(self.operand.evaluate(env))

    def to_source(self) -> str:
        inner = self.operand.to_source()
        if self.operand.precedence < 3:
            inner = f"({inner})"
        return f"-{inner}"

    def children(self):
        return (self.operand,)


_BINARY = {
    "+": (1, np.add),
    "-": (1, np.subtract),
    "*": (2, np.multiply),
    "/": (2, np.divide),
    "^": (4, np.power),
}


@dataclass(frozen=True)
class BinaryOp(Node):
    op: str
    left: Node
    right: Node
    offset: int = field(default=0, compare=False)

    @property
    def precedence(self) -> int:  # type: ignore[override]
        return _BINARY[self.op][0]

    def evaluate(self, env):
        fn = _BINARY[self.op][1]
        return fn(self.left.evaluate(env), self.right.evaluate(env))

    def to_source(self) -> str:
        prec = self.precedence
        left = self.left.to_source()
        right = self.right.to_source()
        if self.op == "^":
            if self.left.precedence <= 4:
                left = f"({left})"
            if self.right.precedence < 3:
                right = f"({right})"
            return f"{left}^{right}"
        if self.left.precedence < prec:
            left = f"({left})"
        if self.right.precedence <= prec:
            right = f"({right})"
        if self.op in "+-":
            return f"{left} {self.op} {right}"
        return f"{left}{self.op}{right}"

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class Call(Node):
    func: str
    args: Tuple[Node, ...]
    offset: int = field(default=0, compare=False)

    def evaluate(self, env):
        impl = FUNCTIONS[self.func][2]
        return impl(*(arg.evaluate(env) for arg in self.args))

    def to_source(self) -> str:
        return f"{self.func}({', '.join(arg.to_source() for arg in self.args)})"

    def children(self):
        return self.args


# -----------------------------------------
# Grammar (built once, parse actions return AST nodes)
# -----------------------------------------
def _fold_left(s, loc, toks):
    items = list(toks)
    node = items[0]
    for i in range(1, len(items), 2):
        node = BinaryOp(items[i], node, items[i + 1], offset=loc)
    return node


def _power(s, loc, toks):
    if len(toks) == 1:
        return toks[0]
    return BinaryOp("^", toks[0], toks[1], offset=loc)


def _build_grammar():
    expr = pp.Forward()
    factor = pp.Forward()

    number = pp.Regex(r"(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?")
    number.set_parse_action(lambda s, loc, t: Number(float(t[0]), offset=loc))

    ident = pp.Word(pp.alphas + "_", pp.alphanums + "_")
    lpar, rpar = pp.Suppress("("), pp.Suppress(")")

    args = pp.Group(expr + pp.ZeroOrMore(pp.Suppress(",") + expr))
    call = ident + lpar + args + rpar
    call.set_parse_action(lambda s, loc, t: Call(t[0], tuple(t[1]), offset=loc))

    name = ident.copy()
    name.set_parse_action(lambda s, loc, t: Name(t[0], offset=loc))

    atom = number | call | name | (lpar + expr + rpar)

    power = atom + pp.Optional(pp.Suppress("^") + factor)
    power.set_parse_action(_power)

    negate = pp.Suppress("-") + factor
    negate.set_parse_action(lambda s, loc, t: Negate(t[0], offset=loc))
    factor <<= negate | (pp.Suppress("+") + factor) | power

    term = factor + pp.ZeroOrMore(pp.one_of("* /") + factor)
    term.set_parse_action(_fold_left)
    expr <<= term + pp.ZeroOrMore(pp.one_of("+ -") + term)
    expr.set_parse_action(_fold_left)

    piece = (
        pp.Suppress("[") + expr + pp.Suppress(",") + expr
        + (pp.Literal(")") | pp.Literal("]")) + pp.Suppress(":") + expr
    )
    piece.set_parse_action(lambda s, loc, t: ("piece", loc, t[0], t[1], t[2] == "]", t[3]))
    piecewise = (
        pp.Keyword("piecewise").suppress() + pp.Suppress("{")
        + piece + pp.ZeroOrMore(pp.Suppress(";") + piece)
        + pp.Optional(pp.Suppress(";")) + pp.Suppress("}")
    )
    piecewise.set_parse_action(lambda s, loc, t: [("piecewise", loc, tuple(t))])

    return expr, piecewise | expr


_EXPR, _RATE = _build_grammar()


def _byte_offset(source: str, loc: int) -> int:
    return len(source[:loc].encode("utf-8"))


def _check_names(node: Node, source: str, variables: Tuple[str, ...]) -> None:
    if isinstance(node, Name):
        if node.name not in variables and node.name not in CONSTANTS:
            raise ExpressionError(f"unknown identifier '{node.name}'", source,
                                  _byte_offset(source, node.offset))
    if isinstance(node, Call):
        if node.func not in FUNCTIONS:
            raise ExpressionError(f"unknown function '{node.func}'", source,
                                  _byte_offset(source, node.offset))
        lo, hi, _ = FUNCTIONS[node.func]
        if not lo <= len(node.args) <= hi:
            raise ExpressionError(
                f"{node.func}() takes {lo}..{hi} arguments, got {len(node.args)}",
                source, _byte_offset(source, node.offset))
    for child in node.children():
        _check_names(child, source, variables)


def _evaluate_node(node: Node, variable: str, values: ArrayLike) -> ArrayLike:
    arr = np.asarray(values, dtype=float)
    with np.errstate(all="ignore"):
        out = node.evaluate({variable: arr})
    out = np.broadcast_to(np.asarray(out, dtype=float), arr.shape)
    if arr.ndim == 0:
        return float(out)
    return np.array(out)


# -----------------------------------------
# Public expression types
# -----------------------------------------
@dataclass(frozen=True)
class RateExpr:
    source: str
    ast: Node
    variable: str = "a"

    def __call__(self, a: ArrayLike) -> ArrayLike:
        return _evaluate_node(self.ast, self.variable, a)

    def to_source(self) -> str:
        return self.ast.to_source()

    def breakpoints(self) -> Tuple[float, ...]:
        return ()


@dataclass(frozen=True)
class Piece:
    lo: float
    hi: float
    closed: bool
    expr: RateExpr
    lo_source: str
    hi_source: str


@dataclass(frozen=True)
class PiecewiseExpr:
    source: str
    pieces: Tuple[Piece, ...]
    variable: str = "a"

    def __call__(self, a: ArrayLike) -> ArrayLike:
        arr = np.asarray(a, dtype=float)
        flat = np.atleast_1d(arr).ravel()
        edges = np.array([p.lo for p in self.pieces] + [self.pieces[-1].hi])
        idx = np.searchsorted(edges, flat, side="right") - 1
        # final piece is closed at its right end
        idx[flat == edges[-1]] = len(self.pieces) - 1
        out = np.full(flat.shape, np.nan)
        for k, piece in enumerate(self.pieces):
            mask = idx == k
            if np.any(mask):
                out[mask] = piece.expr(flat[mask])
        if arr.ndim == 0:
            return float(out[0])
        return out.reshape(arr.shape)

    def to_source(self) -> str:
        parts = []
        for piece in self.pieces:
            close = "]" if piece.closed else ")"
            parts.append(f"[{piece.lo_source}, {piece.hi_source}{close}: {piece.expr.to_source()}")
        return "piecewise{" + "; ".join(parts) + "}"

    def breakpoints(self) -> Tuple[float, ...]:
        return tuple(p.lo for p in self.pieces[1:])

    def check_coverage(self, a_dagger: float, key_path: Optional[str] = None) -> None:
        """Pieces must be ordered, disjoint and cover [0, a_dagger] exactly."""
        tol = 1e-9 * max(1.0, a_dagger)
        first, last = self.pieces[0], self.pieces[-1]
        if abs(first.lo) > tol:
            raise ModelValidationError(f"first piece starts at {first.lo:.17g}, not 0",
                                       value=first.lo, key_path=key_path)
        for left, right in zip(self.pieces, self.pieces[1:]):
            if not left.lo < left.hi:
                raise ModelValidationError(f"empty piece [{left.lo:.17g}, {left.hi:.17g})",
                                           value=left.lo, key_path=key_path)
            if abs(left.hi - right.lo) > tol:
                raise ModelValidationError(
                    f"pieces leave a gap or overlap at {left.hi:.17g} / {right.lo:.17g}",
                    value=left.hi, key_path=key_path)
        if not last.lo < last.hi or abs(last.hi - a_dagger) > tol:
            raise ModelValidationError(f"last piece ends at {last.hi:.17g}, not a_dagger={a_dagger:.17g}",
                                       value=last.hi, key_path=key_path)


AgeFunction = Union[RateExpr, PiecewiseExpr]


def _constant_value(node: Node, source: str) -> float:
    _check_names(node, source, ())
    return float(_evaluate_node(node, "_", 0.0))


def parse_rate(source: str, variable: str = "a") -> AgeFunction:
    """Parse a rate expression in `variable`, or a piecewise{...} definition."""
    text = (source or "").strip()
    if not text:
        raise ExpressionError("empty expression", source, 0)
    try:
        result = _RATE.parse_string(text, parse_all=True)
    except pp.ParseException as pe:
        raise ExpressionError(f"syntax error: {pe.msg}", text, _byte_offset(text, pe.loc)) from None

    top = result[0]
    if isinstance(top, Node):
        _check_names(top, text, (variable,))
        return RateExpr(text, top, variable)

    pieces = []
    for _, loc, lo_node, hi_node, closed, body in top[2]:
        _check_names(body, text, (variable,))
        pieces.append(Piece(
            lo=_constant_value(lo_node, text),
            hi=_constant_value(hi_node, text),
            closed=closed,
            expr=RateExpr(body.to_source(), body, variable),
            lo_source=lo_node.to_source(),
            hi_source=hi_node.to_source(),
        ))
    return PiecewiseExpr(text, tuple(pieces), variable)


def parse_constant(source: Union[str, float, int]) -> float:
    """Evaluate a variable-free expression such as "pi/2"."""
    if isinstance(source, (int, float)):
        return float(source)
    text = str(source).strip()
    try:
        node = _EXPR.parse_string(text, parse_all=True)[0]
    except pp.ParseException as pe:
        raise ExpressionError(f"syntax error: {pe.msg}", text, _byte_offset(text, pe.loc)) from None
    return _constant_value(node, text)


def evaluate(expr: AgeFunction, a: ArrayLike, a_dagger: Optional[float] = None) -> ArrayLike:
    """Evaluate with the finiteness rule: non-finite values only at a = a_dagger."""
    values = expr(a)
    arr = np.asarray(values)
    bad = ~np.isfinite(arr)
    if np.any(bad):
        ages = np.broadcast_to(np.asarray(a, dtype=float), arr.shape)[bad]
        at_end = a_dagger is not None and np.all(
            np.abs(ages - a_dagger) <= 1e-12 * max(1.0, a_dagger))
        if not at_end:
            raise ExpressionError(
                f"non-finite value at {expr.variable}={float(ages[0]):.17g}", expr.source)
    return values


# -----------------------------------------
# Density dependence Φ(x)
# -----------------------------------------
_CAPPED = re.compile(
    r"^(?:max\(1-x/(?P<a>[0-9.]+(?:[eE][+-]?\d+)?),0\)|max\(0,1-x/(?P<b>[0-9.]+(?:[eE][+-]?\d+)?)\))$")


@dataclass(frozen=True)
class DensityDependence:
    """Φ(x): linear-capped max(1 - x/X, 0) or a general expression in x."""

    expr: Optional[RateExpr] = None
    cap: Optional[float] = None

    @classmethod
    def linear_capped(cls, cap: float) -> "DensityDependence":
        if not cap > 0:
            raise ModelValidationError("linear-capped density dependence needs X > 0", value=cap)
        return cls(expr=None, cap=float(cap))

    @classmethod
    def from_source(cls, source: str) -> "DensityDependence":
        compact = re.sub(r"\s+", "", source or "")
        m = _CAPPED.match(compact)
        if m:
            return cls.linear_capped(float(m.group("a") or m.group("b")))
        parsed = parse_rate(source, variable="x")
        if isinstance(parsed, PiecewiseExpr):
            raise ExpressionError("density dependence cannot be piecewise", source, 0)
        return cls(expr=parsed)

    @property
    def is_linear_capped(self) -> bool:
        return self.cap is not None

    def __call__(self, x: ArrayLike) -> ArrayLike:
        if self.cap is not None:
            arr = np.asarray(x, dtype=float)
            out = np.maximum(1.0 - arr / self.cap, 0.0)
            return float(out) if arr.ndim == 0 else out
        return self.expr(x)

    def derivative(self, x: float) -> float:
        if self.cap is not None:
            if abs(x - self.cap) < 1e-9:
                raise DegenerateModelError(
                    f"nondifferentiable density dependence at equilibrium (Q*={x:.17g}, X={self.cap:g})")
            return -1.0 / self.cap if x < self.cap else 0.0
        h = 1e-6 * max(1.0, abs(x))
        return (self(x + h) - self(x - h)) / (2.0 * h)

    def to_source(self) -> str:
        if self.cap is not None:
            return f"max(1 - x/{_format_number(self.cap)}, 0)"
        return self.expr.to_source()

    def scan_limit(self, x_max: float = 100.0) -> float:
        return 3.0 * self.cap if self.cap is not None else x_max

    def validate(self, x_max: float = 100.0) -> None:
        phi0 = self(0.0)
        if abs(phi0 - 1.0) > 1e-12:
            raise ModelValidationError(f"Phi(0) = {phi0:.17g}, expected 1", value=phi0, key_path="model.phi")
        xs = np.linspace(0.0, self.scan_limit(x_max), 1000)
        values = np.asarray(self(xs))
        if not np.all(np.isfinite(values)):
            raise ModelValidationError("Phi is not finite on its sample grid", key_path="model.phi")
        rises = np.diff(values)
        if np.any(rises > 1e-12):
            k = int(np.argmax(rises))
            raise ModelValidationError(f"Phi increases near x={xs[k]:.6g}", value=float(xs[k]),
                                       key_path="model.phi")

    def monotone_limit(self, x_max: float = 100.0) -> float:
        """First x where Phi stops strictly decreasing (x0 of the standing assumption)."""
        if self.cap is not None:
            return self.cap
        xs = np.linspace(0.0, self.scan_limit(x_max), 4001)
        values = np.asarray(self(xs))
        flat = np.nonzero(np.diff(values) >= 0.0)[0]
        return float(xs[flat[0]]) if flat.size else float(xs[-1])
