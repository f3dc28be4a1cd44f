"""Scalar coefficient functions of the state, and a tiny expression language.

Model coefficients (drift entries, diffusion entries, rates, loadings) are
maps from the state x in R^m to a scalar.  Four interchangeable carriers:

* ``Constant(value)``
* ``Affine(intercept, slope)``          -- intercept + <slope, x>
* ``Expression`` (parsed source text)   -- see grammar below
* ``Table(nodes, values, axis)``        -- linear interpolation in one
  coordinate, constant extrapolation beyond the node range.

Expression grammar (left-associative, standard precedence)::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := NUMBER | IDENT | FUNC '(' expr (',' expr)* ')'
            | '(' expr ')' | '-' factor

Identifiers are the state coordinates ``x1`` .. ``x9``.  Functions:
exp, ln, sqrt, abs, tanh (unary), pow (binary), min, max (two or more
arguments, folded left).  Numbers are decimal literals with an optional
exponent.  Evaluation is double precision with IEEE conventions: division
by zero yields inf, ln of a negative number yields nan; nothing raises.

``parse_coefficient`` reports syntax problems with the byte offset where
scanning stopped.  Printing an expression produces fully parenthesized
source that parses back to an evaluation-identical function.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError, ExpressionError, ShapeError

__all__ = [
    "CoefficientFn",
    "Constant",
    "Affine",
    "Expression",
    "Table",
    "parse_coefficient",
    "as_coefficient",
]

_UNARY = {"exp": np.exp, "ln": np.log, "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh}
_FUNCS = set(_UNARY) | {"pow", "min", "max"}


# ---------------------------------------------------------------------------
# expression trees


@dataclass(frozen=True)
class _Num:
    value: float


@dataclass(frozen=True)
class _Var:
    index: int  # zero-based state coordinate


@dataclass(frozen=True)
class _Neg:
    child: object


@dataclass(frozen=True)
class _Bin:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class _Call:
    name: str
    args: tuple


def _eval_node(node, x: np.ndarray):
    if isinstance(node, _Num):
        return node.value
    if isinstance(node, _Var):
        if node.index >= x.shape[1]:
            raise EvaluationError(
                f"coordinate x{node.index + 1} is undefined for state dimension {x.shape[1]}"
            )
        return x[:, node.index]
    if isinstance(node, _Neg):
        return -_eval_node(node.child, x)
    if isinstance(node, _Bin):
        a = _eval_node(node.left, x)
        b = _eval_node(node.right, x)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if node.op == "+":
                return a + b
            if node.op == "-":
                return a - b
            if node.op == "*":
                return a * b
            return np.divide(a, b)
    # _Call
    args = [_eval_node(a, x) for a in node.args]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if node.name in _UNARY:
            return _UNARY[node.name](args[0])
        if node.name == "pow":
            return np.power(args[0], args[1])
        fold = np.minimum if node.name == "min" else np.maximum
        out = args[0]
        for extra in args[1:]:
            out = fold(out, extra)
        return out


def _print_node(node) -> str:
    if isinstance(node, _Num):
        return repr(node.value)
    if isinstance(node, _Var):
        return f"x{node.index + 1}"
    if isinstance(node, _Neg):
        return f"(-{_print_node(node.child)})"
    if isinstance(node, _Bin):
        return f"({_print_node(node.left)} {node.op} {_print_node(node.right)})"
    return f"{node.name}({', '.join(_print_node(a) for a in node.args)})"


# ---------------------------------------------------------------------------
# tokenizer / recursive-descent parser

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/(),]))"
)


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.pos = 0
        self.tokens: list[tuple[str, str, int]] = []
        self._tokenize()
        self.cursor = 0

    def _tokenize(self) -> None:
        pos = 0
        n = len(self.source)
        while pos < n:
            match = _TOKEN_RE.match(self.source, pos)
            if match is None or match.end() == pos:
                stripped = self.source[pos:].lstrip()
                if not stripped:
                    break
                bad_at = n - len(stripped)
                raise ExpressionError(
                    f"unexpected character {stripped[0]!r}", offset=bad_at
                )
            if match.lastgroup == "num":
                self.tokens.append(("num", match.group("num"), match.start("num")))
            elif match.lastgroup == "ident":
                self.tokens.append(("ident", match.group("ident"), match.start("ident")))
            else:
                self.tokens.append(("op", match.group("op"), match.start("op")))
            pos = match.end()
        self.tokens.append(("end", "", n))

    def peek(self):
        return self.tokens[self.cursor]

    def advance(self):
        tok = self.tokens[self.cursor]
        if tok[0] != "end":
            self.cursor += 1
        return tok

    def expect_op(self, symbol: str):
        kind, text, off = self.peek()
        if kind != "op" or text != symbol:
            raise ExpressionError(f"expected {symbol!r}", offset=off)
        return self.advance()

    # grammar rules ------------------------------------------------------

    def parse(self):
        tree = self.expr()
        kind, text, off = self.peek()
        if kind != "end":
            raise ExpressionError(f"trailing input {text!r}", offset=off)
        return tree

    def expr(self):
        node = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.advance()
                node = _Bin(text, node, self.term())
            else:
                return node

    def term(self):
        node = self.factor()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.advance()
                node = _Bin(text, node, self.factor())
            else:
                return node

    def factor(self):
        kind, text, off = self.peek()
        if kind == "num":
            self.advance()
            return _Num(float(text))
        if kind == "op" and text == "-":
            self.advance()
            return _Neg(self.factor())
        if kind == "op" and text == "(":
            self.advance()
            node = self.expr()
            self.expect_op(")")
            return node
        if kind == "ident":
            self.advance()
            nxt_kind, nxt_text, _ = self.peek()
            if nxt_kind == "op" and nxt_text == "(":
                return self._call(text, off)
            if re.fullmatch(r"x[1-9]", text):
                return _Var(int(text[1]) - 1)
            raise ExpressionError(f"unknown identifier {text!r}", offset=off)
        raise ExpressionError(f"expected a value, got {text!r}" if text else "unexpected end of input", offset=off)

    def _call(self, name: str, name_off: int):
        if name not in _FUNCS:
            raise ExpressionError(f"unknown function {name!r}", offset=name_off)
        self.expect_op("(")
        args = [self.expr()]
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text == ",":
                self.advance()
                args.append(self.expr())
            else:
                break
        self.expect_op(")")
        if name in _UNARY and len(args) != 1:
            raise ExpressionError(f"{name} takes exactly 1 argument, got {len(args)}", offset=name_off)
        if name == "pow" and len(args) != 2:
            raise ExpressionError(f"pow takes exactly 2 arguments, got {len(args)}", offset=name_off)
        if name in ("min", "max") and len(args) < 2:
            raise ExpressionError(f"{name} takes at least 2 arguments, got {len(args)}", offset=name_off)
        return _Call(name, tuple(args))


# ---------------------------------------------------------------------------
# public coefficient carriers


class CoefficientFn:
    """Callable state -> scalar, vectorized over sample batches.

    Subclasses implement ``__call__`` on an (n, m) array of states and
    return an (n,) array.  ``at`` evaluates a single point.
    """

    def __call__(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def at(self, point) -> float:
        pt = np.atleast_1d(np.asarray(point, dtype=float))
        return float(self(pt.reshape(1, -1))[0])

    def source_text(self) -> str:
        """Expression-language rendering (used for config export)."""
        raise NotImplementedError


def _check_states(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2:
        raise ShapeError(f"states must be a 2-d (n, m) array, got ndim {arr.ndim}")
    return arr


@dataclass(frozen=True)
class Constant(CoefficientFn):
    value: float

    def __call__(self, x):
        x = _check_states(x)
        return np.full(x.shape[0], float(self.value))

    def source_text(self) -> str:
        return repr(float(self.value))


class Affine(CoefficientFn):
    """intercept + <slope, x>; slope length fixes the expected dimension."""

    def __init__(self, intercept: float, slope):
        self.intercept = float(intercept)
        self.slope = np.atleast_1d(np.asarray(slope, dtype=float)).copy()
        self.slope.flags.writeable = False

    def __call__(self, x):
        x = _check_states(x)
        if x.shape[1] < self.slope.size:
            raise EvaluationError(
                f"affine coefficient needs {self.slope.size} coordinates, state has {x.shape[1]}"
            )
        return self.intercept + x[:, : self.slope.size] @ self.slope

    def source_text(self) -> str:
        parts = [repr(self.intercept)]
        for i, s in enumerate(self.slope):
            parts.append(f"{repr(float(s))} * x{i + 1}")
        return " + ".join(parts)


class Expression(CoefficientFn):
    def __init__(self, tree, source: str):
        self.tree = tree
        self.source = source

    def __call__(self, x):
        x = _check_states(x)
        out = _eval_node(self.tree, x)
        out = np.asarray(out, dtype=float)
        if out.ndim == 0:
            out = np.full(x.shape[0], float(out))
        return out

    def source_text(self) -> str:
        return _print_node(self.tree)

    def __repr__(self):
        return f"Expression({self.source!r})"


class Table(CoefficientFn):
    """Piecewise-linear interpolant in one state coordinate.

    Outside the node range the boundary value is held constant.
    """

    def __init__(self, nodes, values, axis: int = 0):
        nodes = np.asarray(nodes, dtype=float).ravel().copy()
        values = np.asarray(values, dtype=float).ravel().copy()
        if nodes.size != values.size:
            raise ShapeError("table nodes and values must have equal length")
        if nodes.size < 2:
            raise ShapeError("table needs at least two nodes")
        if np.any(np.diff(nodes) <= 0.0):
            raise ShapeError("table nodes must be strictly increasing")
        nodes.flags.writeable = False
        values.flags.writeable = False
        self.nodes = nodes
        self.values = values
        self.axis = int(axis)

    def __call__(self, x):
        x = _check_states(x)
        if self.axis >= x.shape[1]:
            raise EvaluationError(
                f"table reads coordinate x{self.axis + 1}, state has dimension {x.shape[1]}"
            )
        return np.interp(x[:, self.axis], self.nodes, self.values)

    def source_text(self) -> str:
        raise ExpressionError("tabulated coefficients have no expression form")


def parse_coefficient(source: str) -> CoefficientFn:
    """Parse expression source into a coefficient function.

    Pure numeric literals (optionally negated) collapse to ``Constant``.
    """
    if not isinstance(source, str):
        raise ExpressionError(f"expected source text, got {type(source).__name__}")
    tree = _Parser(source).parse()
    if isinstance(tree, _Num):
        return Constant(tree.value)
    if isinstance(tree, _Neg) and isinstance(tree.child, _Num):
        return Constant(-tree.child.value)
    return Expression(tree, source)


def as_coefficient(obj) -> CoefficientFn:
    """Coerce a number, source string, or CoefficientFn to a CoefficientFn."""
    if isinstance(obj, CoefficientFn):
        return obj
    if isinstance(obj, (int, float, np.floating, np.integer)):
        return Constant(float(obj))
    if isinstance(obj, str):
        return parse_coefficient(obj)
    raise ExpressionError(f"cannot interpret {type(obj).__name__} as a coefficient")
