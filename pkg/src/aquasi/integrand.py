"""A small expression language for integrands g: R^n -> R.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' ['-'] INT)?
    atom   := NUMBER | 'v'k | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Functions: ``min``, ``max`` (two or more arguments), ``abs``, ``sq`` and
``cap(expr, M)`` which truncates at the constant ``M``. Evaluation is
vectorized over component-major arrays of shape ``(n, ...)`` and carries a
forward-mode gradient. At ties ``min``/``max``/``cap`` differentiate the left
argument.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import EvaluationError, InputError, ParseError

PRESETS = {
    "doublewell2": ("sq(sq(v1) + sq(v2) - 1)", 2),
    "remark-min": ("min(sq(v1 - 1) + sq(v2), sq(v1 + 1) + sq(v2))", 2),
    "remark-rational-branch": ("sq(v1 - 1) + sq(v2)", 2),
    "remark-irrational-branch": ("sq(v1 + 1) + sq(v2)", 2),
}

_ARITY = {"abs": (1, 1), "sq": (1, 1), "cap": (2, 2), "min": (2, None), "max": (2, None)}


# --------------------------------------------------------------------- AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # zero-based


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exp: int


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Node = Union[Num, Var, Neg, Bin, Pow, Call]


# ------------------------------------------------------------------- lexer

_TOKEN = re.compile(
    r"(?P<ws>[ \t\r]+)|(?P<nl>\n)|(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),])"
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _lex(src: str) -> list[_Tok]:
    toks, pos, line, line_start = [], 0, 1, 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None:
            raise ParseError(f"unexpected character {src[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line, line_start = line + 1, m.end()
        elif kind != "ws":
            toks.append(_Tok(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, src: str, n: int):
        self.toks = _lex(src)
        self.i = 0
        self.n = n

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> _Tok:
        tok = self.take()
        if tok.text != text:
            found = tok.text or "end of input"
            raise ParseError(f"expected {text!r}, found {found!r}", tok.line, tok.col)
        return tok

    def parse(self) -> Node:
        node = self.expr()
        tok = self.peek()
        if tok.kind != "eof":
            raise ParseError(f"unexpected {tok.text!r}", tok.line, tok.col)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek().text in ("+", "-"):
            op = self.take().text
            node = Bin(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek().text in ("*", "/"):
            tok = self.take()
            rhs = self.unary()
            if tok.text == "/" and not _provably_nonzero(rhs):
                raise ParseError(
                    "denominator may vanish; guard it, e.g. max(expr, c) with a constant c > 0",
                    tok.line,
                    tok.col,
                )
            node = Bin(tok.text, node, rhs)
        return node

    def unary(self) -> Node:
        if self.peek().text == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek().text != "^":
            return base
        caret = self.take()
        sign = 1
        if self.peek().text == "-":
            self.take()
            sign = -1
        tok = self.take()
        if tok.kind != "num" or not re.fullmatch(r"\d+", tok.text):
            raise ParseError("exponent must be an integer literal", tok.line, tok.col)
        exp = sign * int(tok.text)
        if exp < 0 and not _provably_nonzero(base):
            raise ParseError("negative power of an expression that may vanish", caret.line, caret.col)
        return Pow(base, exp)

    def atom(self) -> Node:
        tok = self.take()
        if tok.kind == "num":
            return Num(float(tok.text))
        if tok.text == "(":
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "name":
            m = re.fullmatch(r"v(\d+)", tok.text)
            if m:
                k = int(m.group(1))
                if not 1 <= k <= self.n:
                    raise ParseError(f"unbound variable {tok.text} (dimension n={self.n})", tok.line, tok.col)
                return Var(k - 1)
            if tok.text not in _ARITY:
                raise ParseError(f"unknown identifier {tok.text!r}", tok.line, tok.col)
            self.expect("(")
            args = [self.expr()]
            while self.peek().text == ",":
                self.take()
                args.append(self.expr())
            self.expect(")")
            lo, hi = _ARITY[tok.text]
            if len(args) < lo or (hi is not None and len(args) > hi):
                want = f"{lo}" if lo == hi else f"at least {lo}"
                raise ParseError(f"{tok.text} takes {want} argument(s), got {len(args)}", tok.line, tok.col)
            if tok.text == "cap" and _const_value(args[1]) is None:
                raise ParseError("cap level must be a constant", tok.line, tok.col)
            return Call(tok.text, tuple(args))
        found = tok.text or "end of input"
        raise ParseError(f"unexpected {found!r}", tok.line, tok.col)


# ----------------------------------------------------- static sign analysis


def _const_value(node: Node) -> float | None:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return None
    try:
        with np.errstate(all="ignore"):
            val, _ = _eval(node, np.zeros((0, 1)), want_grad=False)
    except (_NeedsVar, EvaluationError):
        return None
    v = float(np.asarray(val).reshape(-1)[0])
    return v if np.isfinite(v) else None


def _lower_bound(node: Node) -> float | None:
    c = _const_value(node)
    if c is not None:
        return c
    if isinstance(node, Call):
        lbs = [_lower_bound(a) for a in node.args]
        if node.name in ("sq", "abs"):
            lb = lbs[0]
            if lb is not None and lb > 0:
                return lb * lb if node.name == "sq" else lb
            return 0.0
        if node.name == "max":
            known = [b for b in lbs if b is not None]
            return max(known) if known else None
        if node.name in ("min", "cap"):
            return None if any(b is None for b in lbs) else min(lbs)
    if isinstance(node, Bin):
        a, b = _lower_bound(node.left), _lower_bound(node.right)
        if a is None or b is None:
            return None
        if node.op == "+":
            return a + b
        if node.op == "*" and a >= 0 and b >= 0:
            return a * b
    if isinstance(node, Pow):
        lb = _lower_bound(node.base)
        if node.exp > 0 and node.exp % 2 == 0:
            return lb**node.exp if lb is not None and lb > 0 else 0.0
        if lb is not None and lb > 0:
            return lb**node.exp if node.exp > 0 else None
    return None


def _provably_nonzero(node: Node) -> bool:
    c = _const_value(node)
    if c is not None:
        return c != 0.0
    lb = _lower_bound(node)
    return lb is not None and lb > 0


# ------------------------------------------------------------- evaluation


class _NeedsVar(Exception):
    pass


def _eval(node: Node, x: np.ndarray, want_grad: bool):
    """Return ``(value, grad)`` with ``grad`` shaped ``(n, ...)`` (or None)."""
    shape = x.shape[1:]
    n = x.shape[0]
    if isinstance(node, Num):
        return np.full(shape, node.value), (np.zeros((n,) + shape) if want_grad else None)
    if isinstance(node, Var):
        if node.index >= n:
            raise _NeedsVar()
        val = x[node.index]
        if not want_grad:
            return val, None
        g = np.zeros((n,) + shape)
        g[node.index] = 1.0
        return val, g
    if isinstance(node, Neg):
        v, g = _eval(node.arg, x, want_grad)
        return -v, (-g if want_grad else None)
    if isinstance(node, Bin):
        a, ga = _eval(node.left, x, want_grad)
        b, gb = _eval(node.right, x, want_grad)
        if node.op == "+":
            return a + b, (ga + gb if want_grad else None)
        if node.op == "-":
            return a - b, (ga - gb if want_grad else None)
        if node.op == "*":
            return a * b, (ga * b + a * gb if want_grad else None)
        if np.any(b == 0):
            raise EvaluationError("division by zero")
        return a / b, ((ga * b - a * gb) / (b * b) if want_grad else None)
    if isinstance(node, Pow):
        a, ga = _eval(node.base, x, want_grad)
        k = node.exp
        if k < 0 and np.any(a == 0):
            raise EvaluationError("negative power of zero")
        val = a**k if k >= 0 else 1.0 / a ** (-k)
        if not want_grad:
            return val, None
        if k == 0:
            return val, np.zeros_like(ga)
        dv = k * (a ** (k - 1) if k >= 1 else 1.0 / a ** (1 - k))
        return val, dv * ga
    if isinstance(node, Call):
        name = node.name
        if name == "sq":
            a, ga = _eval(node.args[0], x, want_grad)
            return a * a, (2.0 * a * ga if want_grad else None)
        if name == "abs":
            a, ga = _eval(node.args[0], x, want_grad)
            return np.abs(a), (np.sign(a) * ga if want_grad else None)
        if name in ("min", "max", "cap"):
            pick = np.less_equal if name in ("min", "cap") else np.greater_equal
            v, g = _eval(node.args[0], x, want_grad)
            for arg in node.args[1:]:
                b, gb = _eval(arg, x, want_grad)
                mask = pick(v, b)
                v = np.where(mask, v, b)
                if want_grad:
                    g = np.where(mask, g, gb)
            return v, g
    raise TypeError(f"unknown node {node!r}")  # pragma: no cover


# ---------------------------------------------------------- pretty printer

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _prec(node: Node) -> int:
    if isinstance(node, Bin):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return 3
    if isinstance(node, Pow):
        return 4
    return 5


def _fmt_num(v: float) -> str:
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)


def pretty(node: Node) -> str:
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return f"v{node.index + 1}"
    if isinstance(node, Neg):
        inner = pretty(node.arg)
        return "-" + (f"({inner})" if _prec(node.arg) < 4 else inner)
    if isinstance(node, Pow):
        base = pretty(node.base)
        return (f"({base})" if _prec(node.base) < 5 else base) + f"^{node.exp}"
    if isinstance(node, Call):
        return f"{node.name}(" + ", ".join(pretty(a) for a in node.args) + ")"
    p = _PREC[node.op]
    left = pretty(node.left)
    if _prec(node.left) < p:
        left = f"({left})"
    right = pretty(node.right)
    if _prec(node.right) < p or (_prec(node.right) == p and node.op in ("-", "/")):
        right = f"({right})"
    return f"{left} {node.op} {right}"


# ------------------------------------------------------------- public API


@dataclass(frozen=True)
class IntegrandExpr:
    ast: Node
    n: int
    source: str = ""

    @property
    def cap(self) -> float | None:
        """Truncation level ``M`` when the expression is ``cap(..., M)`` at the top."""
        if isinstance(self.ast, Call) and self.ast.name == "cap":
            return _const_value(self.ast.args[1])
        return None

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[:1] != (self.n,):
            raise InputError(f"integrand expects {self.n} components, got array of shape {x.shape}")
        return x

    def value(self, x) -> np.ndarray:
        """Evaluate on a component-major array of shape ``(n, ...)``."""
        x = self._check(x)
        val, _ = _eval(self.ast, x, want_grad=False)
        return np.broadcast_to(val, x.shape[1:]).astype(float, copy=True)

    def value_and_grad(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = self._check(x)
        val, g = _eval(self.ast, x, want_grad=True)
        return np.broadcast_to(val, x.shape[1:]).astype(float, copy=True), np.broadcast_to(g, x.shape).astype(float, copy=True)

    def __str__(self) -> str:
        return pretty(self.ast)


def parse_integrand(src: str, n: int) -> IntegrandExpr:
    if not src or not src.strip():
        raise InputError("integrand expression is empty")
    if n < 1:
        raise InputError("dimension n must be >= 1")
    return IntegrandExpr(_Parser(src, n).parse(), n, src)


def eval(expr: IntegrandExpr, v) -> float:  # noqa: A001 - mirrors the operation name
    v = np.asarray(v, dtype=float).reshape(expr.n, 1)
    return float(expr.value(v)[0])


def grad(expr: IntegrandExpr, v) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(expr.n, 1)
    return expr.value_and_grad(v)[1][:, 0]


def resolve_integrand(spec: str, n: int) -> IntegrandExpr:
    """Preset name or inline expression."""
    if spec in PRESETS:
        src, dim = PRESETS[spec]
        if dim != n:
            raise InputError(f"preset {spec!r} is {dim}-dimensional, operator has n={n}")
        return parse_integrand(src, n)
    return parse_integrand(spec, n)


@dataclass
class CoercivityResult:
    ok: bool
    margin: float
    witness: list[float] | None

    def to_dict(self) -> dict:
        return {"ok": self.ok, "margin": self.margin, "witness": self.witness}


def coercivity_probe(expr: IntegrandExpr, C: float, p: float, R: float, directions: int = 64) -> CoercivityResult:
    """Check ``g(v) >= C|v|^p - 1/C`` on sampled radii ``R/2, R, 2R``.

    Coordinate axes (both signs) are always included among the directions.
    The reported witness is the sample with the largest deficit. Advisory only.
    """
    from .operators import sphere_samples

    if not R > 0 or not C > 0:
        raise InputError("coercivity probe needs R > 0 and C > 0")
    n = expr.n
    axes = np.vstack([np.eye(n), -np.eye(n)])
    dirs = np.vstack([axes, sphere_samples(n, directions)]) if n > 1 else axes
    pts = np.vstack([r * dirs for r in (R / 2, R, 2 * R)])
    vals = expr.value(pts.T)
    bound = C * np.linalg.norm(pts, axis=1) ** p - 1.0 / C
    slack = vals - bound
    i = int(np.argmin(slack))
    margin = float(slack[i])
    ok = margin >= -1e-12 * max(1.0, float(np.max(np.abs(bound))))
    return CoercivityResult(ok, margin, None if ok else pts[i].tolist())
