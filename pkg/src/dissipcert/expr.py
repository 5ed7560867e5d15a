"""Scalar expressions over state/input variables with exact first and second
derivatives.

Expressions are parsed from a small infix grammar (see `parse_expression`) into
an immutable AST over constants, variables x1..xn / u1..um, the arithmetic
operators + - * / ^ and the smooth functions ln and exp.  Evaluation propagates
second-order jets (value, gradient, Hessian with respect to the stacked
variable z = (x, u)) node by node, so derivatives are exact up to floating
point -- no truncation error.

Batch evaluation is supported by passing arrays of points; all node operations
are plain numpy broadcasts, which keeps sweeps over tens of thousands of
sample points cheap.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Expr", "Const", "Var", "Add", "Sub", "Mul", "Div", "Pow", "Neg", "Func",
    "Jet2", "ExprError", "ExprSyntaxError", "ExprDomainError",
    "parse_expression", "eval_value", "eval_jet1", "eval_jet2",
    "eval_value_batch", "eval_jet1_batch", "eval_jet2_batch",
]


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    """Parse failure; `offset` is the byte offset into the source text."""

    def __init__(self, message, offset):
        super().__init__("%s (at offset %d)" % (message, offset))
        self.offset = offset


class ExprDomainError(ExprError):
    """Evaluation left the domain (ln of a nonpositive argument, division by
    zero, fractional power of a nonpositive base, zero to a negative power)."""


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Expr:
    """Base node.  Trees are immutable after construction."""

    def __str__(self):
        return _to_string(self, 0)


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    kind: str   # "x" or "u"
    index: int  # 0-based


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: Expr


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True)
class Func(Expr):
    name: str   # "ln" or "exp"
    operand: Expr


@dataclass
class Jet2:
    """Value, gradient and Hessian with respect to the stacked (x, u)."""

    value: float
    grad: np.ndarray
    hess: np.ndarray


# ---------------------------------------------------------------------------
# Tokenizer / parser

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)

_IDENT_RE = re.compile(r"(x|u)(\d+)\Z")

_FUNCS = ("ln", "exp")


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            if text[pos:].strip() == "":
                break
            bad = len(text) - len(text[pos:].lstrip())
            raise ExprSyntaxError("unexpected character %r" % text[bad], bad)
        start = match.start() + len(match.group(0)) - len(match.group(0).lstrip())
        if match.group("num") is not None:
            tokens.append(("num", match.group("num"), start))
        elif match.group("name") is not None:
            tokens.append(("name", match.group("name"), start))
        else:
            tokens.append(("op", match.group("op"), start))
        pos = match.end()
    tokens.append(("eof", "", len(text)))
    return tokens


class _Parser:
    """Recursive descent parser for

        expr   := term { ("+"|"-") term }
        term   := factor { ("*"|"/") factor }
        factor := base [ "^" factor ]          ("^" is right-associative)
        base   := number | ident | "(" expr ")" | "-" base | func "(" expr ")"

    Unary minus is part of `base`, so it binds tighter than "^".
    """

    def __init__(self, text, n, m):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.n = n
        self.m = m

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op):
        kind, val, off = self.peek()
        if kind != "op" or val != op:
            raise ExprSyntaxError("expected %r" % op, off)
        return self.advance()

    def parse(self):
        node = self.expr()
        kind, val, off = self.peek()
        if kind != "eof":
            raise ExprSyntaxError("unexpected trailing input %r" % val, off)
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.advance()
                rhs = self.term()
                node = Add(node, rhs) if val == "+" else Sub(node, rhs)
            else:
                return node

    def term(self):
        node = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.advance()
                rhs = self.factor()
                node = Mul(node, rhs) if val == "*" else Div(node, rhs)
            else:
                return node

    def factor(self):
        node = self.base()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.advance()
            expo = self.factor()
            # fold constant powers so integer exponents stay exact
            if isinstance(node, Const) and isinstance(expo, Const):
                try:
                    folded = node.value ** expo.value
                except (ValueError, OverflowError, ZeroDivisionError):
                    folded = None
                if folded is not None and np.isfinite(folded):
                    return Const(float(folded))
            return Pow(node, expo)
        return node

    def base(self):
        kind, val, off = self.advance()
        if kind == "op" and val == "-":
            operand = self.base()
            # fold a negated literal so printing round-trips structurally
            if isinstance(operand, Const):
                return Const(-operand.value)
            return Neg(operand)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        if kind == "num":
            return Const(float(val))
        if kind == "name":
            if val in _FUNCS:
                self.expect_op("(")
                node = self.expr()
                self.expect_op(")")
                return Func(val, node)
            ident = _IDENT_RE.match(val)
            if ident is None:
                raise ExprSyntaxError("unknown identifier %r" % val, off)
            index = int(ident.group(2)) - 1
            dim = self.n if ident.group(1) == "x" else self.m
            if not 0 <= index < dim:
                raise ExprSyntaxError(
                    "variable index out of range: %r (n=%d, m=%d)"
                    % (val, self.n, self.m), off)
            return Var(ident.group(1), index)
        raise ExprSyntaxError("unexpected token %r" % (val or "end of input"), off)


def parse_expression(text, n, m):
    """Parse `text` into an Expr over x1..xn and u1..um.

    Raises ExprSyntaxError (with byte offset) on malformed input, unknown
    identifiers, or variable indices outside the declared dimensions.
    """
    return _Parser(text, n, m).parse()


# ---------------------------------------------------------------------------
# Pretty printer (round-trips to a structurally equal tree)

_PREC_ADD, _PREC_MUL, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4


def _fmt_const(value):
    if value == int(value) and abs(value) < 1e16:
        return repr(int(value))
    return repr(value)


def _to_string(node, parent_prec):
    if isinstance(node, Const):
        text, prec = _fmt_const(node.value), _PREC_ATOM
        if node.value < 0:
            prec = _PREC_MUL  # needs parens under division/powers
    elif isinstance(node, Var):
        text, prec = "%s%d" % (node.kind, node.index + 1), _PREC_ATOM
    elif isinstance(node, (Add, Sub)):
        op = "+" if isinstance(node, Add) else "-"
        text = "%s %s %s" % (_to_string(node.left, _PREC_ADD), op,
                             _to_string(node.right, _PREC_ADD + 1))
        prec = _PREC_ADD
    elif isinstance(node, (Mul, Div)):
        op = "*" if isinstance(node, Mul) else "/"
        text = "%s %s %s" % (_to_string(node.left, _PREC_MUL), op,
                             _to_string(node.right, _PREC_MUL + 1))
        prec = _PREC_MUL
    elif isinstance(node, Pow):
        text = "%s^%s" % (_to_string(node.base, _PREC_ATOM),
                          _to_string(node.exponent, _PREC_POW))
        prec = _PREC_POW
    elif isinstance(node, Neg):
        text = "-%s" % _to_string(node.operand, _PREC_ATOM)
        prec = _PREC_MUL
    elif isinstance(node, Func):
        text = "%s(%s)" % (node.name, _to_string(node.operand, 0))
        prec = _PREC_ATOM
    else:
        raise TypeError("unknown node %r" % (node,))
    if prec < parent_prec:
        return "(%s)" % text
    return text


# ---------------------------------------------------------------------------
# Jet evaluation
#
# Jets are triples (v, g, H) where g and H may be None, meaning identically
# zero.  Shapes broadcast: v is scalar or (N,), g is (d,) or (N, d), H is
# (d, d) or (N, d, d).  Hessians are built only from symmetric primitives, so
# symmetry holds bitwise.


class _EvalContext:
    def __init__(self, xs, us, n, m, order, masked):
        self.xs = xs
        self.us = us
        self.d = n + m
        self.n = n
        self.order = order
        self.masked = masked
        self.valid = True    # scalar True or boolean array
        self.reason = None

    def column(self, node):
        if node.kind == "x":
            return self.xs[..., node.index], node.index
        return self.us[..., node.index], self.n + node.index

    def restrict(self, ok, reason):
        ok = np.asarray(ok)
        if not self.masked and not ok.all():
            raise ExprDomainError(reason)
        if ok.all():
            return
        self.valid = np.logical_and(self.valid, ok)
        if self.reason is None:
            self.reason = reason


def _gadd(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _gneg(a):
    return None if a is None else -a


def _gscale(s, a, extra_axes):
    # s * a with s broadcast over the trailing derivative axes of a
    if a is None:
        return None
    return np.asarray(s)[(...,) + (None,) * extra_axes] * a


def _sym_outer(ga, gb):
    # ga gb^T + gb ga^T, exactly symmetric in floating point
    if ga is None or gb is None:
        return None
    return ga[..., :, None] * gb[..., None, :] + gb[..., :, None] * ga[..., None, :]


def _self_outer(ga):
    if ga is None:
        return None
    return ga[..., :, None] * ga[..., None, :]


def _jet_mul(a, b):
    va, ga, ha = a
    vb, gb, hb = b
    v = va * vb
    g = _gadd(_gscale(va, gb, 1), _gscale(vb, ga, 1))
    h = _gadd(_gadd(_gscale(va, hb, 2), _gscale(vb, ha, 2)), _sym_outer(ga, gb))
    return v, g, h


def _jet_reciprocal(a, ctx):
    va, ga, ha = a
    ctx.restrict(va != 0, "division by zero")
    w = 1.0 / va
    w2 = w * w
    g = _gscale(-w2, ga, 1)
    h = _gadd(_gscale(-w2, ha, 2), _gscale(2.0 * w2 * w, _self_outer(ga), 2))
    return w, g, h


def _jet_ln(a, ctx):
    va, ga, ha = a
    ctx.restrict(va > 0, "ln of a nonpositive argument")
    v = np.log(va)
    inv = 1.0 / va
    g = _gscale(inv, ga, 1)
    h = _gadd(_gscale(inv, ha, 2), _gscale(-inv * inv, _self_outer(ga), 2))
    return v, g, h


def _jet_exp(a):
    va, ga, ha = a
    v = np.exp(va)
    g = _gscale(v, ga, 1)
    h = _gadd(_gscale(v, ha, 2), _gscale(v, _self_outer(ga), 2))
    return v, g, h


def _jet_pow_const(a, expo, ctx):
    va, ga, ha = a
    if expo == int(expo):
        k = int(expo)
        if k == 0:
            return np.ones_like(np.asarray(va, dtype=float)), None, None
        if k < 0:
            ctx.restrict(va != 0, "zero raised to a negative power")
        v = np.power(va, float(k))
        dv = k * np.power(va, float(k - 1))
        ddv = k * (k - 1) * np.power(va, float(k - 2)) if k != 1 else 0.0
    else:
        ctx.restrict(va > 0, "fractional power of a nonpositive base")
        v = np.power(va, expo)
        dv = expo * np.power(va, expo - 1.0)
        ddv = expo * (expo - 1.0) * np.power(va, expo - 2.0)
    g = _gscale(dv, ga, 1)
    h = _gadd(_gscale(dv, ha, 2), _gscale(ddv, _self_outer(ga), 2))
    return v, g, h


def _jet(node, ctx):
    if isinstance(node, Const):
        return node.value, None, None
    if isinstance(node, Var):
        col, slot = ctx.column(node)
        if ctx.order == 0:
            return col, None, None
        basis = np.zeros(ctx.d)
        basis[slot] = 1.0
        return col, basis, None
    if isinstance(node, Add):
        va, ga, ha = _jet(node.left, ctx)
        vb, gb, hb = _jet(node.right, ctx)
        return va + vb, _gadd(ga, gb), _gadd(ha, hb)
    if isinstance(node, Sub):
        va, ga, ha = _jet(node.left, ctx)
        vb, gb, hb = _jet(node.right, ctx)
        return va - vb, _gadd(ga, _gneg(gb)), _gadd(ha, _gneg(hb))
    if isinstance(node, Neg):
        va, ga, ha = _jet(node.operand, ctx)
        return -va, _gneg(ga), _gneg(ha)
    if isinstance(node, Mul):
        return _jet_mul(_jet(node.left, ctx), _jet(node.right, ctx))
    if isinstance(node, Div):
        return _jet_mul(_jet(node.left, ctx), _jet_reciprocal(_jet(node.right, ctx), ctx))
    if isinstance(node, Func):
        a = _jet(node.operand, ctx)
        return _jet_ln(a, ctx) if node.name == "ln" else _jet_exp(a)
    if isinstance(node, Pow):
        a = _jet(node.base, ctx)
        if isinstance(node.exponent, Const):
            return _jet_pow_const(a, node.exponent.value, ctx)
        b = _jet(node.exponent, ctx)
        # a^b = exp(b ln a), defined for a > 0
        return _jet_exp(_jet_mul(b, _jet_ln(a, ctx)))
    raise TypeError("unknown node %r" % (node,))


def _prepare(x, u):
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    us = np.asarray(u, dtype=float)
    if us.size == 0:
        us = np.zeros(xs.shape[:-1] + (0,))
    else:
        us = np.atleast_1d(us)
    return xs, us


def _run(expr, x, u, n, m, order, masked):
    xs, us = _prepare(x, u)
    ctx = _EvalContext(xs, us, n, m, order, masked)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        v, g, h = _jet(expr, ctx)
    batch = xs.shape[:-1]
    v = np.broadcast_to(np.asarray(v, dtype=float), batch).copy() if batch else float(v)
    if order >= 1:
        g = np.zeros(ctx.d) if g is None else g
        g = np.ascontiguousarray(np.broadcast_to(g, batch + (ctx.d,)))
    if order >= 2:
        h = np.zeros((ctx.d, ctx.d)) if h is None else h
        h = np.ascontiguousarray(np.broadcast_to(h, batch + (ctx.d, ctx.d)))
    valid = ctx.valid
    if masked:
        valid = np.broadcast_to(np.asarray(valid, dtype=bool), batch).copy() \
            if batch else bool(np.all(valid))
    return v, g, h, valid


def eval_value(expr, x, u, n, m):
    """Evaluate `expr` at a single point; raises ExprDomainError off-domain."""
    v, _, _, _ = _run(expr, x, u, n, m, 0, masked=False)
    return v


def eval_jet1(expr, x, u, n, m):
    """Value and gradient at a single point."""
    v, g, _, _ = _run(expr, x, u, n, m, 1, masked=False)
    return v, g


def eval_jet2(expr, x, u, n, m):
    """Value, gradient and (exactly symmetric) Hessian at a single point."""
    v, g, h, _ = _run(expr, x, u, n, m, 2, masked=False)
    return Jet2(v, g, h)


def eval_value_batch(expr, xs, us, n, m):
    """Vectorized values over points; returns (values, valid) where invalid
    lanes (domain violations) hold unspecified values."""
    v, _, _, valid = _run(expr, xs, us, n, m, 0, masked=True)
    return v, valid


def eval_jet1_batch(expr, xs, us, n, m):
    v, g, _, valid = _run(expr, xs, us, n, m, 1, masked=True)
    return v, g, valid


def eval_jet2_batch(expr, xs, us, n, m):
    """Vectorized jets: values (N,), grads (N,d), Hessians (N,d,d), valid (N,)."""
    v, g, h, valid = _run(expr, xs, us, n, m, 2, masked=True)
    return v, g, h, valid
