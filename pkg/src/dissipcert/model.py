"""Multiobjective optimal control problem data: dynamics, stage costs,
constraints, weighted-sum cost assembly and linear-quadratic structure
detection.

Problem files are line-oriented UTF-8 with ``#`` comments:

    [dims] n=<int> m=<int>
    [dynamics] f1=<expr> ... fn=<expr>
    [cost 1] l=<expr>
    [cost 2] l=<expr>            (further [cost k] sections allowed)
    [constraints] x1 in [a,b] ... u1 in [c,d]      (optional)
    [constraints.g] g1=<expr> ...                  (optional, g <= 0)

Entries may share a line with their section header or follow on their own
lines.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from . import expr as ex

__all__ = [
    "Problem", "WeightVector", "LQStructure", "NotLQ", "ProblemFormatError",
    "load_problem", "load_problem_path", "combine_costs", "extract_lq",
]

# Fallback half-width used for multistart grids and sampling when a
# coordinate has no box constraint.
DEFAULT_BOX_HALF_WIDTH = 5.0


class ProblemFormatError(ValueError):
    """Malformed problem file; message carries the line number."""


@dataclass(frozen=True)
class WeightVector:
    """Convex weights over the stage costs: each in [0, 1], summing to 1."""

    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) < 2:
            raise ValueError("weight vector needs at least two entries")
        if any(v < -1e-12 or v > 1 + 1e-12 for v in vals):
            raise ValueError("weights must lie in [0, 1], got %r" % (vals,))
        if abs(sum(vals) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1, got %r" % (sum(vals),))

    @classmethod
    def pair(cls, mu):
        """Two-cost weights (mu, 1 - mu)."""
        return cls((float(mu), 1.0 - float(mu)))

    @property
    def mu(self):
        """Leading weight (the scalar sweep parameter for two costs)."""
        return self.values[0]

    def __len__(self):
        return len(self.values)

    def as_array(self):
        return np.array(self.values)


@dataclass(frozen=True)
class Problem:
    """Immutable problem data; safe for concurrent reads."""

    n: int
    m: int
    f: tuple            # n dynamics expressions
    costs: tuple        # k >= 2 stage cost expressions
    x_box: tuple = None  # ((lo, hi), ...) per state coordinate, or None
    u_box: tuple = None
    g: tuple = ()       # inequality expressions, g <= 0

    @property
    def k(self):
        return len(self.costs)

    @property
    def d(self):
        return self.n + self.m

    @property
    def bounded(self):
        """True when every coordinate carries a box constraint."""
        return self.x_box is not None and self.u_box is not None

    # -- expression evaluation bound to this problem's dimensions ----------

    def eval_value(self, e, x, u):
        return ex.eval_value(e, x, u, self.n, self.m)

    def eval_jet1(self, e, x, u):
        return ex.eval_jet1(e, x, u, self.n, self.m)

    def eval_jet2(self, e, x, u):
        return ex.eval_jet2(e, x, u, self.n, self.m)

    def eval_value_batch(self, e, xs, us):
        return ex.eval_value_batch(e, xs, us, self.n, self.m)

    def eval_jet1_batch(self, e, xs, us):
        return ex.eval_jet1_batch(e, xs, us, self.n, self.m)

    def eval_jet2_batch(self, e, xs, us):
        return ex.eval_jet2_batch(e, xs, us, self.n, self.m)

    def f_value(self, x, u):
        return np.array([self.eval_value(fi, x, u) for fi in self.f])

    def f_value_batch(self, xs, us):
        vals, valid = [], True
        for fi in self.f:
            v, ok = self.eval_value_batch(fi, xs, us)
            vals.append(v)
            valid = np.logical_and(valid, ok)
        return np.stack(vals, axis=-1), valid

    # -- constraint geometry ------------------------------------------------

    def box_bounds(self):
        """Per-coordinate (lower, upper) arrays for x and u, substituting the
        default half-width where no box was declared."""
        def expand(box, dim):
            if box is not None:
                arr = np.array(box, dtype=float)
                return arr[:, 0], arr[:, 1]
            return (np.full(dim, -DEFAULT_BOX_HALF_WIDTH),
                    np.full(dim, DEFAULT_BOX_HALF_WIDTH))
        xlo, xhi = expand(self.x_box, self.n)
        ulo, uhi = expand(self.u_box, self.m)
        return xlo, xhi, ulo, uhi

    def box_contains(self, x, u, tol=0.0):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        u = np.atleast_1d(np.asarray(u, dtype=float)) if self.m else np.zeros(0)
        ok = True
        if self.x_box is not None:
            for xi, (lo, hi) in zip(x, self.x_box):
                ok = ok and (lo - tol <= xi <= hi + tol)
        if self.u_box is not None:
            for ui, (lo, hi) in zip(u, self.u_box):
                ok = ok and (lo - tol <= ui <= hi + tol)
        return bool(ok)

    def interior_slack(self, x, u):
        """Smallest slack to any box bound or inequality constraint; +inf when
        unconstrained.  Positive means strictly inside."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        u = np.atleast_1d(np.asarray(u, dtype=float)) if self.m else np.zeros(0)
        slack = np.inf
        if self.x_box is not None:
            for xi, (lo, hi) in zip(x, self.x_box):
                slack = min(slack, xi - lo, hi - xi)
        if self.u_box is not None:
            for ui, (lo, hi) in zip(u, self.u_box):
                slack = min(slack, ui - lo, hi - ui)
        for gi in self.g:
            slack = min(slack, -self.eval_value(gi, x, u))
        return slack

    def state_in_X(self, x, tol=0.0):
        if self.x_box is None:
            return True
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return bool(all(lo - tol <= xi <= hi + tol
                        for xi, (lo, hi) in zip(x, self.x_box)))


@dataclass(frozen=True)
class LQStructure:
    """Linear dynamics x+ = Ax + Bu with per-cost quadratic data
    x'Q x + u'R u + s'x + v'u (+ recorded constant offset)."""

    A: np.ndarray
    B: np.ndarray
    Q: tuple
    R: tuple
    s: tuple
    v: tuple
    offsets: tuple

    @property
    def k(self):
        return len(self.Q)

    def weighted(self, w):
        """Convex combination of the per-cost data under weights `w`."""
        mu = w.as_array()
        Q = sum(m * Qi for m, Qi in zip(mu, self.Q))
        R = sum(m * Ri for m, Ri in zip(mu, self.R))
        s = sum(m * si for m, si in zip(mu, self.s))
        v = sum(m * vi for m, vi in zip(mu, self.v))
        return Q, R, s, v


@dataclass(frozen=True)
class NotLQ:
    """Returned by extract_lq when the problem has no LQ structure."""

    reason: str

    def __bool__(self):
        return False


# ---------------------------------------------------------------------------
# Problem file loader

_SECTION_RE = re.compile(r"\[([a-z.]+(?:\s+\d+)?)\]\s*(.*)$")
_ASSIGN_SPLIT_RE = re.compile(r"(?=\b[fgl]\d*\s*=)")
_ASSIGN_RE = re.compile(r"([fgl])(\d*)\s*=\s*(.+?)\s*$")
_BOX_SPLIT_RE = re.compile(r"(?=\b[xu]\d+\s+in\b)")
_BOX_RE = re.compile(r"([xu])(\d+)\s+in\s*\[\s*([^,\]]+)\s*,\s*([^\]]+)\s*\]\s*$")
_DIM_RE = re.compile(r"n\s*=\s*(\d+)\s+m\s*=\s*(\d+)\s*$")


def load_problem(text):
    """Parse problem-file text into a validated Problem."""
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        match = _SECTION_RE.match(line)
        if match:
            name = re.sub(r"\s+", " ", match.group(1).strip())
            if name in sections:
                raise ProblemFormatError("line %d: duplicate section [%s]" % (lineno, name))
            sections[name] = []
            current = name
            line = match.group(2).strip()
            if not line:
                continue
        if current is None:
            raise ProblemFormatError("line %d: content before any section header" % lineno)
        sections[current].append((lineno, line))

    if "dims" not in sections:
        raise ProblemFormatError("missing [dims] section")
    dims_entries = sections.pop("dims")
    if len(dims_entries) != 1 or not _DIM_RE.match(dims_entries[0][1]):
        lineno = dims_entries[0][0] if dims_entries else 0
        raise ProblemFormatError("line %d: [dims] must read 'n=<int> m=<int>'" % lineno)
    dm = _DIM_RE.match(dims_entries[0][1])
    n, m = int(dm.group(1)), int(dm.group(2))
    if n < 1 or m < 0:
        raise ProblemFormatError("dimensions must satisfy n >= 1, m >= 0")

    def parse_entry(lineno, key_kind, chunk, want_index):
        am = _ASSIGN_RE.match(chunk)
        if am is None or am.group(1) != key_kind:
            raise ProblemFormatError("line %d: expected '%s<k>=<expr>', got %r"
                                     % (lineno, key_kind, chunk))
        idx = int(am.group(2)) if am.group(2) else None
        if want_index and idx is None:
            raise ProblemFormatError("line %d: missing index on %r" % (lineno, key_kind))
        try:
            node = ex.parse_expression(am.group(3), n, m)
        except ex.ExprSyntaxError as err:
            raise ProblemFormatError("line %d: %s" % (lineno, err)) from err
        return idx, node

    def gather_assignments(name, key_kind, want_index=True):
        out = {}
        for lineno, line in sections.pop(name, []):
            for chunk in filter(None, (c.strip() for c in _ASSIGN_SPLIT_RE.split(line))):
                idx, node = parse_entry(lineno, key_kind, chunk, want_index)
                if idx in out:
                    raise ProblemFormatError("line %d: duplicate %s%s" % (lineno, key_kind, idx))
                out[idx] = node
        return out

    if "dynamics" not in sections:
        raise ProblemFormatError("missing [dynamics] section")
    fmap = gather_assignments("dynamics", "f")
    if sorted(fmap) != list(range(1, n + 1)):
        raise ProblemFormatError("[dynamics] must define f1..f%d exactly" % n)
    f = tuple(fmap[i] for i in range(1, n + 1))

    cost_names = sorted((nm for nm in sections if nm.startswith("cost ")),
                        key=lambda nm: int(nm.split()[1]))
    costs = []
    for idx, nm in enumerate(cost_names, start=1):
        if nm != "cost %d" % idx:
            raise ProblemFormatError("cost sections must be numbered 1..k, found [%s]" % nm)
        entries = sections.pop(nm)
        if len(entries) != 1:
            raise ProblemFormatError("line %d: [%s] takes a single 'l=<expr>'"
                                     % (entries[0][0], nm))
        lineno, line = entries[0]
        _, node = parse_entry(lineno, "l", line, want_index=False)
        costs.append(node)
    if len(costs) < 2:
        raise ProblemFormatError("need at least two [cost k] sections")

    x_box, u_box = None, None
    if "constraints" in sections:
        xb = {}
        ub = {}
        for lineno, line in sections.pop("constraints"):
            for chunk in filter(None, (c.strip() for c in _BOX_SPLIT_RE.split(line))):
                bm = _BOX_RE.match(chunk)
                if bm is None:
                    raise ProblemFormatError(
                        "line %d: expected 'x<k> in [a,b]' or 'u<k> in [a,b]', got %r"
                        % (lineno, chunk))
                kind, idx = bm.group(1), int(bm.group(2)) - 1
                try:
                    lo, hi = float(bm.group(3)), float(bm.group(4))
                except ValueError as err:
                    raise ProblemFormatError("line %d: bad interval in %r" % (lineno, chunk)) from err
                dim = n if kind == "x" else m
                if not 0 <= idx < dim:
                    raise ProblemFormatError("line %d: variable index out of range: %s%d"
                                             % (lineno, kind, idx + 1))
                if lo > hi:
                    raise ProblemFormatError("line %d: empty box [%g, %g] for %s%d"
                                             % (lineno, lo, hi, kind, idx + 1))
                (xb if kind == "x" else ub)[idx] = (lo, hi)
        if xb:
            if sorted(xb) != list(range(n)):
                raise ProblemFormatError("[constraints] must bound every state coordinate or none")
            x_box = tuple(xb[i] for i in range(n))
        if ub:
            if sorted(ub) != list(range(m)):
                raise ProblemFormatError("[constraints] must bound every input coordinate or none")
            u_box = tuple(ub[i] for i in range(m))

    g = ()
    if "constraints.g" in sections:
        gmap = gather_assignments("constraints.g", "g")
        if sorted(gmap) != list(range(1, len(gmap) + 1)):
            raise ProblemFormatError("[constraints.g] must define g1..gp contiguously")
        g = tuple(gmap[i] for i in range(1, len(gmap) + 1))

    if sections:
        raise ProblemFormatError("unknown section [%s]" % next(iter(sections)))
    return Problem(n=n, m=m, f=f, costs=tuple(costs), x_box=x_box, u_box=u_box, g=g)


def load_problem_path(path):
    with open(path, "r", encoding="utf-8") as fh:
        return load_problem(fh.read())


# ---------------------------------------------------------------------------
# Weighted cost and LQ structure


def combine_costs(problem, w):
    """Weighted-sum stage cost as an expression tree.

    Zero-weight terms are dropped, so the result is defined wherever the
    positively weighted costs are; a unit weight returns that cost unchanged.
    """
    if len(w) != problem.k:
        raise ValueError("weight vector length %d != number of costs %d"
                         % (len(w), problem.k))
    terms = [(mu, cost) for mu, cost in zip(w.values, problem.costs) if mu != 0.0]
    if len(terms) == 1 and terms[0][0] == 1.0:
        return terms[0][1]
    node = None
    for mu, cost in terms:
        scaled = ex.Mul(ex.Const(mu), cost)
        node = scaled if node is None else ex.Add(node, scaled)
    return node


_LQ_PROBE_POINTS = 7
_LQ_VERIFY_POINTS = 100
_LQ_TOL = 1e-9


def extract_lq(problem, rng_seed=0):
    """Identify exact linear-quadratic structure, or report NotLQ.

    Dynamics must be linear with no constant term; costs must be quadratic
    with no x-u cross terms (constant offsets are recorded, not rejected).
    The candidate structure is read off from jets at the origin and certified
    by re-evaluation at random points; any mismatch yields NotLQ.
    """
    n, m, d = problem.n, problem.m, problem.d
    rng = np.random.default_rng(rng_seed)
    probes = rng.uniform(-2.0, 2.0, size=(_LQ_PROBE_POINTS, d))

    def jets_at(e, z):
        return problem.eval_jet2(e, z[:n], z[n:])

    origin = np.zeros(d)
    try:
        # dynamics: constant Jacobian, zero Hessian, f(0,0) = 0
        A = np.zeros((n, n))
        B = np.zeros((n, m))
        for i, fi in enumerate(problem.f):
            jet = jets_at(fi, origin)
            if abs(jet.value) > _LQ_TOL:
                return NotLQ("dynamics has a constant term")
            if np.max(np.abs(jet.hess)) > _LQ_TOL:
                return NotLQ("dynamics is not linear")
            for z in probes:
                if np.max(np.abs(jets_at(fi, z).hess)) > _LQ_TOL:
                    return NotLQ("dynamics is not linear")
            A[i] = jet.grad[:n]
            B[i] = jet.grad[n:]

        Qs, Rs, ss, vs, offsets = [], [], [], [], []
        for cost in problem.costs:
            jet = jets_at(cost, origin)
            H = jet.hess
            for z in probes:
                if np.max(np.abs(jets_at(cost, z).hess - H)) > _LQ_TOL:
                    return NotLQ("a cost is not quadratic")
            if np.max(np.abs(H[:n, n:])) > _LQ_TOL:
                return NotLQ("a cost has x-u cross terms")
            Qs.append(H[:n, :n] / 2.0)
            Rs.append(H[n:, n:] / 2.0)
            ss.append(jet.grad[:n].copy())
            vs.append(jet.grad[n:].copy())
            offsets.append(jet.value)
    except ex.ExprDomainError as err:
        return NotLQ("domain error while probing: %s" % err)

    for Q in Qs:
        if np.linalg.eigvalsh(Q).min() < -1e-10:
            return NotLQ("a cost has an indefinite state weight")
    for R in Rs:
        if m and np.linalg.eigvalsh(R).min() <= 0:
            return NotLQ("a cost has a non-positive-definite input weight")

    lq = LQStructure(A=A, B=B, Q=tuple(Qs), R=tuple(Rs),
                     s=tuple(ss), v=tuple(vs), offsets=tuple(offsets))

    # certification pass: the extracted data must reproduce the expressions
    checks = rng.uniform(-3.0, 3.0, size=(_LQ_VERIFY_POINTS, d))
    for z in checks:
        x, u = z[:n], z[n:]
        fz = problem.f_value(x, u)
        if np.max(np.abs(fz - (A @ x + B @ u))) > 1e-12 * max(1.0, np.max(np.abs(fz))):
            return NotLQ("dynamics reconstruction mismatch")
        for cost, Q, R, s, v, off in zip(problem.costs, Qs, Rs, ss, vs, offsets):
            lhs = problem.eval_value(cost, x, u)
            rhs = x @ Q @ x + u @ R @ u + s @ x + v @ u + off
            if abs(lhs - rhs) > 1e-12 * max(1.0, abs(lhs)):
                return NotLQ("cost reconstruction mismatch")
    return lq
