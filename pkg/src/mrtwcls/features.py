"""Declarative feature construction for effect and probability models.

Features are written in a tiny expression language over panel columns:

    1                   constant
    urge                covariate column, value at the current occasion
    t                   occasion index (1-based), t^2 etc. for polynomials
    lag(trt, 1)         prior treatment; lags need initial values at t=1
    (t < 4)             indicator, value 1.0 or 0.0
    urge * (t < 4)      products of any of the above

Bare ``trt`` and ``y`` are rejected: both are determined at or after the
current treatment, and features must be measurable strictly before it.
Lagged references (``lag(trt, 1)``, ``lag(y, 1)`` meaning the previous
response) are fine.
"""

from __future__ import annotations

import re

import numpy as np

from .errors import FeatureEvaluationError, InvariantViolation

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_]\w*)"
    r"|(?P<op><=|>=|==|!=|[()*,^<>-]))"
)
_CMP_OPS = ("<=", ">=", "==", "!=", "<", ">")


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN.match(text, pos)
        if match is None or match.end() == pos:
            remainder = text[pos:].strip()
            if not remainder:
                break
            raise InvariantViolation(f"cannot tokenize feature {text!r} at {remainder[:10]!r}")
        pos = match.end()
        if match.group("num") is not None:
            tokens.append(("num", float(match.group("num"))))
        elif match.group("name") is not None:
            tokens.append(("name", match.group("name")))
        else:
            tokens.append(("op", match.group("op")))
    return tokens


class _Parser:
    """Recursive descent over: compare := product (CMP product)?,
    product := unary ('*' unary)*, unary := '-' unary | power,
    power := atom ('^' INT)?, atom := NUM | 't' | IDENT |
    'lag(' IDENT ',' INT ')' | '(' compare ')'."""

    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def fail(self, why):
        raise InvariantViolation(f"bad feature expression {self.text!r}: {why}")

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None)

    def take(self, kind=None, value=None):
        tok = self.peek()
        if tok[0] is None:
            self.fail("unexpected end")
        if kind is not None and tok[0] != kind:
            self.fail(f"expected {kind}, found {tok[1]!r}")
        if value is not None and tok[1] != value:
            self.fail(f"expected {value!r}, found {tok[1]!r}")
        self.pos += 1
        return tok

    def parse(self):
        node = self.compare()
        if self.peek()[0] is not None:
            self.fail(f"trailing {self.peek()[1]!r}")
        return node

    def compare(self):
        left = self.product()
        kind, value = self.peek()
        if kind == "op" and value in _CMP_OPS:
            self.take()
            right = self.product()
            return ("cmp", value, left, right)
        return left

    def product(self):
        node = self.unary()
        while self.peek() == ("op", "*"):
            self.take()
            node = ("mul", node, self.unary())
        return node

    def unary(self):
        if self.peek() == ("op", "-"):
            self.take()
            return ("neg", self.unary())
        return self.power()

    def power(self):
        node = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            kind, value = self.take("num")
            if value != int(value) or value < 0:
                self.fail("exponent must be a non-negative integer")
            return ("pow", node, int(value))
        return node

    def atom(self):
        kind, value = self.peek()
        if kind == "num":
            self.take()
            return ("const", value)
        if kind == "name" and value == "lag":
            self.take()
            self.take("op", "(")
            _, name = self.take("name")
            self.take("op", ",")
            _, j = self.take("num")
            self.take("op", ")")
            if j != int(j) or j < 0:
                self.fail("lag must be a non-negative integer")
            return ("col", name, int(j))
        if kind == "name" and value == "t":
            self.take()
            return ("time",)
        if kind == "name":
            self.take()
            return ("col", value, 0)
        if kind == "op" and value == "(":
            self.take()
            node = self.compare()
            self.take("op", ")")
            return node
        self.fail(f"unexpected {value!r}")


def _references(node, out):
    if node[0] == "col":
        out.add((node[1], node[2]))
    elif node[0] in ("mul", "neg", "pow"):
        for child in node[1:]:
            if isinstance(child, tuple):
                _references(child, out)
    elif node[0] == "cmp":
        _references(node[2], out)
        _references(node[3], out)
    return out


class Expression:
    """One parsed feature expression evaluable over a panel grid."""

    def __init__(self, source):
        self.source = str(source).strip()
        if not self.source:
            raise InvariantViolation("empty feature expression")
        self._ast = _Parser(self.source).parse()
        self.references = frozenset(_references(self._ast, set()))
        for name, j in self.references:
            if name in ("trt", "y") and j == 0:
                raise InvariantViolation(
                    f"feature {self.source!r} uses {name!r} at the current occasion; "
                    "features must predate the current treatment (use lag(...))"
                )

    def values(self, data, initial_values):
        """Evaluate to an (n, T) float array over the panel grid."""
        out = self._eval(self._ast, data, initial_values)
        return np.broadcast_to(np.asarray(out, dtype=np.float64), (data.n, data.T))

    def _eval(self, node, data, initial_values):
        head = node[0]
        if head == "const":
            return node[1]
        if head == "time":
            return np.arange(1, data.T + 1, dtype=np.float64)[None, :]
        if head == "col":
            name, j = node[1], node[2]
            if name == "avail":
                col = data.avail
            elif name == "trt":
                col = data.trt
            elif name == "y":
                # the stored column at occasion u holds the response observed
                # after occasion u, so lag(y, 1) is the pre-treatment response
                col = data.y
            else:
                col = data.covariate(name)
            if j == 0:
                return col
            if name not in initial_values:
                raise FeatureEvaluationError(
                    f"feature {self.source!r} needs {name!r} before t=1; "
                    f"declare an initial value for {name!r}"
                )
            shifted = np.empty_like(col)
            shifted[:, :j] = float(initial_values[name])
            if j < data.T:
                shifted[:, j:] = col[:, :-j]
            return shifted
        if head == "neg":
            return -np.asarray(self._eval(node[1], data, initial_values), dtype=np.float64)
        if head == "pow":
            base = np.asarray(self._eval(node[1], data, initial_values), dtype=np.float64)
            return base ** node[2]
        if head == "mul":
            left = self._eval(node[1], data, initial_values)
            right = self._eval(node[2], data, initial_values)
            return np.asarray(left, dtype=np.float64) * np.asarray(right, dtype=np.float64)
        if head == "cmp":
            left = np.asarray(self._eval(node[2], data, initial_values), dtype=np.float64)
            right = np.asarray(self._eval(node[3], data, initial_values), dtype=np.float64)
            op = node[1]
            if op == "<":
                cond = left < right
            elif op == "<=":
                cond = left <= right
            elif op == ">":
                cond = left > right
            elif op == ">=":
                cond = left >= right
            elif op == "==":
                cond = left == right
            else:
                cond = left != right
            return np.where(cond, 1.0, 0.0)
        raise AssertionError(f"unknown node {head!r}")

    def __repr__(self):
        return f"Expression({self.source!r})"


class FeatureSpec:
    """Declares the regression features and the treatment lag.

    Parameters
    ----------
    effect : sequence of str
        Features multiplying the centered treatment (dimension p >= 1).
    working : sequence of str
        Working-model features for the conditional response (q >= 1).
    numerator : sequence of str, optional
        Features of the numerator probability model, when logistic.
        Must reference only columns already referenced by the effect
        features; a numerator that varies with unmodeled history biases
        the marginal effect estimate, so violating specs are rejected
        unless ``allow_unguarded_numerator`` is set.
    denominator : sequence of str, optional
        Features of the treatment-probability (denominator) model.
    lag : int
        Response lag k >= 1: the response regressed at occasion t is the
        one observed after occasion t + lag - 1.
    initial_values : mapping, optional
        Pre-study values for lagged columns; ``trt`` defaults to 0.
    """

    def __init__(self, effect, working, numerator=(), denominator=(), lag=1,
                 initial_values=None, allow_unguarded_numerator=False):
        self.effect = tuple(Expression(e) for e in effect)
        self.working = tuple(Expression(e) for e in working)
        self.numerator = tuple(Expression(e) for e in numerator)
        self.denominator = tuple(Expression(e) for e in denominator)
        if not self.effect:
            raise InvariantViolation("effect feature list must be non-empty (p >= 1)")
        if not self.working:
            raise InvariantViolation("working feature list must be non-empty (q >= 1)")
        self.lag = int(lag)
        if self.lag < 1:
            raise InvariantViolation(f"lag must be >= 1, got {self.lag}")
        self.initial_values = {"trt": 0.0}
        self.initial_values.update(initial_values or {})
        self.allow_unguarded_numerator = bool(allow_unguarded_numerator)

        effect_refs = set().union(*(e.references for e in self.effect))
        numerator_refs = (set().union(*(e.references for e in self.numerator))
                          if self.numerator else set())
        extra = numerator_refs - effect_refs
        if extra and not self.allow_unguarded_numerator:
            names = ", ".join(sorted(f"lag({n},{j})" if j else n for n, j in extra))
            raise InvariantViolation(
                f"numerator features reference {names} which the effect features do not; "
                "set allow_unguarded_numerator=True only to study this misspecification"
            )

    @property
    def p(self):
        return len(self.effect)

    @property
    def q(self):
        return len(self.working)


class DesignRow:
    """One person-occasion summand of the estimating function."""

    __slots__ = ("index", "id", "t", "avail", "trt", "f", "g", "numerator",
                 "denominator", "response")

    def __init__(self, index, ident, t, avail, trt, f, g, numerator, denominator, response):
        self.index = index
        self.id = ident
        self.t = t
        self.avail = avail
        self.trt = trt
        self.f = f
        self.g = g
        self.numerator = numerator
        self.denominator = denominator
        self.response = response

    def __repr__(self):
        return (f"DesignRow(id={self.id!r}, t={self.t}, avail={self.avail:g}, "
                f"trt={self.trt:g}, response={self.response:g})")


class Design:
    """All n(T-k+1) design rows of a panel, stored columnwise.

    Matrices are row-major with individuals varying slowest, so
    ``x.reshape(n, rows_per_individual, -1)`` recovers per-person blocks.
    """

    def __init__(self, data, spec):
        n, T, k = data.n, data.T, spec.lag
        if k > T:
            raise InvariantViolation(f"lag {k} exceeds panel length {T}")
        m = T - k + 1
        self.data = data
        self.spec = spec
        self.n = n
        self.T = T
        self.k = k
        self.rows_per_individual = m
        self.ids = data.ids
        self.i_index = np.repeat(np.arange(n), m)
        self.t = np.tile(np.arange(1, m + 1, dtype=np.float64), n)
        self.avail = np.ascontiguousarray(data.avail[:, :m]).ravel()
        self.trt = np.ascontiguousarray(data.trt[:, :m]).ravel()
        self.response = np.ascontiguousarray(data.y[:, k - 1:]).ravel()
        self.f = self._matrix(spec.effect)
        self.g = self._matrix(spec.working)
        self.numerator_features = self._matrix(spec.numerator)
        self.denominator_features = self._matrix(spec.denominator)

    def _matrix(self, expressions):
        m = self.rows_per_individual
        if not expressions:
            return np.zeros((self.n * m, 0))
        columns = [
            np.ascontiguousarray(
                e.values(self.data, self.spec.initial_values)[:, :m]
            ).reshape(-1)
            for e in expressions
        ]
        return np.ascontiguousarray(np.column_stack(columns))

    def column(self, name):
        """A raw panel column restricted to the design occasions t = 1..T-k+1."""
        if name == "avail":
            grid = self.data.avail
        elif name == "trt":
            grid = self.data.trt
        elif name == "y":
            grid = self.data.y
        else:
            grid = self.data.covariate(name)
        return np.ascontiguousarray(grid[:, :self.rows_per_individual]).ravel()

    @property
    def p(self):
        return self.f.shape[1]

    @property
    def q(self):
        return self.g.shape[1]

    def __len__(self):
        return self.n * self.rows_per_individual

    def __getitem__(self, r):
        return DesignRow(
            r,
            self.ids[self.i_index[r]],
            int(self.t[r]),
            self.avail[r],
            self.trt[r],
            self.f[r],
            self.g[r],
            self.numerator_features[r],
            self.denominator_features[r],
            self.response[r],
        )

    def __iter__(self):
        for r in range(len(self)):
            yield self[r]

    def __repr__(self):
        return (f"Design(n={self.n}, T={self.T}, k={self.k}, "
                f"rows={len(self)}, p={self.p}, q={self.q})")


def build_design(data, spec):
    """Materialize the per-occasion regression rows for a panel.

    Returns a Design with exactly n(T - k + 1) rows. Rows with avail = 0
    are retained; they carry zero weight in estimation but still count in
    availability-restricted nuisance denominators.
    """
    return Design(data, spec)
