"""Exact symbolic algebra over differential jets, with oriented term rewriting.

A *jet* is a base field symbol carrying derivative counters, e.g. ``u_xz`` is
the mixed partial of ``u`` in x and z.  Mixed partials commute by
construction: a jet is identified by its base and its three counters, so
there is exactly one representation of each derivative.

A :class:`DiffExpr` is a multivariate polynomial in jets with exact rational
coefficients.  The two diffusion parameters ``mu`` and ``kappa`` are carried
as integer exponent slots on each term, never as floats, so every identity
check is exact.

Base fields
-----------
``u, w``            tangential / normal velocity (``w`` is one z-antiderivative
                    of a tangential derivative, hence weighted +1 by the
                    tangential-order classifier)
``f, h, psi``       tangential / normal magnetic components and their stream
                    function
``pE``              pressure trace (data, differentiated in x)
``theta1, theta2``  components of a candidate cancellation field
``test``            an arbitrary scalar the operators act on
``ub, wb``          frozen background velocity for linearization
``zc``              the wall-normal coordinate itself (``d/dz zc = 1``)
``sf, spsi``        manufactured-source slots used by the numerical harness

Rewriting
---------
A :class:`RewriteSystem` orients equalities (equations of motion and
constraints) so that reduction eliminates time jets and normal-component
jets in favour of lower-priority ones.  ``normal_form`` substitutes one
rewritable jet at a time, everywhere in the expression, which keeps the
procedure linear and easy to trace and replay.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence, Union

__all__ = [
    "BASES",
    "DEFAULT_WEIGHTS",
    "JetVar",
    "DiffExpr",
    "RewriteRule",
    "RewriteSystem",
    "RewriteStep",
    "JetAlgebraError",
    "ExprSyntaxError",
    "TimeJetPresent",
    "IterationLimitExceeded",
    "jet",
    "number",
    "param",
    "differentiate",
    "normal_form",
    "replay",
    "tangential_order",
    "parse",
]

BASES = (
    "u", "w", "f", "h", "psi", "pE",
    "theta1", "theta2", "test", "ub", "wb", "zc", "sf", "spsi",
)
_BASE_INDEX = {b: i for i, b in enumerate(BASES)}

PARAMS = ("mu", "kappa")

# Tangential-derivative weight of each base: w, h (and the background wb) are
# one z-antiderivative of a tangential derivative, so they count +1.
DEFAULT_WEIGHTS: Mapping[str, int] = {
    "u": 0, "w": 1, "f": 0, "h": 1, "psi": 0, "pE": 0,
    "theta1": 0, "theta2": 0, "test": 0, "ub": 0, "wb": 1,
    "zc": 0, "sf": 0, "spsi": 0,
}

AXES = ("t", "x", "z")

Scalar = Union[int, Fraction]


class JetAlgebraError(Exception):
    """Base class for errors raised by the jet algebra."""


class ExprSyntaxError(JetAlgebraError):
    """Raised when the plain-text expression syntax cannot be parsed."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class TimeJetPresent(JetAlgebraError):
    """Raised when a time jet survives where only spatial jets are allowed."""


class IterationLimitExceeded(JetAlgebraError):
    """Raised when reduction does not reach a normal form within the step cap.

    This signals a non-terminating rule set supplied by the caller; the
    standard systems shipped with the package reduce in a handful of steps.
    """


@dataclass(frozen=True)
class JetVar:
    """A single jet: a base field with derivative counters (dt, dx, dz)."""

    base: str
    dt: int = 0
    dx: int = 0
    dz: int = 0

    def __post_init__(self):
        if self.base not in _BASE_INDEX:
            raise ValueError(f"unknown base field {self.base!r}")
        if min(self.dt, self.dx, self.dz) < 0:
            raise ValueError("derivative counts must be non-negative")
        if self.base == "zc" and (self.dt or self.dx or self.dz):
            # Derivatives of the coordinate collapse to 0 or 1 at
            # differentiation time and are never stored as jets.
            raise ValueError("the coordinate symbol zc carries no derivatives")

    @property
    def key(self) -> tuple[int, int, int, int]:
        return (_BASE_INDEX[self.base], self.dt, self.dx, self.dz)

    @property
    def order(self) -> int:
        return self.dt + self.dx + self.dz

    def __lt__(self, other: "JetVar") -> bool:
        return self.key < other.key

    @property
    def name(self) -> str:
        suffix = "t" * self.dt + "x" * self.dx + "z" * self.dz
        return f"{self.base}_{suffix}" if suffix else self.base

    def __str__(self) -> str:
        return self.name


# A term key is (sorted tuple of jets, mu power, kappa power).
TermKey = tuple[tuple[JetVar, ...], int, int]


def _term_sort_key(key: TermKey):
    jets, mu_pow, kappa_pow = key
    return (len(jets) + mu_pow + kappa_pow,
            tuple(j.key for j in jets), mu_pow, kappa_pow)


class DiffExpr:
    """Polynomial in jets over exact rationals, with mu/kappa exponent slots.

    Instances are immutable: every operation returns a new expression.  Terms
    with zero coefficient are never stored, and iteration order is the
    canonical term order, so printing and equality are deterministic.
    """

    __slots__ = ("_terms",)

    def __init__(self, terms: Optional[dict[TermKey, Fraction]] = None):
        pruned = {}
        if terms:
            for key, coeff in terms.items():
                coeff = Fraction(coeff)
                if coeff != 0:
                    pruned[key] = coeff
        object.__setattr__(self, "_terms", pruned)

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zero() -> "DiffExpr":
        return DiffExpr()

    @staticmethod
    def number(value: Scalar) -> "DiffExpr":
        return DiffExpr({((), 0, 0): Fraction(value)})

    @staticmethod
    def from_jet(v: JetVar) -> "DiffExpr":
        return DiffExpr({((v,), 0, 0): Fraction(1)})

    @staticmethod
    def parameter(name: str, power: int = 1) -> "DiffExpr":
        if name not in PARAMS:
            raise ValueError(f"unknown parameter {name!r}")
        if power < 0:
            raise ValueError("parameter powers must be non-negative")
        mu_pow = power if name == "mu" else 0
        kappa_pow = power if name == "kappa" else 0
        return DiffExpr({((), mu_pow, kappa_pow): Fraction(1)})

    # -- inspection --------------------------------------------------------

    @property
    def is_zero(self) -> bool:
        return not self._terms

    def terms(self) -> list[tuple[TermKey, Fraction]]:
        """Terms in canonical order."""
        return sorted(self._terms.items(), key=lambda kv: _term_sort_key(kv[0]))

    def jets(self) -> set[JetVar]:
        out: set[JetVar] = set()
        for jets, _, _ in self._terms:
            out.update(jets)
        return out

    def coefficient(self, key: TermKey) -> Fraction:
        return self._terms.get(key, Fraction(0))

    def filter_terms(self, predicate) -> "DiffExpr":
        """Sub-expression of the terms for which ``predicate(key)`` holds."""
        return DiffExpr({k: c for k, c in self._terms.items() if predicate(k)})

    def __len__(self) -> int:
        return len(self._terms)

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, Fraction)):
            other = DiffExpr.number(other)
        if not isinstance(other, DiffExpr):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self):
        return hash(frozenset(self._terms.items()))

    # -- ring operations ---------------------------------------------------

    def _coerce(self, other) -> Optional["DiffExpr"]:
        if isinstance(other, DiffExpr):
            return other
        if isinstance(other, (int, Fraction)):
            return DiffExpr.number(other)
        if isinstance(other, JetVar):
            return DiffExpr.from_jet(other)
        return None

    def __add__(self, other) -> "DiffExpr":
        rhs = self._coerce(other)
        if rhs is None:
            return NotImplemented
        out = dict(self._terms)
        for key, coeff in rhs._terms.items():
            out[key] = out.get(key, Fraction(0)) + coeff
        return DiffExpr(out)

    __radd__ = __add__

    def __neg__(self) -> "DiffExpr":
        return DiffExpr({k: -c for k, c in self._terms.items()})

    def __sub__(self, other) -> "DiffExpr":
        rhs = self._coerce(other)
        if rhs is None:
            return NotImplemented
        return self + (-rhs)

    def __rsub__(self, other) -> "DiffExpr":
        lhs = self._coerce(other)
        if lhs is None:
            return NotImplemented
        return lhs - self

    def __mul__(self, other) -> "DiffExpr":
        rhs = self._coerce(other)
        if rhs is None:
            return NotImplemented
        out: dict[TermKey, Fraction] = {}
        for (j1, m1, k1), c1 in self._terms.items():
            for (j2, m2, k2), c2 in rhs._terms.items():
                key = (tuple(sorted(j1 + j2)), m1 + m2, k1 + k2)
                out[key] = out.get(key, Fraction(0)) + c1 * c2
        return DiffExpr(out)

    __rmul__ = __mul__

    def __pow__(self, n: int) -> "DiffExpr":
        if not isinstance(n, int) or n < 0:
            raise ValueError("powers must be non-negative integers")
        result = DiffExpr.number(1)
        for _ in range(n):
            result = result * self
        return result

    # -- substitution ------------------------------------------------------

    def substitute(self, target: JetVar, replacement: "DiffExpr") -> "DiffExpr":
        """Replace every occurrence of ``target`` by ``replacement``."""
        out = DiffExpr.zero()
        for (jets, m, k), coeff in self._terms.items():
            count = sum(1 for j in jets if j == target)
            if count == 0:
                out = out + DiffExpr({(jets, m, k): coeff})
                continue
            rest = tuple(j for j in jets if j != target)
            base = DiffExpr({(rest, m, k): coeff})
            out = out + base * (replacement ** count)
        return out

    # -- differentiation ---------------------------------------------------

    def diff(self, axis: str) -> "DiffExpr":
        return differentiate(self, axis)

    # -- printing ----------------------------------------------------------

    def __str__(self) -> str:
        if self.is_zero:
            return "0"
        pieces = []
        for idx, (key, coeff) in enumerate(self.terms()):
            sign = "-" if coeff < 0 else "+"
            body = _format_magnitude(key, abs(coeff))
            if idx == 0:
                pieces.append(body if sign == "+" else "-" + body)
            else:
                pieces.append(f" {sign} {body}")
        return "".join(pieces)

    def __repr__(self) -> str:
        return f"DiffExpr({self})"


def _format_magnitude(key: TermKey, coeff: Fraction) -> str:
    jets, mu_pow, kappa_pow = key
    factors: list[str] = []
    if mu_pow:
        factors.append("mu" if mu_pow == 1 else f"mu^{mu_pow}")
    if kappa_pow:
        factors.append("kappa" if kappa_pow == 1 else f"kappa^{kappa_pow}")
    i = 0
    while i < len(jets):
        j = i
        while j < len(jets) and jets[j] == jets[i]:
            j += 1
        power = j - i
        factors.append(jets[i].name if power == 1 else f"{jets[i].name}^{power}")
        i = j
    if not factors:
        return str(coeff)
    if coeff == 1:
        return "*".join(factors)
    return f"{coeff}*" + "*".join(factors)


def format_term(key: TermKey, coeff: Fraction) -> str:
    """One term as text, sign included."""
    s = _format_magnitude(key, abs(coeff))
    return s if coeff >= 0 else f"-{s}"


# -- convenience constructors ----------------------------------------------

def jet(base: str, dt: int = 0, dx: int = 0, dz: int = 0) -> DiffExpr:
    return DiffExpr.from_jet(JetVar(base, dt, dx, dz))


def number(value: Scalar) -> DiffExpr:
    return DiffExpr.number(value)


def param(name: str, power: int = 1) -> DiffExpr:
    return DiffExpr.parameter(name, power)


ZERO = DiffExpr.zero()
ONE = DiffExpr.number(1)


# -- differentiation ---------------------------------------------------------

def _jet_derivative(v: JetVar, axis: str) -> Optional[JetVar]:
    """Derivative of one jet, or None when it is the constant 1 or 0.

    Returns the incremented jet for field bases.  For the coordinate symbol
    ``zc`` the z-derivative is 1 (signalled by returning None with the
    convention handled in ``differentiate``) and the t/x derivatives vanish.
    """
    if v.base == "zc":
        return None
    if axis == "t":
        return JetVar(v.base, v.dt + 1, v.dx, v.dz)
    if axis == "x":
        return JetVar(v.base, v.dt, v.dx + 1, v.dz)
    if axis == "z":
        return JetVar(v.base, v.dt, v.dx, v.dz + 1)
    raise ValueError(f"unknown axis {axis!r}")


def differentiate(e: DiffExpr, axis: str) -> DiffExpr:
    """Formal derivative along ``t``, ``x`` or ``z`` (Leibniz rule termwise)."""
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
    out: dict[TermKey, Fraction] = {}
    for (jets, m, k), coeff in e._terms.items():
        for i, v in enumerate(jets):
            if v.base == "zc":
                if axis != "z":
                    continue  # d/dt zc = d/dx zc = 0
                new_jets = jets[:i] + jets[i + 1:]  # d/dz zc = 1
            else:
                dv = _jet_derivative(v, axis)
                new_jets = tuple(sorted(jets[:i] + (dv,) + jets[i + 1:]))
            key = (new_jets, m, k)
            out[key] = out.get(key, Fraction(0)) + coeff
    return DiffExpr(out)


# -- rewriting ----------------------------------------------------------------

def _divides(lhs: JetVar, v: JetVar) -> bool:
    return (lhs.base == v.base and lhs.dt <= v.dt
            and lhs.dx <= v.dx and lhs.dz <= v.dz)


@dataclass(frozen=True)
class RewriteRule:
    """Oriented equality: every jet matching ``lhs`` rewrites via ``rhs``.

    Construction rejects rules whose right side still contains a jet the rule
    itself would rewrite (immediate self-loop).
    """

    lhs: JetVar
    rhs: DiffExpr
    name: str = ""

    def __post_init__(self):
        for v in self.rhs.jets():
            if _divides(self.lhs, v):
                raise ValueError(
                    f"rule {self.lhs} -> {self.rhs} rewrites its own right side")


@dataclass
class RewriteSystem:
    """An ordered list of rules, optionally prolonged by extra derivatives.

    With ``closed`` set (the default), a rule with left side L also rewrites
    any jet obtained from L by further t/x/z differentiation; the right side
    is differentiated accordingly.  Rule choice is deterministic: the most
    specific matching rule wins, ties broken by list position.
    """

    rules: list[RewriteRule]
    closed: bool = True
    max_steps: int = 4096

    def __post_init__(self):
        self._cache: dict[JetVar, Optional[tuple[RewriteRule, tuple[int, int, int]]]] = {}

    def match(self, v: JetVar) -> Optional[tuple[RewriteRule, tuple[int, int, int]]]:
        """The rule rewriting jet ``v`` plus the extra derivative counts."""
        if v in self._cache:
            return self._cache[v]
        best = None
        best_key = None
        for idx, rule in enumerate(self.rules):
            if self.closed:
                if not _divides(rule.lhs, v):
                    continue
                extra = (v.dt - rule.lhs.dt, v.dx - rule.lhs.dx, v.dz - rule.lhs.dz)
            else:
                if rule.lhs != v:
                    continue
                extra = (0, 0, 0)
            key = (-rule.lhs.order, idx)
            if best_key is None or key < best_key:
                best, best_key = (rule, extra), key
        self._cache[v] = best
        return best

    def expansion(self, rule: RewriteRule, extra: tuple[int, int, int]) -> DiffExpr:
        out = rule.rhs
        for axis, count in zip(AXES, extra):
            for _ in range(count):
                out = differentiate(out, axis)
        return out


@dataclass(frozen=True)
class RewriteStep:
    """One recorded reduction step: which jet was expanded by which rule."""

    target: JetVar
    rule_lhs: JetVar
    rule_name: str
    extra: tuple[int, int, int]

    def to_dict(self) -> dict:
        return {
            "target": self.target.name,
            "rule": self.rule_name or self.rule_lhs.name,
            "extra_derivatives": {"t": self.extra[0], "x": self.extra[1], "z": self.extra[2]},
        }


def _priority(v: JetVar) -> tuple:
    # Time jets first, then normal-component jets, then everything else.
    return (v.dt, 1 if v.base in ("w", "h", "wb") else 0,
            _BASE_INDEX[v.base], v.dx, v.dz)


def normal_form(
    e: DiffExpr,
    rs: RewriteSystem,
    *,
    record: bool = False,
    max_steps: Optional[int] = None,
):
    """Reduce ``e`` until no rewritable jet remains.

    Each step picks the highest-priority rewritable jet and substitutes its
    expansion everywhere, so the reduction is linear in the expression and
    the recorded step sequence replays bit-exactly.  Raises
    :class:`IterationLimitExceeded` when the step cap is hit, which signals a
    non-terminating rule set.
    """
    cap = max_steps if max_steps is not None else rs.max_steps
    steps: list[RewriteStep] = []
    current = e
    for _ in range(cap + 1):
        rewritable = [(v, m) for v in current.jets() if (m := rs.match(v))]
        if not rewritable:
            return (current, steps) if record else current
        target, (rule, extra) = max(rewritable, key=lambda vm: _priority(vm[0]))
        current = current.substitute(target, rs.expansion(rule, extra))
        if record:
            steps.append(RewriteStep(target, rule.lhs, rule.name, extra))
    raise IterationLimitExceeded(
        f"no normal form after {cap} rewrite steps; the rule set does not terminate")


def replay(e: DiffExpr, rs: RewriteSystem, steps: Sequence[RewriteStep]) -> DiffExpr:
    """Re-apply a recorded step sequence to ``e``."""
    current = e
    for step in steps:
        rule = next(r for r in rs.rules if r.lhs == step.rule_lhs)
        current = current.substitute(step.target, rs.expansion(rule, step.extra))
    return current


# -- tangential order ---------------------------------------------------------

def tangential_order(
    e: DiffExpr,
    weights: Optional[Mapping[str, int]] = None,
    *,
    ignore_bases: Iterable[str] = (),
) -> int:
    """Max over terms of the max factor weight ``dx + weight(base)``.

    Constants (and the zero expression) have order 0.  Bases listed in
    ``ignore_bases`` are treated as data and do not contribute, which is how
    pressure-trace derivatives are kept out of the unknowns' order count.
    Raises :class:`TimeJetPresent` if any time jet survives; reduce first.
    """
    w = dict(DEFAULT_WEIGHTS)
    if weights:
        w.update(weights)
    skip = frozenset(ignore_bases)
    best = 0
    for (jets, _, _), _coeff in e._terms.items():
        term_order = 0
        for v in jets:
            if v.dt > 0:
                raise TimeJetPresent(
                    f"time jet {v.name} present; eliminate time derivatives first")
            if v.base in skip:
                continue
            term_order = max(term_order, v.dx + w[v.base])
        best = max(best, term_order)
    return best


# -- plain-text syntax --------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>\d+(?:/\d+)?)"
    r"|(?P<name>[A-Za-z][A-Za-z0-9]*(?:_[txz]+)?)"
    r"|(?P<op>[-+*^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            if text[pos:].strip():
                raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos)
            break
        if m.group("number"):
            tokens.append(("number", m.group("number"), m.start()))
        elif m.group("name"):
            tokens.append(("name", m.group("name"), m.start()))
        else:
            tokens.append(("op", m.group("op"), m.start()))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self):
        tok = self.peek()
        if tok is None:
            raise ExprSyntaxError("unexpected end of expression", len(self.text))
        self.pos += 1
        return tok

    def expression(self) -> DiffExpr:
        negate = False
        tok = self.peek()
        if tok and tok[1] in ("+", "-"):
            self.take()
            negate = tok[1] == "-"
        result = self.term()
        if negate:
            result = -result
        while True:
            tok = self.peek()
            if tok is None or tok[1] not in ("+", "-"):
                return result
            self.take()
            rhs = self.term()
            result = result - rhs if tok[1] == "-" else result + rhs

    def term(self) -> DiffExpr:
        result = self.factor()
        while True:
            tok = self.peek()
            if tok is None or tok[1] != "*":
                return result
            self.take()
            result = result * self.factor()

    def factor(self) -> DiffExpr:
        base = self.atom()
        tok = self.peek()
        if tok and tok[1] == "^":
            self.take()
            exp_tok = self.take()
            if exp_tok[0] != "number" or "/" in exp_tok[1]:
                raise ExprSyntaxError("exponent must be a non-negative integer", exp_tok[2])
            return base ** int(exp_tok[1])
        return base

    def atom(self) -> DiffExpr:
        kind, value, start = self.take()
        if kind == "number":
            if "/" in value:
                p, q = value.split("/")
                return DiffExpr.number(Fraction(int(p), int(q)))
            return DiffExpr.number(int(value))
        if kind == "name":
            return self._symbol(value, start)
        if value == "(":
            inner = self.expression()
            closing = self.take()
            if closing[1] != ")":
                raise ExprSyntaxError("expected ')'", closing[2])
            return inner
        raise ExprSyntaxError(f"unexpected token {value!r}", start)

    def _symbol(self, name: str, start: int) -> DiffExpr:
        if name in PARAMS:
            return DiffExpr.parameter(name)
        if "_" in name:
            base, suffix = name.split("_", 1)
        else:
            base, suffix = name, ""
        if base not in _BASE_INDEX:
            raise ExprSyntaxError(f"unknown symbol {name!r}", start)
        counts = {"t": 0, "x": 0, "z": 0}
        for ch in suffix:
            counts[ch] += 1
        try:
            v = JetVar(base, counts["t"], counts["x"], counts["z"])
        except ValueError as exc:
            raise ExprSyntaxError(str(exc), start) from None
        return DiffExpr.from_jet(v)


def parse(text: str) -> DiffExpr:
    """Parse the plain-text syntax; ``parse(str(e)) == e`` exactly."""
    parser = _Parser(text)
    if not parser.tokens:
        raise ExprSyntaxError("empty expression", 0)
    result = parser.expression()
    if parser.pos != len(parser.tokens):
        tok = parser.tokens[parser.pos]
        raise ExprSyntaxError(f"trailing input {tok[1]!r}", tok[2])
    return result
