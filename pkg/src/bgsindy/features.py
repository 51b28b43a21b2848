"""Symbolic feature language: expression trees over state variables.

A feature is a finite tree built from state variables, unary transforms
(trig in radians or degrees, signed fractional powers, log of absolute
value) and binary products.  Every feature has a canonical text key in
which product factors are sorted, so commuted products collapse to a
single representative.  The canonical grammar (round-trippable through
:func:`parse`) is::

    variable   x0, x1, x2, ...
    transform  sin_rad(e)  cos_rad(e)  sin_deg(e)  cos_deg(e)
               pow-2(e) pow-1(e) pow-0.5(e) pow0.5(e) pow2(e) pow3(e)
               log_abs(e)
    product    a*b          (factors in canonical sorted order)

This grammar is the one used in all CSV outputs.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import reduce

import numpy as np

# Allowed fractional-polynomial powers.  Power 1 is the identity and is
# never wrapped; power 0 is represented by log_abs.
POWERS = (-2.0, -1.0, -0.5, 0.5, 2.0, 3.0)

# |v| below this makes negative powers and log_abs invalid at v.
GUARD_EPS = 1e-8

DEFAULT_MAX_DEPTH = 3
DEFAULT_MAX_COMPLEXITY = 6

_DEG = math.pi / 180.0


class EvaluationError(ValueError):
    """Feature evaluation failed (non-finite input or domain guard)."""


class GenerationRejected(ValueError):
    """A mutation would violate depth or nesting constraints."""


@dataclass(frozen=True)
class TransformKind:
    name: str
    power: float | None = None

    def render(self) -> str:
        if self.name == "pow":
            return f"pow{self.power:g}"
        return self.name

    @property
    def is_trig(self) -> bool:
        return self.name in ("sin_rad", "cos_rad", "sin_deg", "cos_deg")


SIN_RAD = TransformKind("sin_rad")
COS_RAD = TransformKind("cos_rad")
SIN_DEG = TransformKind("sin_deg")
COS_DEG = TransformKind("cos_deg")
LOG_ABS = TransformKind("log_abs")


def pow_kind(power: float) -> TransformKind:
    if float(power) not in POWERS:
        raise ValueError(f"power {power} not in allowed set {POWERS}")
    return TransformKind("pow", float(power))


#: Full default transform alphabet.  Radian trig is included so that
#: governing terms like sin(x) are reachable; a restricted alphabet can
#: be passed wherever features are generated.
DEFAULT_ALPHABET = (
    SIN_RAD,
    COS_RAD,
    SIN_DEG,
    COS_DEG,
    pow_kind(-2),
    pow_kind(-1),
    pow_kind(-0.5),
    pow_kind(0.5),
    pow_kind(2),
    pow_kind(3),
    LOG_ABS,
)

#: Degree-trig plus fractional polynomials only (no radian trig).
RESTRICTED_ALPHABET = tuple(k for k in DEFAULT_ALPHABET if k.name not in ("sin_rad", "cos_rad"))


class Feature:
    """Base class for expression-tree nodes.  Instances are immutable."""

    __slots__ = ()


@dataclass(frozen=True)
class Variable(Feature):
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("variable index must be >= 0")


@dataclass(frozen=True)
class Transform(Feature):
    kind: TransformKind
    child: Feature


@dataclass(frozen=True)
class Product(Feature):
    left: Feature
    right: Feature


def key(f: Feature) -> str:
    """Canonical text key of a feature (sorted product factors)."""
    if isinstance(f, Variable):
        return f"x{f.index}"
    if isinstance(f, Transform):
        return f"{f.kind.render()}({key(f.child)})"
    factors = sorted(key(g) for g in _factors(f))
    return "*".join(factors)


def _factors(f: Feature) -> list[Feature]:
    """Non-product factors of a (possibly nested) product tree."""
    if isinstance(f, Product):
        return _factors(f.left) + _factors(f.right)
    return [f]


def canonicalize(f: Feature) -> Feature:
    """Return the canonical tree: products flattened, factors sorted by
    key and rebuilt left-deep, so equal keys imply equal trees."""
    if isinstance(f, Variable):
        return f
    if isinstance(f, Transform):
        return Transform(f.kind, canonicalize(f.child))
    factors = sorted((canonicalize(g) for g in _factors(f)), key=key)
    return reduce(Product, factors)


def complexity(f: Feature) -> int:
    """1 + number of Transform and Product nodes; a bare variable is 1."""
    return 1 + _operator_count(f)


def _operator_count(f: Feature) -> int:
    if isinstance(f, Variable):
        return 0
    if isinstance(f, Transform):
        return 1 + _operator_count(f.child)
    # a product of k factors contributes k-1 product nodes however nested
    facs = _factors(f)
    return len(facs) - 1 + sum(_operator_count(g) for g in facs)


def depth(f: Feature) -> int:
    """Operator depth of the canonical tree (variables have depth 0).

    Products are measured in canonical left-deep form, so a product of
    k leaf factors has depth k-1.
    """
    if isinstance(f, Variable):
        return 0
    if isinstance(f, Transform):
        return 1 + depth(f.child)
    facs = _factors(f)
    return len(facs) - 1 + max(depth(g) for g in facs)


def max_variable_index(f: Feature) -> int:
    if isinstance(f, Variable):
        return f.index
    if isinstance(f, Transform):
        return max_variable_index(f.child)
    return max(max_variable_index(f.left), max_variable_index(f.right))


def evaluate(f: Feature, state) -> float:
    """Evaluate a feature at one state point.

    Raises EvaluationError on non-finite input components or on domain
    guard violations (negative powers / log_abs near zero).  Shares the
    vectorized code path so scalar and row evaluation agree bitwise.
    """
    row = np.asarray([tuple(float(s) for s in state)], dtype=float)
    values, valid = evaluate_rows(f, row)
    if not valid[0]:
        raise EvaluationError(f"domain guard violated evaluating {key(f)}")
    return float(values[0])


def evaluate_rows(f: Feature, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized evaluation over the rows of an (n, m) state matrix.

    Returns (values, valid) where valid marks rows without guard
    violations; invalid rows hold NaN.  Non-finite inputs raise.
    """
    states = np.asarray(states, dtype=float)
    if states.ndim != 2:
        raise ValueError("states must be a 2-d array")
    if not np.isfinite(states).all():
        raise EvaluationError("non-finite state component")
    if max_variable_index(f) >= states.shape[1]:
        raise EvaluationError("state dimension too small for feature")
    values, valid = _eval_rows(f, states)
    if not valid.all():
        values = values.copy()
        values[~valid] = np.nan
    return values, valid


def _eval_rows(f: Feature, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(f, Variable):
        v = states[:, f.index]
        return v, np.ones(len(v), dtype=bool)
    if isinstance(f, Product):
        lv, lok = _eval_rows(f.left, states)
        rv, rok = _eval_rows(f.right, states)
        return lv * rv, lok & rok
    v, ok = _eval_rows(f.child, states)
    kind = f.kind
    if kind.name == "sin_rad":
        return np.sin(v), ok
    if kind.name == "cos_rad":
        return np.cos(v), ok
    if kind.name == "sin_deg":
        return np.sin(_DEG * v), ok
    if kind.name == "cos_deg":
        return np.cos(_DEG * v), ok
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if kind.name == "log_abs":
            bad = np.abs(v) < GUARD_EPS
            out = np.log(np.abs(np.where(bad, 1.0, v)))
            return out, ok & ~bad
        p = kind.power
        if p < 0:
            bad = np.abs(v) < GUARD_EPS
            safe = np.where(bad, 1.0, v)
            if p == int(p):
                out = safe ** int(p)
            else:
                out = np.sign(safe) * np.abs(safe) ** p
            return out, ok & ~bad
        if p == int(p):
            return v ** int(p), ok
        return np.sign(v) * np.abs(v) ** p, ok


def mutate_modify(f: Feature, kind: TransformKind, max_depth: int = DEFAULT_MAX_DEPTH) -> Feature:
    """Wrap a feature in a transform.

    Rejects wrapping a trigonometric transform directly in the same
    trigonometric transform, and trees exceeding the depth limit.
    """
    if kind.is_trig and isinstance(f, Transform) and f.kind == kind:
        raise GenerationRejected(f"self-nesting of {kind.render()} rejected")
    out = Transform(kind, f)
    if depth(out) > max_depth:
        raise GenerationRejected("depth limit exceeded")
    return out


def mutate_multiply(a: Feature, b: Feature, max_depth: int = DEFAULT_MAX_DEPTH) -> Feature:
    """Canonicalized product of two features; rejects over-deep trees."""
    out = canonicalize(Product(a, b))
    if depth(out) > max_depth:
        raise GenerationRejected("depth limit exceeded")
    return out


_VAR_RE = re.compile(r"x(\d+)$")
_CALL_RE = re.compile(r"([a-z_]+|pow-?\d+(?:\.\d+)?)\((.*)\)$")


def parse(text: str) -> Feature:
    """Parse the canonical grammar back into a feature tree."""
    text = text.strip()
    parts = _split_top(text, "*")
    if len(parts) > 1:
        return reduce(Product, (parse(p) for p in parts))
    m = _VAR_RE.match(text)
    if m:
        return Variable(int(m.group(1)))
    m = _CALL_RE.match(text)
    if m:
        name, inner = m.group(1), m.group(2)
        if name.startswith("pow"):
            return Transform(pow_kind(float(name[3:])), parse(inner))
        named = {k.name: k for k in (SIN_RAD, COS_RAD, SIN_DEG, COS_DEG, LOG_ABS)}
        if name not in named:
            raise ValueError(f"unknown transform {name!r}")
        return Transform(named[name], parse(inner))
    raise ValueError(f"cannot parse feature {text!r}")


def _split_top(text: str, sep: str) -> list[str]:
    parts, buf, level = [], [], 0
    for ch in text:
        if ch == "(":
            level += 1
        elif ch == ")":
            level -= 1
            if level < 0:
                raise ValueError(f"unbalanced parentheses in {text!r}")
        if ch == sep and level == 0:
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
    if level != 0:
        raise ValueError(f"unbalanced parentheses in {text!r}")
    parts.append("".join(buf))
    return parts


def variables(m: int) -> list[Feature]:
    """The m original state variables x0..x{m-1}."""
    return [Variable(i) for i in range(m)]
