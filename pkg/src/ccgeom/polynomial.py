"""Sparse multivariate polynomials with exact term arithmetic.

Coefficients may be ``int``, ``Fraction`` or ``float``; arithmetic keeps
whatever type the inputs carry, so integer and rational fields give exact
brackets of any order.
"""

from __future__ import annotations

from fractions import Fraction
from numbers import Number
from typing import Iterable, Mapping, Sequence

import numpy as np

Exponent = tuple[int, ...]


def _clean(value):
    # Fractions with denominator 1 collapse to int so equal polynomials compare equal.
    if isinstance(value, Fraction) and value.denominator == 1:
        return int(value)
    return value


class Polynomial:
    """Polynomial in ``num_vars`` variables stored as ``{exponents: coeff}``.

    Zero coefficients are dropped on construction, so two polynomials are
    equal exactly when their term dictionaries are equal.
    """

    __slots__ = ("num_vars", "terms", "_compiled")

    def __init__(self, num_vars: int, terms: Mapping[Exponent, Number] | Iterable = ()):
        if num_vars < 1:
            raise ValueError(f"num_vars must be positive, got {num_vars}")
        self.num_vars = int(num_vars)
        items = terms.items() if isinstance(terms, Mapping) else terms
        acc: dict[Exponent, Number] = {}
        for exps, coeff in items:
            exps = tuple(int(e) for e in exps)
            if len(exps) != self.num_vars:
                raise ValueError(f"exponent tuple {exps} has length != {self.num_vars}")
            if any(e < 0 for e in exps):
                raise ValueError(f"negative exponent in {exps}")
            acc[exps] = acc.get(exps, 0) + coeff
        self.terms = {e: _clean(c) for e, c in acc.items() if c != 0}
        self._compiled = None

    # -- constructors -------------------------------------------------
    @classmethod
    def zero(cls, num_vars: int) -> "Polynomial":
        return cls(num_vars)

    @classmethod
    def constant(cls, num_vars: int, value) -> "Polynomial":
        return cls(num_vars, {(0,) * num_vars: value})

    @classmethod
    def coordinate(cls, num_vars: int, j: int, coeff=1) -> "Polynomial":
        if not 0 <= j < num_vars:
            raise IndexError(f"coordinate {j} out of range for {num_vars} variables")
        exps = [0] * num_vars
        exps[j] = 1
        return cls(num_vars, {tuple(exps): coeff})

    @classmethod
    def monomial(cls, coeff, exps: Sequence[int]) -> "Polynomial":
        return cls(len(exps), {tuple(exps): coeff})

    # -- basic protocol -------------------------------------------------
    def is_zero(self) -> bool:
        return not self.terms

    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def __eq__(self, other) -> bool:
        if isinstance(other, Number):
            other = Polynomial.constant(self.num_vars, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.num_vars == other.num_vars and self.terms == other.terms

    def __hash__(self):
        return hash((self.num_vars, frozenset(self.terms.items())))

    def __repr__(self) -> str:
        return f"Polynomial({self.num_vars}, {self.terms!r})"

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for exps, c in sorted(self.terms.items(), reverse=True):
            mono = "*".join(
                f"x{j}" if e == 1 else f"x{j}^{e}" for j, e in enumerate(exps) if e
            )
            parts.append(f"{c}*{mono}" if mono else f"{c}")
        return " + ".join(parts)

    # -- arithmetic -----------------------------------------------------
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.num_vars != self.num_vars:
                raise ValueError(
                    f"dimension mismatch: {self.num_vars} vs {other.num_vars} variables"
                )
            return other
        if isinstance(other, Number):
            return Polynomial.constant(self.num_vars, other)
        raise TypeError(f"cannot combine Polynomial with {type(other).__name__}")

    def __add__(self, other):
        other = self._coerce(other)
        return Polynomial(self.num_vars, list(self.terms.items()) + list(other.terms.items()))

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.num_vars, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        out: dict[Exponent, Number] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0) + c1 * c2
        return Polynomial(self.num_vars, out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise ValueError("only non-negative integer powers are supported")
        result = Polynomial.constant(self.num_vars, 1)
        for _ in range(k):
            result = result * self
        return result

    # -- calculus and evaluation -----------------------------------------
    def partial(self, j: int) -> "Polynomial":
        """Exact partial derivative with respect to variable ``j``."""
        if not 0 <= j < self.num_vars:
            raise IndexError(f"variable index {j} out of range for {self.num_vars} variables")
        out = {}
        for exps, c in self.terms.items():
            if exps[j] == 0:
                continue
            new = list(exps)
            new[j] -= 1
            out[tuple(new)] = c * exps[j]
        return Polynomial(self.num_vars, out)

    def __call__(self, x) -> float:
        return self.eval(x)

    def eval(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.num_vars,):
            raise ValueError(
                f"point has shape {x.shape}, expected ({self.num_vars},)"
            )
        return float(self.eval_many(x[None, :])[0])

    def compiled(self) -> tuple[np.ndarray, np.ndarray]:
        """Exponent matrix (T, n) and float coefficients (T,)."""
        if self._compiled is None:
            if self.terms:
                exps = np.array(list(self.terms), dtype=np.int64)
                coeffs = np.array([float(c) for c in self.terms.values()])
            else:
                exps = np.zeros((0, self.num_vars), dtype=np.int64)
                coeffs = np.zeros(0)
            self._compiled = (exps, coeffs)
        return self._compiled

    def eval_many(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at each row of ``points`` (shape ``(k, n)``)."""
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.num_vars:
            raise ValueError(
                f"points have shape {points.shape}, expected (k, {self.num_vars})"
            )
        exps, coeffs = self.compiled()
        out = np.zeros(points.shape[0])
        for e, c in zip(exps, coeffs):
            term = np.full(points.shape[0], c)
            for j in np.nonzero(e)[0]:
                term = term * points[:, j] ** e[j] if e[j] > 1 else term * points[:, j]
            out += term
        return out

    # -- serialization ----------------------------------------------------
    def to_json(self) -> list[dict]:
        return [
            {"c": float(c) if not isinstance(c, int) else c, "e": list(e)}
            for e, c in sorted(self.terms.items())
        ]

    @classmethod
    def from_json(cls, data, num_vars: int) -> "Polynomial":
        if isinstance(data, Number):
            return cls.constant(num_vars, data)
        if not isinstance(data, list):
            raise ValueError("polynomial must be a JSON array of {'c', 'e'} terms")
        terms = []
        for term in data:
            if not isinstance(term, dict) or set(term) != {"c", "e"}:
                raise ValueError(f"bad polynomial term {term!r}")
            terms.append((tuple(term["e"]), term["c"]))
        return cls(num_vars, terms)


def poly_eval(p: Polynomial, x) -> float:
    return p.eval(x)


def poly_partial(p: Polynomial, j: int) -> Polynomial:
    return p.partial(j)
