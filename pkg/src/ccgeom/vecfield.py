"""Polynomial vector fields, iterated commutators and the NSW determinant data.

Index conventions: field indices, commutator sources ``S`` and multi-indices
``I`` are 1-based (``X_1..X_m``, ``Y_1..Y_q``); coordinates are 0-based.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .polynomial import Polynomial

RANK_RTOL = 1e-8


class HormanderError(ValueError):
    """The commutators fail to span R^n at some point."""

    def __init__(self, message, point=None, rank=None):
        super().__init__(message)
        self.point = point
        self.rank = rank


class VectorField:
    """``sum_k components[k] * d/dx_k`` with polynomial coefficients."""

    __slots__ = ("components", "_monos", "_coef")

    def __init__(self, components: Sequence[Polynomial]):
        comps = list(components)
        if not comps:
            raise ValueError("a vector field needs at least one component")
        n = len(comps)
        for p in comps:
            if not isinstance(p, Polynomial):
                raise TypeError("components must be Polynomial instances")
            if p.num_vars != n:
                raise ValueError(
                    f"component has {p.num_vars} variables, expected {n} (square field)"
                )
        self.components = tuple(comps)
        self._monos = None
        self._coef = None

    @property
    def n(self) -> int:
        return len(self.components)

    @classmethod
    def zero(cls, n: int) -> "VectorField":
        return cls([Polynomial.zero(n) for _ in range(n)])

    @classmethod
    def constant(cls, vector) -> "VectorField":
        n = len(vector)
        return cls([Polynomial.constant(n, v) for v in vector])

    def is_zero(self) -> bool:
        return all(p.is_zero() for p in self.components)

    def __eq__(self, other):
        return isinstance(other, VectorField) and self.components == other.components

    def __hash__(self):
        return hash(self.components)

    def __repr__(self):
        return f"VectorField({[str(p) for p in self.components]})"

    def _check(self, other: "VectorField"):
        if other.n != self.n:
            raise ValueError(f"dimension mismatch: {self.n} vs {other.n}")

    def __add__(self, other: "VectorField") -> "VectorField":
        self._check(other)
        return VectorField([a + b for a, b in zip(self.components, other.components)])

    def __sub__(self, other: "VectorField") -> "VectorField":
        self._check(other)
        return VectorField([a - b for a, b in zip(self.components, other.components)])

    def __neg__(self):
        return VectorField([-a for a in self.components])

    def scale(self, c) -> "VectorField":
        return VectorField([a * c for a in self.components])

    def apply(self, p: Polynomial) -> Polynomial:
        """Directional derivative ``X p``."""
        out = Polynomial.zero(self.n)
        for j, a in enumerate(self.components):
            if not a.is_zero():
                out = out + a * p.partial(j)
        return out

    # -- numerics ---------------------------------------------------------
    def _compile(self):
        if self._monos is None:
            monos = sorted({e for p in self.components for e in p.terms})
            index = {e: i for i, e in enumerate(monos)}
            coef = np.zeros((len(monos), self.n))
            for k, p in enumerate(self.components):
                for e, c in p.terms.items():
                    coef[index[e], k] = float(c)
            self._monos = np.array(monos, dtype=np.int64).reshape(len(monos), self.n)
            self._coef = coef
        return self._monos, self._coef

    def eval_many(self, points: np.ndarray) -> np.ndarray:
        """Field values at each row of ``points``; returns shape ``(k, n)``."""
        monos, coef = self._compile()
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != self.n:
            raise ValueError(f"points have shape {pts.shape}, expected (k, {self.n})")
        if len(monos) == 0:
            return np.zeros_like(pts)
        vals = np.ones((pts.shape[0], len(monos)))
        for i, e in enumerate(monos):
            for j in np.nonzero(e)[0]:
                vals[:, i] *= pts[:, j] if e[j] == 1 else pts[:, j] ** e[j]
        return vals @ coef

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.eval_many(x[None, :])[0]

    def to_json(self):
        return [p.to_json() for p in self.components]

    @classmethod
    def from_json(cls, data, n: int) -> "VectorField":
        if not isinstance(data, list) or len(data) != n:
            raise ValueError(f"vector field must list {n} component polynomials")
        return cls([Polynomial.from_json(p, n) for p in data])


@dataclass(frozen=True)
class VectorFieldSystem:
    n: int
    fields: tuple[VectorField, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        if not self.fields:
            raise ValueError("a system needs at least one vector field")
        for X in self.fields:
            if X.n != self.n:
                raise ValueError(f"field of dimension {X.n} in a system on R^{self.n}")

    @property
    def m(self) -> int:
        return len(self.fields)

    def field(self, i: int) -> VectorField:
        """1-based access ``X_i``."""
        if not 1 <= i <= self.m:
            raise IndexError(f"field index {i} outside 1..{self.m}")
        return self.fields[i - 1]

    def combination(self, alpha) -> VectorField:
        """``sum_i alpha_i X_i``."""
        alpha = list(alpha)
        if len(alpha) != self.m:
            raise ValueError(f"need {self.m} coefficients, got {len(alpha)}")
        out = VectorField.zero(self.n)
        for a, X in zip(alpha, self.fields):
            if a != 0:
                out = out + X.scale(a)
        return out

    def to_json(self) -> dict:
        return {"n": self.n, "fields": [X.to_json() for X in self.fields]}

    @classmethod
    def from_json(cls, data: dict, name: str = "") -> "VectorFieldSystem":
        if not isinstance(data, dict) or "n" not in data or "fields" not in data:
            raise ValueError("system must be an object with 'n' and 'fields'")
        n = data["n"]
        if not isinstance(n, int) or n < 1:
            raise ValueError("system 'n' must be a positive integer")
        return cls(n, tuple(VectorField.from_json(f, n) for f in data["fields"]), name)

    def signature(self) -> str:
        """Canonical text used for hashing and caching."""
        import json

        return json.dumps(self.to_json(), sort_keys=True)


# -- brackets -------------------------------------------------------------


def commutator(X: VectorField, Y: VectorField) -> VectorField:
    """Lie bracket ``[X, Y]_k = X(Y_k) - Y(X_k)``."""
    X._check(Y)
    return VectorField([X.apply(Yk) - Y.apply(Xk) for Xk, Yk in zip(X.components, Y.components)])


def nested_commutator(system: VectorFieldSystem, S: Sequence[int]) -> VectorField:
    """Right-nested bracket ``[X_{s1}, [X_{s2}, ... [X_{s(p-1)}, X_{sp}]...]]``."""
    S = tuple(S)
    if not S:
        raise ValueError("empty commutator word")
    for s in S:
        if not 1 <= s <= system.m:
            raise IndexError(f"field index {s} outside 1..{system.m}")
    out = system.field(S[-1])
    for s in reversed(S[:-1]):
        out = commutator(system.field(s), out)
    return out


def divergence(X: VectorField) -> Polynomial:
    out = Polynomial.zero(X.n)
    for j, p in enumerate(X.components):
        out = out + p.partial(j)
    return out


def _words(m: int, length: int):
    # The innermost pair must be increasing: [X_a, X_a] = 0 and [X_b, X_a] = -[X_a, X_b].
    for S in itertools.product(range(1, m + 1), repeat=length):
        if length >= 2 and S[-2] >= S[-1]:
            continue
        yield S


def _enumerate(system: VectorFieldSystem, r: int):
    """Non-zero right-nested commutators of length 1..r and the dropped zero words."""
    kept, dropped = [], []
    cache: dict[tuple, VectorField] = {}
    for length in range(1, r + 1):
        for S in _words(system.m, length):
            inner = cache.get(S[1:]) if length > 1 else None
            if length == 1:
                Y = system.field(S[0])
            elif inner is not None:
                Y = commutator(system.field(S[0]), inner)
            else:
                Y = nested_commutator(system, S)
            cache[S] = Y
            if Y.is_zero():
                dropped.append(S)
            else:
                kept.append((S, Y))
    return kept, dropped


def numerical_rank(vectors: np.ndarray) -> int:
    """Rank counting singular values above ``RANK_RTOL`` times the largest."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    if vectors.size == 0:
        return 0
    sv = np.linalg.svd(vectors, compute_uv=False)
    if sv[0] == 0:
        return 0
    return int(np.sum(sv > RANK_RTOL * sv[0]))


def hormander_step(system: VectorFieldSystem, x, r_max: int) -> int:
    """Smallest bracket length whose commutators span R^n at ``x``.

    Raises :class:`HormanderError` carrying the achieved rank when no length
    up to ``r_max`` suffices.
    """
    if r_max < 1:
        raise ValueError("r_max must be at least 1")
    x = np.asarray(x, dtype=float)
    kept, _ = _enumerate(system, r_max)
    rank = 0
    for r in range(1, r_max + 1):
        vecs = [Y(x) for S, Y in kept if len(S) <= r]
        rank = numerical_rank(np.array(vecs)) if vecs else 0
        if rank == system.n:
            return r
    raise HormanderError(
        f"commutators up to length {r_max} reach rank {rank} < {system.n} at {x.tolist()}",
        point=x.tolist(),
        rank=rank,
    )


@dataclass(frozen=True)
class CommutatorBasis:
    """Enumeration ``Y_1..Y_q`` with formal degrees and source words."""

    system: VectorFieldSystem
    elements: tuple[VectorField, ...]
    degrees: tuple[int, ...]
    sources: tuple[tuple[int, ...], ...]
    spanning_step: int
    dropped: tuple[tuple[int, ...], ...] = field(default=())

    @property
    def q(self) -> int:
        return len(self.elements)

    @property
    def n(self) -> int:
        return self.system.n

    def element(self, i: int) -> VectorField:
        if not 1 <= i <= self.q:
            raise IndexError(f"basis index {i} outside 1..{self.q}")
        return self.elements[i - 1]

    def degree(self, i: int) -> int:
        return self.degrees[i - 1]

    def total_degree(self, I: Sequence[int]) -> int:
        return sum(self.degree(i) for i in I)

    def values(self, x) -> np.ndarray:
        """Matrix whose row ``i-1`` is ``Y_i(x)``."""
        x = np.asarray(x, dtype=float)
        return np.array([Y(x) for Y in self.elements])

    def check_multiindex(self, I: Sequence[int]) -> tuple[int, ...]:
        I = tuple(int(i) for i in I)
        if len(I) != self.n:
            raise ValueError(f"multi-index must have {self.n} entries, got {len(I)}")
        for i in I:
            if not 1 <= i <= self.q:
                raise IndexError(f"multi-index entry {i} outside 1..{self.q}")
        return I

    def to_json(self) -> dict:
        return {
            "q": self.q,
            "r": self.spanning_step,
            "degrees": list(self.degrees),
            "sources": [list(s) for s in self.sources],
            "dropped_zero_words": [list(s) for s in self.dropped],
            "elements": [Y.to_json() for Y in self.elements],
        }


def spanning_basis(system: VectorFieldSystem, sample_points, r: int) -> CommutatorBasis:
    """Enumerate right-nested commutators of length 1..r in (length, word) order."""
    if r < 1:
        raise ValueError("spanning step r must be at least 1")
    for x in sample_points:
        step = hormander_step(system, x, r)  # raises on failure
        assert step <= r
    kept, dropped = _enumerate(system, r)
    return CommutatorBasis(
        system=system,
        elements=tuple(Y for _, Y in kept),
        degrees=tuple(len(S) for S, _ in kept),
        sources=tuple(S for S, _ in kept),
        spanning_step=r,
        dropped=tuple(dropped),
    )


# -- NSW quantities ----------------------------------------------------------


def lambda_I(basis: CommutatorBasis, I: Sequence[int], x) -> float:
    """``det[Y_{i_1}(x), ..., Y_{i_n}(x)]`` (columns in the order of ``I``)."""
    I = basis.check_multiindex(I)
    if len(set(I)) < len(I):
        return 0.0
    vals = basis.values(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(np.linalg.det(vals[[i - 1 for i in I]].T))


def box_norm(basis: CommutatorBasis, I: Sequence[int], h) -> float:
    """``max_j |h_j| ** (1 / d(Y_{i_j}))``."""
    I = basis.check_multiindex(I)
    h = np.asarray(h, dtype=float)
    if h.shape != (len(I),):
        raise ValueError(f"h must have {len(I)} entries")
    return max(
        (abs(hj) ** (1.0 / basis.degree(i)) for hj, i in zip(h, I)),
        default=0.0,
    )


def _lambda_table(basis: CommutatorBasis, x):
    """All ``(I, |lambda_I(x)|, d(I))`` for I with distinct entries, in lexicographic order."""
    vals = basis.values(x)
    out = []
    for I in itertools.product(range(1, basis.q + 1), repeat=basis.n):
        if len(set(I)) < basis.n:
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = abs(float(np.linalg.det(vals[[i - 1 for i in I]].T)))
        out.append((I, lam, basis.total_degree(I)))
    return out


def capital_lambda(basis: CommutatorBasis, x, delta: float) -> float:
    """``sum_I |lambda_I(x)| delta**d(I)`` over ``I`` in ``{1..q}^n``.

    Multi-indices with a repeated entry have a zero determinant and are skipped.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    return float(sum(lam * delta**d for _, lam, d in _lambda_table(basis, x)))


def select_multiindex(basis: CommutatorBasis, x, delta: float) -> tuple[int, ...]:
    """Maximiser of ``|lambda_I(x)| delta**d(I)``; ties go to the lexicographically first I."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    best, best_val = None, 0.0
    for I, lam, d in _lambda_table(basis, x):
        val = lam * delta**d
        if val > best_val:
            best, best_val = I, val
    if best is None:
        raise HormanderError(
            f"every lambda_I vanishes at {np.asarray(x).tolist()}", point=list(x), rank=None
        )
    return best


# -- presets -------------------------------------------------------------------


def _field(n, comps) -> VectorField:
    """Build a field from ``{coordinate: Polynomial or number}``."""
    out = []
    for k in range(n):
        c = comps.get(k, 0)
        out.append(c if isinstance(c, Polynomial) else Polynomial.constant(n, c))
    return VectorField(out)


def _heisenberg1():
    x, y = (Polynomial.coordinate(3, j) for j in range(2))
    half = Fraction(1, 2)
    return VectorFieldSystem(
        3,
        (_field(3, {0: 1, 2: y * -half}), _field(3, {1: 1, 2: x * half})),
        "heisenberg1",
    )


def _grushin():
    x = Polynomial.coordinate(2, 0)
    return VectorFieldSystem(2, (_field(2, {0: 1}), _field(2, {1: x})), "grushin")


def _engel():
    x = Polynomial.coordinate(4, 0)
    return VectorFieldSystem(
        4,
        (_field(4, {0: 1}), _field(4, {1: 1, 2: x, 3: x * x * Fraction(1, 2)})),
        "engel",
    )


def _martinet():
    y = Polynomial.coordinate(3, 1)
    return VectorFieldSystem(
        3,
        (_field(3, {0: 1, 2: y * y * Fraction(1, 2)}), _field(3, {1: 1})),
        "martinet",
    )


def _euclidean2():
    return VectorFieldSystem(2, (_field(2, {0: 1}), _field(2, {1: 1})), "euclidean2")


BUILTINS = {
    # X1 = d/dx - (y/2) d/dt, X2 = d/dy + (x/2) d/dt on (x, y, t)
    "heisenberg1": _heisenberg1,
    # X1 = d/dx, X2 = x d/dy on (x, y)
    "grushin": _grushin,
    # X1 = d/dx, X2 = d/dy + x d/dz + (x^2/2) d/dw on (x, y, z, w)
    "engel": _engel,
    # X1 = d/dx + (y^2/2) d/dz, X2 = d/dy on (x, y, z)
    "martinet": _martinet,
    # X1 = d/dx, X2 = d/dy
    "euclidean2": _euclidean2,
}

#: spanning step of each preset on a neighbourhood of the origin
BUILTIN_STEPS = {"heisenberg1": 2, "grushin": 2, "engel": 3, "martinet": 3, "euclidean2": 1}


def builtin_system(name: str) -> VectorFieldSystem:
    try:
        return BUILTINS[name]()
    except KeyError:
        raise KeyError(
            f"unknown builtin system {name!r}; choose from {sorted(BUILTINS)}"
        ) from None


def builtin_basis(name: str) -> CommutatorBasis:
    """Preset system with its spanning basis at the origin."""
    system = builtin_system(name)
    return spanning_basis(system, [np.zeros(system.n)], BUILTIN_STEPS[name])
