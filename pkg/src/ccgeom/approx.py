"""Approximate exponentials of commutators and the maps E_I, F_I, G_I.

The commutator group word ``C_l(a; S_1..S_l)`` is expanded mechanically:

    C_1 = exp(a S_1)
    C_l = C_{l-1}(S_2..S_l)^{-1} exp(-a S_1) C_{l-1}(S_2..S_l) exp(a S_1)

Products compose from the right, so in execution order ``C_l`` runs
``+S_1``, then ``C_{l-1}``, then ``-S_1``, then the inverse of ``C_{l-1}``.
:func:`commutator_word` is the only place the sign table is produced;
:func:`approx_exp_program`, :func:`F_map` and :func:`G_map` all read it.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .flow import DEFAULT_STEP, FlowProgram, Step, run_program, run_sequence_many
from .vecfield import CommutatorBasis


@lru_cache(maxsize=None)
def commutator_word(word: tuple[int, ...]) -> tuple[tuple[int, int], ...]:
    """``C_l`` for source word ``(s_1..s_l)`` as ``(field, sign)`` pairs in execution order."""
    if not word:
        raise ValueError("empty word")
    if len(word) == 1:
        return ((word[0], 1),)
    inner = commutator_word(word[1:])
    inverse = tuple((f, -s) for f, s in reversed(inner))
    return ((word[0], 1),) + inner + ((word[0], -1),) + inverse


def word_length(d: int) -> int:
    """Number of elementary flows in the approximate exponential of a degree-d element."""
    return 2**d - 2 + 2 ** (d - 1)


def root(h: float, d: int) -> float:
    """``|h| ** (1/d)``; shared by the box norm and F so the norm identity is exact."""
    return abs(h) ** (1.0 / d)


def sign_table(basis: CommutatorBasis, i: int):
    """Fields ``X_s`` and signs ``sigma_s`` of element ``i`` in written (left-to-right) order."""
    written = tuple(reversed(commutator_word(basis.sources[i - 1])))
    return tuple(f for f, _ in written), tuple(s for _, s in written)


@dataclass(frozen=True)
class ApproxExpSpec:
    k: int
    h: float
    program: FlowProgram
    length: int

    def to_json(self) -> dict:
        return {"k": self.k, "h": self.h, "N": self.length, "program": self.program.to_json()}


def approx_exp_program(basis: CommutatorBasis, k: int, h: float) -> ApproxExpSpec:
    """Elementary flow program of ``e_ap^{h Y_k}``.

    ``h >= 0`` gives ``C_d(h^(1/d))``; ``h < 0`` gives ``C_d(|h|^(1/d))^{-1}``
    (steps reversed, signs flipped).
    """
    basis.element(k)
    d = basis.degree(k)
    a = root(h, d)
    steps = FlowProgram(
        tuple(Step(f, s, a) for f, s in commutator_word(basis.sources[k - 1]))
    )
    if h < 0:
        steps = steps.inverse()
    assert len(steps) == word_length(d)
    return ApproxExpSpec(k=k, h=float(h), program=steps, length=len(steps))


def E_program(basis: CommutatorBasis, I: Sequence[int], h) -> FlowProgram:
    """Program of ``E_I(., h) = e_ap^{h_1 Y_{i_1}} ... e_ap^{h_n Y_{i_n}}`` (``h_n`` acts first)."""
    I = basis.check_multiindex(I)
    h = np.asarray(h, dtype=float)
    if h.shape != (len(I),):
        raise ValueError(f"h must have {len(I)} entries")
    program = FlowProgram()
    for k in reversed(range(len(I))):
        program = program + approx_exp_program(basis, I[k], h[k]).program
    return program


def E_map(basis: CommutatorBasis, I: Sequence[int], x, h, step: float = DEFAULT_STEP):
    return run_program(basis.system, E_program(basis, I, h), x, step)


# -- unfolded coordinates -------------------------------------------------------


@dataclass(frozen=True)
class NLengths:
    per_element: tuple[int, ...]
    total: int
    bound: int

    def to_json(self) -> dict:
        return {"N_ik": list(self.per_element), "N_I": self.total, "N_bar": self.bound}


def N_length(basis: CommutatorBasis, I: Sequence[int]) -> NLengths:
    """Per-element lengths ``N_{i_k}``, ``N(I) = sum 2 N_{i_k}`` and the bound ``N_bar``."""
    I = basis.check_multiindex(I)
    per = tuple(word_length(basis.degree(i)) for i in I)
    r = basis.spanning_step
    bound = 2 * basis.n * (2 ** (r + 1) - 2 + 2 ** (r - 1))
    total = sum(2 * N for N in per)
    assert total <= bound, (total, bound)
    return NLengths(per, total, bound)


def N_bar(basis: CommutatorBasis) -> int:
    r = basis.spanning_step
    return 2 * basis.n * (2 ** (r + 1) - 2 + 2 ** (r - 1))


@dataclass(frozen=True)
class UnfoldedCoordinates:
    """Vector ``w`` in R^{N(I)} ordered ``(k, s, 1)`` for s=1..N then ``(k, s, 2)``, k = 1..n."""

    I: tuple[int, ...]
    w: np.ndarray

    def labels(self, basis: CommutatorBasis):
        out = []
        for k, i in enumerate(self.I, start=1):
            N = word_length(basis.degree(i))
            out += [(k, s, 1) for s in range(1, N + 1)]
            out += [(k, s, 2) for s in range(1, N + 1)]
        return out

    def norm(self) -> float:
        return float(np.max(np.abs(self.w), initial=0.0))


def F_map(basis: CommutatorBasis, I: Sequence[int], h) -> UnfoldedCoordinates:
    """Lift ``h`` to unfolded coordinates; only one half of each block is non-zero."""
    I = basis.check_multiindex(I)
    h = np.asarray(h, dtype=float)
    if h.shape != (len(I),):
        raise ValueError(f"h must have {len(I)} entries")
    parts = []
    for hk, i in zip(h, I):
        _, sigma = sign_table(basis, i)
        N = len(sigma)
        a = root(hk, basis.degree(i))
        first = np.zeros(N)
        second = np.zeros(N)
        if hk >= 0:
            first[:] = [sigma[s] * a for s in range(N)]
        else:
            second[:] = [-sigma[N - 1 - s] * a for s in range(N)]
        parts += [first, second]
    w = np.concatenate(parts) if parts else np.zeros(0)
    return UnfoldedCoordinates(I, w)


def G_sequence(basis: CommutatorBasis, I: Sequence[int]):
    """Field order of ``G_{I,x}`` in execution order and the matching position in ``w``."""
    I = basis.check_multiindex(I)
    offsets, pos = [], 0
    for i in I:
        offsets.append(pos)
        pos += 2 * word_length(basis.degree(i))
    fields, slots = [], []
    for k in reversed(range(len(I))):
        X, _ = sign_table(basis, I[k])
        N, off = len(X), offsets[k]
        # exp(w_{k,s,1} X_s) for s = N..1, then exp(w_{k,s,2} X_{N+1-s}) for s = N..1
        for s in range(N, 0, -1):
            fields.append(X[s - 1])
            slots.append(off + s - 1)
        for s in range(N, 0, -1):
            fields.append(X[N - s])
            slots.append(off + N + s - 1)
    return fields, slots


def G_map(basis: CommutatorBasis, I: Sequence[int], x, w, step: float = DEFAULT_STEP):
    """Flow composition ``G_{I,x}(w)`` (``w`` may be an UnfoldedCoordinates or an array)."""
    w = w.w if isinstance(w, UnfoldedCoordinates) else np.asarray(w, dtype=float)
    fields, slots = G_sequence(basis, I)
    if w.shape != (len(slots),):
        raise ValueError(f"w must have {len(slots)} entries")
    return run_program(basis.system, FlowProgram.from_signed(fields, w[slots]), x, step)


def G_map_many(basis: CommutatorBasis, I: Sequence[int], x, W, step: float = DEFAULT_STEP):
    """``G_{I,x}`` at each row of ``W``; identical arithmetic to :func:`G_map`."""
    fields, slots = G_sequence(basis, I)
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape[1] != len(slots):
        raise ValueError(f"w must have {len(slots)} entries")
    x = np.asarray(x, dtype=float)
    pts = np.repeat(x[None, :], W.shape[0], axis=0)
    return run_sequence_many(basis.system, fields, W[:, slots], pts, step)


def E_map_many(basis: CommutatorBasis, I: Sequence[int], x, H, step: float = DEFAULT_STEP):
    """``E_I(x, h)`` for each row of ``H`` through the factorisation ``G o F``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    W = np.array([F_map(basis, I, h).w for h in H])
    return G_map_many(basis, I, x, W, step)
