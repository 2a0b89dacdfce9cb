import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccgeom.polynomial import Polynomial
from ccgeom.vecfield import (
    HormanderError,
    VectorField,
    box_norm,
    builtin_basis,
    builtin_system,
    capital_lambda,
    commutator,
    divergence,
    hormander_step,
    lambda_I,
    nested_commutator,
    select_multiindex,
    spanning_basis,
    _lambda_table,
)


def const_field(*v):
    return VectorField.constant(v)


def test_heisenberg_bracket_is_exact():
    H = builtin_system("heisenberg1")
    assert commutator(H.field(1), H.field(2)) == const_field(0, 0, 1)
    assert commutator(H.field(1), H.field(1)).is_zero()


def test_grushin_bracket():
    G = builtin_system("grushin")
    assert commutator(G.field(1), G.field(2)) == const_field(0, 1)


def test_nested_commutators():
    H = builtin_system("heisenberg1")
    assert nested_commutator(H, (1, 2)) == const_field(0, 0, 1)
    assert nested_commutator(H, (1, 1, 2)).is_zero()
    E = builtin_system("engel")
    assert nested_commutator(E, (1, 1, 2)) == const_field(0, 0, 0, 1)


def test_hormander_step_examples():
    assert hormander_step(builtin_system("heisenberg1"), [0, 0, 0], 4) == 2
    G = builtin_system("grushin")
    assert hormander_step(G, [1, 0], 4) == 1
    assert hormander_step(G, [0, 0], 4) == 2
    assert hormander_step(builtin_system("euclidean2"), [0.3, -2], 4) == 1


def test_hormander_failure_reports_rank():
    G = builtin_system("grushin")
    with pytest.raises(HormanderError) as info:
        hormander_step(G, [0, 0], 1)
    assert info.value.rank == 1


@pytest.mark.parametrize(
    "name,q,degrees",
    [
        ("heisenberg1", 3, (1, 1, 2)),
        ("grushin", 3, (1, 1, 2)),
        ("euclidean2", 2, (1, 1)),
        ("engel", 4, (1, 1, 2, 3)),
        ("martinet", 4, (1, 1, 2, 3)),
    ],
)
def test_builtin_bases(name, q, degrees):
    B = builtin_basis(name)
    assert B.q == q
    assert B.degrees == degrees


def test_zero_words_are_recorded():
    B = builtin_basis("engel")
    assert (2, 1, 2) in B.dropped
    assert B.sources[3] == (1, 1, 2)


def test_lambda_examples():
    H = builtin_basis("heisenberg1")
    assert lambda_I(H, (1, 2, 3), [0, 0, 0]) == 1
    assert lambda_I(H, (1, 1, 3), [0.2, 0.1, 0]) == 0
    G = builtin_basis("grushin")
    assert lambda_I(G, (1, 2), [0.7, -2.0]) == pytest.approx(0.7)
    assert lambda_I(G, (1, 3), [0.7, -2.0]) == pytest.approx(1.0)


def test_box_norm_examples():
    H = builtin_basis("heisenberg1")
    assert box_norm(H, (1, 2, 3), [0.04, -0.09, 0.0016]) == pytest.approx(0.09)
    assert box_norm(H, (1, 2, 3), [0, 0, 0]) == 0
    E = builtin_basis("euclidean2")
    assert box_norm(E, (1, 2), [-0.3, 0.2]) == pytest.approx(0.3)


def test_capital_lambda_examples():
    G = builtin_basis("grushin")
    d = 0.3
    assert capital_lambda(G, [0, 0], d) == pytest.approx(2 * d**3)
    assert capital_lambda(G, [1, 0], d) == pytest.approx(2 * d**2 + 2 * d**3)
    H = builtin_basis("heisenberg1")
    assert capital_lambda(H, [0.4, -1.0, 2.0], d) == pytest.approx(6 * d**4)


def test_select_multiindex_examples():
    G = builtin_basis("grushin")
    assert select_multiindex(G, [1, 0], 0.1) == (1, 2)
    assert select_multiindex(G, [0, 0], 0.37) == (1, 3)
    H = builtin_basis("heisenberg1")
    assert select_multiindex(H, [0.5, 0.5, 0.5], 0.2) == (1, 2, 3)


def test_select_attains_max():
    G = builtin_basis("grushin")
    for x, d in [([0.05, 0.0], 0.1), ([0.3, 1.0], 0.5), ([-0.01, 0.0], 0.02)]:
        I = select_multiindex(G, x, d)
        best = max(lam * d**k for _, lam, k in _lambda_table(G, x))
        assert abs(lambda_I(G, I, x)) * d ** G.total_degree(I) == pytest.approx(best)


def test_divergence_examples():
    x = Polynomial.coordinate(2, 0)
    zero = Polynomial.zero(2)
    assert divergence(VectorField([zero, x])).is_zero()
    assert divergence(VectorField([x, zero])) == Polynomial.constant(2, 1)
    H = builtin_system("heisenberg1")
    assert divergence(H.field(1)).is_zero() and divergence(H.field(2)).is_zero()


def test_builtin_lookup():
    H = builtin_system("heisenberg1")
    assert (H.n, H.m) == (3, 2)
    assert np.allclose(H.field(1)([0.0, 2.0, 0.0]), [1, 0, -1])
    assert np.allclose(H.field(2)([2.0, 0.0, 0.0]), [0, 1, 1])
    with pytest.raises(KeyError):
        builtin_system("no_such")


def test_json_round_trip():
    E = builtin_system("engel")
    back = type(E).from_json(E.to_json())
    assert back.signature() == E.signature()


# -- properties -------------------------------------------------------------------

coeffs = st.integers(-3, 3).map(lambda k: Fraction(k, 2))


@st.composite
def poly_fields(draw, n=2, max_deg=3):
    comps = []
    for _ in range(n):
        terms = {}
        for e in itertools.product(range(max_deg + 1), repeat=n):
            if sum(e) <= max_deg and draw(st.booleans()):
                terms[e] = draw(coeffs)
        comps.append(Polynomial(n, terms))
    return VectorField(comps)


@settings(max_examples=100, deadline=None)
@given(poly_fields(), poly_fields())
def test_antisymmetry(X, Y):
    assert (commutator(X, Y) + commutator(Y, X)).is_zero()


@settings(max_examples=100, deadline=None)
@given(poly_fields(max_deg=2), poly_fields(max_deg=2), poly_fields(max_deg=2))
def test_jacobi(X, Y, Z):
    total = (
        commutator(X, commutator(Y, Z))
        + commutator(Y, commutator(Z, X))
        + commutator(Z, commutator(X, Y))
    )
    assert total.is_zero()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3),
       st.permutations([1, 2, 3, 4]))
def test_lambda_sign_swap(x, perm):
    B = builtin_basis("martinet")
    I = tuple(perm[:3])
    J = (I[1], I[0], I[2])
    assert lambda_I(B, J, x) == pytest.approx(-lambda_I(B, I, x), abs=1e-12)
    assert lambda_I(B, (I[0], I[0], I[2]), x) == 0


def test_capital_lambda_increasing():
    G = builtin_basis("grushin")
    vals = [capital_lambda(G, [0.2, 0.0], d) for d in (1e-6, 0.01, 0.1, 0.5, 1.0)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert vals[0] < 1e-10


def test_hormander_random_points():
    rng = np.random.default_rng(5)
    H = builtin_system("heisenberg1")
    for x in rng.uniform(-3, 3, size=(50, 3)):
        assert hormander_step(H, x, 4) == 2
    G = builtin_system("grushin")
    for yv in rng.uniform(-3, 3, size=10):
        assert hormander_step(G, [0.0, yv], 4) == 2
        assert hormander_step(G, [rng.choice([-1, 1]) * rng.uniform(0.1, 3), yv], 4) == 1


def test_spanning_basis_rejects_bad_step():
    with pytest.raises(HormanderError):
        spanning_basis(builtin_system("grushin"), [np.zeros(2)], 1)
