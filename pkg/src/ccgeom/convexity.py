"""X-convexity tests, the lower-bound recursion and regularity-estimate experiments.

Every supremum, infimum and mean over a ball is a Monte Carlo estimate drawn
with :func:`ccgeom.ccdist.ball_sample`; the same seed is reused across radii so
that ratios share their sampling noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .approx import N_bar
from .ccdist import (
    DEFAULT_SEED,
    BudgetError,
    DistanceField,
    GridSpec,
    ball_sample,
    distance_field,
    field_like,
    refined,
)
from .expression import Expression, parse
from .flow import DEFAULT_STEP, flow_many
from .vecfield import CommutatorBasis, VectorFieldSystem

CONVEXITY_TOL = 1e-7
REFINEMENT_CHANGE = 0.25
LAMBDA_NOISE = 0.10
SUP_MEAN_SPREAD = 3.0
FIELD_ZERO = 1e-10
SUBLAP_T = 1e-3
NESTED_SCALES = 5


class DegenerateMeanError(ValueError):
    """The sampled mean of |u| over a ball is zero."""


class PointedFieldError(ValueError):
    """Every field vanishes at the base point."""


@dataclass(frozen=True)
class ScalarFunction:
    expression: Expression
    label: str = ""

    @classmethod
    def coerce(cls, u) -> "ScalarFunction":
        if isinstance(u, ScalarFunction):
            return u
        e = parse(u)
        return cls(e, u if isinstance(u, str) else repr(e.to_json()))

    def __call__(self, x) -> float:
        return self.expression.eval(x)

    def eval_many(self, points) -> np.ndarray:
        return self.expression.eval_many(points)

    def is_smooth(self) -> bool:
        return self.expression.is_smooth()

    def to_json(self) -> dict:
        return {"label": self.label, "expression": self.expression.to_json()}


def _u(u) -> ScalarFunction:
    return ScalarFunction.coerce(u)


def _clean(value):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else str(v)
    return value


@dataclass
class ConvexityReport:
    verdict: str
    witnesses: list  # (x, alpha, t, value), most negative first
    samples: int
    tolerance: float
    min_value: float = math.inf

    def __post_init__(self):
        if self.verdict == "fail" and not self.witnesses:
            raise ValueError("a failing convexity report needs a witness")

    def to_json(self) -> dict:
        return _clean(
            {
                "verdict": self.verdict,
                "samples": self.samples,
                "tolerance": self.tolerance,
                "min_second_difference": self.min_value,
                "witnesses": [
                    {"x": list(x), "alpha": list(a), "t": t, "value": v}
                    for x, a, t, v in self.witnesses
                ],
            }
        )

    def csv_table(self):
        header = ["x", "alpha", "t", "value"]
        rows = [[" ".join(map(repr, x)), " ".join(map(repr, a)), t, v]
                for x, a, t, v in self.witnesses]
        return header, rows


ESTIMATE_IDS = ("supestCC", "gradestCC", "estlamb", "NxB", "moser-ratio", "sublap", "LipEstd")


@dataclass
class EstimateReport:
    id: str
    constant: float
    parameters: dict
    data: list  # rows of dicts sharing the keys in ``columns``
    verdict: str
    columns: tuple = ()
    extra: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.id not in ESTIMATE_IDS:
            raise ValueError(f"unknown estimate id {self.id!r}")
        if not self.columns and self.data:
            self.columns = tuple(self.data[0].keys())

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_json(self) -> dict:
        return _clean(
            {
                "id": self.id,
                "constant": self.constant,
                "parameters": self.parameters,
                "columns": list(self.columns),
                "data": self.data,
                "verdict": self.verdict,
                **({"extra": self.extra} if self.extra else {}),
            }
        )

    def csv_table(self):
        return list(self.columns), [[row.get(c) for c in self.columns] for row in self.data]


# -- second differences --------------------------------------------------------------


def _second_differences(system, u, points, alpha, t, step):
    X = system.combination(alpha)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    plus = flow_many(X, pts, t, step)
    minus = flow_many(X, pts, -t, step)
    return u.eval_many(plus) - 2.0 * u.eval_many(pts) + u.eval_many(minus)


def horizontal_second_difference(system: VectorFieldSystem, u, x, alpha, t: float,
                                 step: float = DEFAULT_STEP) -> float:
    """``u(gamma(t)) - 2 u(x) + u(gamma(-t))`` along the flow of ``sum alpha_i X_i``."""
    if not t > 0:
        raise ValueError("t must be positive")
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (system.m,):
        raise ValueError(f"alpha must have {system.m} entries")
    return float(_second_differences(system, _u(u), [x], alpha, t, step)[0])


def max_sphere_directions(m: int, count: int, rng) -> np.ndarray:
    """Uniform draws in [-1, 1]^m with one random coordinate pushed to +-1."""
    alpha = rng.uniform(-1.0, 1.0, size=(count, m))
    j = rng.integers(0, m, size=count)
    alpha[np.arange(count), j] = rng.choice([-1.0, 1.0], size=count)
    return alpha


def xconvexity_test(
    system: VectorFieldSystem,
    u,
    box,
    n_points: int = 50,
    n_dirs: int = 20,
    t_list: Sequence[float] = (0.05, 0.1, 0.2),
    seed: int = DEFAULT_SEED,
    tol: float = CONVEXITY_TOL,
    step: float = DEFAULT_STEP,
    max_witnesses: int = 20,
) -> ConvexityReport:
    """Refute or corroborate convexity of ``u`` along constant-coefficient horizontal curves.

    ``box`` is a pair ``(lo, hi)`` of corner points. A sample fails when its
    second difference is below ``-tol * max(1, |u(x)|)``.
    """
    if n_points <= 0 or n_dirs <= 0 or not t_list:
        raise ValueError("sample counts must be positive and t_list non-empty")
    u = _u(u)
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lo, hi, size=(n_points, system.n))
    dirs = max_sphere_directions(system.m, n_dirs, rng)
    thresh = -tol * np.maximum(1.0, np.abs(u.eval_many(pts)))
    failures, worst = [], math.inf
    for alpha in dirs:
        for t in t_list:
            vals = _second_differences(system, u, pts, alpha, float(t), step)
            worst = min(worst, float(vals.min()))
            for i in np.nonzero(vals < thresh)[0]:
                failures.append((tuple(pts[i].tolist()), tuple(alpha.tolist()), float(t),
                                 float(vals[i])))
    failures.sort(key=lambda w: w[3])
    return ConvexityReport(
        verdict="fail" if failures else "pass",
        witnesses=failures[:max_witnesses],
        samples=n_points * n_dirs * len(t_list),
        tolerance=tol,
        min_value=worst,
    )


# -- lower-bound recursion ------------------------------------------------------------


def nxb_bound(u_x, M, N: int):
    """Closed form ``2^N u(x) - (2^N - 1) M`` of the recursion."""
    p = 2**N
    return p * u_x - (p - 1) * M


def mu_iterate(u_x, M, N: int):
    """``mu_0 = u(x)``, ``mu_j = 2 mu_{j-1} - M``; returns ``mu_N``."""
    mu = u_x
    for _ in range(N):
        mu = 2 * mu - M
    return mu


def mun1_bound(u_x, M, nbar: int):
    """Three-case lower bound on ``inf u`` over the small ball."""
    p = 2**nbar
    if u_x >= 0:
        return 2 * u_x - (p - 1) * M
    if M >= 0:
        return p * u_x - (p - 1) * M
    return p * u_x - M


def mun1_case(u_x, M) -> int:
    if u_x >= 0:
        return 1
    return 2 if M >= 0 else 3


def lower_bound_check(
    system: VectorFieldSystem,
    basis: CommutatorBasis,
    u,
    field: DistanceField,
    x,
    delta: float,
    b_hat: float,
    samples: int = 2000,
    seed: int = DEFAULT_SEED,
) -> EstimateReport:
    """Smallest ``N`` with ``2^N u(x) - (2^N-1) M <= inf_{B(x, b delta)} u`` and the three-case bound.

    ``M`` is the sampled supremum over ``B(x, N_bar delta)``; ``x`` itself is
    included in both samples.
    """
    u = _u(u)
    x = np.asarray(x, dtype=float)
    if not np.allclose(x, field.origin):
        raise ValueError("the distance field must be rooted at x")
    nbar = N_bar(basis)
    big = nbar * delta
    if big > field.budget + 1e-12:
        raise BudgetError(f"N_bar*delta = {big} exceeds the field budget {field.budget}")
    sup_pts = np.vstack([x, ball_sample(field, big, samples, seed)])
    inf_pts = np.vstack([x, ball_sample(field, b_hat * delta, samples, seed + 1)])
    u_x = u(x)
    M = float(u.eval_many(sup_pts).max())
    low = float(u.eval_many(inf_pts).min())
    tol = 1e-9 * max(1.0, abs(u_x), abs(M), abs(low))
    N_x = next((N for N in range(1, nbar + 1) if nxb_bound(u_x, M, N) <= low + tol), None)
    mu = mun1_bound(u_x, M, nbar)
    mu_ok = low >= mu - tol
    # muN1 never exceeds the N = N_bar closed form when M >= u(x); equal in case 2
    assert mu <= nxb_bound(u_x, M, nbar) + tol * 2**nbar
    row = {
        "x": x.tolist(),
        "delta": delta,
        "u_x": u_x,
        "sup_big": M,
        "inf_small": low,
        "N_x": N_x,
        "NxB_value": None if N_x is None else nxb_bound(u_x, M, N_x),
        "muN1_case": mun1_case(u_x, M),
        "muN1_value": mu,
    }
    ok = N_x is not None and mu_ok
    return EstimateReport(
        id="NxB",
        constant=float(N_x) if N_x is not None else math.inf,
        parameters={"delta": delta, "b_hat": b_hat, "N_bar": nbar, "samples": samples,
                    "seed": seed},
        data=[row],
        verdict="pass" if ok else "fail",
    )


# -- ball statistics -------------------------------------------------------------------


def _ball_points(field, r, samples, seed, include_origin=True):
    pts = ball_sample(field, r, samples, seed)
    return np.vstack([field.origin, pts]) if include_origin else pts


def ball_sup_abs(u, field, r, samples=2000, seed=DEFAULT_SEED) -> float:
    return float(np.abs(_u(u).eval_many(_ball_points(field, r, samples, seed))).max())


def ball_mean_abs(u, field, r, samples=2000, seed=DEFAULT_SEED) -> float:
    return float(np.abs(_u(u).eval_many(ball_sample(field, r, samples, seed))).mean())


def _rooted(field, x):
    x = np.asarray(x, dtype=float)
    if not np.allclose(x, field.origin):
        raise ValueError("the distance field must be rooted at x")
    return x


def sup_mean_ratio(u, field: DistanceField, x, r: float, samples: int = 2000,
                   seed: int = DEFAULT_SEED) -> float:
    """``sup_{B(x,r)} |u| / mean_{B(x,2r)} |u|``; raises :class:`DegenerateMeanError` on zero mean."""
    _rooted(field, x)
    mean = ball_mean_abs(u, field, 2 * r, samples, seed)
    if mean == 0:
        raise DegenerateMeanError(f"mean of |u| over B(x, {2 * r}) is zero")
    return ball_sup_abs(u, field, r, samples, seed) / mean


def sup_mean_grid(u, field: DistanceField, x, r_list: Sequence[float], samples: int = 2000,
                  seed: int = DEFAULT_SEED, bound: float | None = None) -> EstimateReport:
    """``sup_mean_ratio`` over a radius grid; passes when finite with max/min spread below 3."""
    rows = []
    for r in r_list:
        sup = ball_sup_abs(u, field, r, samples, seed)
        mean = ball_mean_abs(u, field, 2 * r, samples, seed)
        rows.append({"r": float(r), "sup": sup, "mean": mean,
                     "ratio": sup / mean if mean > 0 else math.inf})
    ratios = np.array([row["ratio"] for row in rows])
    finite = bool(np.all(np.isfinite(ratios))) and ratios.size > 0
    spread = float(ratios.max() / ratios.min()) if finite and ratios.min() > 0 else math.inf
    ok = finite and spread < SUP_MEAN_SPREAD and (bound is None or ratios.max() <= bound)
    return EstimateReport(
        id="supestCC",
        constant=float(ratios.max()) if ratios.size else math.inf,
        parameters={"x": list(map(float, x)), "r": list(map(float, r_list)),
                    "samples": samples, "seed": seed, "bound": bound},
        data=rows,
        verdict="pass" if ok else "fail",
        columns=("r", "sup", "mean", "ratio"),
        extra={"spread": spread},
    )


def _pair_rho(field, y, z):
    """``rho_upper(y, z)`` from a field shaped like ``field`` rooted at ``y``."""
    f = field_like(field, y, targets=[z])
    return f.rho_upper(z)


def _refinement_verdict(c0, c1):
    if not (math.isfinite(c0) and math.isfinite(c1)):
        return math.inf, False
    if c0 == c1:
        return 0.0, True
    change = abs(c1 - c0) / max(abs(c0), abs(c1))
    return change, change < REFINEMENT_CHANGE


def _lipschitz_constant(u, field, pairs, r, samples, seed):
    rows, sup = [], 0.0
    vals = []
    for y, z in pairs:
        root = field_like(field, y)
        sup = max(sup, ball_sup_abs(u, root, r, samples, seed))
        d = root.rho_upper(z)
        du = abs(u(z) - u(y))
        vals.append((y, z, d, du))
    sup = max([sup] + [abs(u(p)) for pair in pairs for p in pair])
    C = 0.0
    for y, z, d, du in vals:
        if d == 0:
            rows.append({"y": list(y), "z": list(z), "d_hat": 0.0, "du": du, "ratio": None})
            continue
        ratio = du * r / (d * sup) if sup > 0 else 0.0
        C = max(C, ratio)
        rows.append({"y": list(y), "z": list(z), "d_hat": d, "du": du, "ratio": ratio})
    return C, sup, rows


def lipschitz_ratio(system: VectorFieldSystem, u, field: DistanceField, pairs, r: float,
                    samples: int = 1000, seed: int = DEFAULT_SEED,
                    refine: bool = True) -> EstimateReport:
    """``max |u(x)-u(y)| r / (d_hat(x,y) sup_{K_r}|u|)`` and its change under tau-halving.

    ``field`` supplies tau, grid geometry and budget; it is re-rooted at every
    pair's first point. ``K_r`` is sampled as the union of ``B(x, r)``.
    """
    if field.system is not system and field.system.signature() != system.signature():
        raise ValueError("field was built for a different system")
    u = _u(u)
    pairs = [(tuple(map(float, a)), tuple(map(float, b))) for a, b in pairs]
    C, sup, rows = _lipschitz_constant(u, field, pairs, r, samples, seed)
    change, stable, C_fine = 0.0, True, None
    if refine:
        C_fine, _, _ = _lipschitz_constant(u, refined(field), pairs, r, samples, seed)
        change, stable = _refinement_verdict(C, C_fine)
    ok = math.isfinite(C) and stable
    return EstimateReport(
        id="LipEstd",
        constant=C,
        parameters={"r": r, "tau": field.tau, "samples": samples, "seed": seed,
                    "pairs": len(pairs)},
        data=rows,
        verdict="pass" if ok else "fail",
        columns=("y", "z", "d_hat", "du", "ratio"),
        extra={"sup_abs": sup, "refined_constant": C_fine, "refinement_change": change},
    )


def _gradient_constant(u, field, pairs, r, samples, seed):
    mean = ball_mean_abs(u, field, 2 * r, samples, seed)
    if mean == 0:
        raise DegenerateMeanError(f"mean of |u| over B(x, {2 * r}) is zero")
    C, rows = 0.0, []
    for y, z in pairs:
        du = abs(u(z) - u(y))
        if du == 0:
            d = None
            ratio = 0.0
        else:
            d = _pair_rho(field, y, z)
            if d == 0:
                rows.append({"y": list(y), "z": list(z), "d_hat": 0.0, "du": du, "ratio": None})
                continue
            ratio = du * r / (d * mean)
        C = max(C, ratio)
        rows.append({"y": list(y), "z": list(z), "d_hat": d, "du": du, "ratio": ratio})
    return C, mean, rows


def gradient_ratio(u, field: DistanceField, x, r: float, pairs_in_ball=None, n_pairs: int = 10,
                   samples: int = 2000, seed: int = DEFAULT_SEED,
                   refine: bool = True) -> EstimateReport:
    """``max |u(y)-u(z)| r / (d_hat(y,z) mean_{B(x,2r)}|u|)`` over pairs in ``B(x, r)``.

    Pairs are drawn with :func:`ball_sample` when not given. Pairs with equal
    values contribute 0 without a distance search, so a constant gives exactly 0.
    """
    u = _u(u)
    x = _rooted(field, x)
    if pairs_in_ball is None:
        pts = ball_sample(field, r, 2 * n_pairs, seed + 7)
        pairs_in_ball = list(zip(pts[0::2], pts[1::2]))
    pairs = [(tuple(map(float, a)), tuple(map(float, b))) for a, b in pairs_in_ball]
    C, mean, rows = _gradient_constant(u, field, pairs, r, samples, seed)
    change, stable, C_fine = 0.0, True, None
    if refine:
        C_fine, _, _ = _gradient_constant(u, refined(field), pairs, r, samples, seed)
        change, stable = _refinement_verdict(C, C_fine)
    ok = math.isfinite(C) and stable
    return EstimateReport(
        id="gradestCC",
        constant=C,
        parameters={"x": x.tolist(), "r": r, "tau": field.tau, "samples": samples,
                    "seed": seed, "pairs": len(pairs)},
        data=rows,
        verdict="pass" if ok else "fail",
        columns=("y", "z", "d_hat", "du", "ratio"),
        extra={"mean_abs_2r": mean, "refined_constant": C_fine, "refinement_change": change},
    )


def lambda_ratio(u, field: DistanceField, x, r: float, lambda_list: Sequence[float],
                 samples: int = 2000, seed: int = DEFAULT_SEED) -> EstimateReport:
    """``sup_{B_r}|u| / mean_{B_{lambda r}}|u|``; passes when non-increasing within 10%."""
    if any(lam <= 1 for lam in lambda_list):
        raise ValueError("every lambda must exceed 1")
    u = _u(u)
    x = _rooted(field, x)
    sup = ball_sup_abs(u, field, r, samples, seed)
    rows = []
    for lam in lambda_list:
        mean = ball_mean_abs(u, field, lam * r, samples, seed)
        if mean == 0:
            raise DegenerateMeanError(f"mean of |u| over B(x, {lam * r}) is zero")
        rows.append({"lambda": float(lam), "sup": sup, "mean": mean, "ratio": sup / mean})
    ratios = [row["ratio"] for row in rows]
    order = np.argsort(lambda_list)
    seq = [ratios[i] for i in order]
    ok = all(b <= a * (1 + LAMBDA_NOISE) for a, b in zip(seq, seq[1:]))
    return EstimateReport(
        id="estlamb",
        constant=float(max(ratios)),
        parameters={"x": x.tolist(), "r": r, "lambda": list(map(float, lambda_list)),
                    "samples": samples, "seed": seed},
        data=rows,
        verdict="pass" if ok else "fail",
        columns=("lambda", "sup", "mean", "ratio"),
    )


# -- pointed sub-Laplacian ---------------------------------------------------------------


def pointed_fields(system: VectorFieldSystem, x0) -> VectorFieldSystem:
    """``Y_i = X_i`` where ``X_i(x0) != 0``, else ``X_i + X_{j1}`` with ``j1`` the first non-vanishing field."""
    x0 = np.asarray(x0, dtype=float)
    alive = [float(np.linalg.norm(X(x0))) > FIELD_ZERO for X in system.fields]
    if not any(alive):
        raise PointedFieldError(f"every field vanishes at {x0.tolist()}")
    j1 = alive.index(True)
    fields = tuple(X if ok else X + system.fields[j1] for X, ok in zip(system.fields, alive))
    return VectorFieldSystem(system.n, fields, f"{system.name}-pointed")


def _sublap_values(Y: VectorFieldSystem, u, pts, t, step):
    total = np.zeros(pts.shape[0])
    for X in Y.fields:
        plus = flow_many(X, pts, t, step)
        minus = flow_many(X, pts, -t, step)
        total += (u.eval_many(plus) - 2.0 * u.eval_many(pts) + u.eval_many(minus)) / t**2
    return total


def sublaplacian_check(
    system: VectorFieldSystem,
    u,
    x0,
    delta: float,
    n_points: int = 50,
    t: float = SUBLAP_T,
    seed: int = DEFAULT_SEED,
    field: DistanceField | None = None,
    tol: float = 1e-6,
    step: float = DEFAULT_STEP,
    samples: int = 2000,
) -> EstimateReport:
    """Pointwise surrogate of ``sum Y_i^2 u >= 0`` around ``x0`` plus the Moser-type ratio.

    Points are drawn from ``B(x0, delta)``. For non-smooth ``u`` the second
    differences are averaged over the scales ``t, t/2, ..., t/16``. The verdict
    uses ``tol * max(1, max |u|)``.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    u = _u(u)
    x0 = np.asarray(x0, dtype=float)
    Y = pointed_fields(system, x0)
    if field is None:
        c = delta / 10
        field = distance_field(system, x0, delta, delta / 10,
                               GridSpec.centered(x0, 1.5 * delta, c), step)
    x0 = _rooted(field, x0)
    pts = np.vstack([x0, ball_sample(field, delta, n_points - 1, seed)])
    scales = [t] if u.is_smooth() else [t / 2**k for k in range(NESTED_SCALES)]
    L = np.mean([_sublap_values(Y, u, pts, s, step) for s in scales], axis=0)
    scale = max(1.0, float(np.abs(u.eval_many(pts)).max()))
    ok = bool(np.all(L >= -tol * scale))

    sup_half = float(u.eval_many(_ball_points(field, delta / 2, samples, seed + 1)).max())
    mean_abs = ball_mean_abs(u, field, delta, samples, seed + 2)
    moser = sup_half / mean_abs if mean_abs > 0 else math.inf
    rows = [{"x": p.tolist(), "delta": delta, "quantity": "sum_Y2u", "value": float(v)}
            for p, v in zip(pts, L)]
    return EstimateReport(
        id="sublap",
        constant=float(L.min()),
        parameters={"x0": x0.tolist(), "delta": delta, "n_points": n_points, "t": t,
                    "scales": scales, "tol": tol, "seed": seed},
        data=rows,
        verdict="pass" if ok else "fail",
        columns=("x", "delta", "quantity", "value"),
        extra={
            "min_value": float(L.min()),
            "max_value": float(L.max()),
            "pointed_fields_at_x0": [X(x0).tolist() for X in Y.fields],
            "moser_ratio": moser,
            "moser_p": 1,
        },
    )
