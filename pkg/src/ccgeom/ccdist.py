"""Upper bounds on the control distance by shortest-path search over flow moves.

Moves are "flow along +X_j or -X_j for time tau" (the piecewise-constant
curves defining rho), or with ``controls="cube"`` any ``sum a_j X_j`` with
``a_j`` in {-1, 0, 1} (admissible for the max-control distance d). Each move
costs tau, so the Dijkstra search is a breadth-first sweep: layer L holds the
states first reached with L moves. Continuous end points are kept in the
frontier and each grid cell keeps one representative, so a cell value is an
upper bound on the distance to that representative and converges as tau and
the cell size shrink.

Horizontal moves of duration tau often land on a lattice of spacing tau;
cells finer than that along those axes are never reached, so ball volumes
want cells at least tau wide horizontally (and centred on the origin).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .approx import E_map_many, N_bar
from .flow import DEFAULT_STEP, _blown, flow_many
from .vecfield import CommutatorBasis, VectorField, VectorFieldSystem, capital_lambda

DEFAULT_TAU = 0.05
DEFAULT_CELL = 0.02
DEFAULT_BUDGET = 2.0
DEFAULT_HALF_WIDTH = 2.0
DEFAULT_SAMPLES = 100_000
DEFAULT_SEED = 42
MAX_CELLS = 100_000_000
CHUNK = 20_000


class BudgetError(ValueError):
    """A query needs a radius beyond what the distance field explored."""


class SamplingError(RuntimeError):
    """Rejection sampling hit its attempt cap."""


# -- grid ------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned box ``[lo, hi]`` cut into cells of size ``cell`` per axis.

    ``cell`` may be a scalar or one size per axis; anisotropic cells suit
    systems whose balls are much thinner along bracket directions.
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    cell: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        cell = self.cell
        if np.isscalar(cell):
            cell = (cell,) * len(lo)
        cell = tuple(float(c) for c in cell)
        if not (len(lo) == len(hi) == len(cell)):
            raise ValueError("lo, hi and cell must have the same length")
        if any(c <= 0 for c in cell):
            raise ValueError(f"cell size must be positive, got {cell}")
        if any(h <= l for l, h in zip(lo, hi)):
            raise ValueError("box must have hi > lo on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "cell", cell)

    @classmethod
    def centered(cls, center, half_width, cell) -> "GridSpec":
        """Box around ``center`` whose cells are centred on ``center``."""
        center = np.asarray(center, dtype=float)
        n = center.size
        hw = np.broadcast_to(np.asarray(half_width, dtype=float), (n,))
        c = np.broadcast_to(np.asarray(cell, dtype=float), (n,))
        k = np.ceil(hw / c - 0.5) + 0.5
        return cls(tuple(center - k * c), tuple(center + k * c), tuple(c))

    @property
    def n(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(
            max(1, int(math.ceil((h - l) / c - 1e-9))) for l, h, c in zip(self.lo, self.hi, self.cell)
        )

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((pts >= self.lo) & (pts < self.hi), axis=1)

    def cell_index(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Linear cell index per row and an in-box mask (index is -1 outside)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        with np.errstate(invalid="ignore"):
            idx = np.floor((pts - self.lo) / self.cell)
        shape = np.array(self.shape)
        ok = np.all(np.isfinite(idx) & (idx >= 0) & (idx < shape), axis=1)
        lin = np.full(pts.shape[0], -1, dtype=np.int64)
        if np.any(ok):
            lin[ok] = np.ravel_multi_index(idx[ok].astype(np.int64).T, self.shape)
        return lin, ok

    def cell_centers(self, lin: np.ndarray) -> np.ndarray:
        idx = np.array(np.unravel_index(lin, self.shape)).T
        return np.asarray(self.lo) + (idx + 0.5) * np.asarray(self.cell)

    def to_json(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "cell": list(self.cell)}

    @classmethod
    def from_json(cls, data) -> "GridSpec":
        return cls(tuple(data["lo"]), tuple(data["hi"]), data["cell"])


def default_grid(x, half_width=DEFAULT_HALF_WIDTH, cell=DEFAULT_CELL) -> GridSpec:
    """``x + [-half_width, half_width]^n`` with cell corners on ``x``."""
    x = np.asarray(x, dtype=float)
    return GridSpec(tuple(x - half_width), tuple(x + half_width), cell)


CONTROLS = ("coordinate", "cube")


def control_fields(system: VectorFieldSystem, controls: str = "coordinate"):
    """Move directions: ``+-X_j`` for ``coordinate`` (the rho curves) or every
    ``sum a_j X_j`` with ``a`` in ``{-1, 0, 1}^m`` minus zero for ``cube``
    (max-norm bounded controls, so each move is admissible for d)."""
    if controls == "coordinate":
        out = []
        for X in system.fields:
            out += [X, -X]
        return out
    if controls == "cube":
        return [
            system.combination(a)
            for a in itertools.product((-1, 0, 1), repeat=system.m)
            if any(a)
        ]
    raise ValueError(f"unknown controls {controls!r}; choose from {CONTROLS}")


# -- distance field --------------------------------------------------------------


@dataclass
class DistanceField:
    system: VectorFieldSystem
    origin: np.ndarray
    tau: float
    grid: GridSpec
    budget: float
    step: float
    moves: np.ndarray = field(repr=False)  # int32 move counts per cell, -1 = unreached
    controls: str = "coordinate"
    layers: int = 0
    complete: bool = True  # False when stopped early at targets

    def rho_upper(self, y) -> float:
        """Upper bound on rho(origin, y); +inf if the cell was not reached."""
        return float(self.rho_upper_many(np.asarray(y, dtype=float)[None, :])[0])

    def rho_upper_many(self, points) -> np.ndarray:
        lin, ok = self.grid.cell_index(points)
        if not np.all(ok):
            bad = np.atleast_2d(points)[~ok][0]
            raise ValueError(f"query point {bad.tolist()} lies outside the grid box")
        k = self.moves[lin]
        return np.where(k >= 0, k * self.tau, np.inf)

    @property
    def reached(self) -> int:
        return int(np.count_nonzero(self.moves >= 0))

    def cells_within(self, r: float) -> np.ndarray:
        """Linear indices of cells whose value is strictly below ``r``."""
        kmax = _moves_below(r, self.tau)
        return np.nonzero((self.moves >= 0) & (self.moves <= kmax))[0]

    def to_csv_rows(self):
        lin = np.nonzero(self.moves >= 0)[0]
        centers = self.grid.cell_centers(lin)
        vals = self.moves[lin] * self.tau
        return centers, vals

    def summary(self) -> dict:
        return {
            "origin": self.origin.tolist(),
            "tau": self.tau,
            "grid": self.grid.to_json(),
            "budget": self.budget,
            "step": self.step,
            "controls": self.controls,
            "layers": self.layers,
            "reached_cells": self.reached,
            "complete": self.complete,
        }


def _moves_below(r: float, tau: float) -> int:
    """Largest move count k with k * tau < r."""
    k = math.ceil(r / tau - 1e-12) - 1
    return max(k, -1)


def distance_field(
    system: VectorFieldSystem,
    x,
    budget: float = DEFAULT_BUDGET,
    tau: float = DEFAULT_TAU,
    grid: GridSpec | None = None,
    step: float = DEFAULT_STEP,
    targets=None,
    controls: str = "coordinate",
) -> DistanceField:
    """Breadth-first search over flow moves from ``x`` up to cost ``budget``.

    When several states first reach a cell in the same layer, the one
    closest to the cell centre (in cell units) becomes its representative.
    With ``targets`` the search stops as soon as every target cell is reached;
    values of cells reached so far are final.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    x = np.asarray(x, dtype=float)
    if x.shape != (system.n,):
        raise ValueError(f"origin must have {system.n} coordinates")
    grid = grid if grid is not None else default_grid(x)
    if grid.n != system.n:
        raise ValueError("grid dimension does not match the system")
    if grid.size > MAX_CELLS:
        raise ValueError(f"grid has {grid.size} cells, more than the limit {MAX_CELLS}")
    lin0, ok = grid.cell_index(x)
    if not ok[0]:
        raise ValueError(f"origin {x.tolist()} lies outside the grid box")

    moves = np.full(grid.size, -1, dtype=np.int32)
    moves[lin0[0]] = 0
    target_cells = None
    if targets is not None:
        tl, tok = grid.cell_index(np.atleast_2d(targets))
        if not np.all(tok):
            raise ValueError("a target lies outside the grid box")
        target_cells = np.unique(tl)

    fields = control_fields(system, controls)
    frontier = x[None, :].copy()
    max_layers = int(math.floor(budget / tau + 1e-9))
    layers = 0
    done = target_cells is not None and np.all(moves[target_cells] >= 0)
    for layer in range(1, max_layers + 1):
        if done or frontier.shape[0] == 0:
            break
        cand = np.concatenate([flow_many(X, frontier, tau, step, check=False) for X in fields])
        lin, ok = grid.cell_index(cand)
        ok &= ~_blown(cand)
        sel = np.nonzero(ok)[0]
        sel = sel[moves[lin[sel]] < 0]
        if sel.size == 0:
            frontier = cand[:0]
            layers = layer
            break
        offset = (cand[sel] - grid.cell_centers(lin[sel])) / grid.cell
        order = np.lexsort((np.einsum("ij,ij->i", offset, offset), lin[sel]))
        sel = sel[order]
        _, first = np.unique(lin[sel], return_index=True)
        sel = sel[first]
        moves[lin[sel]] = layer
        frontier = cand[sel]
        layers = layer
        if target_cells is not None and np.all(moves[target_cells] >= 0):
            done = True
    return DistanceField(
        system=system,
        origin=x.copy(),
        tau=float(tau),
        grid=grid,
        budget=float(budget),
        step=float(step),
        moves=moves,
        controls=controls,
        layers=layers,
        complete=not (target_cells is not None and done),
    )


def rho_upper(field: DistanceField, y) -> float:
    return field.rho_upper(y)


def regrid(grid: GridSpec, old_origin, new_origin, cell=None) -> GridSpec:
    """Same box extents around ``new_origin``, optionally with a new cell size.

    The position of the origin inside its cell (corner, centre, ...) is kept.
    """
    old_origin = np.asarray(old_origin, dtype=float)
    new_origin = np.asarray(new_origin, dtype=float)
    c_old = np.asarray(grid.cell)
    c_new = c_old if cell is None else np.broadcast_to(np.asarray(cell, dtype=float), c_old.shape)
    lo_off = old_origin - np.asarray(grid.lo)
    hi_off = np.asarray(grid.hi) - old_origin
    phase = np.mod(lo_off / c_old, 1.0)
    phase = np.where(np.isclose(phase, 1.0), 0.0, phase)
    k_lo = np.ceil(lo_off / c_new - phase - 1e-9)
    k_hi = np.ceil(hi_off / c_new + phase - 1e-9)
    lo = new_origin - (k_lo + phase) * c_new
    hi = new_origin + (k_hi - phase) * c_new
    return GridSpec(tuple(lo), tuple(hi), tuple(c_new))


def field_like(field: DistanceField, origin=None, *, tau=None, cell=None, budget=None,
               targets=None) -> DistanceField:
    """A new field with ``field``'s settings, re-rooted and/or refined."""
    origin = field.origin if origin is None else np.asarray(origin, dtype=float)
    grid = regrid(field.grid, field.origin, origin, cell)
    return distance_field(
        field.system,
        origin,
        field.budget if budget is None else budget,
        field.tau if tau is None else tau,
        grid,
        field.step,
        targets=targets,
        controls=field.controls,
    )


def refined(field: DistanceField, factor: float = 2.0) -> DistanceField:
    """The same field with tau and every cell size divided by ``factor``."""
    return field_like(field, tau=field.tau / factor, cell=np.asarray(field.grid.cell) / factor)


def pair_distance(system, x, y, tau=DEFAULT_TAU, grid=None, budget=10.0, step=DEFAULT_STEP,
                  controls="coordinate") -> float:
    """Upper bound on the distance from ``x`` to ``y``, searching only until ``y`` is reached.

    ``grid`` may be a GridSpec or a callable building one from ``x``.
    """
    if callable(grid):
        grid = grid(np.asarray(x, dtype=float))
    grid = grid if grid is not None else default_grid(x)
    f = distance_field(system, x, budget, tau, grid, step, targets=[y], controls=controls)
    return f.rho_upper(y)


# -- Monte Carlo over balls ---------------------------------------------------------


def _chunk_rngs(seed: int, total: int):
    ss = np.random.SeedSequence(seed)
    nchunks = max(1, math.ceil(total / CHUNK))
    for i, child in enumerate(ss.spawn(nchunks)):
        size = min(CHUNK, total - i * CHUNK)
        yield np.random.default_rng(child), size


def _check_radius(field: DistanceField, r: float):
    if r < 0:
        raise ValueError("radius must be non-negative")
    if r > field.budget + 1e-12:
        raise BudgetError(f"radius {r} exceeds the field budget {field.budget}")


@dataclass(frozen=True)
class BallEstimate:
    center: tuple[float, ...]
    radius: float
    volume: float
    samples: int
    hits: int
    seed: int

    def to_json(self) -> dict:
        return {
            "center": list(self.center),
            "radius": self.radius,
            "volume": self.volume,
            "samples": self.samples,
            "hits": self.hits,
            "seed": self.seed,
        }


def _ball_box(field: DistanceField, r: float):
    """Bounding box of the cells with value below ``r``, or None if there are none."""
    cells = field.cells_within(r)
    if cells.size == 0:
        return None
    centers = field.grid.cell_centers(cells)
    half = 0.5 * np.asarray(field.grid.cell)
    lo = np.maximum(centers.min(axis=0) - half, field.grid.lo)
    hi = np.minimum(centers.max(axis=0) + half, field.grid.hi)
    return lo, hi


def ball_volume(field: DistanceField, r: float, samples: int = DEFAULT_SAMPLES,
                seed: int = DEFAULT_SEED) -> BallEstimate:
    """Hit-or-miss estimate of ``|{y : rho_upper(y) < r}|``.

    Draws are uniform in the bounding box of the qualifying cells, which has
    the same expectation as drawing over the whole grid with far less noise.
    """
    _check_radius(field, r)
    box = _ball_box(field, r) if r > 0 else None
    hits, vol = 0, 0.0
    if box is not None and samples:
        lo, hi = box
        top = np.nextafter(np.asarray(field.grid.hi), -np.inf)
        for rng, size in _chunk_rngs(seed, samples):
            pts = np.minimum(rng.uniform(lo, hi, size=(size, field.grid.n)), top)
            hits += int(np.count_nonzero(field.rho_upper_many(pts) < r))
        vol = float(np.prod(hi - lo)) * hits / samples
    return BallEstimate(tuple(field.origin.tolist()), float(r), vol, int(samples), hits, int(seed))


#: rejection draws allowed per requested point, on top of a fixed allowance
ATTEMPTS_PER_POINT = 1000
ATTEMPTS_BASE = 100_000


def ball_sample(field: DistanceField, r: float, count: int, seed: int = DEFAULT_SEED) -> np.ndarray:
    """``count`` reproducible uniform points with ``rho_upper < r``.

    Draws are made in the bounding box of the qualifying cells and rejected
    outside the ball; at most ``ATTEMPTS_BASE + ATTEMPTS_PER_POINT * count``
    draws are made before :class:`SamplingError` is raised.
    """
    _check_radius(field, r)
    if count == 0:
        return np.zeros((0, field.grid.n))
    box = _ball_box(field, r)
    if box is None:
        raise SamplingError(f"no cell has value below r={r}")
    lo, hi = box
    cap = ATTEMPTS_BASE + ATTEMPTS_PER_POINT * count
    out, drawn = [], 0
    got = 0
    for rng, size in _chunk_rngs(seed, cap):
        pts = rng.uniform(lo, hi, size=(size, field.grid.n))
        # uniform draws can land exactly on hi; keep them in the box
        pts = np.minimum(pts, np.nextafter(np.asarray(field.grid.hi), -np.inf))
        keep = pts[field.rho_upper_many(pts) < r]
        out.append(keep)
        got += keep.shape[0]
        drawn += size
        if got >= count:
            return np.concatenate(out)[:count]
    raise SamplingError(
        f"only {got} of {count} points found in B(r={r}) after {drawn} draws"
    )


def doubling_ratio(field: DistanceField, r: float, samples: int = DEFAULT_SAMPLES,
                   seed: int = DEFAULT_SEED) -> float:
    """``|B(2r)| / |B(r)|`` with both volumes drawn from the same samples."""
    small = ball_volume(field, r, samples, seed)
    big = ball_volume(field, 2 * r, samples, seed)
    if small.hits == 0:
        raise ValueError(f"ball of radius {r} has zero estimated volume")
    return big.volume / small.volume


def lambda_volume_ratio(basis: CommutatorBasis, field: DistanceField, x, delta: float,
                        samples: int = DEFAULT_SAMPLES, seed: int = DEFAULT_SEED) -> float:
    """``|B(x, delta)| / Lambda(x, delta)``."""
    lam = capital_lambda(basis, x, delta)
    if lam == 0:
        raise ValueError("Lambda vanishes: the Hormander condition fails at x")
    return ball_volume(field, delta, samples, seed).volume / lam


# -- ball sandwich ------------------------------------------------------------------


def sample_box_norm_ball(basis: CommutatorBasis, I, radius: float, count: int, seed: int):
    """Uniform draws of ``h`` with ``|h_j| < radius ** d(Y_{i_j})``, i.e. ``||h||_I < radius``."""
    rng = np.random.default_rng(seed)
    bounds = np.array([radius ** basis.degree(i) for i in I])
    return rng.uniform(-bounds, bounds, size=(count, len(I)))


def sandwich_check(
    basis: CommutatorBasis,
    field: DistanceField,
    I,
    x,
    delta: float,
    image_samples: int = 500,
    b_grid: Sequence[float] = tuple(np.round(np.arange(1.0, 0.0, -0.05), 2)),
    resolution: float | None = None,
    a: float = 1.0,
    slack: float = 0.05,
    ball_points: int = 200,
    coverage_samples: int = 20_000,
    seed: int = DEFAULT_SEED,
) -> dict:
    """Outer and inner inclusion checks for the image of ``E_I`` around ``x``.

    Outer: every image point ``E_I(x, h)``, ``||h||_I < a delta``, must have
    ``rho_upper <= N_bar delta (1 + slack)``. Inner: the largest ``b`` in
    ``b_grid`` such that every sampled point of ``B(x, b delta)`` lies within
    ``resolution`` (default ``delta / 20``) of the sampled image cloud.
    """
    x = np.asarray(x, dtype=float)
    if not np.allclose(x, field.origin):
        raise ValueError("the distance field must be rooted at x")
    I = basis.check_multiindex(I)
    eps = delta / 20 if resolution is None else float(resolution)
    nbar = N_bar(basis)
    bound = nbar * delta * (1 + slack)

    H = sample_box_norm_ball(basis, I, a * delta, image_samples, seed)
    H[0] = 0.0  # h = 0 maps to x itself
    images = E_map_many(basis, I, x, H, field.step)
    inside = field.grid.contains(images)
    rho = np.full(images.shape[0], np.inf)
    rho[inside] = field.rho_upper_many(images[inside])
    unreached = ~np.isfinite(rho)
    if np.any(unreached) and field.budget < bound:
        raise BudgetError(
            f"{int(unreached.sum())} image points unreached within budget {field.budget} "
            f"< N_bar*delta*(1+slack) = {bound}"
        )
    outer_ok = rho <= bound
    outer_rate = float(np.mean(outer_ok))

    # denser image cloud for the coverage test; reuses the outer samples first
    Hc = sample_box_norm_ball(basis, I, a * delta, coverage_samples, seed + 1)
    cloud = np.concatenate([images, E_map_many(basis, I, x, Hc, field.step)])
    tree = cKDTree(cloud)
    b_hat, per_b = 0.0, []
    for b in sorted(b_grid, reverse=True):
        r = b * delta
        if r > field.budget:
            continue
        try:
            pts = ball_sample(field, r, ball_points, seed + 2)
        except SamplingError:
            per_b.append({"b": float(b), "covered_fraction": None})
            continue
        dist, _ = tree.query(pts)
        frac = float(np.mean(dist <= eps))
        per_b.append({"b": float(b), "covered_fraction": frac, "max_gap": float(dist.max())})
        if frac == 1.0:
            b_hat = float(b)
            break
    return {
        "I": list(I),
        "delta": delta,
        "a": a,
        "N_bar": nbar,
        "outer_bound": bound,
        "outer_pass_rate": outer_rate,
        "outer_max_rho": float(np.max(rho)),
        "outer_violations": images[~outer_ok].tolist(),
        "image_samples": int(image_samples),
        "coverage_samples": int(coverage_samples),
        "resolution": eps,
        "inner_trials": per_b,
        "b_hat": b_hat,
        "verdict": "pass" if outer_rate == 1.0 and b_hat > 0 else "fail",
    }


# -- Lemma-type comparison of two families --------------------------------------------


def modified_family(system: VectorFieldSystem, i1: int = 1, j1: int = 2) -> VectorFieldSystem:
    """``Y_{i1} = X_{i1} + X_{j1}`` and ``Y_j = X_j`` otherwise."""
    if i1 == j1:
        raise ValueError("i1 and j1 must differ")
    fields = list(system.fields)
    fields[i1 - 1] = system.field(i1) + system.field(j1)
    return VectorFieldSystem(system.n, tuple(fields), f"{system.name}-mod{i1}{j1}")


def pair_distances(system, pairs, tau=DEFAULT_TAU, grid=None, budget=10.0, step=DEFAULT_STEP,
                   controls="coordinate"):
    return np.array(
        [pair_distance(system, x, y, tau, grid, budget, step, controls) for x, y in pairs]
    )


def distance_equivalence_check(
    system: VectorFieldSystem,
    pairs,
    tau: float = DEFAULT_TAU,
    grid: GridSpec | None = None,
    budget: float = 10.0,
    i1: int = 1,
    j1: int = 2,
    step: float = DEFAULT_STEP,
    bounds=(0.2, 5.0),
    controls: str = "cube",
) -> dict:
    """Ratios ``d1 / d`` between the modified family and the original one.

    Both estimators bound rho from above; the report cannot separate rho from d.
    """
    other = modified_family(system, i1, j1)
    d0 = pair_distances(system, pairs, tau, grid, budget, step, controls)
    d1 = pair_distances(other, pairs, tau, grid, budget, step, controls)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratios = np.where((d0 == 0) & (d1 == 0), 1.0, d1 / d0)
    unreached = int(np.count_nonzero(~np.isfinite(d0) | ~np.isfinite(d1)))
    finite = ratios[np.isfinite(ratios)]
    ok = unreached == 0 and bool(np.all((finite >= bounds[0]) & (finite <= bounds[1])))
    return {
        "pairs": len(pairs),
        "modified": {"i1": i1, "j1": j1},
        "ratios": ratios.tolist(),
        "min_ratio": float(finite.min()) if finite.size else None,
        "max_ratio": float(finite.max()) if finite.size else None,
        "bounds": list(bounds),
        "unreached": unreached,
        "controls": controls,
        "note": "both estimates bound rho from above; rho >= d is not separately computable",
        "verdict": "pass" if ok else "fail",
    }
