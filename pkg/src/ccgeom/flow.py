"""Fixed-step RK4 flows of polynomial vector fields and flow programs.

A :class:`FlowProgram` lists elementary moves in *execution order*: the first
step is applied first. Product formulas such as ``exp(-aS2)exp(-aS1)exp(aS2)exp(aS1)``
compose from the right, so their rightmost factor is the first step here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .vecfield import VectorField, VectorFieldSystem

DEFAULT_STEP = 1e-2
BLOWUP = 1e12


class FlowBlowUp(RuntimeError):
    """A trajectory left every bounded set (state magnitude above 1e12 or non-finite)."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


def _check_step(step):
    if not step > 0:
        raise ValueError(f"integration step must be positive, got {step}")


def _rk4_masked(F, pts, dt, active):
    """One RK4 step where rows with ``active == False`` stay put."""
    k1 = F(pts)
    k2 = F(pts + (0.5 * dt)[:, None] * k1)
    k3 = F(pts + (0.5 * dt)[:, None] * k2)
    k4 = F(pts + dt[:, None] * k3)
    new = pts + (dt / 6.0)[:, None] * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return np.where(active[:, None], new, pts)


def flow_many(X: VectorField, points, times, step: float = DEFAULT_STEP, check: bool = True):
    """Flow each row of ``points`` along ``X`` for its own signed time.

    Row ``i`` takes ``ceil(|t_i| / step)`` uniform RK4 steps, exactly as the
    single-point :func:`flow` does.
    """
    _check_step(step)
    pts = np.array(points, dtype=float, copy=True)
    if pts.ndim != 2:
        raise ValueError("points must have shape (k, n)")
    t = np.broadcast_to(np.asarray(times, dtype=float), (pts.shape[0],))
    if not np.all(np.isfinite(t)):
        raise ValueError("flow times must be finite")
    nsteps = np.ceil(np.abs(t) / step).astype(np.int64)
    total = int(nsteps.max(initial=0))
    if total == 0:
        return pts
    dt = np.where(nsteps > 0, t / np.maximum(nsteps, 1), 0.0)
    F = X.eval_many
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(total):
            pts = _rk4_masked(F, pts, dt, nsteps > i)
    if check:
        _raise_if_blown(pts)
    return pts


def _blown(pts) -> np.ndarray:
    return ~np.all(np.isfinite(pts) & (np.abs(pts) <= BLOWUP), axis=1)


def _raise_if_blown(pts, stage=None):
    bad = _blown(pts)
    if np.any(bad):
        where = "" if stage is None else f" at stage {stage}"
        raise FlowBlowUp(f"flow blow-up{where}: state magnitude exceeded {BLOWUP:g}", stage)


def flow(X: VectorField, x, t: float, step: float = DEFAULT_STEP) -> np.ndarray:
    """``Phi^X(x, t)`` by classical RK4 with ``ceil(|t|/step)`` uniform steps."""
    x = np.asarray(x, dtype=float)
    if x.shape != (X.n,):
        raise ValueError(f"point must have {X.n} coordinates")
    return flow_many(X, x[None, :], t, step)[0]


def jacobian_field(X: VectorField):
    """Polynomial matrix ``dX_k/dx_j`` as a list of rows of polynomials."""
    return [[p.partial(j) for j in range(X.n)] for p in X.components]


def flow_jacobian(X: VectorField, x, t: float, step: float = DEFAULT_STEP):
    """``D Phi^X_t(x)`` from the variational equation, and its determinant."""
    _check_step(step)
    n = X.n
    x = np.asarray(x, dtype=float)
    DX = jacobian_field(X)

    def rhs(state):
        p, J = state[:n], state[n:].reshape(n, n)
        A = np.array([[DX[k][j].eval(p) for j in range(n)] for k in range(n)])
        return np.concatenate([X(p), (A @ J).ravel()])

    state = np.concatenate([x, np.eye(n).ravel()])
    nsteps = math.ceil(abs(t) / step)
    if nsteps:
        dt = t / nsteps
        for _ in range(nsteps):
            k1 = rhs(state)
            k2 = rhs(state + 0.5 * dt * k1)
            k3 = rhs(state + 0.5 * dt * k2)
            k4 = rhs(state + dt * k3)
            state = state + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(state)) or np.max(np.abs(state)) > BLOWUP:
                raise FlowBlowUp("variational flow blow-up")
    J = state[n:].reshape(n, n)
    return J, float(np.linalg.det(J))


# -- programs ----------------------------------------------------------------


@dataclass(frozen=True)
class Step:
    field: int  # 1-based index into the system
    sign: int
    t: float

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError(f"step sign must be +1 or -1, got {self.sign}")
        if not (math.isfinite(self.t) and self.t >= 0):
            raise ValueError(f"step duration must be finite and non-negative, got {self.t}")

    @property
    def signed_time(self) -> float:
        return self.sign * self.t


@dataclass(frozen=True)
class FlowProgram:
    steps: tuple[Step, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def __len__(self):
        return len(self.steps)

    def __add__(self, other: "FlowProgram") -> "FlowProgram":
        return FlowProgram(self.steps + other.steps)

    def inverse(self) -> "FlowProgram":
        return FlowProgram(tuple(Step(s.field, -s.sign, s.t) for s in reversed(self.steps)))

    def validate(self, system: VectorFieldSystem) -> None:
        for i, s in enumerate(self.steps):
            if not 1 <= s.field <= system.m:
                raise ValueError(f"step {i}: field index {s.field} outside 1..{system.m}")

    @classmethod
    def from_signed(cls, fields: Sequence[int], times: Sequence[float]) -> "FlowProgram":
        return cls(
            tuple(Step(int(f), 1 if t >= 0 else -1, abs(float(t))) for f, t in zip(fields, times))
        )

    def to_json(self) -> list[dict]:
        return [{"field": s.field, "sign": s.sign, "t": s.t} for s in self.steps]

    @classmethod
    def from_json(cls, data) -> "FlowProgram":
        if isinstance(data, str):
            data = json.loads(data)
        try:
            return cls(tuple(Step(int(d["field"]), int(d["sign"]), float(d["t"])) for d in data))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed flow program: {exc}") from None


def run_program(system: VectorFieldSystem, program: FlowProgram, x, step: float = DEFAULT_STEP):
    """Apply the steps of ``program`` to ``x`` one after another."""
    program.validate(system)
    x = np.asarray(x, dtype=float)
    if x.shape != (system.n,):
        raise ValueError(f"point must have {system.n} coordinates")
    pts = x[None, :].copy()
    for i, s in enumerate(program.steps):
        pts = flow_many(system.field(s.field), pts, s.signed_time, step, check=False)
        _raise_if_blown(pts, stage=i)
    return pts[0]


def run_sequence_many(system: VectorFieldSystem, fields: Sequence[int], times, points,
                      step: float = DEFAULT_STEP):
    """Batched program run: row ``i`` applies ``fields[j]`` for signed time ``times[i, j]``."""
    pts = np.array(points, dtype=float, copy=True)
    times = np.asarray(times, dtype=float).reshape(pts.shape[0], len(fields))
    for j, f in enumerate(fields):
        col = times[:, j]
        if np.any(col != 0):
            pts = flow_many(system.field(f), pts, col, step, check=False)
            _raise_if_blown(pts, stage=j)
    return pts
