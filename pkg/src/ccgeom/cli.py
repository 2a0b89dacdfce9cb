"""Command line front end: JSON config in, JSON/CSV reports and a run manifest out.

Config layout (every key except ``system`` is optional)::

    {
      "system": "heisenberg1"            # or {"n": 3, "fields": [...]}
      "basis": {"r": 2, "sample_points": [[0, 0, 0]]},
      "distance": {"tau": 0.05, "cell": 0.02, "budget": 2.0, "half_width": 2.0,
                   "controls": "coordinate", "centered": false, "step": 0.01},
      "experiments": [{"command": "convexity", "parameters": {...}, "seed": 42}],
      "output": {"dir": "ccgeom-out", "csv": true}
    }

Block parameters may override any ``distance`` key for that block.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .approx import N_length, approx_exp_program, E_map, N_bar
from .ccdist import (
    CONTROLS,
    DEFAULT_BUDGET,
    DEFAULT_CELL,
    DEFAULT_HALF_WIDTH,
    DEFAULT_SAMPLES,
    DEFAULT_SEED,
    DEFAULT_TAU,
    DistanceField,
    GridSpec,
    ball_volume,
    default_grid,
    distance_field,
    doubling_ratio,
    sandwich_check,
)
from .convexity import (
    ConvexityReport,
    EstimateReport,
    ScalarFunction,
    _clean,
    gradient_ratio,
    lambda_ratio,
    lipschitz_ratio,
    lower_bound_check,
    sublaplacian_check,
    sup_mean_grid,
    xconvexity_test,
)
from .flow import DEFAULT_STEP
from .vecfield import (
    BUILTIN_STEPS,
    BUILTINS,
    CommutatorBasis,
    HormanderError,
    VectorFieldSystem,
    builtin_system,
    capital_lambda,
    hormander_step,
    lambda_I,
    select_multiindex,
    spanning_basis,
)

COMMANDS = (
    "hormander-check",
    "basis",
    "lambda",
    "approx-exp",
    "distance-field",
    "ball",
    "doubling",
    "sandwich",
    "convexity",
    "lower-bound",
    "lipschitz",
    "estimates",
    "sublaplacian",
)
EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_ERROR = 0, 1, 2, 3
DEFAULT_OUT = "ccgeom-out"
DISTANCE_KEYS = ("tau", "cell", "budget", "half_width", "controls", "centered", "step")


class ConfigError(ValueError):
    """Schema violation; the message starts with the offending field path."""


# -- config ---------------------------------------------------------------------------


@dataclass
class Experiment:
    command: str
    parameters: dict
    seed: int
    name: str

    def to_json(self) -> dict:
        return {"command": self.command, "parameters": self.parameters, "seed": self.seed,
                "name": self.name}


@dataclass
class Config:
    system: VectorFieldSystem
    system_source: object  # builtin name or inline JSON, echoed as given
    basis: dict
    distance: dict
    experiments: list
    output: dict
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def m(self) -> int:
        return self.system.m

    @property
    def n(self) -> int:
        return self.system.n

    def to_json(self) -> dict:
        return {
            "system": self.system_source,
            "basis": self.basis,
            "distance": self.distance,
            "experiments": [e.to_json() for e in self.experiments],
            "output": self.output,
        }

    def hash(self) -> str:
        text = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _require(cond, path, message):
    if not cond:
        raise ConfigError(f"{path}: {message}")


def _number(value, path, positive=False):
    _require(isinstance(value, (int, float)) and not isinstance(value, bool), path,
             f"expected a number, got {value!r}")
    _require(math.isfinite(value), path, "must be finite")
    if positive:
        _require(value > 0, path, "must be positive")
    return value


def _vector(value, n, path, positive=False):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return _number(value, path, positive)
    _require(isinstance(value, list) and len(value) == n, path,
             f"expected a number or a list of {n} numbers")
    return [_number(v, f"{path}[{i}]", positive) for i, v in enumerate(value)]


def _system(value):
    if isinstance(value, str):
        _require(value in BUILTINS, "system",
                 f"unknown builtin {value!r}; choose from {sorted(BUILTINS)}")
        return builtin_system(value)
    _require(isinstance(value, dict), "system", "expected a builtin name or an inline system")
    try:
        return VectorFieldSystem.from_json(value, value.get("name", "inline"))
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"system: {exc}") from None


def parse_config(text) -> Config:
    """Validate a JSON config (text or parsed object) and fill defaults."""
    if isinstance(text, (str, bytes)):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"<root>: malformed JSON ({exc})") from None
    else:
        data = text
    _require(isinstance(data, dict), "<root>", "config must be a JSON object")
    known = {"system", "basis", "distance", "experiments", "output"}
    extra = sorted(set(data) - known)
    _require(not extra, extra[0] if extra else "", "unknown key")
    _require("system" in data, "system", "missing (exactly one system source is required)")
    system = _system(data["system"])
    n = system.n

    basis = dict(data.get("basis", {}))
    _require(isinstance(basis, dict), "basis", "expected an object")
    default_r = BUILTIN_STEPS.get(data["system"], 2) if isinstance(data["system"], str) else 2
    basis.setdefault("r", default_r)
    _require(isinstance(basis["r"], int) and basis["r"] >= 1, "basis.r",
             "must be a positive integer")
    basis.setdefault("sample_points", [[0.0] * n])
    _require(isinstance(basis["sample_points"], list) and basis["sample_points"],
             "basis.sample_points", "expected a non-empty list of points")
    for i, p in enumerate(basis["sample_points"]):
        _vector(p, n, f"basis.sample_points[{i}]")
        _require(isinstance(p, list), f"basis.sample_points[{i}]", "expected a point")

    distance = _distance(data.get("distance", {}), n, "distance", fill=True)

    exps = data.get("experiments", [])
    _require(isinstance(exps, list), "experiments", "expected a list")
    experiments, names = [], set()
    for i, e in enumerate(exps):
        path = f"experiments[{i}]"
        _require(isinstance(e, dict), path, "expected an object")
        bad = sorted(set(e) - {"command", "parameters", "seed", "name"})
        _require(not bad, f"{path}.{bad[0]}" if bad else path, "unknown key")
        cmd = e.get("command")
        _require(cmd in COMMANDS, f"{path}.command",
                 f"unknown command {cmd!r}; choose from {list(COMMANDS)}")
        params = e.get("parameters", {})
        _require(isinstance(params, dict), f"{path}.parameters", "expected an object")
        _distance({k: v for k, v in params.items() if k in DISTANCE_KEYS}, n,
                  f"{path}.parameters", fill=False)
        seed = e.get("seed", DEFAULT_SEED)
        _require(isinstance(seed, int) and not isinstance(seed, bool) and seed >= 0,
                 f"{path}.seed", "must be a non-negative integer")
        name = e.get("name", f"{i:02d}-{cmd}")
        _require(isinstance(name, str) and name and "/" not in name, f"{path}.name",
                 "must be a non-empty string without '/'")
        _require(name not in names, f"{path}.name", f"duplicate block name {name!r}")
        names.add(name)
        experiments.append(Experiment(cmd, params, seed, name))

    output = dict(data.get("output", {}))
    _require(isinstance(output, dict), "output", "expected an object")
    output.setdefault("dir", DEFAULT_OUT)
    output.setdefault("csv", True)
    _require(isinstance(output["dir"], str), "output.dir", "expected a path string")
    _require(isinstance(output["csv"], bool), "output.csv", "expected true or false")
    return Config(system, data["system"], basis, distance, experiments, output, data)


def _distance(d, n, path, fill):
    _require(isinstance(d, dict), path, "expected an object")
    d = dict(d)
    if fill:
        bad = sorted(set(d) - set(DISTANCE_KEYS))
        _require(not bad, f"{path}.{bad[0]}" if bad else path, "unknown key")
        d.setdefault("tau", DEFAULT_TAU)
        d.setdefault("cell", DEFAULT_CELL)
        d.setdefault("budget", DEFAULT_BUDGET)
        d.setdefault("half_width", DEFAULT_HALF_WIDTH)
        d.setdefault("controls", "coordinate")
        d.setdefault("centered", False)
        d.setdefault("step", DEFAULT_STEP)
    for key in ("tau", "budget", "step"):
        if key in d:
            _number(d[key], f"{path}.{key}", positive=True)
    for key in ("cell", "half_width"):
        if key in d:
            _vector(d[key], n, f"{path}.{key}", positive=True)
    if "controls" in d:
        _require(d["controls"] in CONTROLS, f"{path}.controls", f"choose from {list(CONTROLS)}")
    if "centered" in d:
        _require(isinstance(d["centered"], bool), f"{path}.centered", "expected true or false")
    return d


# -- reports and export -------------------------------------------------------------


def _cell(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(_cell(x) for x in v)
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def export_csv(report, path) -> Path:
    """Write the tabular payload of ``report`` as UTF-8 CSV with a header row.

    ``report`` may be anything with ``csv_table()`` returning ``(header, rows)``,
    a :class:`DistanceField` (columns ``x1..xn, value``) or a ``(header, rows)`` pair.
    """
    if isinstance(report, DistanceField):
        header, rows = distance_field_table(report)
    elif hasattr(report, "csv_table"):
        header, rows = report.csv_table()
    else:
        header, rows = report
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def distance_field_table(f: DistanceField):
    centers, vals = f.to_csv_rows()
    header = [f"x{i + 1}" for i in range(f.grid.n)] + ["value"]
    return header, [list(c) + [v] for c, v in zip(centers.tolist(), vals.tolist())]


def _write_atomic(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


# -- blocks ---------------------------------------------------------------------------


class FieldCache:
    """In-run distance fields keyed by (system, origin, tau, grid, budget, controls, step)."""

    def __init__(self):
        self._fields = {}
        self._lock = threading.Lock()

    def get(self, system, origin, tau, grid, budget, controls, step):
        key = (system.signature(), tuple(map(float, origin)), float(tau),
               json.dumps(grid.to_json(), sort_keys=True), float(budget), controls, float(step))
        with self._lock:
            if key in self._fields:
                return self._fields[key], True
            f = distance_field(system, origin, budget, tau, grid, step, controls=controls)
            self._fields[key] = f
            return f, False


@dataclass
class BlockResult:
    report: dict
    verdict: str
    tables: dict = field(default_factory=dict)  # suffix -> csv payload
    cache_hits: int = 0
    cache_misses: int = 0


class Context:
    def __init__(self, config: Config, cache: FieldCache):
        self.config = config
        self.system = config.system
        self.cache = cache
        self._basis = None
        self._lock = threading.Lock()

    @property
    def basis(self) -> CommutatorBasis:
        with self._lock:
            if self._basis is None:
                b = self.config.basis
                pts = [np.asarray(p, dtype=float) for p in b["sample_points"]]
                self._basis = spanning_basis(self.system, pts, b["r"])
            return self._basis


def _p(params, key, default=None, required=False):
    if key in params:
        return params[key]
    if required:
        raise ConfigError(f"parameters.{key}: missing")
    return default


def _origin(ctx, params, key="origin"):
    x = _p(params, key, [0.0] * ctx.system.n)
    x = np.asarray(x, dtype=float)
    if x.shape != (ctx.system.n,):
        raise ConfigError(f"parameters.{key}: expected {ctx.system.n} coordinates")
    return x


def _field(ctx, params, origin, result: BlockResult, budget=None):
    d = dict(ctx.config.distance)
    d.update({k: v for k, v in params.items() if k in DISTANCE_KEYS})
    if d["centered"]:
        grid = GridSpec.centered(origin, d["half_width"], d["cell"])
    else:
        grid = default_grid(origin, d["half_width"], d["cell"])
    f, hit = ctx.cache.get(ctx.system, origin, d["tau"], grid,
                           d["budget"] if budget is None else budget, d["controls"], d["step"])
    if hit:
        result.cache_hits += 1
    else:
        result.cache_misses += 1
    return f


def _verdict(ok) -> str:
    return "pass" if ok else "fail"


def block_hormander(ctx, params, seed, res):
    points = _p(params, "points", ctx.config.basis["sample_points"])
    r_max = _p(params, "r_max", ctx.config.basis["r"])
    rows, ok = [], True
    for p in points:
        try:
            rows.append({"point": p, "step": hormander_step(ctx.system, p, r_max), "ok": True})
        except HormanderError as exc:
            ok = False
            rows.append({"point": p, "step": None, "ok": False, "rank": exc.rank})
    res.tables["steps"] = (["point", "step"], [[r["point"], r["step"]] for r in rows])
    return {"r_max": r_max, "points": rows}, _verdict(ok)


def block_basis(ctx, params, seed, res):
    return ctx.basis.to_json(), "pass"


def block_lambda(ctx, params, seed, res):
    x = _origin(ctx, params, "x")
    deltas = _p(params, "deltas", [_p(params, "delta", 0.1)])
    rows = []
    for delta in deltas:
        I = select_multiindex(ctx.basis, x, delta)
        rows.append({"delta": delta, "Lambda": capital_lambda(ctx.basis, x, delta),
                     "I": list(I), "lambda_I": lambda_I(ctx.basis, I, x),
                     "N": N_length(ctx.basis, I).to_json()})
    res.tables["lambda"] = (["delta", "Lambda", "I", "lambda_I"],
                            [[r["delta"], r["Lambda"], r["I"], r["lambda_I"]] for r in rows])
    return {"x": x.tolist(), "N_bar": N_bar(ctx.basis), "rows": rows}, "pass"


def block_approx_exp(ctx, params, seed, res):
    k = _p(params, "k", required=True)
    h = _p(params, "h", required=True)
    spec = approx_exp_program(ctx.basis, k, h)
    out = spec.to_json()
    if "x" in params:
        x = _origin(ctx, params, "x")
        I = list(_p(params, "I", [k] + [j for j in range(1, ctx.basis.q + 1) if j != k]))[
            : ctx.system.n]
        hv = [h] + [0.0] * (ctx.system.n - 1)
        out["x"] = x.tolist()
        out["endpoint"] = E_map(ctx.basis, I, x, hv, ctx.config.distance["step"]).tolist()
    return out, "pass"


def block_distance_field(ctx, params, seed, res):
    x = _origin(ctx, params)
    f = _field(ctx, params, x, res)
    out = f.summary()
    targets = _p(params, "targets", [])
    out["targets"] = [{"y": y, "rho_upper": f.rho_upper(y)} for y in targets]
    res.tables["field"] = f
    return out, "pass"


def block_ball(ctx, params, seed, res):
    x = _origin(ctx, params)
    f = _field(ctx, params, x, res)
    radii = _p(params, "radii", [_p(params, "r", 1.0)])
    samples = _p(params, "samples", DEFAULT_SAMPLES)
    est = [ball_volume(f, r, samples, seed).to_json() for r in radii]
    res.tables["volumes"] = (["r", "volume", "hits", "samples"],
                             [[e["radius"], e["volume"], e["hits"], e["samples"]] for e in est])
    return {"field": f.summary(), "balls": est}, _verdict(all(e["hits"] > 0 for e in est))


def block_doubling(ctx, params, seed, res):
    x = _origin(ctx, params)
    f = _field(ctx, params, x, res)
    r = _p(params, "r", 0.5)
    ratio = doubling_ratio(f, r, _p(params, "samples", DEFAULT_SAMPLES), seed)
    window = _p(params, "range")
    ok = math.isfinite(ratio) and (window is None or window[0] <= ratio <= window[1])
    return {"field": f.summary(), "r": r, "ratio": ratio, "range": window}, _verdict(ok)


def block_sandwich(ctx, params, seed, res):
    x = _origin(ctx, params, "x")
    delta = _p(params, "delta", 0.2)
    f = _field(ctx, params, x, res)
    I = _p(params, "I") or list(select_multiindex(ctx.basis, x, delta))
    kw = {k: params[k] for k in ("image_samples", "a", "slack", "ball_points",
                                 "coverage_samples", "resolution") if k in params}
    out = sandwich_check(ctx.basis, f, I, x, delta, seed=seed, **kw)
    return out, out["verdict"]


def _fn(params, key="u"):
    u = _p(params, key, required=True)
    try:
        return ScalarFunction.coerce(u)
    except (ValueError, SyntaxError) as exc:
        raise ConfigError(f"parameters.{key}: {exc}") from None


def block_convexity(ctx, params, seed, res):
    u = _fn(params)
    n = ctx.system.n
    box = _p(params, "box", [[-1.0] * n, [1.0] * n])
    rep: ConvexityReport = xconvexity_test(
        ctx.system, u, box, _p(params, "n_points", 50), _p(params, "n_dirs", 20),
        _p(params, "t_list", [0.05, 0.1, 0.2]), seed, _p(params, "tol", 1e-7),
        ctx.config.distance["step"],
    )
    res.tables["witnesses"] = rep
    return {"u": u.to_json(), **rep.to_json()}, rep.verdict


def block_lower_bound(ctx, params, seed, res):
    u = _fn(params)
    points = _p(params, "points", [_p(params, "x", [0.0] * ctx.system.n)])
    deltas = _p(params, "deltas", [_p(params, "delta", 0.01)] * len(points))
    if len(deltas) != len(points):
        raise ConfigError("parameters.deltas: needs one delta per point")
    b_hat = _p(params, "b_hat", 0.5)
    nbar = N_bar(ctx.basis)
    reports = []
    for i, (p, d) in enumerate(zip(points, deltas)):
        x = np.asarray(p, dtype=float)
        f = _field(ctx, params, x, res, budget=_p(params, "budget", nbar * d))
        reports.append(lower_bound_check(ctx.system, ctx.basis, u, f, x, d, b_hat,
                                         _p(params, "samples", 2000), seed + i))
    rows = [r.data[0] for r in reports]
    res.tables["NxB"] = (list(rows[0].keys()) if rows else ["x"],
                         [list(r.values()) for r in rows])
    ok = all(r.passed for r in reports)
    return {"u": u.to_json(), "checks": [r.to_json() for r in reports]}, _verdict(ok)


def block_lipschitz(ctx, params, seed, res):
    u = _fn(params)
    pairs = _p(params, "pairs", required=True)
    r = _p(params, "r", 0.5)
    x = np.asarray(pairs[0][0], dtype=float)
    f = _field(ctx, params, x, res)
    rep = lipschitz_ratio(ctx.system, u, f, pairs, r, _p(params, "samples", 1000), seed)
    res.tables["pairs"] = rep
    return rep.to_json(), rep.verdict


def block_estimates(ctx, params, seed, res):
    u = _fn(params)
    x = _origin(ctx, params, "x")
    f = _field(ctx, params, x, res)
    samples = _p(params, "samples", 2000)
    out, ok = {"u": u.to_json()}, True
    r_list = _p(params, "r_list", [0.05, 0.1, 0.15, 0.2])
    rep = sup_mean_grid(u, f, x, r_list, samples, seed, _p(params, "bound"))
    out["supestCC"] = rep.to_json()
    res.tables["sup_mean"] = rep
    ok &= rep.passed
    if "lambda_list" in params:
        rep = lambda_ratio(u, f, x, _p(params, "lambda_r", r_list[0]), params["lambda_list"],
                           samples, seed)
        out["estlamb"] = rep.to_json()
        res.tables["lambda"] = rep
        ok &= rep.passed
    if "gradient_r" in params:
        rep = gradient_ratio(u, f, x, params["gradient_r"], n_pairs=_p(params, "n_pairs", 10),
                             samples=samples, seed=seed)
        out["gradestCC"] = rep.to_json()
        res.tables["gradient"] = rep
        ok &= rep.passed
    return out, _verdict(ok)


def block_sublaplacian(ctx, params, seed, res):
    u = _fn(params)
    x0 = _origin(ctx, params, "x0")
    delta = _p(params, "delta", 0.2)
    f = None
    if any(k in params for k in DISTANCE_KEYS):
        f = _field(ctx, params, x0, res, budget=max(delta, params.get("budget", delta)))
    rep = sublaplacian_check(ctx.system, u, x0, delta, _p(params, "n_points", 50),
                             _p(params, "t", 1e-3), seed, f, _p(params, "tol", 1e-6),
                             ctx.config.distance["step"])
    res.tables["points"] = rep
    return rep.to_json(), rep.verdict


BLOCKS = {
    "hormander-check": block_hormander,
    "basis": block_basis,
    "lambda": block_lambda,
    "approx-exp": block_approx_exp,
    "distance-field": block_distance_field,
    "ball": block_ball,
    "doubling": block_doubling,
    "sandwich": block_sandwich,
    "convexity": block_convexity,
    "lower-bound": block_lower_bound,
    "lipschitz": block_lipschitz,
    "estimates": block_estimates,
    "sublaplacian": block_sublaplacian,
}
assert set(BLOCKS) == set(COMMANDS)


# -- run ---------------------------------------------------------------------------------


@dataclass
class RunManifest:
    config_hash: str
    version: str
    blocks: list  # one entry per experiment, config order
    files: list
    exit_code: int

    def to_json(self) -> dict:
        return {"config_hash": self.config_hash, "version": self.version,
                "blocks": self.blocks, "files": self.files, "exit_code": self.exit_code}


def _exit_code(statuses) -> int:
    if any(s == "error" for s in statuses):
        return EXIT_ERROR
    if any(s == "fail" for s in statuses):
        return EXIT_FAIL
    return EXIT_PASS


def _run_block(ctx, exp: Experiment, out_dir: Path, write_csv: bool) -> dict:
    start = time.perf_counter()
    res = BlockResult({}, "error")
    entry = {"name": exp.name, "command": exp.command, "seed": exp.seed, "files": []}
    try:
        report, verdict = BLOCKS[exp.command](ctx, exp.parameters, exp.seed, res)
        status = verdict
        body = {"command": exp.command, "name": exp.name, "seed": exp.seed,
                "parameters": exp.parameters, "verdict": verdict, "report": report}
    except ConfigError as exc:
        status, body = "error", {"command": exp.command, "name": exp.name, "verdict": "error",
                                 "error": f"experiments[{exp.name}].{exc}"}
    except Exception as exc:  # recorded per block; the run goes on
        status, body = "error", {"command": exp.command, "name": exp.name, "verdict": "error",
                                 "error": f"{type(exc).__name__}: {exc}"}
    path = out_dir / f"{exp.name}.json"
    _write_atomic(path, dump_json(body))
    entry["files"].append(str(path))
    if write_csv and status != "error":
        for suffix, table in res.tables.items():
            cpath = out_dir / f"{exp.name}.{suffix}.csv"
            tmp = cpath.with_name(f".{cpath.name}.tmp")
            export_csv(table, tmp)
            os.replace(tmp, cpath)
            entry["files"].append(str(cpath))
    entry["status"] = status
    if "error" in body:
        entry["error"] = body["error"]
    entry["cache"] = {"hits": res.cache_hits, "misses": res.cache_misses}
    entry["seconds"] = round(time.perf_counter() - start, 6)
    return entry


def run(config: Config, out_dir=None, fail_fast: bool = False, parallel: bool = False,
        seed_override: int | None = None) -> RunManifest:
    """Execute every experiment block and write reports plus ``manifest.json``."""
    if seed_override is not None:
        for e in config.experiments:
            e.seed = int(seed_override)
    out = Path(out_dir if out_dir is not None else config.output["dir"])
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(config, FieldCache())
    write_csv = config.output["csv"]
    start = time.perf_counter()
    entries = []
    if parallel and not fail_fast and len(config.experiments) > 1:
        with ThreadPoolExecutor() as pool:
            entries = list(pool.map(lambda e: _run_block(ctx, e, out, write_csv),
                                    config.experiments))
    else:
        for e in config.experiments:
            entry = _run_block(ctx, e, out, write_csv)
            entries.append(entry)
            if fail_fast and entry["status"] != "pass":
                break
        for e in config.experiments[len(entries):]:
            entries.append({"name": e.name, "command": e.command, "seed": e.seed,
                            "status": "skipped", "files": [], "seconds": 0.0})
    cfg_path = out / "config.json"
    _write_atomic(cfg_path, dump_json(config.to_json()))
    files = [str(cfg_path)] + [f for e in entries for f in e["files"]]
    code = _exit_code([e["status"] for e in entries])
    manifest = RunManifest(config.hash(), __version__, entries, files, code)
    body = manifest.to_json()
    body["total_seconds"] = round(time.perf_counter() - start, 6)
    _write_atomic(out / "manifest.json", dump_json(body))
    manifest.files.append(str(out / "manifest.json"))
    return manifest


# -- argument parsing -----------------------------------------------------------------


def _global_flags(parser, top=True):
    d = None if top else argparse.SUPPRESS
    parser.add_argument("--config", metavar="PATH", default=d, help="JSON config file")
    parser.add_argument("--out", metavar="DIR", default=d, help="output directory")
    parser.add_argument("--fail-fast", action="store_true", default=d or False,
                        help="stop at the first block that does not pass")
    parser.add_argument("--parallel", action="store_true", default=d or False,
                        help="run independent blocks concurrently")
    parser.add_argument("--seed-override", type=int, metavar="INT", default=d,
                        help="replace every block seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ccgeom", description="Carnot-Caratheodory geometry experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser)
    sub = parser.add_subparsers(dest="command")
    p = sub.add_parser("run", help="run every block of --config")
    _global_flags(p, top=False)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run a single {name} block")
        _global_flags(p, top=False)
        p.add_argument("--system", help="builtin name or inline JSON (overrides the config)")
        p.add_argument("--params", default="{}", help="block parameters as JSON")
        p.add_argument("--seed", type=int, default=None)
    return parser


def _load(args) -> Config:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"--config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"<root>: malformed JSON ({exc})") from None
    if args.command not in (None, "run"):
        if args.system:
            try:
                data["system"] = json.loads(args.system)
            except json.JSONDecodeError:
                data["system"] = args.system
        try:
            params = json.loads(args.params)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--params: malformed JSON ({exc})") from None
        block = {"command": args.command, "parameters": params}
        if args.seed is not None:
            block["seed"] = args.seed
        data["experiments"] = [block]
    elif not args.config:
        raise ConfigError("--config: required for 'run'")
    return parse_config(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = run(config, args.out, args.fail_fast, args.parallel, args.seed_override)
    except Exception as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for b in manifest.blocks:
        cache = b.get("cache", {})
        note = " (cache hit)" if cache.get("hits") else ""
        print(f"{b['status']:>7}  {b['name']}{note}")
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
