import csv
import json
import os
from pathlib import Path

import pytest

from ccgeom.ccdist import distance_field
from ccgeom.cli import ConfigError, export_csv, main, parse_config, run
from ccgeom.convexity import sup_mean_grid
from ccgeom.vecfield import builtin_system


def cfg(**kw):
    data = {"system": "heisenberg1", "experiments": []}
    data.update(kw)
    return json.dumps(data)


def test_parse_config_defaults():
    c = parse_config(cfg())
    assert (c.m, c.n) == (2, 3)
    assert c.distance["tau"] == 0.05 and c.basis["r"] == 2
    c = parse_config(cfg(experiments=[{"command": "basis"}]))
    assert c.experiments[0].seed == 42
    assert c.to_json()["experiments"][0]["seed"] == 42


@pytest.mark.parametrize(
    "text,path",
    [
        (cfg(system="no_such"), "system"),
        ('{"experiments": []}', "system"),
        (cfg(experiments=[{"command": "frobnicate"}]), "experiments[0].command"),
        (cfg(experiments=[{"command": "basis", "seed": -1}]), "experiments[0].seed"),
        (cfg(distance={"tau": 0}), "distance.tau"),
        (cfg(distance={"cell": [0.1, 0.1]}), "distance.cell"),
        (cfg(extra=1), "extra"),
        ("{not json", "<root>"),
    ],
)
def test_parse_config_errors_name_the_field(text, path):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert str(info.value).startswith(path)


def test_inline_system():
    sysjson = builtin_system("grushin").to_json()
    c = parse_config(json.dumps({"system": sysjson}))
    assert c.n == 2 and c.m == 2


def test_empty_run(tmp_path):
    m = run(parse_config(cfg()), tmp_path)
    assert m.blocks == [] and m.exit_code == 0
    assert (tmp_path / "manifest.json").exists()


def test_convexity_fail_propagates(tmp_path):
    text = cfg(experiments=[{"command": "convexity", "parameters": {"u": "-x^2"}}])
    m = run(parse_config(text), tmp_path)
    assert m.blocks[0]["status"] == "fail" and m.exit_code == 1
    p = tmp_path / "cfg.json"
    p.write_text(text)
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 1


def test_cache_hit_is_recorded(tmp_path):
    exps = [
        {"command": "distance-field", "parameters": {"budget": 0.5}},
        {"command": "ball", "parameters": {"budget": 0.5, "r": 0.5, "samples": 2000}},
    ]
    m = run(parse_config(cfg(experiments=exps)), tmp_path)
    assert m.blocks[0]["cache"] == {"hits": 0, "misses": 1}
    assert m.blocks[1]["cache"] == {"hits": 1, "misses": 0}


def test_runtime_error_and_fail_fast(tmp_path):
    exps = [
        {"command": "approx-exp", "parameters": {"k": 9, "h": 0.1}},
        {"command": "basis"},
    ]
    m = run(parse_config(cfg(experiments=exps)), tmp_path / "a")
    assert [b["status"] for b in m.blocks] == ["error", "pass"] and m.exit_code == 3
    m = run(parse_config(cfg(experiments=exps)), tmp_path / "b", fail_fast=True)
    assert [b["status"] for b in m.blocks] == ["error", "skipped"]


def test_missing_parameter_is_block_error(tmp_path):
    m = run(parse_config(cfg(experiments=[{"command": "convexity"}])), tmp_path)
    assert m.blocks[0]["status"] == "error" and "parameters.u" in m.blocks[0]["error"]


def test_exit_codes_from_main(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(cfg(system="nope"))
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["run"]) == 2
    assert main(["basis", "--system", "heisenberg1", "--out", str(tmp_path / "o")]) == 0


DET_EXPS = [
    {"command": "basis"},
    {"command": "lambda", "parameters": {"deltas": [0.1, 0.3]}},
    {"command": "convexity", "parameters": {"u": "-x^2", "n_points": 10}, "seed": 3},
    {"command": "doubling", "parameters": {"budget": 1.0, "r": 0.5, "samples": 5000}},
    {"command": "estimates", "parameters": {"u": "x^2+y^2", "budget": 0.4,
                                            "r_list": [0.1, 0.2], "samples": 300}},
]


def _reports(out: Path):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())
            if p.name not in ("manifest.json",)}


def test_determinism(tmp_path):
    text = cfg(experiments=DET_EXPS)
    run(parse_config(text), tmp_path / "a")
    run(parse_config(text), tmp_path / "b", parallel=True)
    a, b = _reports(tmp_path / "a"), _reports(tmp_path / "b")
    assert a.keys() == b.keys() and a == b


def test_manifest_files_exist(tmp_path):
    m = run(parse_config(cfg(experiments=DET_EXPS)), tmp_path)
    assert len(m.blocks) == len(DET_EXPS)
    for f in m.files:
        assert os.path.getsize(f) > 0
    data = json.loads((tmp_path / "manifest.json").read_text())
    assert data["config_hash"] == parse_config(cfg(experiments=DET_EXPS)).hash()
    assert all("seconds" in b for b in data["blocks"])


def test_seed_override(tmp_path):
    m = run(parse_config(cfg(experiments=DET_EXPS[2:3])), tmp_path, seed_override=11)
    assert m.blocks[0]["seed"] == 11
    body = json.loads(Path(m.blocks[0]["files"][0]).read_text())
    assert body["seed"] == 11


def test_export_csv_schemas(tmp_path):
    H = builtin_system("heisenberg1")
    f = distance_field(H, [0, 0, 0], budget=0.3)
    rep = sup_mean_grid("x^2+y^2", f, [0, 0, 0], [0.1], samples=50)
    rows = list(csv.reader(open(export_csv(rep, tmp_path / "s.csv"), encoding="utf-8")))
    assert rows[0] == ["r", "sup", "mean", "ratio"] and len(rows) == 2
    rows = list(csv.reader(open(export_csv(f, tmp_path / "f.csv"), encoding="utf-8")))
    assert rows[0] == ["x1", "x2", "x3", "value"] and len(rows) == f.reached + 1
    p = export_csv((["a", "b"], []), tmp_path / "e.csv")
    assert p.read_bytes() == b"a,b\n"
