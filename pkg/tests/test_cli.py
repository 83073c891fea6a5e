import json
import warnings

import numpy as np
import pytest

from hkglue.cli import Cache, load_config, main, parse_config
from hkglue.errors import CacheError, ConfigError

BASE = {
    "schema_version": 1,
    "name": "t",
    "dihedral_weights": [1, 1, 2, 2, 2, 2, 2, 2],
    "cyclic_pairs": [{"position": [0.27, 0.19, 0.33], "k": 2}],
}


def _write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj, indent=1) if not isinstance(obj, str) else obj)
    return str(p)


def _run(tmp_path, *args, out="out"):
    return main([*args, "--out", str(tmp_path / out), "--tol-profile", "fast", "--quiet"])


# -- configuration ---------------------------------------------------------------


def test_default_config_loads():
    rc = load_config(None)
    assert rc.name == "generic"
    cfg = rc.charge_config()
    assert cfg.dihedral_weights == (1, 1, 2, 2, 2, 2, 2, 2) and len(cfg.pairs) == 1


def test_parse_error_names_line():
    with pytest.raises(ConfigError, match=r"x\.json:3:"):
        parse_config('{\n "schema_version": 1,\n "name": ,\n}', "x.json")


@pytest.mark.parametrize(
    "patch,where",
    [
        ({"colour": 1}, r"\$\.colour: unknown key"),
        ({"epsilon": {"sweep": [0.1], "speed": 2}}, r"\$\.epsilon\.speed: unknown key"),
        ({"beta": "large"}, r"\$\.beta: expected a number"),
        ({"schema_version": 2}, r"\$\.schema_version"),
        ({"cyclic_pairs": [{"position": [0.1, 0.2], "k": 2}]}, r"\$\.cyclic_pairs\[0\]\.position"),
        ({"cyclic_pairs": [{"position": [0.1, 0.2, 0.3], "k": 2, "q": 1}]}, r"\$\.cyclic_pairs\[0\]\.q"),
        ({"epsilon": {"sweep": [0.1, -0.2]}}, r"\$\.epsilon\.sweep"),
        ({"torus": {"basis": [[1, 0], [0, 1]]}}, r"\$\.torus\.basis"),
    ],
)
def test_config_errors_name_location(patch, where):
    with pytest.raises(ConfigError, match=where):
        parse_config(json.dumps({**BASE, **patch}))


def test_cartesian_pair_coordinates():
    obj = {**BASE, "torus": {"basis": [[2, 0, 0], [0, 2, 0], [0, 0, 2]]},
           "cyclic_pairs": [{"position": [0.54, 0.38, 0.66], "coordinates": "cartesian", "k": 2}]}
    rc = parse_config(json.dumps(obj))
    assert np.allclose(rc.cyclic_pairs[0][0], [0.27, 0.19, 0.33])


def test_missing_config_file(tmp_path, capsys):
    assert _run(tmp_path, "validate", "--config", str(tmp_path / "nope.json")) == 2
    assert "no such file" in capsys.readouterr().err


# -- cache -------------------------------------------------------------------------


def test_cache_hit_miss_and_corruption(tmp_path):
    cache = Cache(str(tmp_path / "c"))
    calls = []

    def compute():
        calls.append(1)
        return {"a": np.arange(3.0)}

    assert np.array_equal(cache.get("t", {"x": 1}, compute)["a"], np.arange(3.0))
    assert np.array_equal(cache.get("t", {"x": 1}, compute)["a"], np.arange(3.0))
    assert cache.status()["hits"] == 1 and cache.status()["misses"] == 1 and len(calls) == 1
    (entry,) = list((tmp_path / "c").glob("*.npz"))
    entry.write_bytes(entry.read_bytes()[:20])
    with pytest.warns(RuntimeWarning, match="corrupted cache entry"):
        cache.get("t", {"x": 1}, compute)
    assert len(calls) == 2 and len(cache.status()["warnings"]) == 1
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        cache.get("t", {"x": 1}, compute)  # repaired


def test_cache_key_depends_on_payload():
    assert Cache.key("t", {"x": 1}) != Cache.key("t", {"x": 2})
    assert Cache.key("t", {"x": 1, "y": 2}) == Cache.key("t", {"y": 2, "x": 1})


def test_cache_unusable_directory(tmp_path, capsys):
    f = tmp_path / "file"
    f.write_text("x")
    with pytest.raises(CacheError):
        Cache(str(f))
    assert _run(tmp_path, "monopole", "--cache", str(f)) == 2
    assert "CacheError" in capsys.readouterr().err


def test_cli_cache_reuse(tmp_path):
    cache = str(tmp_path / "cache")
    assert _run(tmp_path, "monopole", "--cache", cache) == 0
    first = json.loads((tmp_path / "out" / "summary-monopole.json").read_text())["cache"]
    assert first["misses"] >= 1 and first["hits"] == 0
    assert _run(tmp_path, "monopole", "--cache", cache) == 0
    second = json.loads((tmp_path / "out" / "summary-monopole.json").read_text())["cache"]
    assert second["misses"] == 0 and second["hits"] == first["misses"]


# -- subcommands ---------------------------------------------------------------------


def test_validate_kummer(tmp_path, capsys):
    assert _run(tmp_path, "validate", "--config", _write(tmp_path, {"schema_version": 1, "dihedral_weights": [2] * 8})) == 0
    summary = json.loads((tmp_path / "out" / "summary-validate.json").read_text())
    assert summary["ok"] and all(r["status"] == "PASS" for r in summary["records"])


def test_validate_weight_sum(tmp_path, capsys):
    bad = {**BASE, "dihedral_weights": [1, 2, 2, 2, 2, 2, 2, 2]}
    assert main(["validate", "--config", _write(tmp_path, bad), "--out", str(tmp_path / "o")]) == 1
    out = capsys.readouterr().out
    assert "FAIL" in out and "17" in out


def test_validate_coincident(tmp_path, capsys):
    bad = {**BASE, "cyclic_pairs": [{"position": [0.0, 0.0, 0.0], "k": 2}]}
    assert main(["validate", "--config", _write(tmp_path, bad), "--out", str(tmp_path / "o")]) == 1
    assert "coincides with fixed point q1" in capsys.readouterr().out


def test_invalid_config_exit_code(tmp_path, capsys):
    bad = {**BASE, "dihedral_weights": [1, 2, 2, 2, 2, 2, 2, 2]}
    assert _run(tmp_path, "monopole", "--config", _write(tmp_path, bad)) == 2
    assert "ConfigError" in capsys.readouterr().err
    assert main(["topology", "--threads", "0"]) == 2


@pytest.mark.parametrize("cmd,files", [
    ("triple", ["triple.csv"]),
    ("asymptotics", ["asymptotics.csv", "asymptotics_fit.csv"]),
    ("topology", ["topology.csv", "config_topology.csv"]),
    ("collapse", ["collapse.csv", "collapse_fit.csv"]),
])
def test_subcommands_pass(tmp_path, cmd, files):
    assert _run(tmp_path, cmd) == 0
    out = tmp_path / "out"
    summary = json.loads((out / f"summary-{cmd}.json").read_text())
    assert summary["ok"] and sorted(summary["files"]) == sorted(files)
    for f in files:
        assert (out / f).read_text().count("\n") >= 2


def test_topology_csv_content(tmp_path):
    _run(tmp_path, "topology")
    lines = (tmp_path / "out" / "config_topology.csv").read_text().splitlines()
    assert lines[0] == "piece,euler,moduli" and lines[-1] == "total,24,58"


def test_error_sweep_deterministic_across_threads(tmp_path):
    assert _run(tmp_path, "error-sweep", "--threads", "1", out="a") == 0
    assert _run(tmp_path, "error-sweep", "--threads", "4", out="b") == 0
    for name in ("error_sweep.csv", "error_sweep_fit.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    slope = float((tmp_path / "a" / "error_sweep_fit.csv").read_text().splitlines()[1].split(",")[0])
    assert 1.6 <= slope <= 2.0
