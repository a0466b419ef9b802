import json

import numpy as np
import pytest

from overlaplab.cli import main
from overlaplab.config import ConfigError, load_config, parse_config
from overlaplab.identities import Budget
from overlaplab.measures import CascadeSource, DiracSource
from overlaplab.runner import (CSV_FIELDS, TOOL_VERSION, _scaled_count,
                               config_digest, execute_suite, run_experiment,
                               summarize)

PSI = {"kind": "polynomial", "coeffs": [0.0, 1.0]}


def base_raw(**over):
    raw = {
        "master_seed": 77,
        "sources": {
            "point": {"kind": "dirac", "q_star": 0.6, "dimension": 2},
            "cas": {"kind": "cascade", "zetas": [0.5], "overlaps": [0.0, 0.4],
                    "K": 64, "dimension": 4},
        },
        "suites": [{"kind": "gg", "source": "point", "n": 2, "psi": PSI}],
    }
    raw.update(over)
    return raw


TINY_TOML = """
master_seed = 77

[budgets]
realizations = 8
groups = 4

[sources.point]
kind = "dirac"
q_star = 0.6
dimension = 2

[[suites]]
kind = "gg"
source = "point"
psi = {kind = "polynomial", coeffs = [0.0, 1.0]}

[[suites]]
kind = "invariance"
source = "point"
fs = [{kind = "polynomial", coeffs = [0.0, 1.0]}]
phi = {kind = "constant", value = 1.0}
t_grid = [0.5]

[[suites]]
kind = "ultrametric"
source = "point"
triples = 40
tree_checks = 1
tree_size = 4

[[suites]]
kind = "barycenter"
patterns = 5
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_TOML)
    return path


# ---------------------------------------------------------------- parsing

def test_parse_defaults():
    cfg = parse_config({})
    assert cfg.epsilon == 0.05
    assert cfg.significance == 3.0
    assert cfg.bootstrap == 200
    assert cfg.exact_cap == 4096
    assert cfg.jobs == 1
    assert cfg.budgets == Budget(200, 64, 256)
    assert cfg.master_seed is None
    assert cfg.suites == [] and cfg.sources == {}


def test_parse_builds_typed_sources():
    cfg = parse_config(base_raw())
    assert isinstance(cfg.sources["point"], DiracSource)
    cas = cfg.sources["cas"]
    assert isinstance(cas, CascadeSource)
    assert cas.q_star == 0.4
    assert cas.truncation == 64


@pytest.mark.parametrize("mangle, message", [
    (lambda raw: raw["suites"][0].update(source="nope"), "undefined source"),
    (lambda raw: raw["suites"][0].update(kind="wat"), "unknown suite kind"),
    (lambda raw: raw["sources"]["point"].update(kind="wat"),
     "unknown source kind"),
    (lambda raw: raw["suites"][0].update(budget={"repetitions": 5}),
     "unknown budget key"),
    (lambda raw: raw["suites"][0].update(budget={"realizations": 1}),
     "at least 2 realizations"),
    (lambda raw: raw["suites"][0].update(psi={"kind": "nope"}),
     "bad scalar function spec"),
    (lambda raw: raw["suites"][0].pop("psi"), "psi: required key is missing"),
    (lambda raw: raw["suites"][0].pop("source"),
     "source: required key is missing"),
    (lambda raw: raw.update(bootstrap=1), "at least 2 resamples"),
    (lambda raw: raw.update(epsilon=0.0), "must be positive"),
    (lambda raw: raw.update(jobs=0), ">= 1"),
    (lambda raw: raw.update(master_seed="abc"), "expected an integer"),
    (lambda raw: raw["suites"][0].update(label=7), "expected a string"),
])
def test_parse_rejections(mangle, message):
    raw = base_raw()
    mangle(raw)
    with pytest.raises(ConfigError, match=message):
        parse_config(raw)


def test_parse_error_names_the_key_path():
    raw = base_raw()
    raw["suites"][0]["source"] = "nope"
    with pytest.raises(ConfigError, match=r"suites\[0\].source"):
        parse_config(raw)


def test_theorem2_suite_requires_partition():
    raw = base_raw(suites=[{"kind": "theorem2", "source": "cas",
                            "fs": [PSI], "phi": {"matrix": PSI}}])
    raw["suites"][0]["phi"]["matrix"] = {"kind": "constant", "value": 1.0}
    with pytest.raises(ConfigError, match="partition: required key is missing"):
        parse_config(raw)


def test_extension_constraint_shapes():
    raw = base_raw(suites=[{"kind": "extension", "source": "cas", "n": 3,
                            "entries": [[0.0, 0.0], [0.0, 0.0]]}])
    with pytest.raises(ConfigError, match="3x3"):
        parse_config(raw)
    good = base_raw(suites=[{"kind": "extension", "source": "cas",
                             "fill": 0.0}])
    cfg = parse_config(good)
    constraint = cfg.suites[0].params["constraint"]
    assert constraint.n == 2
    assert constraint.q_star == 0.4  # diagonal pinned to the source
    assert constraint.epsilon == cfg.epsilon


def test_barycenter_suite_needs_no_source():
    cfg = parse_config(base_raw(suites=[{"kind": "barycenter", "patterns": 3}]))
    assert cfg.suites[0].source_name is None


def test_suite_budget_overrides_base():
    raw = base_raw(budgets={"realizations": 50, "groups": 10})
    raw["suites"][0]["budget"] = {"realizations": 6}
    cfg = parse_config(raw)
    assert cfg.budgets == Budget(50, 10, 256)
    assert cfg.suites[0].budget == Budget(6, 10, 256)


# ---------------------------------------------------------------- loading

def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.toml")


def test_load_config_bad_toml(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("master_seed = = 5\n")
    with pytest.raises(ConfigError, match="invalid TOML"):
        load_config(path)


def test_load_config_bad_json_reports_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"master_seed": 5,,}')
    with pytest.raises(ConfigError, match=r"invalid JSON at line 1"):
        load_config(path)


def test_load_config_accepts_json(tmp_path):
    path = tmp_path / "ok.json"
    path.write_text(json.dumps(base_raw()))
    cfg = load_config(path)
    assert cfg.master_seed == 77
    assert len(cfg.suites) == 1


# ---------------------------------------------------------------- running

def test_scaled_count_rounds_and_floors():
    assert _scaled_count(200, 0.1) == 20
    assert _scaled_count(10, 0.01) == 1
    assert _scaled_count(7, 1.0) == 7


def test_config_digest_tracks_inputs():
    cfg = parse_config(base_raw())
    a = config_digest(cfg, 77, 1.0)
    assert len(a) == 64 and int(a, 16) >= 0
    assert config_digest(cfg, 77, 1.0) == a
    assert config_digest(cfg, 78, 1.0) != a
    assert config_digest(cfg, 77, 0.5) != a


def test_execute_suite_rejects_unknown_kind():
    cfg = parse_config(base_raw())
    spec = cfg.suites[0]
    spec.kind = "bogus"
    with pytest.raises(ConfigError, match="unknown suite kind"):
        execute_suite(spec, cfg, np.random.SeedSequence(0))


def test_run_requires_explicit_seed():
    raw = base_raw()
    del raw["master_seed"]
    cfg = parse_config(raw)
    with pytest.raises(ConfigError, match="master_seed"):
        run_experiment(cfg)


def test_run_seed_override(tiny_config, tmp_path):
    cfg = load_config(tiny_config)
    result = run_experiment(cfg, seed=9, out_dir=str(tmp_path / "o"))
    assert result.manifest["master_seed"] == 9


def test_run_writes_all_artifacts(tiny_config, tmp_path):
    out = tmp_path / "out"
    result = run_experiment(load_config(tiny_config), out_dir=str(out))
    assert result.exit_code == 0
    assert result.manifest["aggregate_pass"] is True
    assert result.manifest["tool_version"] == TOOL_VERSION
    names = {p.name for p in out.iterdir()}
    assert {"manifest.json", "summary.csv", "suite_00_gg.json",
            "suite_01_invariance.json", "suite_02_ultrametric.json",
            "suite_03_barycenter.json"} <= names
    header = (out / "summary.csv").read_text().splitlines()[0]
    assert header == ",".join(CSV_FIELDS)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["report_files"] == result.manifest["report_files"]
    statuses = manifest["suite_statuses"][0]["statuses"]
    assert statuses == ["pass"]


def test_summary_csv_identical_across_jobs(tiny_config, tmp_path):
    d1, d3 = tmp_path / "j1", tmp_path / "j3"
    run_experiment(load_config(tiny_config), out_dir=str(d1), jobs=1)
    run_experiment(load_config(tiny_config), out_dir=str(d3), jobs=3)
    assert (d1 / "summary.csv").read_bytes() == (d3 / "summary.csv").read_bytes()


def test_budget_scale_shrinks_counts(tiny_config, tmp_path):
    out = tmp_path / "scaled"
    result = run_experiment(load_config(tiny_config), out_dir=str(out),
                            budget_scale=0.5)
    assert result.manifest["budget_scale"] == 0.5
    census = json.loads((out / "suite_02_ultrametric.json").read_text())
    assert census["reports"][0]["metadata"]["census"]["total"] == 20


def test_failing_asserted_suite_sets_exit_code(tmp_path):
    raw = base_raw()
    raw["suites"][0]["significance"] = 0.0  # |z| < 0 can never hold
    result = run_experiment(parse_config(raw), out_dir=str(tmp_path / "f"))
    assert result.exit_code == 1
    assert result.manifest["aggregate_pass"] is False
    assert result.manifest["suite_statuses"][0]["statuses"] == ["fail"]


# ---------------------------------------------------------------- summarize

def test_summarize_missing_manifest(tmp_path):
    text, code = summarize(tmp_path / "nowhere")
    assert code == 1
    assert "manifest not found" in text


def test_summarize_renders_run(tiny_config, tmp_path):
    out = tmp_path / "run"
    run_experiment(load_config(tiny_config), out_dir=str(out))
    text, code = summarize(out)
    assert code == 0
    assert "aggregate: pass" in text
    assert "seed=77" in text
    curve = (out / "phi_curve_suite01.dat").read_text().splitlines()
    assert curve[0] == "# t  estimate  std_error"
    assert len(curve) == 3  # t = 0 and t = 0.5
    assert curve[1].startswith("0 ")
    census = (out / "census_suite02.dat").read_text().splitlines()
    assert census[0] == "# class  count"
    assert "equilateral 40" in census


def test_summarize_lists_missing_reports(tiny_config, tmp_path):
    out = tmp_path / "run"
    run_experiment(load_config(tiny_config), out_dir=str(out))
    (out / "suite_00_gg.json").unlink()
    text, code = summarize(out)
    assert code == 1
    assert "missing report files: suite_00_gg.json" in text


def test_summarize_empty_run(tmp_path):
    cfg = parse_config({"master_seed": 1, "suites": []})
    out = tmp_path / "empty"
    result = run_experiment(cfg, out_dir=str(out))
    assert result.exit_code == 0
    text, code = summarize(out)
    assert code == 0
    assert "(no tests)" in text


def test_summarize_to_other_directory(tiny_config, tmp_path):
    out, mirror = tmp_path / "run", tmp_path / "mirror"
    run_experiment(load_config(tiny_config), out_dir=str(out))
    _text, code = summarize(out, out_dir=str(mirror))
    assert code == 0
    assert (mirror / "summary.csv").read_bytes() == \
        (out / "summary.csv").read_bytes()


# ---------------------------------------------------------------- CLI

def test_cli_run_and_summarize(tiny_config, tmp_path, capsys):
    out = tmp_path / "cli_out"
    assert main(["run", str(tiny_config), "--out-dir", str(out)]) == 0
    shown = capsys.readouterr().out
    assert "aggregate: pass" in shown
    assert main(["summarize", str(out)]) == 0


def test_cli_config_error_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text('[[suites]]\nkind = "wat"\nsource = "x"\n')
    assert main(["run", str(path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_failing_run(tmp_path, capsys):
    path = tmp_path / "fail.toml"
    path.write_text("""
master_seed = 3
[sources.point]
kind = "dirac"
q_star = 0.6

[[suites]]
kind = "gg"
source = "point"
significance = -1.0
psi = {kind = "polynomial", coeffs = [0.0, 1.0]}
""")
    out = tmp_path / "failed"
    assert main(["run", str(path), "--out-dir", str(out)]) == 1
    assert "failing: suite 0 (gg)" in capsys.readouterr().err


def test_cli_summarize_missing(capsys, tmp_path):
    assert main(["summarize", str(tmp_path / "ghost")]) == 1


def test_cli_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
