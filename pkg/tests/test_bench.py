import json
import math

import numpy as np
import pytest

from crossloc import cli
from crossloc.bench import harness, report, scoring
from crossloc.bench.runner import LOG_FIELDS, StepRow, log_text, split_trials
from crossloc.exceptions import ConfigError
from crossloc.sim.scenario import loads


def _cols(est, truth, w_dom=None):
    rows = []
    for k, (e, t) in enumerate(zip(est, truth)):
        rows.append(StepRow(k, np.array([t, 0.0, 0.0]), None if e is None else np.array([e, 0.0, 0.0]),
                            w_dom=None if w_dom is None else w_dom[k]))
    return scoring.parse_log(log_text(rows))


def test_log_header_and_blanks():
    text = log_text([StepRow(0, np.zeros(3), None)])
    head, row = text.strip().split("\n")
    assert head.split(",") == LOG_FIELDS
    cols = scoring.parse_log(text)
    assert math.isnan(cols["est_tx"][0]) and math.isnan(cols["err_m"][0])


def test_final_metric_strict():
    r = scoring.eval_rs(_cols([5.0, 1.0, 2.0], [0.0] * 3), 2.0)
    assert not r.success and r.final_err_m == 2.0 and r.steps_to_reloc is None
    r = scoring.eval_rs(_cols([5.0, 1.0, 1.9], [0.0] * 3), 2.0)
    assert r.success and r.steps_to_reloc == 1


def test_final_metric_missing_estimate():
    r = scoring.eval_rs(_cols([0.0, None], [0.0, 0.0]), 2.0)
    assert not r.success and math.isnan(r.final_err_m)


def test_alias_metric_deadline_and_weight():
    est = [9.0, 0.5, 0.5, 9.0]
    assert scoring.eval_rs(_cols(est, [0.0] * 4), 2.0, "alias", deadline=3).success
    assert not scoring.eval_rs(_cols(est, [0.0] * 4), 2.0, "alias").success
    # confident weight is required where logged, strictly above 0.9
    assert not scoring.eval_rs(_cols(est, [0.0] * 4, [1, 1, 0.9, 1]), 2.0, "alias", deadline=3).success
    assert scoring.eval_rs(_cols(est, [0.0] * 4, [1, 1, 0.95, 1]), 2.0, "alias", deadline=3).success


def test_eval_errors():
    with pytest.raises(ValueError):
        scoring.eval_rs({}, 2.0)
    with pytest.raises(ValueError):
        scoring.eval_rs(_cols([0.0], [0.0]), 2.0, "median")


def test_summary_roundtrip():
    res = [scoring.TrialResult("gm", "a", k, k % 2 == 0, 0.5 * k, k if k % 2 == 0 else None) for k in range(4)]
    back = scoring.read_results(scoring.results_text(res))
    assert [(r.trial_id, r.success, r.steps_to_reloc) for r in back] == [(r.trial_id, r.success, r.steps_to_reloc) for r in res]
    (s,) = scoring.summarize(back)
    assert s["n_trials"] == 4 and s["n_success"] == 2 and s["rs"] == 0.5


def test_split_trials():
    assert split_trials(list(range(10)), 4) == [[0, 1, 2, 3], [4, 5, 6, 7]]
    assert split_trials(list(range(3)), 4) == [[0, 1, 2]]
    assert split_trials(list(range(3)), 0) == [[0, 1, 2]]


@pytest.mark.parametrize(
    "text, where",
    [
        ("{\n  \"methods\": [\n", "line 3"),
        ('{"methods": ["gm"], "seeds": "0"}', "config"),
        ('{"scenarios": ["moon"], "methods": ["gm"], "seeds": "0"}', "scenarios[0].preset"),
        ('{"scenarios": ["loop"], "methods": ["svm"], "seeds": "0"}', "config.methods[0]"),
        ('{"scenarios": ["loop"], "methods": ["gm"], "seeds": "3..1"}', "--seeds"),
        ('{"scenarios": ["loop"], "methods": ["gm"], "seeds": "0", "formats": ["pdf"]}', "config.formats[0]"),
        ('{"scenarios": [{"preset": "loop", "r_d": -1}], "methods": ["gm"], "seeds": "0"}', "scenarios[0].r_d"),
        ('{"scenarios": [{"world": "nope.json"}], "methods": ["gm"], "seeds": "0"}', "scenarios[0].world"),
        ('{"scenarios": ["loop"], "methods": ["gm"], "seeds": "0", "colour": 1}', "config"),
    ],
)
def test_config_errors_name_location(text, where, tmp_path):
    with pytest.raises(ConfigError) as ei:
        harness.parse_config(text, base_dir=tmp_path)
    assert where in str(ei.value)


def test_config_ok():
    cfg = harness.parse_config('{"scenarios": ["loop", {"preset": "kidnap", "overrides": {"query_steps": 50}}],'
                               ' "methods": ["cross", "gm"], "seeds": "2..4", "trial_len": 25}')
    assert cfg.seeds == [2, 3, 4] and cfg.trial_len == 25 and cfg.scenarios[1].overrides == {"query_steps": 50}


def test_load_config_missing(tmp_path):
    with pytest.raises(ConfigError):
        harness.load_config(tmp_path / "absent.json")


def test_pool_size_env(monkeypatch):
    monkeypatch.setenv("CROSS_THREADS", "3")
    assert harness.pool_size() == 3
    for bad in ("0", "two"):
        monkeypatch.setenv("CROSS_THREADS", bad)
        with pytest.raises(ConfigError):
            harness.pool_size()


SMALL = {"query_steps": 40}


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    spec = harness.ScenarioSpec("loop", overrides=SMALL)
    runs = harness.run_trials([spec], [0, 1], ["cross", "gm", "sm", "pbu"], 20, workers=1)
    harness.write_run(runs, out)
    harness.evaluate_dir(out)
    return out


def test_run_layout(run_dir):
    logs = sorted(p.name for p in (run_dir / "logs").iterdir())
    assert len(logs) == 2 * 2 * 4 and "loop__cross__s1__t1.csv" in logs
    mf = json.loads((run_dir / "manifest.json").read_text())
    assert {m["trial_id"] for m in mf} == {0, 1, 1000, 1001}
    res = scoring.read_results((run_dir / "results.csv").read_text())
    assert len(res) == 16


def test_reports_idempotent(run_dir):
    for fmt in harness.FORMATS:
        paths = report.write_report(run_dir, fmt)
        first = [p.read_bytes() for p in paths]
        assert [p.read_bytes() for p in report.write_report(run_dir, fmt)] == first
    assert (run_dir / "rs.svg").read_text().startswith("<svg")
    doc = json.loads((run_dir / "report.json").read_text())
    assert len(doc["trials"]) == 16
    with pytest.raises(ConfigError):
        report.write_report(run_dir, "pdf")


def _snapshot(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file() and p.name != "timings.csv"}


def test_cli_run_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        argv = ["run", "--scenario", "kidnap", "--method", "cross,pbu", "--seeds", "0..1", "--out", str(tmp_path / name)]
        assert cli.main(argv) == 0
    assert "RS" in capsys.readouterr().out
    assert _snapshot(tmp_path / "a") == _snapshot(tmp_path / "b")
    assert (tmp_path / "a" / "timings.csv").exists()


def test_cli_bench_and_report(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scenarios": [{"preset": "loop", "overrides": SMALL}], "methods": ["gm"],
                               "seeds": [0], "out": "ignored", "formats": ["csv"]}))
    assert cli.main(["bench", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "report.csv").exists()
    assert cli.main(["report", "--in", str(tmp_path / "o"), "--format", "svg"]) == 0
    assert cli.main(["eval", "--logs", str(tmp_path / "o"), "--rd", "5"]) == 0


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["run", "--scenario", "moon", "--out", str(tmp_path)]) == 2
    assert cli.main(["run", "--scenario", "loop", "--method", "svm", "--out", str(tmp_path)]) == 2
    assert cli.main(["eval", "--logs", str(tmp_path / "none")]) == 2
    assert cli.main(["eval", "--logs", str(tmp_path), "--rd", "0"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert cli.main(["bench", str(bad)]) == 2
    # a world that validates as JSON but breaks at run time
    w = tmp_path / "w.json"
    w.write_text(json.dumps({"preset": "loop", "overrides": {"query_steps": "many"}}))
    assert cli.main(["run", "--scenario", str(w), "--out", str(tmp_path / "r")]) in (2, 3)
    err = capsys.readouterr().err
    assert "config error" in err


def test_gen_world_roundtrip(tmp_path, capsys):
    out = tmp_path / "w.json"
    assert cli.main(["gen-world", "alias_corridor", "--seed", "4", "--out", str(out)]) == 0
    sc = loads(out.read_text())
    assert sc.seed == 4 and sc.name == "alias_corridor"
    assert cli.main(["gen-world", "alias_corridor", "--seed", "4"]) == 0
    assert capsys.readouterr().out == out.read_text()
    # a stored world runs like a preset
    assert cli.main(["run", "--scenario", str(out), "--method", "gm", "--out", str(tmp_path / "r")]) == 0
