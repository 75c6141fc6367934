import csv
import json
import re

import pytest

from conftest import CORPUS, GOLDEN_JS
from jsvuln.cli import main
from jsvuln.pipeline import MANIFEST_NAME, PipelineManifest

GOLDEN = CORPUS / "golden"
LOG_LINE = re.compile(r"^level=\w+ stage=[\w-]+ logger=[\w.]+ msg=")


def run(corpus, capsys, *extra):
    code = main(["--config", str(corpus / "config.json"), *extra, "run"])
    return code, capsys.readouterr().err


def statuses(err):
    return json.loads(re.search(r"pipeline finished: (\{.*\})", err).group(1))


def test_end_to_end_matches_golden(corpus, capsys):
    code, err = run(corpus, capsys)
    assert code == 0, err
    assert statuses(err) == dict.fromkeys(["ingest", "resolve", "build-dataset", "sweep", "report"], "ran")
    work = corpus / "work"
    assert (work / "dataset.csv").read_bytes() == (GOLDEN / "dataset.csv").read_bytes()
    assert (work / "report" / "f_grid.csv").read_bytes() == (GOLDEN / "f_grid.csv").read_bytes()
    assert (work / "report" / "results_long.csv").read_bytes() == (GOLDEN / "results_long.csv").read_bytes()
    assert all(LOG_LINE.match(line) for line in err.splitlines())


def test_golden_dataset_hand_oracle():
    with (GOLDEN / "dataset.csv").open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    vulnerable = sorted(r["qualified_name"] for r in rows if r["vulnerable"] == "1")
    assert len(rows) == 14
    assert vulnerable == sorted(
        ["foo", "render", "escape", "merge", "merge.<anonymous@L23C31>", "deepGet", "deepGet.<anonymous@L34C33>"]
    )
    assert not any("test" in r["path"].lower().split("/")[:-1] or "node_modules" in r["path"] for r in rows)


def test_second_run_skips_everything(corpus, capsys):
    assert run(corpus, capsys)[0] == 0
    before = {p: p.read_bytes() for p in (corpus / "work").rglob("*.csv")}
    code, err = run(corpus, capsys)
    assert code == 0
    assert set(statuses(err).values()) == {"skipped"}
    assert before == {p: p.read_bytes() for p in (corpus / "work").rglob("*.csv")}


def test_deleted_dataset_reruns_downstream_only(corpus, capsys):
    assert run(corpus, capsys)[0] == 0
    (corpus / "work" / "dataset.csv").unlink()
    code, err = run(corpus, capsys)
    assert code == 0
    assert statuses(err) == {
        "ingest": "skipped", "resolve": "skipped", "build-dataset": "ran", "sweep": "ran", "report": "ran",
    }  # fmt: skip
    assert (corpus / "work" / "dataset.csv").read_bytes() == (GOLDEN / "dataset.csv").read_bytes()


def test_changed_setting_invalidates_from_that_stage(corpus, capsys):
    assert run(corpus, capsys)[0] == 0
    code, err = run(corpus, capsys, "--seed", "8")
    assert code == 0
    assert statuses(err)["build-dataset"] == "skipped" and statuses(err)["sweep"] == "ran"


def test_manifest_records_hashes(corpus, capsys):
    run(corpus, capsys)
    manifest = PipelineManifest.load(corpus / "work" / MANIFEST_NAME)
    assert set(manifest.stages) == {"ingest", "resolve", "build-dataset", "sweep", "report"}
    entry = manifest.stages["build-dataset"]
    assert len(entry["inputs_hash"]) == 64 and entry["outputs"][0]["hash"]
    assert entry["tool_version"] and entry["created"]
    assert manifest.validate() == []


@pytest.mark.parametrize(
    "config",
    [
        "{not json",
        '{"advisories": []}',
        '{"advisories": [{"source": "nsp", "input": "advisories/nsp.json"}], "resolve": {"mode": "fixture"}}',
        '{"advisories": [{"source": "nsp", "input": "a"}], "resolve": {"fixtures": "g"}, "evaluation": {"fold": 3}}',
    ],
)
def test_bad_config_exits_2(tmp_path, capsys, config):
    (tmp_path / "c.json").write_text(config)
    assert main(["--config", str(tmp_path / "c.json"), "run"]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_missing_input_exits_1(tmp_path, capsys):
    cfg = {"advisories": [{"source": "nsp", "input": "nowhere.json"}], "resolve": {"fixtures": "g"}}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["--config", str(tmp_path / "c.json"), "run"]) == 1
    assert "stage=ingest" in capsys.readouterr().err


def test_bad_resampling_flag_exits_2(tmp_path, capsys):
    assert main(["train", "--dataset", str(GOLDEN / "dataset.csv"), "--algo", "knn", "--resample", "over:0.3", "--out", str(tmp_path)]) == 2


def test_analyze_json_lines(capsys):
    assert main(["analyze", "--file", str(GOLDEN_JS / "foo.js")]) == 0
    out = capsys.readouterr().out.splitlines()
    (rec,) = [json.loads(line) for line in out]
    assert rec["qualified_name"] == "foo" and (rec["start_line"], rec["end_line"]) == (1, 6)
    assert rec["metrics"]["LOC"] == 6 and rec["metrics"]["NOS"] == 3 and len(rec["metrics"]) == 35


def test_stepwise_commands(tmp_path, capsys):
    adv = tmp_path / "adv.json"
    res = tmp_path / "res"
    assert main(["ingest", "--source", "snyk", "--input", str(CORPUS / "advisories" / "snyk"), "--out", str(adv)]) == 0
    fixtures = ["--mode", "fixture", "--fixtures", str(CORPUS / "github")]
    assert main(["resolve", "--advisories", str(adv), *fixtures, "--out", str(res)]) == 0
    queue = tmp_path / "queue.json"
    assert main(["review-export", "--resolutions", str(res), "--out", str(queue)]) == 0
    assert len(json.loads(queue.read_text())) == 3
    assert main(["review-import", "--resolutions", str(res), "--decisions", str(CORPUS / "decisions.json"), *fixtures]) == 0
    assert main(["review-export", "--resolutions", str(res), "--out", str(queue)]) == 0
    assert json.loads(queue.read_text()) == []
    ds = tmp_path / "ds.csv"
    assert main(["build-dataset", "--resolutions", str(res), "--snapshots", str(CORPUS / "snapshots"), "--out", str(ds)]) == 0
    with ds.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert sorted(r["qualified_name"] for r in rows if r["vulnerable"] == "1") == sorted(
        ["foo", "merge", "merge.<anonymous@L23C31>", "deepGet", "deepGet.<anonymous@L34C33>"]
    )


def test_train_sweep_report(tmp_path, capsys):
    ds = str(GOLDEN / "dataset.csv")
    grid = tmp_path / "grid.json"
    grid.write_text('{"k": [1, 3]}')
    common = ["--seed", "3", "--config", str(CORPUS / "config.json")]
    assert main(["train", *common, "--dataset", ds, "--algo", "knn", "--grid", str(grid), "--out", str(tmp_path / "t")]) == 0
    assert {p.name for p in (tmp_path / "t").iterdir()} == {"search_table.csv", "f_grid.csv", "results_long.csv", "model.json"}
    assert json.loads((tmp_path / "t" / "model.json").read_text())["spec"]["algorithm"] == "knn"
    assert main(["sweep", *common, "--dataset", ds, "--algos", "bayes", "--no-rand", "--out", str(tmp_path / "s")]) == 0
    assert main(["rand-check", *common, "--dataset", ds, "--out", str(tmp_path / "r")]) == 0
    longs = [str(tmp_path / "s" / "results_long.csv"), str(tmp_path / "r" / "results_long.csv")]
    assert main(["report", "--results", *longs, "--out", str(tmp_path / "rep")]) == 0
    with (tmp_path / "rep" / "f_grid.csv").open(newline="") as fh:
        grid_rows = list(csv.reader(fh))
    assert grid_rows[0][0] == "algorithm" and grid_rows[-1][0] == "Median"
    bayes = next(r for r in grid_rows if r[0] == "bayes")
    assert bayes[1] != "" and bayes[-1] != ""


def test_jobs_must_be_positive(capsys):
    assert main(["--jobs", "0", "analyze", "--file", str(GOLDEN_JS / "empty.js")]) == 2
