import csv
import io
import logging
import tarfile

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import EXAMPLE_DIFF, EXAMPLE_JS
from jsvuln.dataset import (
    HEADER,
    DatasetRow,
    SnapshotStore,
    build_dataset,
    dedupe_resolutions,
    emit_dataset,
    extract_js_from_tarball,
    filter_test_functions,
    is_test_path,
    label_functions,
    load_features,
    read_dataset,
    snapshot_rows,
)
from jsvuln.diff import Hunk, FileDiff, parse_unified_diff
from jsvuln.github import FixResolution
from jsvuln.js.functions import SourceFunction, extract_functions
from jsvuln.js.lexer import tokenize
from jsvuln.js.metrics import METRIC_NAMES


def fns_of(source, path):
    return extract_functions(tokenize(source), path)


def test_example_pair_flags_foo():
    (foo,) = fns_of(EXAMPLE_JS, "path/to/original.js")
    assert label_functions([foo], parse_unified_diff(EXAMPLE_DIFF)) == {foo: 1}


def test_untouched_file_is_not_flagged():
    (foo,) = fns_of(EXAMPLE_JS, "other.js")
    assert label_functions([foo], parse_unified_diff(EXAMPLE_DIFF)) == {foo: 0}


def test_nested_child_and_parent_both_flagged():
    src = "function outer() {\n  function inner() {\n    return 1;\n  }\n  return inner();\n}\nfunction far() {}\n"
    outer, inner, far = fns_of(src, "n.js")
    patch = [FileDiff("a/n.js", "b/n.js", [Hunk(3, 1, 3, 1)])]
    assert label_functions([outer, inner, far], patch) == {outer: 1, inner: 1, far: 0}


@pytest.mark.parametrize(
    "path, is_test",
    [
        ("test/app.js", True),
        ("src/contest.js", False),
        ("lib/tests/util.js", True),
        ("lib/Tests/util.js", True),
        ("tests.js", False),
        ("lib/testing/x.js", False),
    ],
)
def test_test_path_rule(path, is_test):
    assert is_test_path(path) is is_test
    fn = SourceFunction("f", path, 1, 1, 1, 10, [])
    assert filter_test_functions([fn]) == ([] if is_test else [fn])


SNAPSHOT = {
    "lib/a.js": "function one() {\n  return 1;\n}\nfunction two(x) {\n  return x + 1;\n}\nfunction three() {\n  return 3;\n}\n",
    "lib/b.js": "function four() {\n  return 4;\n}\nfunction five() {\n  return 5;\n}\n",
    "lib/c.js": "function six() { return 6; }\nfunction seven() { return 7; }\n",
    "test/t.js": "function t() { return 0; }\n",
    "node_modules/x/index.js": "function dep() {}\n",
    "README.md": "not code",
}
PATCH = (
    "--- a/lib/a.js\n+++ b/lib/a.js\n@@ -5,1 +5,1 @@\n-  return x + 1;\n+  return x + 2;\n"
    "--- a/lib/b.js\n+++ b/lib/b.js\n@@ -2,1 +2,2 @@\n-  return 4;\n+  check();\n+  return 4;\n"
    "--- a/lib/gone.js\n+++ b/lib/gone.js\n@@ -1,1 +1,1 @@\n-a\n+b\n"
)


@pytest.fixture
def snapshot(tmp_path):
    root = tmp_path / "snap" / "o" / "r" / "abc"
    for rel, text in SNAPSHOT.items():
        (root / rel).parent.mkdir(parents=True, exist_ok=True)
        (root / rel).write_text(text, encoding="utf-8")
    return root


def test_fixture_snapshot_seven_functions_two_vulnerable(snapshot, tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        rows = snapshot_rows("o/r", "abc", snapshot, PATCH)
    assert "lib/gone.js" in caplog.text
    assert [(r.path, r.qualified_name, r.vulnerable) for r in rows] == [
        ("lib/a.js", "one", 0), ("lib/a.js", "two", 1), ("lib/a.js", "three", 0),
        ("lib/b.js", "four", 1), ("lib/b.js", "five", 0),
        ("lib/c.js", "six", 0), ("lib/c.js", "seven", 0),
    ]  # fmt: skip
    assert rows[1].url == "https://github.com/o/r/blob/abc/lib/a.js"
    assert (rows[1].start_line, rows[1].start_col, rows[1].end_line, rows[1].end_col) == (4, 1, 6, 1)
    out = tmp_path / "ds.csv"
    assert emit_dataset(rows, out) == {"total": 7, "vulnerable": 2}
    lines = out.read_text(encoding="utf-8").split("\n")
    assert len(lines) == 9 and lines[-1] == ""
    assert "\r" not in out.read_text(encoding="utf-8")


def test_every_flag_reverifies(snapshot):
    rows = snapshot_rows("o/r", "abc", snapshot, PATCH)
    ranges = {"lib/a.js": [(5, 5)], "lib/b.js": [(2, 3)]}
    for r in rows:
        hit = any(max(r.start_line, lo) <= min(r.end_line, hi) for lo, hi in ranges.get(r.path, []))
        assert r.vulnerable == int(hit)


def test_empty_dataset_is_header_only(tmp_path):
    out = tmp_path / "e.csv"
    assert emit_dataset([], out) == {"total": 0, "vulnerable": 0}
    assert out.read_text().strip().split(",") == list(HEADER)
    assert len(HEADER) == 44 and HEADER[-1] == "vulnerable"


def test_csv_round_trip_exact(tmp_path, snapshot):
    rows = snapshot_rows("o/r", "abc", snapshot, PATCH)
    odd = DatasetRow('a,"b"', 'x.a,"b"', "dir with space/f,1.js", "u", 1, 2, 3, 4, rows[0].metrics, 1)
    rows.append(odd)
    out = tmp_path / "rt.csv"
    emit_dataset(rows, out)
    assert read_dataset(out) == rows
    with out.open(newline="") as fh:
        recs = list(csv.reader(fh))
    assert all(len(r) == 44 for r in recs)
    assert recs[-1][0] == 'a,"b"'


def test_load_features(tmp_path, snapshot):
    rows = snapshot_rows("o/r", "abc", snapshot, PATCH)
    emit_dataset(rows, tmp_path / "d.csv")
    X, y, names = load_features(tmp_path / "d.csv")
    assert X.shape == (7, 35) and names == list(METRIC_NAMES)
    assert y.tolist() == [r.vulnerable for r in rows]


spans = st.tuples(st.integers(1, 40), st.integers(0, 10)).map(lambda t: (t[0], t[0] + t[1]))


@given(st.lists(spans, min_size=1, max_size=6), st.integers(1, 40), st.integers(0, 5), st.integers(0, 5), st.integers(1, 5))
def test_labeling_is_monotone(fn_spans, start, old_len, new_len, grow):
    fns = [SourceFunction(f"f{i}", "x.js", lo, 1, hi, 1, []) for i, (lo, hi) in enumerate(fn_spans)]
    small = label_functions(fns, [FileDiff("a/x.js", "b/x.js", [Hunk(start, old_len, start, new_len)])])
    big = label_functions(fns, [FileDiff("a/x.js", "b/x.js", [Hunk(start, old_len + grow, start, new_len)])])
    assert all(big[f] >= small[f] for f in fns)


def res(aid, slug, commits, sha_pre="p", patch=""):
    return FixResolution(aid, slug, "resolved", list(commits), [], sha_pre, patch)


def test_dedupe_by_fix_set():
    out = dedupe_resolutions([res("snyk:x", "o/r", ["b", "a"]), res("nsp:1", "o/r", ["a", "b"]), res("nsp:2", "o/r", ["c"])])
    assert [r.advisory_id for r in out] == ["nsp:1", "nsp:2"]


def test_build_dataset_groups_by_sha_pre(snapshot):
    store = SnapshotStore(snapshot.parents[2])
    a = res("nsp:1", "o/r", ["x"], "abc", PATCH.split("--- a/lib/b.js")[0])
    b = res("nsp:2", "o/r", ["y"], "abc", "--- a/lib/b.js" + PATCH.split("--- a/lib/b.js")[1])
    missing = res("nsp:3", "o/r", ["z"], "nope", PATCH)
    pending = FixResolution("nsp:4", "o/r", "pending_review")
    rows = build_dataset([a, b, missing, pending], store, jobs=2)
    assert len(rows) == 7 and sum(r.vulnerable for r in rows) == 2


def test_tarball_extraction_keeps_only_js(tmp_path):
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w:gz") as tar:
        for name, data in [("top/lib/a.js", b"function a() {}\n"), ("top/README.md", b"x"), ("top/../evil.js", b"x")]:
            info = tarfile.TarInfo(name)
            info.size = len(data)
            tar.addfile(info, io.BytesIO(data))
    target = tmp_path / "o" / "r" / "sha"
    extract_js_from_tarball(buf.getvalue(), target)
    assert sorted(p.relative_to(target).as_posix() for p in target.rglob("*") if p.is_file()) == ["lib/a.js"]
    assert SnapshotStore(tmp_path).get("o/r", "sha") == target
    assert SnapshotStore(tmp_path).get("o/r", "other") is None
