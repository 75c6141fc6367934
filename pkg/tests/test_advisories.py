import json
import logging

import pytest

from conftest import CORPUS
from jsvuln.advisories import (
    AdvisoryEntry,
    ClassifiedUrl,
    IngestError,
    classify_url,
    classify_urls,
    ingest_advisories,
    load_advisories,
    read_advisories,
    save_advisories,
)


def write(path, data):
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def test_three_records_one_malformed(tmp_path, caplog):
    dump = tmp_path / "dump.jsonl"
    dump.write_text(
        '{"id": 1, "title": "a"}\n{"id": 2, "title": "b", oops}\n{"id": 3, "title": "c"}\n', encoding="utf-8"
    )
    with caplog.at_level(logging.WARNING):
        report = read_advisories(dump, "nsp")
    assert [e.id for e in report.entries] == ["nsp:1", "nsp:3"]
    assert report.skipped == 1
    assert sum("skipping" in r.getMessage() for r in caplog.records) == 1


def test_empty_references(tmp_path):
    (entry,) = ingest_advisories(write(tmp_path / "a.json", [{"id": 9, "references": ""}]), "nsp")
    assert entry.reference_urls == ()


def test_nsp_fixture_with_five_entries(tmp_path):
    records = [
        {"id": 1, "module_name": "m1", "title": "t1", "overview": "see https://github.com/a/b/commit/abc123f"},
        {"id": 2, "module_name": "m2", "title": "t2", "references": "- https://github.com/a/b/pull/42"},
        {"id": 3, "module_name": "m3", "title": "t3", "overview": "", "references": "https://example.org/x"},
        {"id": 4, "module_name": "m4", "title": "t4", "recommendation": "(https://github.com/c/d/issues/5)."},
        {"id": 5, "module_name": "m5", "title": "t5"},
    ]
    entries = ingest_advisories(write(tmp_path / "nsp.json", records), "nsp")
    # expected values written out by hand
    assert [e.id for e in entries] == ["nsp:1", "nsp:2", "nsp:3", "nsp:4", "nsp:5"]
    assert {e.source for e in entries} == {"nsp"}
    assert [e.module_name for e in entries] == ["m1", "m2", "m3", "m4", "m5"]
    assert [e.reference_urls for e in entries] == [
        ("https://github.com/a/b/commit/abc123f",),
        ("https://github.com/a/b/pull/42",),
        ("https://example.org/x",),
        ("https://github.com/c/d/issues/5",),
        (),
    ]


def test_snyk_directory_layout():
    entries = ingest_advisories(CORPUS / "advisories" / "snyk", "snyk")
    assert [e.id for e in entries] == ["snyk:npm:acme-parser:20160110", "snyk:npm:acme-utils:20170501"]
    assert entries[0].module_name == "acme-parser"
    assert entries[1].reference_urls == ("https://github.com/acme/utils/issues/3",)


def test_corpus_nsp_skips_record_without_id():
    report = read_advisories(CORPUS / "advisories" / "nsp.json", "nsp")
    assert [e.id for e in report.entries] == ["nsp:101", "nsp:102", "nsp:104"]
    assert report.skipped == 1


def test_urls_found_anywhere_in_record(tmp_path):
    rec = {"id": 7, "nested": {"deep": ["text https://github.com/x/y/commit/deadbeef, more"]}}
    (entry,) = ingest_advisories(write(tmp_path / "a.json", [rec]), "snyk")
    assert entry.reference_urls == ("https://github.com/x/y/commit/deadbeef",)


def test_duplicate_urls_kept_once(tmp_path):
    url = "https://github.com/a/b/pull/1"
    (entry,) = ingest_advisories(write(tmp_path / "a.json", [{"id": 1, "overview": url, "references": url}]), "nsp")
    assert entry.reference_urls == (url,)


def test_missing_path_is_fatal(tmp_path):
    with pytest.raises(IngestError):
        ingest_advisories(tmp_path / "nope.json", "nsp")


def test_unknown_source_rejected(tmp_path):
    with pytest.raises(ValueError):
        ingest_advisories(write(tmp_path / "a.json", []), "osv")


def test_reingest_is_identical(tmp_path):
    a = ingest_advisories(CORPUS / "advisories", "nsp")
    b = ingest_advisories(CORPUS / "advisories", "nsp")
    assert a == b
    save_advisories(a, tmp_path / "out.json")
    assert load_advisories(tmp_path / "out.json") == a


@pytest.mark.parametrize(
    "url, expected",
    [
        ("https://github.com/a/b/commit/abc123f", ("commit", "a/b", "abc123f")),
        ("https://github.com/a/b/pull/42", ("pull_request", "a/b", 42)),
        ("https://github.com/a/b/issues/3", ("issue", "a/b", 3)),
        ("https://example.org/advisory", ("other", None, None)),
        ("https://github.com/a/b.git/commit/ABCDEF12", ("commit", "a/b", "abcdef12")),
        ("https://github.com/a/b/pull/42/commits/0123456789abcdef", ("commit", "a/b", "0123456789abcdef")),
        ("https://github.com/a/b/commit/xyz", ("other", "a/b", None)),
        ("https://github.com/a/b/commit/abc12", ("other", "a/b", None)),
        ("https://github.com/a/b/pull/0", ("other", "a/b", None)),
        ("https://github.com/a/b", ("other", "a/b", None)),
    ],
)
def test_classify_url(url, expected):
    c = classify_url(url)
    assert (c.kind, c.repo_slug, c.ref_id) == expected
    assert c.url == url


def test_classify_urls_is_total():
    urls = ("https://github.com/a/b/pull/1", "https://npmjs.com/x", "https://github.com/a/b/pull/1")
    out = classify_urls(AdvisoryEntry("nsp:1", "nsp", "", "", "", urls))
    assert len(out) == 3 and [c.url for c in out] == list(urls)
    assert all(isinstance(c, ClassifiedUrl) for c in out)
    for c in out:
        if c.kind == "commit":
            assert 7 <= len(c.ref_id) <= 40
        elif c.kind in ("pull_request", "issue"):
            assert isinstance(c.ref_id, int) and c.ref_id > 0
