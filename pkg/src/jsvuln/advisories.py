"""Load nsp / Snyk advisory dumps and classify the URLs they mention."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from urllib.parse import urlsplit

logger = logging.getLogger(__name__)

SOURCES = ("nsp", "snyk")

URL_RE = re.compile(r"https?://[^\s<>\"'`\\]+", re.IGNORECASE)
_TRAILING = ".,;:!?)]}>*'\""

_GITHUB_HOSTS = {"github.com", "www.github.com"}
_COMMIT_PATH = re.compile(r"^/([^/]+)/([^/]+)/(?:pull/\d+/)?commits?/([0-9a-fA-F]{7,40})(?:[/?#.]|$)")
_PULL_PATH = re.compile(r"^/([^/]+)/([^/]+)/pulls?/(\d+)(?:[/?#]|$)")
_ISSUE_PATH = re.compile(r"^/([^/]+)/([^/]+)/issues/(\d+)(?:[/?#]|$)")
_REPO_PATH = re.compile(r"^/([^/]+)/([^/]+)")


class IngestError(OSError):
    pass


@dataclass(frozen=True)
class AdvisoryEntry:
    id: str
    source: str
    module_name: str
    title: str
    description: str
    reference_urls: tuple[str, ...] = ()

    def to_json(self) -> dict:
        data = asdict(self)
        data["reference_urls"] = list(self.reference_urls)
        return data

    @classmethod
    def from_json(cls, data: dict) -> AdvisoryEntry:
        return cls(
            id=data["id"],
            source=data["source"],
            module_name=data.get("module_name", ""),
            title=data.get("title", ""),
            description=data.get("description", ""),
            reference_urls=tuple(data.get("reference_urls", ())),
        )


@dataclass(frozen=True)
class ClassifiedUrl:
    url: str
    kind: str  # commit | pull_request | issue | other
    repo_slug: str | None = None
    ref_id: str | int | None = None


@dataclass
class IngestReport:
    entries: list[AdvisoryEntry] = field(default_factory=list)
    skipped: int = 0


def is_valid_url(url: str) -> bool:
    try:
        parts = urlsplit(url)
    except ValueError:
        return False
    return parts.scheme in ("http", "https") and bool(parts.netloc) and " " not in url


def _clean(url: str) -> str:
    # Markdown links leave a ")" behind; only strip it when unbalanced.
    while url and url[-1] in _TRAILING:
        if url[-1] == ")" and url.count("(") >= url.count(")"):
            break
        url = url[:-1]
    return url


def harvest_urls(value) -> list[str]:
    """All URLs in any string nested inside ``value``, in document order."""
    found: list[str] = []

    def walk(v):
        if isinstance(v, str):
            found.extend(_clean(m.group(0)) for m in URL_RE.finditer(v))
        elif isinstance(v, dict):
            for item in v.values():
                walk(item)
        elif isinstance(v, list):
            for item in v:
                walk(item)

    walk(value)
    return list(dict.fromkeys(u for u in found if is_valid_url(u)))


def _first(record: dict, *keys: str) -> str:
    for key in keys:
        value = record.get(key)
        if isinstance(value, str) and value:
            return value
    return ""


def normalize_record(record, source: str) -> AdvisoryEntry | None:
    """Map one raw advisory onto :class:`AdvisoryEntry`; None if unusable."""
    if not isinstance(record, dict):
        return None
    raw_id = record.get("id")
    if raw_id is None or raw_id == "":
        return None
    description = _first(record, "overview", "description", "details")
    return AdvisoryEntry(
        id=f"{source}:{raw_id}",
        source=source,
        module_name=_first(record, "module_name", "moduleName", "packageName", "package_name"),
        title=_first(record, "title", "summary"),
        description=description,
        reference_urls=tuple(harvest_urls(record)),
    )


def _documents(path: Path) -> list[tuple[str, object | None]]:
    """(label, parsed JSON or None when malformed) for every document."""
    if path.is_dir():
        out = []
        for p in sorted(path.rglob("*.json")):
            out.extend(_documents(p))
        return out
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        # Fall back to JSON lines; each malformed line is its own bad record.
        docs = []
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                docs.append((f"{path}:{n}", json.loads(line)))
            except json.JSONDecodeError:
                docs.append((f"{path}:{n}", None))
        return docs
    if isinstance(data, list):
        return [(f"{path}[{i}]", item) for i, item in enumerate(data)]
    return [(str(path), data)]


def read_advisories(path: str | Path, source: str) -> IngestReport:
    if source not in SOURCES:
        raise ValueError(f"unknown advisory source {source!r}")
    path = Path(path)
    if not path.exists():
        raise IngestError(f"no such file or directory: {path}")
    report = IngestReport()
    seen: set[str] = set()
    for label, doc in _documents(path):
        entry = normalize_record(doc, source) if doc is not None else None
        if entry is None:
            logger.warning("skipping unparseable advisory record %s", label)
            report.skipped += 1
            continue
        if entry.id in seen:
            logger.warning("skipping duplicate advisory %s (%s)", entry.id, label)
            report.skipped += 1
            continue
        seen.add(entry.id)
        report.entries.append(entry)
    return report


def ingest_advisories(path: str | Path, source: str) -> list[AdvisoryEntry]:
    return read_advisories(path, source).entries


def classify_url(url: str) -> ClassifiedUrl:
    try:
        parts = urlsplit(url)
    except ValueError:
        return ClassifiedUrl(url, "other")
    if parts.hostname not in _GITHUB_HOSTS:
        return ClassifiedUrl(url, "other")
    path = parts.path
    for kind, pattern in (("commit", _COMMIT_PATH), ("pull_request", _PULL_PATH), ("issue", _ISSUE_PATH)):
        m = pattern.match(path)
        if m:
            slug = f"{m.group(1)}/{_repo_name(m.group(2))}"
            ref = m.group(3).lower() if kind == "commit" else int(m.group(3))
            if kind != "commit" and ref <= 0:
                break
            return ClassifiedUrl(url, kind, slug, ref)
    m = _REPO_PATH.match(path)
    slug = f"{m.group(1)}/{_repo_name(m.group(2))}" if m else None
    return ClassifiedUrl(url, "other", slug)


def _repo_name(name: str) -> str:
    return name[:-4] if name.endswith(".git") else name


def classify_urls(entry: AdvisoryEntry) -> list[ClassifiedUrl]:
    return [classify_url(u) for u in entry.reference_urls]


def save_advisories(entries: list[AdvisoryEntry], out: str | Path) -> None:
    Path(out).write_text(json.dumps([e.to_json() for e in entries], indent=2) + "\n", encoding="utf-8")


def load_advisories(path: str | Path) -> list[AdvisoryEntry]:
    return [AdvisoryEntry.from_json(d) for d in json.loads(Path(path).read_text(encoding="utf-8"))]
