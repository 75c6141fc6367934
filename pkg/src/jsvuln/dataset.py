"""Label functions of ``sha_pre`` snapshots and write the 44-column CSV."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import tarfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path, PurePosixPath

import numpy as np
import requests

from jsvuln.diff import FileDiff, affected_old_range, parse_unified_diff, ranges_intersect, strip_prefix
from jsvuln.github import API_ROOT, FixResolution
from jsvuln.js.functions import ExtractionError, SourceFunction, extract_functions
from jsvuln.js.lexer import LexError, tokenize
from jsvuln.js.metrics import METRIC_NAMES, RATIO_METRICS, MetricVector, compute_metrics

logger = logging.getLogger(__name__)

ID_COLUMNS = ("name", "qualified_name", "path", "url", "start_line", "start_col", "end_line", "end_col")
LABEL_COLUMN = "vulnerable"
HEADER = ID_COLUMNS + METRIC_NAMES + (LABEL_COLUMN,)
TEST_SEGMENTS = frozenset({"test", "tests"})
SKIP_DIRS = frozenset({"node_modules", ".git"})


@dataclass(frozen=True)
class DatasetRow:
    name: str
    qualified_name: str
    path: str
    url: str
    start_line: int
    start_col: int
    end_line: int
    end_col: int
    metrics: tuple
    vulnerable: int

    def fields(self) -> list:
        return [
            self.name, self.qualified_name, self.path, self.url,
            self.start_line, self.start_col, self.end_line, self.end_col,
            *self.metrics, self.vulnerable,
        ]  # fmt: skip


def metric_values(mv: MetricVector) -> tuple:
    """Metric columns as stored in the CSV: ratios rounded to 6 places."""
    out = []
    for name, value in zip(METRIC_NAMES, mv.as_list()):
        if not math.isfinite(value) or value < 0:
            raise ValueError(f"metric {name} has invalid value {value}")
        out.append(round(float(value), 6) if name in RATIO_METRICS else int(value))
    return tuple(out)


def is_test_path(path: str) -> bool:
    dirs = PurePosixPath(path.replace("\\", "/")).parts[:-1]
    return any(part.lower() in TEST_SEGMENTS for part in dirs)


def filter_test_functions(fns: list[SourceFunction]) -> list[SourceFunction]:
    return [f for f in fns if not is_test_path(f.file_path)]


def label_functions(
    fns: list[SourceFunction], patch: list[FileDiff], known_files: set[str] | None = None
) -> dict[SourceFunction, int]:
    """Flag every function whose line span meets a hunk of its file."""
    by_file: dict[str, list[tuple[int, int]]] = {}
    for fd in patch:
        if fd.old_path == "/dev/null":
            continue
        path = strip_prefix(fd.old_path)
        if known_files is not None and path not in known_files:
            logger.warning("patch touches %s, which is not in the snapshot; hunks ignored", path)
            continue
        by_file.setdefault(path, []).extend(affected_old_range(h) for h in fd.hunks)
    flags = {}
    for fn in fns:
        ranges = by_file.get(strip_prefix(fn.file_path), ())
        flags[fn] = int(any(ranges_intersect(fn.span, r) for r in ranges))
    return flags


def analyze_source(source: str, rel_path: str) -> list[tuple[SourceFunction, MetricVector]]:
    fns = extract_functions(tokenize(source), rel_path)
    return [(fn, compute_metrics(fn)) for fn in fns]


def js_files(root: Path) -> list[str]:
    out = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames[:] = sorted(d for d in dirnames if d not in SKIP_DIRS)
        for name in sorted(filenames):
            if name.endswith(".js"):
                out.append(Path(dirpath, name).relative_to(root).as_posix())
    return sorted(out)


def snapshot_rows(repo_slug: str, sha: str, root: Path, patch_text: str) -> list[DatasetRow]:
    """Analyze one snapshot and label its functions against ``patch_text``."""
    files = js_files(root)
    patch = parse_unified_diff(patch_text)
    analyzed: list[tuple[SourceFunction, MetricVector]] = []
    for rel in files:
        if is_test_path(rel):
            continue
        try:
            source = (root / rel).read_text(encoding="utf-8")
            analyzed.extend(analyze_source(source, rel))
        except (UnicodeDecodeError, LexError, ExtractionError) as exc:
            logger.warning("skipping %s@%s:%s: %s", repo_slug, sha[:10], rel, exc)
    fns = filter_test_functions([fn for fn, _ in analyzed])
    flags = label_functions(fns, patch, known_files=set(files))
    rows = []
    for fn, mv in analyzed:
        if fn not in flags:
            continue
        rows.append(
            DatasetRow(
                name=fn.short_name,
                qualified_name=fn.qualified_name,
                path=fn.file_path,
                url=f"https://github.com/{repo_slug}/blob/{sha}/{fn.file_path}",
                start_line=fn.start_line,
                start_col=fn.start_col,
                end_line=fn.end_line,
                end_col=fn.end_col,
                metrics=metric_values(mv),
                vulnerable=flags[fn],
            )
        )
    return rows


class SnapshotStore:
    """Repository trees at given commits, laid out as ``<root>/<owner>/<repo>/<sha>/``.

    With ``download=True`` missing snapshots are fetched as tarballs.
    """

    def __init__(self, root: str | Path, download: bool = False, token: str | None = None):
        self.root = Path(root)
        self.download = download
        self.token = token if token is not None else os.environ.get("GITHUB_TOKEN")

    def path(self, repo_slug: str, sha: str) -> Path:
        return self.root / repo_slug / sha

    def get(self, repo_slug: str, sha: str) -> Path | None:
        target = self.path(repo_slug, sha)
        if target.is_dir():
            return target
        if not self.download:
            return None
        self._download(repo_slug, sha, target)
        return target

    def _download(self, repo_slug: str, sha: str, target: Path) -> None:
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        resp = requests.get(f"{API_ROOT}/repos/{repo_slug}/tarball/{sha}", headers=headers, timeout=120)
        resp.raise_for_status()
        extract_js_from_tarball(resp.content, target)


def extract_js_from_tarball(data: bytes, target: Path) -> None:
    """Unpack the ``.js`` files of a GitHub tarball, dropping the top folder."""
    tmp = target.with_name(target.name + ".partial")
    with tarfile.open(fileobj=io.BytesIO(data), mode="r:*") as tar:
        for member in tar.getmembers():
            parts = PurePosixPath(member.name).parts[1:]
            if not member.isfile() or not parts or not parts[-1].endswith(".js"):
                continue
            if any(p in ("..", "") for p in parts) or PurePosixPath(member.name).is_absolute():
                continue
            dest = tmp.joinpath(*parts)
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_bytes(tar.extractfile(member).read())
    tmp.mkdir(parents=True, exist_ok=True)
    os.replace(tmp, target)


def dedupe_resolutions(resolutions: list[FixResolution]) -> list[FixResolution]:
    """Drop advisories whose (repo, fixing-commit set) was already seen."""
    seen = set()
    out = []
    for res in sorted(resolutions, key=lambda r: r.advisory_id):
        key = (res.repo_slug, frozenset(res.fixing_commits))
        if key in seen:
            logger.info("advisory %s duplicates an earlier fix; dropped", res.advisory_id)
            continue
        seen.add(key)
        out.append(res)
    return out


def build_dataset(resolutions: list[FixResolution], store: SnapshotStore, jobs: int = 1) -> list[DatasetRow]:
    """Rows for every usable resolution, one extraction per (repo, sha_pre)."""
    groups: dict[tuple[str, str], list[str]] = {}
    for res in dedupe_resolutions(resolutions):
        if res.status != "resolved" or not res.sha_pre or res.combined_patch is None:
            logger.info("advisory %s is %s; excluded", res.advisory_id, res.status)
            continue
        groups.setdefault((res.repo_slug, res.sha_pre), []).append(res.combined_patch)

    def work(key):
        slug, sha = key
        root = store.get(slug, sha)
        if root is None:
            logger.warning("no snapshot for %s@%s; skipped", slug, sha)
            return []
        return snapshot_rows(slug, sha, root, "".join(groups[key]))

    keys = sorted(groups)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(work, keys))
    else:
        chunks = [work(k) for k in keys]
    return [row for chunk in chunks for row in chunk]


def _format(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def emit_dataset(rows: list[DatasetRow], out: str | Path) -> dict[str, int]:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for row in rows:
            writer.writerow([_format(v) for v in row.fields()])
    return {"total": len(rows), "vulnerable": sum(r.vulnerable for r in rows)}


def read_dataset(path: str | Path) -> list[DatasetRow]:
    rows = []
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != HEADER:
            raise ValueError(f"{path} does not have the expected dataset header")
        for rec in reader:
            metrics = tuple(
                float(v) if name in RATIO_METRICS else int(v) for name, v in zip(METRIC_NAMES, rec[8:43])
            )
            rows.append(
                DatasetRow(rec[0], rec[1], rec[2], rec[3], *map(int, rec[4:8]), metrics, int(rec[43]))
            )
    return rows


def _flag(value: str) -> int:
    v = value.strip().lower()
    if v in ("1", "1.0", "true", "yes", "vulnerable"):
        return 1
    if v in ("0", "0.0", "false", "no", "", "not vulnerable"):
        return 0
    raise ValueError(f"cannot read label {value!r}")


def load_features(path: str | Path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Metric matrix and labels from a dataset CSV.

    Metric columns are found by name when the header carries all of them,
    otherwise columns 9-43 are used; the label is always the last column.
    """
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if all(name in header for name in METRIC_NAMES):
            cols = [header.index(name) for name in METRIC_NAMES]
        else:
            cols = list(range(8, 43))
        X, y = [], []
        for rec in reader:
            if not rec:
                continue
            X.append([float(rec[c]) if rec[c] != "" else 0.0 for c in cols])
            y.append(_flag(rec[-1]))
    X = np.asarray(X, dtype=float).reshape(-1, len(cols))
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{path} contains non-finite metric values")
    return X, np.asarray(y, dtype=int), list(METRIC_NAMES)
