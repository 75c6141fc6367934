"""Turn advisory URLs into fixing commits, combined patches and ``sha_pre``.

Two clients share one interface: :class:`LiveClient` talks to the GitHub REST
API (with an on-disk response cache), :class:`FixtureClient` reads the same
payloads from a directory that mirrors the endpoint paths::

    <root>/repos/<owner>/<repo>/commits/<sha>.json
    <root>/repos/<owner>/<repo>/commits/<sha>.diff
    <root>/repos/<owner>/<repo>/pulls/<n>/commits.json
    <root>/repos/<owner>/<repo>/issues/<n>/comments.json
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime
from pathlib import Path

import requests

from jsvuln.advisories import AdvisoryEntry, ClassifiedUrl, classify_url, classify_urls, harvest_urls

logger = logging.getLogger(__name__)

API_ROOT = "https://api.github.com"
DIFF_MEDIA_TYPE = "application/vnd.github.v3.diff"
JSON_MEDIA_TYPE = "application/vnd.github.v3+json"


class GitHubError(RuntimeError):
    pass


class NotFoundError(GitHubError):
    pass


class RateLimitError(GitHubError):
    pass


class ReviewError(ValueError):
    pass


# -- clients -----------------------------------------------------------------


class FixtureClient:
    """Serves API payloads from a directory tree; never touches the network."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.requests: list[str] = []

    def _file(self, path: str, suffix: str) -> Path:
        self.requests.append(path)
        target = self.root / (path.strip("/") + suffix)
        if not target.is_file():
            raise NotFoundError(f"no fixture for {path} ({target})")
        return target

    def get_json(self, path: str):
        return json.loads(self._file(path, ".json").read_text(encoding="utf-8"))

    def get_diff(self, path: str) -> str:
        return self._file(path, ".diff").read_text(encoding="utf-8")


class LiveClient:
    """GitHub REST v3 client with retries, pagination and a response cache.

    Safe to share between threads: sessions are per thread and cache writes
    are serialized per cache key.
    """

    def __init__(
        self,
        token: str | None = None,
        cache_dir: str | Path | None = None,
        max_attempts: int = 5,
        backoff: float = 2.0,
        session_factory=requests.Session,
        sleep=time.sleep,
    ):
        self.token = token if token is not None else os.environ.get("GITHUB_TOKEN")
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._session_factory = session_factory
        self._sleep = sleep
        self._local = threading.local()
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _session(self):
        session = getattr(self._local, "session", None)
        if session is None:
            session = self._session_factory()
            self._local.session = session
        return session

    def _lock(self, key: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(key, threading.Lock())

    def _cache_path(self, key: str) -> Path | None:
        if self.cache_dir is None:
            return None
        return self.cache_dir / (hashlib.sha256(key.encode()).hexdigest() + ".json")

    def _fetch(self, url: str, accept: str) -> tuple[str, str | None]:
        """Return (body, next-page URL) for one request, using the cache."""
        key = f"{accept} {url}"
        cache = self._cache_path(key)
        with self._lock(key):
            if cache is not None and cache.is_file():
                cached = json.loads(cache.read_text(encoding="utf-8"))
                return cached["body"], cached.get("next")
            body, nxt = self._request(url, accept)
            if cache is not None:
                cache.parent.mkdir(parents=True, exist_ok=True)
                fd, tmp = tempfile.mkstemp(dir=cache.parent, suffix=".tmp")
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    json.dump({"url": url, "accept": accept, "body": body, "next": nxt}, fh)
                os.replace(tmp, cache)
            return body, nxt

    def _request(self, url: str, accept: str) -> tuple[str, str | None]:
        headers = {"Accept": accept}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        for attempt in range(self.max_attempts):
            resp = self._session().get(url, headers=headers, timeout=30)
            if resp.status_code == 200:
                return resp.text, resp.links.get("next", {}).get("url")
            if resp.status_code in (404, 410, 422):
                raise NotFoundError(f"{resp.status_code} for {url}")
            limited = resp.status_code == 429 or (
                resp.status_code == 403 and resp.headers.get("X-RateLimit-Remaining") == "0"
            )
            if not limited and resp.status_code < 500:
                raise GitHubError(f"HTTP {resp.status_code} for {url}")
            delay = self.backoff * 2**attempt
            reset = resp.headers.get("X-RateLimit-Reset")
            if limited and reset and reset.isdigit():
                delay = max(delay, min(float(reset) - time.time(), 3600.0))
            logger.warning("GitHub returned %s for %s; retrying in %.1fs", resp.status_code, url, delay)
            self._sleep(delay)
        raise RateLimitError(f"giving up on {url} after {self.max_attempts} attempts")

    def get_json(self, path: str):
        url = API_ROOT + path
        if "?" not in url:
            url += "?per_page=100"
        body, nxt = self._fetch(url, JSON_MEDIA_TYPE)
        data = json.loads(body)
        while isinstance(data, list) and nxt:
            body, nxt = self._fetch(nxt, JSON_MEDIA_TYPE)
            data.extend(json.loads(body))
        return data

    def get_diff(self, path: str) -> str:
        return self._fetch(API_ROOT + path, DIFF_MEDIA_TYPE)[0]


# -- endpoint helpers ----------------------------------------------------------


def get_commit(client, slug: str, sha: str) -> dict:
    return client.get_json(f"/repos/{slug}/commits/{sha}")


def get_commit_diff(client, slug: str, sha: str) -> str:
    return client.get_diff(f"/repos/{slug}/commits/{sha}")


def list_pull_commits(client, slug: str, number: int) -> list[dict]:
    return client.get_json(f"/repos/{slug}/pulls/{number}/commits")


def list_issue_comments(client, slug: str, number: int) -> list[dict]:
    return client.get_json(f"/repos/{slug}/issues/{number}/comments")


# -- resolution model ----------------------------------------------------------


@dataclass
class ReviewCandidate:
    url: str
    issue_number: int
    commit_shas: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class ReviewDecision:
    advisory_id: str
    commit_sha: str
    accepted: bool
    reviewer_note: str = ""


@dataclass
class FixResolution:
    advisory_id: str
    repo_slug: str | None
    status: str = "unresolved"  # unresolved | pending_review | needs_patch | resolved
    fixing_commits: list[str] = field(default_factory=list)
    review_candidates: list[ReviewCandidate] = field(default_factory=list)
    sha_pre: str | None = None
    combined_patch: str | None = None
    dead_urls: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_json(self, patch_ref: str | None = None) -> dict:
        data = asdict(self)
        data["combined_patch"] = patch_ref
        return data

    @classmethod
    def from_json(cls, data: dict, patch_text: str | None = None) -> FixResolution:
        data = dict(data)
        data["review_candidates"] = [ReviewCandidate(**c) for c in data.get("review_candidates", [])]
        data["combined_patch"] = patch_text
        return cls(**data)


def _add(seq: list[str], sha: str) -> None:
    if sha not in seq:
        seq.append(sha)


def _pick_repo(urls: list[ClassifiedUrl]) -> str | None:
    slugs = [u.repo_slug for u in urls if u.kind != "other" and u.repo_slug]
    if not slugs:
        return None
    counts = Counter(slugs)
    best = max(counts.values())
    return next(s for s in slugs if counts[s] == best)


def _expand(client, cu: ClassifiedUrl) -> list[str]:
    if cu.kind == "commit":
        return [get_commit(client, cu.repo_slug, cu.ref_id)["sha"]]
    if cu.kind == "pull_request":
        return [c["sha"] for c in list_pull_commits(client, cu.repo_slug, cu.ref_id)]
    return []


def resolve_fixing_commits(entry: AdvisoryEntry, urls: list[ClassifiedUrl], client) -> FixResolution:
    """Collect fixing commits from commit and PR URLs; queue issue mentions for review."""
    slug = _pick_repo(urls)
    res = FixResolution(advisory_id=entry.id, repo_slug=slug)
    seen_candidates: set[str] = set()
    for cu in urls:
        if cu.kind == "other":
            continue
        if cu.repo_slug != slug:
            res.notes.append(f"ignored URL outside {slug}: {cu.url}")
            continue
        try:
            if cu.kind in ("commit", "pull_request"):
                for sha in _expand(client, cu):
                    _add(res.fixing_commits, sha)
                continue
            comments = list_issue_comments(client, slug, cu.ref_id)
        except NotFoundError:
            logger.info("dead URL %s (%s)", cu.url, entry.id)
            res.dead_urls.append(cu.url)
            continue
        for comment in comments:
            for url in harvest_urls(comment.get("body") or ""):
                mention = classify_url(url)
                if mention.kind not in ("commit", "pull_request") or url in seen_candidates:
                    continue
                seen_candidates.add(url)
                if mention.repo_slug != slug:
                    res.notes.append(f"ignored candidate outside {slug}: {url}")
                    continue
                try:
                    shas = _expand(client, mention)
                except NotFoundError:
                    res.dead_urls.append(url)
                    continue
                res.review_candidates.append(ReviewCandidate(url, cu.ref_id, shas))
    res.review_candidates = [
        c for c in res.review_candidates if not set(c.commit_shas) <= set(res.fixing_commits)
    ]
    res.status = _status(res)
    return res


def _status(res: FixResolution) -> str:
    if res.combined_patch is not None and res.fixing_commits:
        return "resolved"
    if res.fixing_commits:
        return "needs_patch"
    if res.review_candidates:
        return "pending_review"
    return "unresolved"


def apply_review_decisions(res: FixResolution, decisions: list[ReviewDecision]) -> FixResolution:
    """Fold manual review outcomes into the fixing-commit list."""
    pending = {sha for c in res.review_candidates for sha in c.commit_shas}
    for d in decisions:
        if d.advisory_id != res.advisory_id:
            raise ReviewError(f"decision for {d.advisory_id} applied to {res.advisory_id}")
        if d.commit_sha not in pending:
            raise ReviewError(f"{d.commit_sha} is not a review candidate of {res.advisory_id}")
    fixing = list(res.fixing_commits)
    decided = set()
    for d in decisions:
        decided.add(d.commit_sha)
        if d.accepted:
            _add(fixing, d.commit_sha)
    candidates = []
    for c in res.review_candidates:
        left = [s for s in c.commit_shas if s not in decided]
        if left:
            candidates.append(ReviewCandidate(c.url, c.issue_number, left))
    changed = fixing != res.fixing_commits
    out = replace(
        res,
        fixing_commits=fixing,
        review_candidates=candidates,
        combined_patch=None if changed else res.combined_patch,
        sha_pre=None if changed else res.sha_pre,
    )
    out.status = _status(out)
    return out


def _timestamp(value: str | None) -> datetime:
    if not value:
        return datetime.max
    return datetime.fromisoformat(value.replace("Z", "+00:00")).replace(tzinfo=None)


def commit_order_key(commit: dict) -> tuple:
    """Author time, then committer time, then sha."""
    meta = commit.get("commit", {})
    return (
        _timestamp(meta.get("author", {}).get("date")),
        _timestamp(meta.get("committer", {}).get("date")),
        commit["sha"],
    )


def fetch_combined_patch(res: FixResolution, client) -> FixResolution:
    """Concatenate the fixing commits' diffs in time order and locate ``sha_pre``."""
    if not res.fixing_commits:
        raise ValueError(f"{res.advisory_id} has no fixing commits")
    commits = []
    try:
        for sha in res.fixing_commits:
            commit = get_commit(client, res.repo_slug, sha)
            commits.append((commit, get_commit_diff(client, res.repo_slug, sha)))
    except GitHubError as exc:
        logger.warning("cannot fetch fix for %s: %s", res.advisory_id, exc)
        return replace(
            res, status="unresolved", combined_patch=None, sha_pre=None, notes=res.notes + [f"patch fetch failed: {exc}"]
        )
    commits.sort(key=lambda pair: commit_order_key(pair[0]))
    patch = "".join(d if d.endswith("\n") or not d else d + "\n" for _, d in commits)
    parents = commits[0][0].get("parents") or []
    if not parents:
        return replace(
            res,
            status="unresolved",
            combined_patch=patch,
            sha_pre=None,
            notes=res.notes + ["earliest fixing commit has no parent"],
        )
    return replace(res, status="resolved", combined_patch=patch, sha_pre=parents[0]["sha"])


def resolve_advisory(entry: AdvisoryEntry, client) -> FixResolution:
    res = resolve_fixing_commits(entry, classify_urls(entry), client)
    if res.fixing_commits:
        res = fetch_combined_patch(res, client)
    return res


def resolve_all(entries: list[AdvisoryEntry], client, jobs: int = 1) -> list[FixResolution]:
    if jobs <= 1:
        return [resolve_advisory(e, client) for e in entries]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda e: resolve_advisory(e, client), entries))


# -- persistence ---------------------------------------------------------------


def safe_name(advisory_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", advisory_id)


def save_resolution(res: FixResolution, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = safe_name(res.advisory_id)
    patch_ref = None
    if res.combined_patch is not None:
        patch_ref = name + ".diff"
        (out_dir / patch_ref).write_text(res.combined_patch, encoding="utf-8", newline="\n")
    else:
        (out_dir / (name + ".diff")).unlink(missing_ok=True)
    target = out_dir / (name + ".json")
    target.write_text(json.dumps(res.to_json(patch_ref), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return target


def load_resolution(path: str | Path) -> FixResolution:
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    ref = data.get("combined_patch")
    patch = (path.parent / ref).read_text(encoding="utf-8") if ref else None
    return FixResolution.from_json(data, patch)


def load_resolutions(directory: str | Path) -> list[FixResolution]:
    return [load_resolution(p) for p in sorted(Path(directory).glob("*.json"))]


def export_review_queue(resolutions: list[FixResolution]) -> list[dict]:
    queue = []
    for res in resolutions:
        for c in res.review_candidates:
            queue.append(
                {
                    "advisory_id": res.advisory_id,
                    "repo_slug": res.repo_slug,
                    "url": c.url,
                    "issue_number": c.issue_number,
                    "commit_shas": list(c.commit_shas),
                }
            )
    return queue


def load_decisions(path: str | Path) -> list[ReviewDecision]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        ReviewDecision(d["advisory_id"], d["commit_sha"], bool(d["accepted"]), d.get("reviewer_note", ""))
        for d in raw
    ]
