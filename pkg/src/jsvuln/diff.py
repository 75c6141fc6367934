"""Unified diff parsing and hunk range arithmetic."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

HUNK_HEADER = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@(.*)$")
# Header paths end at a tab or a run of two spaces followed by a timestamp.
_PATH_END = re.compile(r"\t|\s{2,}")

TAGS = {" ": "context", "+": "add", "-": "del"}
PREFIXES = {v: k for k, v in TAGS.items()}


class DiffParseError(ValueError):
    pass


class RangeError(ValueError):
    pass


@dataclass
class Hunk:
    old_start: int
    old_len: int
    new_start: int
    new_len: int
    lines: list[tuple[str, str]] = field(default_factory=list)
    section: str = ""

    @property
    def header(self) -> str:
        return f"@@ -{self.old_start},{self.old_len} +{self.new_start},{self.new_len} @@{self.section}"

    def check(self) -> None:
        old = sum(1 for tag, _ in self.lines if tag != "add")
        new = sum(1 for tag, _ in self.lines if tag != "del")
        if old != self.old_len or new != self.new_len:
            raise DiffParseError(
                f"hunk {self.header.strip()} declares {self.old_len}/{self.new_len} lines "
                f"but contains {old}/{new}"
            )


@dataclass
class FileDiff:
    old_path: str
    new_path: str
    hunks: list[Hunk] = field(default_factory=list)

    def serialize(self) -> str:
        out = [f"--- {self.old_path}", f"+++ {self.new_path}"]
        for h in self.hunks:
            out.append(h.header)
            out.extend(PREFIXES[tag] + text for tag, text in h.lines)
        return "\n".join(out) + "\n"


def _header_path(rest: str) -> str:
    return _PATH_END.split(rest, maxsplit=1)[0].strip()


def parse_unified_diff(text: str) -> list[FileDiff]:
    """Parse unified diff text (possibly several concatenated patches).

    Lines outside of ``---``/``+++`` headers and hunks (``diff --git``,
    ``index``, commit messages, diffstats) are skipped. A hunk whose body
    ends before its declared line counts are met raises
    :class:`DiffParseError`.
    """
    lines = text.splitlines()
    diffs: list[FileDiff] = []
    current: FileDiff | None = None
    i = 0
    while i < len(lines):
        line = lines[i]
        if line.startswith("--- ") and i + 1 < len(lines) and lines[i + 1].startswith("+++ "):
            current = FileDiff(_header_path(line[4:]), _header_path(lines[i + 1][4:]))
            diffs.append(current)
            i += 2
            continue
        m = HUNK_HEADER.match(line)
        if m and current is not None:
            hunk = Hunk(
                old_start=int(m.group(1)),
                old_len=int(m.group(2)) if m.group(2) is not None else 1,
                new_start=int(m.group(3)),
                new_len=int(m.group(4)) if m.group(4) is not None else 1,
                section=m.group(5),
            )
            i = _read_hunk(lines, i + 1, hunk)
            current.hunks.append(hunk)
            continue
        i += 1
    return diffs


def _read_hunk(lines: list[str], i: int, hunk: Hunk) -> int:
    old_left, new_left = hunk.old_len, hunk.new_len
    while old_left > 0 or new_left > 0:
        if i >= len(lines):
            hunk.check()
            raise DiffParseError(f"hunk {hunk.header.strip()} truncated at end of input")
        line = lines[i]
        if line.startswith("\\"):
            # "\ No newline at end of file"
            i += 1
            continue
        tag = TAGS.get(line[:1]) if line else "context"
        if tag is None or (tag == "add" and new_left == 0) or (tag == "del" and old_left == 0) or (
            tag == "context" and (old_left == 0 or new_left == 0)
        ):
            hunk.check()
            raise DiffParseError(f"unexpected line in hunk {hunk.header.strip()}: {line!r}")
        hunk.lines.append((tag, line[1:]))
        if tag != "add":
            old_left -= 1
        if tag != "del":
            new_left -= 1
        i += 1
    while i < len(lines) and lines[i].startswith("\\"):
        i += 1
    return i


def affected_old_range(h: Hunk) -> tuple[int, int]:
    """Lines of the pre-fix file considered touched by ``h``.

    The range starts at the old start line and is as long as the longer side
    of the hunk, so that growing edits still overlap the original span.
    """
    width = max(h.old_len, h.new_len)
    if width == 0:
        return h.old_start, h.old_start
    return h.old_start, h.old_start + width - 1


def ranges_intersect(a: tuple[int, int], b: tuple[int, int]) -> bool:
    for lo, hi in (a, b):
        if lo > hi:
            raise RangeError(f"inverted range [{lo},{hi}]")
    return max(a[0], b[0]) <= min(a[1], b[1])


def strip_prefix(path: str) -> str:
    """Normalize a diff header path to a repository-relative path."""
    if path.startswith(("a/", "b/")):
        path = path[2:]
    return path.lstrip("/")
