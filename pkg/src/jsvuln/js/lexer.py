"""Hand-written JavaScript tokenizer.

Covers ES2017-level syntax (plus a few later punctuators such as ``?.`` and
``??``). JSX and decorators are not supported and raise :class:`LexError`.
Comments and line breaks are kept as tokens so that line-based metrics can be
computed from the token stream alone.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

KEYWORDS = frozenset(
    """
    await break case catch class const continue debugger default delete do
    else export extends finally for function if import in instanceof let new
    return super switch this throw try typeof var void while with yield
    null true false
    """.split()
)

# Longest first so the regex alternation picks the maximal munch.
PUNCTUATORS = sorted(
    """
    >>>= ... === !== **= <<= >>= >>> => == != <= >= && || ?? ?. ++ -- += -= *=
    /= %= &= |= ^= << >> ** { } ( ) [ ] ; , < > + - * / % & | ^ ! ~ ? : = .
    """.split(),
    key=len,
    reverse=True,
)

_PUNCT_RE = re.compile("|".join(re.escape(p) for p in PUNCTUATORS))
_NUMBER_RE = re.compile(
    r"""
    0[xX][0-9a-fA-F]+n?
    | 0[oO][0-7]+n?
    | 0[bB][01]+n?
    | (?: \d+\.?\d* | \.\d+ ) (?:[eE][+-]?\d+)? n?
    """,
    re.VERBOSE,
)
_LINE_BREAKS = "\n\r\u2028\u2029"

# A "/" after one of these starts a regex literal rather than a division.
_REGEX_AFTER_KEYWORDS = frozenset(
    "return typeof instanceof in of new delete void throw case do else yield await".split()
)
_DIVISION_AFTER_PUNCT = frozenset({")", "]", "}", "++", "--"})


class LexError(ValueError):
    """Raised for malformed or unsupported source text."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int
    offset: int = field(default=0, compare=False)

    @property
    def end_line(self) -> int:
        if self.kind == "eol":
            return self.line
        return self.line + _count_breaks(self.text)

    @property
    def end_column(self) -> int:
        """Column of the last character of the token (1-based, inclusive)."""
        if self.kind == "eol":
            return self.column
        last = max(self.text.rfind(c) for c in _LINE_BREAKS)
        if last < 0:
            return self.column + len(self.text) - 1
        return len(self.text) - last - 1

    @property
    def is_comment(self) -> bool:
        return self.kind in ("comment_line", "comment_block")

    @property
    def is_code(self) -> bool:
        return self.kind not in ("comment_line", "comment_block", "eol")


def _count_breaks(text: str) -> int:
    return len(re.findall(r"\r\n|[\n\r\u2028\u2029]", text))


def _is_id_start(ch: str) -> bool:
    return ch.isalpha() or ch in "_$" or (ord(ch) > 127 and ch.isidentifier())


def _is_id_part(ch: str) -> bool:
    return ch.isalnum() or ch in "_$\u200c\u200d" or (ord(ch) > 127 and ("a" + ch).isidentifier())


class _Lexer:
    def __init__(self, source: str):
        self.src = source
        self.pos = 0
        self.line = 1
        self.col = 1
        self.tokens: list[Token] = []

    # -- helpers -----------------------------------------------------------
    def _advance_over(self, text: str) -> None:
        i = 0
        while i < len(text):
            ch = text[i]
            if ch == "\r" and text[i + 1 : i + 2] == "\n":
                i += 2
                self.line += 1
                self.col = 1
                continue
            if ch in _LINE_BREAKS:
                self.line += 1
                self.col = 1
            else:
                self.col += 1
            i += 1
        self.pos += len(text)

    def _emit(self, kind: str, text: str) -> None:
        self.tokens.append(Token(kind, text, self.line, self.col, self.pos))
        self._advance_over(text)

    def _last_significant(self) -> Token | None:
        for tok in reversed(self.tokens):
            if tok.is_code:
                return tok
        return None

    def _regex_allowed(self) -> bool:
        prev = self._last_significant()
        if prev is None:
            return True
        if prev.kind == "keyword":
            return prev.text in _REGEX_AFTER_KEYWORDS or prev.text not in ("this", "super", "null", "true", "false")
        if prev.kind == "punctuator":
            return prev.text not in _DIVISION_AFTER_PUNCT or prev.text == "}"
        return False

    # -- scanners ----------------------------------------------------------
    def _scan_string(self, start: int) -> int:
        quote = self.src[start]
        i = start + 1
        while i < len(self.src):
            ch = self.src[i]
            if ch == "\\":
                i += 2
                continue
            if ch == quote:
                return i + 1
            if ch in "\n\r":
                break
            i += 1
        raise LexError("unterminated string literal", self.line, self.col)

    def _scan_template(self, start: int) -> int:
        i = start + 1
        while i < len(self.src):
            ch = self.src[i]
            if ch == "\\":
                i += 2
            elif ch == "`":
                return i + 1
            elif ch == "$" and self.src[i + 1 : i + 2] == "{":
                i = self._scan_template_expr(i + 2)
            else:
                i += 1
        raise LexError("unterminated template literal", self.line, self.col)

    def _scan_template_expr(self, i: int) -> int:
        depth = 1
        while i < len(self.src):
            ch = self.src[i]
            if ch in "'\"":
                i = self._scan_string(i)
            elif ch == "`":
                i = self._scan_template(i)
            elif ch == "/" and self.src[i + 1 : i + 2] == "*":
                end = self.src.find("*/", i + 2)
                if end < 0:
                    break
                i = end + 2
            elif ch == "{":
                depth += 1
                i += 1
            elif ch == "}":
                depth -= 1
                i += 1
                if depth == 0:
                    return i
            else:
                i += 1
        raise LexError("unterminated template literal", self.line, self.col)

    def _scan_regex(self, start: int) -> int | None:
        i = start + 1
        in_class = False
        while i < len(self.src):
            ch = self.src[i]
            if ch in "\n\r":
                return None
            if ch == "\\":
                i += 2
                continue
            if ch == "[":
                in_class = True
            elif ch == "]":
                in_class = False
            elif ch == "/" and not in_class:
                i += 1
                while i < len(self.src) and _is_id_part(self.src[i]):
                    i += 1
                return i
            i += 1
        return None

    def run(self) -> list[Token]:
        src = self.src
        n = len(src)
        while self.pos < n:
            ch = src[self.pos]
            if ch == "\r" and src[self.pos + 1 : self.pos + 2] == "\n":
                self._emit("eol", "\r\n")
                continue
            if ch in _LINE_BREAKS:
                self._emit("eol", ch)
                continue
            if ch.isspace() or ch == "\ufeff":
                self._advance_over(ch)
                continue
            nxt = src[self.pos + 1 : self.pos + 2]
            if ch == "/" and nxt == "/":
                end = self.pos
                while end < n and src[end] not in _LINE_BREAKS:
                    end += 1
                self._emit("comment_line", src[self.pos : end])
                continue
            if ch == "/" and nxt == "*":
                end = src.find("*/", self.pos + 2)
                if end < 0:
                    raise LexError("unterminated block comment", self.line, self.col)
                self._emit("comment_block", src[self.pos : end + 2])
                continue
            if self.pos == 0 and src.startswith("#!"):
                end = self.pos
                while end < n and src[end] not in _LINE_BREAKS:
                    end += 1
                self._emit("comment_line", src[self.pos : end])
                continue
            if _is_id_start(ch) or ch == "\\":
                end = self.pos + 1
                while end < n and (_is_id_part(src[end]) or src[end] == "\\"):
                    end += 1
                word = src[self.pos : end]
                self._emit("keyword" if word in KEYWORDS else "identifier", word)
                continue
            if ch.isdigit() or (ch == "." and nxt.isdigit()):
                m = _NUMBER_RE.match(src, self.pos)
                self._emit("number", m.group(0))
                continue
            if ch in "'\"":
                end = self._scan_string(self.pos)
                self._emit("string", src[self.pos : end])
                continue
            if ch == "`":
                end = self._scan_template(self.pos)
                self._emit("template", src[self.pos : end])
                continue
            if ch == "/" and self._regex_allowed():
                end = self._scan_regex(self.pos)
                if end is not None:
                    self._emit("regex", src[self.pos : end])
                    continue
            if ch == "@":
                raise LexError("decorators are not supported", self.line, self.col)
            m = _PUNCT_RE.match(src, self.pos)
            if m is None:
                raise LexError(f"unexpected character {ch!r}", self.line, self.col)
            text = m.group(0)
            if text == "?." and src[self.pos + 2 : self.pos + 3].isdigit():
                text = "?"
            self._emit("punctuator", text)
        return self.tokens


def tokenize(source: str) -> list[Token]:
    """Split JavaScript ``source`` into tokens ordered by position."""
    return _Lexer(source).run()


def significant(tokens: list[Token]) -> list[Token]:
    return [t for t in tokens if t.is_code]
