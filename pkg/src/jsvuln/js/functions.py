"""Locate function definitions in a token stream.

The extractor is a token-level recognizer, not a parser. It understands
function declarations and expressions, arrow functions, and methods in
object literals and class bodies. Spans come from bracket matching, or from
the expression extent for arrow functions without a braced body.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from jsvuln.js.lexer import Token

logger = logging.getLogger(__name__)

_OPENERS = {"(": ")", "[": "]", "{": "}"}
_CLOSERS = {v: k for k, v in _OPENERS.items()}
_METHOD_MODIFIERS = frozenset({"static", "async", "get", "set", "*"})
_MEMBER_BOUNDARY = frozenset({"{", ",", ";", "}"})
_OBJECT_AFTER_KEYWORDS = frozenset(
    {"return", "typeof", "in", "of", "case", "yield", "await", "new", "delete", "void", "throw", "instanceof"}
)
_BLOCK_AFTER_PUNCT = frozenset({")", ";", "}", "{", "=>"})
_VALUE_END_PUNCT = frozenset({")", "]", "}", "++", "--"})
_STATEMENT_START_KINDS = frozenset({"identifier", "keyword", "number", "string", "template", "regex"})


class ExtractionError(ValueError):
    """The token stream cannot be split into functions (e.g. unbalanced braces)."""


@dataclass(eq=False)
class SourceFunction:
    short_name: str
    file_path: str
    start_line: int
    start_col: int
    end_line: int
    end_col: int
    body_tokens: list[Token] = field(repr=False)
    param_count: int = 0
    qualified_name: str = ""
    children: list[SourceFunction] = field(default_factory=list, repr=False)
    parent: SourceFunction | None = field(default=None, repr=False)
    # Token of the function's own name inside its span (declarations, methods).
    name_token: Token | None = field(default=None, repr=False)
    # Opening brace of the body; None for expression-bodied arrows.
    body_open: Token | None = field(default=None, repr=False)
    doc_lines: int = 0
    scope_prefix: str | None = None

    @property
    def anonymous(self) -> bool:
        return not self.short_name

    @property
    def span(self) -> tuple[int, int]:
        return self.start_line, self.end_line

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()


def match_brackets(sig: list[Token]) -> dict[int, int]:
    """Map every bracket index in ``sig`` to its partner index."""
    pairs: dict[int, int] = {}
    stack: list[int] = []
    for i, tok in enumerate(sig):
        if tok.kind != "punctuator":
            continue
        if tok.text in _OPENERS:
            stack.append(i)
        elif tok.text in _CLOSERS:
            if not stack or sig[stack[-1]].text != _CLOSERS[tok.text]:
                raise ExtractionError(f"unbalanced {tok.text!r} at line {tok.line}, column {tok.column}")
            j = stack.pop()
            pairs[i] = j
            pairs[j] = i
    if stack:
        tok = sig[stack[-1]]
        raise ExtractionError(f"unclosed {tok.text!r} at line {tok.line}, column {tok.column}")
    return pairs


def _is_punct(tok: Token | None, *texts: str) -> bool:
    return tok is not None and tok.kind == "punctuator" and tok.text in texts


def _property_name(tok: Token) -> str | None:
    if tok.kind in ("identifier", "keyword"):
        return tok.text
    if tok.kind == "string":
        return tok.text[1:-1]
    if tok.kind == "number":
        return tok.text
    return None


class _Extractor:
    def __init__(self, tokens: list[Token], file_path: str):
        self.tokens = tokens
        self.file_path = file_path
        self.full_index = [i for i, t in enumerate(tokens) if t.is_code]
        self.sig = [tokens[i] for i in self.full_index]
        self.pairs = match_brackets(self.sig)
        self.brace_kind: dict[int, str] = {}
        self.class_names: dict[int, str | None] = {}
        self._classify_braces()

    def at(self, i: int) -> Token | None:
        return self.sig[i] if 0 <= i < len(self.sig) else None

    # -- brace classification ---------------------------------------------
    def _classify_braces(self) -> None:
        sig = self.sig
        stack: list[int] = []
        pending_class: list[tuple[int, str | None]] = []
        for i, tok in enumerate(sig):
            if tok.kind == "keyword" and tok.text == "class" and not _is_punct(self.at(i - 1), "."):
                nxt = self.at(i + 1)
                name = nxt.text if nxt is not None and nxt.kind == "identifier" and nxt.text != "extends" else None
                if name is None:
                    name = self._assigned_name(i)[0]
                pending_class.append((len(stack), name))
                continue
            if tok.kind != "punctuator":
                continue
            if tok.text in _OPENERS:
                if tok.text == "{":
                    if pending_class and pending_class[-1][0] == len(stack):
                        _, name = pending_class.pop()
                        self.brace_kind[i] = "class"
                        self.class_names[i] = name
                    else:
                        self.brace_kind[i] = self._guess_brace(i, stack)
                stack.append(i)
            elif tok.text in _CLOSERS:
                stack.pop()

    def _guess_brace(self, i: int, stack: list[int]) -> str:
        prev = self.at(i - 1)
        if prev is None:
            return "block"
        if prev.kind == "keyword":
            return "object" if prev.text in _OBJECT_AFTER_KEYWORDS else "block"
        if prev.kind == "punctuator":
            if prev.text in _BLOCK_AFTER_PUNCT:
                return "block"
            if prev.text == ":":
                enclosing = stack[-1] if stack else None
                if enclosing is not None and self.brace_kind.get(enclosing) == "object":
                    return "object"
                if self._colon_is_ternary(i - 1, stack):
                    return "object"
                return "block"
            return "object"
        return "block"

    def _colon_is_ternary(self, colon: int, stack: list[int]) -> bool:
        lo = stack[-1] + 1 if stack else 0
        depth = 0
        k = colon - 1
        while k >= lo:
            tok = self.sig[k]
            if tok.kind == "punctuator":
                if tok.text in _CLOSERS:
                    k = self.pairs[k] - 1
                    continue
                if tok.text == ":":
                    depth += 1
                elif tok.text == "?":
                    if depth == 0:
                        return True
                    depth -= 1
                elif tok.text in (";", "{"):
                    return False
            k -= 1
        return False

    # -- naming ------------------------------------------------------------
    def _assigned_name(self, start: int) -> tuple[str | None, int]:
        """Name given to a function/class expression starting at ``start``.

        Returns the inferred name and the index where the naming construct
        begins (used to locate a leading documentation comment).
        """
        prev = self.at(start - 1)
        if _is_punct(prev, "="):
            target = self.at(start - 2)
            if target is not None and target.kind == "identifier":
                k = start - 2
                while _is_punct(self.at(k - 1), ".") and self.at(k - 2) is not None:
                    k -= 2
                before = self.at(k - 1)
                if before is not None and before.kind == "keyword" and before.text in ("var", "let", "const"):
                    k -= 1
                elif before is not None and before.kind == "identifier" and before.text == "static":
                    k -= 1
                return target.text, k
        if _is_punct(prev, ":"):
            key = self.at(start - 2)
            if key is not None and _property_name(key) is not None:
                opener = self._enclosing(start - 2)
                if opener is not None and self.brace_kind.get(opener) == "object":
                    return _property_name(key), start - 2
        return None, start

    def _enclosing(self, i: int) -> int | None:
        k = i - 1
        while k >= 0:
            tok = self.sig[k]
            if tok.kind == "punctuator":
                if tok.text in _CLOSERS:
                    k = self.pairs[k] - 1
                    continue
                if tok.text in _OPENERS:
                    return k
            k -= 1
        return None

    # -- recognizers ---------------------------------------------------------
    def run(self) -> list[SourceFunction]:
        found: list[SourceFunction] = []
        stack: list[int] = []
        for j, tok in enumerate(self.sig):
            fn = None
            if tok.kind == "keyword" and tok.text == "function":
                fn = self._function_keyword(j)
            elif _is_punct(tok, "=>"):
                fn = self._arrow(j)
            elif _is_punct(tok, "(") and stack and self.brace_kind.get(stack[-1]) in ("object", "class"):
                fn = self._method(j, stack[-1])
            if fn is not None:
                found.append(fn)
            if tok.kind == "punctuator":
                if tok.text in _OPENERS:
                    stack.append(j)
                elif tok.text in _CLOSERS:
                    stack.pop()
        return found

    def _param_count(self, open_idx: int) -> int:
        close = self.pairs[open_idx]
        if close == open_idx + 1:
            return 0
        count = 1
        k = open_idx + 1
        while k < close:
            tok = self.sig[k]
            if tok.kind == "punctuator" and tok.text in _OPENERS:
                k = self.pairs[k] + 1
                continue
            if _is_punct(tok, ","):
                # trailing comma does not add a parameter
                if k + 1 < close:
                    count += 1
            k += 1
        return count

    def _function_keyword(self, j: int) -> SourceFunction | None:
        k = j + 1
        if _is_punct(self.at(k), "*"):
            k += 1
        name_tok = None
        name_idx = None
        tok = self.at(k)
        if tok is not None and tok.kind == "identifier":
            name_tok, name_idx = tok, k
            k += 1
        if not _is_punct(self.at(k), "("):
            return None
        body = self.pairs[k] + 1
        if not _is_punct(self.at(body), "{"):
            return None
        start = j
        prev = self.at(j - 1)
        if prev is not None and prev.kind == "identifier" and prev.text == "async" and prev.line == self.sig[j].line:
            start = j - 1
        if name_tok is not None:
            name, header = name_tok.text, start
            before = self.at(start - 1)
            if before is not None and before.kind == "keyword" and before.text == "export":
                header = start - 1
        else:
            name, header = self._assigned_name(start)
        return self._make(
            name or "",
            start,
            self.pairs[body],
            self._param_count(k),
            header=header,
            name_idx=name_idx,
            body_idx=body,
        )

    def _arrow(self, j: int) -> SourceFunction | None:
        prev = self.at(j - 1)
        if prev is None:
            return None
        if _is_punct(prev, ")"):
            start = self.pairs[j - 1]
            params = self._param_count(start)
        elif prev.kind == "identifier":
            start = j - 1
            params = 1
        else:
            return None
        before = self.at(start - 1)
        if before is not None and before.kind == "identifier" and before.text == "async":
            start -= 1
        nxt = self.at(j + 1)
        if nxt is None:
            raise ExtractionError(f"arrow function without body at line {prev.line}")
        if _is_punct(nxt, "{"):
            end = self.pairs[j + 1]
            body_idx = j + 1
        else:
            end = self._expression_end(j + 1)
            body_idx = None
        name, header = self._assigned_name(start)
        return self._make(name or "", start, end, params, header=header, body_idx=body_idx)

    def _expression_end(self, k: int) -> int:
        ternary = 0
        first = k
        while k < len(self.sig):
            tok = self.sig[k]
            if k > first and self._asi_break(k):
                return k - 1
            if tok.kind == "punctuator":
                if tok.text in _OPENERS:
                    k = self.pairs[k] + 1
                    continue
                if tok.text in _CLOSERS or tok.text in (",", ";"):
                    break
                if tok.text == "?":
                    ternary += 1
                elif tok.text == ":":
                    if ternary == 0:
                        break
                    ternary -= 1
            k += 1
        if k == first:
            tok = self.sig[first]
            raise ExtractionError(f"empty arrow function body at line {tok.line}")
        return k - 1

    def _asi_break(self, k: int) -> bool:
        prev, tok = self.sig[k - 1], self.sig[k]
        if tok.line <= prev.end_line:
            return False
        prev_ends = prev.kind in ("identifier", "number", "string", "template", "regex") or (
            prev.kind == "keyword" and prev.text in ("this", "null", "true", "false", "super")
        ) or _is_punct(prev, *_VALUE_END_PUNCT)
        if not prev_ends:
            return False
        if tok.kind == "keyword":
            return tok.text not in ("in", "instanceof")
        return tok.kind in _STATEMENT_START_KINDS or _is_punct(tok, "++", "--")

    def _method(self, j: int, opener: int) -> SourceFunction | None:
        close = self.pairs[j]
        if not _is_punct(self.at(close + 1), "{"):
            return None
        name_idx = j - 1
        name_tok = self.at(name_idx)
        if name_tok is None:
            return None
        if _is_punct(name_tok, "]"):
            start = self.pairs[name_idx]
            name = None
        else:
            name = _property_name(name_tok)
            if name is None:
                return None
            start = name_idx
        while True:
            before = self.at(start - 1)
            if before is not None and (
                (before.kind == "identifier" and before.text in _METHOD_MODIFIERS and before.line == self.sig[start].line)
                or _is_punct(before, "*")
            ):
                start -= 1
                continue
            break
        boundary = self.at(start - 1)
        if start - 1 != opener and not _is_punct(boundary, *_MEMBER_BOUNDARY):
            return None
        if name_tok.kind == "keyword" and name_tok.text in ("if", "for", "while", "switch", "catch", "with", "function"):
            return None
        prefix = self.class_names.get(opener) if self.brace_kind.get(opener) == "class" else None
        fn = self._make(
            name or "",
            start,
            self.pairs[close + 1],
            self._param_count(j),
            header=start,
            name_idx=name_idx if name is not None else None,
            body_idx=close + 1,
        )
        fn.scope_prefix = prefix
        return fn

    def _make(
        self,
        name: str,
        start: int,
        end: int,
        params: int,
        *,
        header: int,
        name_idx: int | None = None,
        body_idx: int | None = None,
    ) -> SourceFunction:
        first, last = self.sig[start], self.sig[end]
        full_start, full_end = self.full_index[start], self.full_index[end]
        return SourceFunction(
            short_name=name,
            file_path=self.file_path,
            start_line=first.line,
            start_col=first.column,
            end_line=last.end_line,
            end_col=last.end_column,
            body_tokens=self.tokens[full_start : full_end + 1],
            param_count=params,
            name_token=self.sig[name_idx] if name_idx is not None else None,
            body_open=self.sig[body_idx] if body_idx is not None else None,
            doc_lines=self._doc_lines(self.full_index[header]),
        )

    def _doc_lines(self, full_header: int) -> int:
        k = full_header - 1
        breaks = 0
        while k >= 0 and self.tokens[k].kind == "eol":
            breaks += 1
            k -= 1
        if k < 0 or breaks > 1:
            return 0
        tok = self.tokens[k]
        if tok.kind != "comment_block":
            return 0
        return tok.end_line - tok.line + 1


def _nest(functions: list[SourceFunction]) -> list[SourceFunction]:
    ordered = sorted(functions, key=lambda f: (f.body_tokens[0].offset, -f.body_tokens[-1].offset))
    stack: list[SourceFunction] = []
    for fn in ordered:
        lo, hi = fn.body_tokens[0].offset, fn.body_tokens[-1].offset
        while stack and not (stack[-1].body_tokens[0].offset <= lo and hi <= stack[-1].body_tokens[-1].offset):
            stack.pop()
        if stack:
            fn.parent = stack[-1]
            stack[-1].children.append(fn)
        stack.append(fn)
    return ordered


def extract_functions(tokens: list[Token], file_path: str) -> list[SourceFunction]:
    """Return every function in ``tokens`` in document order.

    Nested functions appear both in the flat result and in their parent's
    ``children``. Raises :class:`ExtractionError` on unbalanced brackets.
    """
    functions = _Extractor(tokens, file_path).run()
    return qualify_names(_nest(functions))


def _anonymous_label(fn: SourceFunction) -> str:
    return f"<anonymous@L{fn.start_line}C{fn.start_col}>"


def qualify_names(functions: list[SourceFunction]) -> list[SourceFunction]:
    """Assign dotted scope-chain names, unique within the file."""
    seen: dict[str, int] = {}
    for fn in functions:
        parts = []
        node: SourceFunction | None = fn
        while node is not None:
            label = node.short_name or _anonymous_label(node)
            if node.scope_prefix:
                label = f"{node.scope_prefix}.{label}"
            parts.append(label)
            node = node.parent
        qualified = ".".join(reversed(parts))
        if qualified in seen:
            qualified = f"{qualified}#L{fn.start_line}C{fn.start_col}"
        seen[qualified] = seen.get(qualified, 0) + 1
        fn.qualified_name = qualified
    return functions
