"""Per-function static metrics.

Plain metrics describe a function's own code: tokens belonging to nested
functions are removed first. The ``T``-prefixed variants cover the whole
span, nested functions included. Clone metrics need a clone detector and are
always zero here.

Counting rules:

* McCC/CYCL: 1 + ``if``, ``for``, ``while``, ``do``, ``case``, ``catch``,
  ``&&``, ``||`` and ``?`` (the trailing ``while`` of a do-loop is not counted
  again).
* NL: deepest nesting of if/loop/switch/try/with bodies; NLE is the same but
  an ``else if`` stays at the level of its ``if``.
* LOC: lines of the span not taken over by nested functions; LLOC: lines with
  code; CLOC: lines with comments; DLOC: lines of the block comment directly
  above the function.
* NOS: simple statements plus control-flow headers; blocks are not counted.
  An expression-bodied arrow has one statement.
* Halstead: operands are identifiers and literals (``this``, ``super``,
  ``null``, ``true``, ``false`` included); every other keyword and every
  punctuator is an operator. The function's own name token is skipped.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields

from jsvuln.js.functions import SourceFunction
from jsvuln.js.lexer import Token

METRIC_NAMES = (
    "CC", "CCL", "CCO", "CI", "CLC", "LDC",
    "McCC", "CYCL", "NL", "NLE",
    "CD", "TCD", "CLOC", "TCLOC", "DLOC",
    "LLOC", "TLLOC", "LOC", "TLOC", "NOS", "TNOS",
    "NUMPAR", "PARAMS",
    "HOR_D", "HOR_T", "HON_D", "HON_T",
    "HLEN", "HVOC", "HDIFF", "HVOL", "HEFF", "HBUGS", "HTIME", "CYCL_DENS",
)  # fmt: skip

CLONE_METRICS = ("CC", "CCL", "CCO", "CI", "CLC", "LDC")
RATIO_METRICS = frozenset({"CD", "TCD", "HDIFF", "HVOL", "HEFF", "HBUGS", "HTIME", "CYCL_DENS"})

OPERAND_KEYWORDS = frozenset({"this", "super", "null", "true", "false"})
_BRANCH_KEYWORDS = frozenset({"if", "for", "while", "do", "case", "catch"})
_BRANCH_PUNCT = frozenset({"&&", "||", "?"})
_OPEN = {"(": ")", "[": "]", "{": "}"}


@dataclass(frozen=True)
class MetricVector:
    CC: float = 0
    CCL: float = 0
    CCO: float = 0
    CI: float = 0
    CLC: float = 0
    LDC: float = 0
    McCC: int = 1
    CYCL: int = 1
    NL: int = 0
    NLE: int = 0
    CD: float = 0.0
    TCD: float = 0.0
    CLOC: int = 0
    TCLOC: int = 0
    DLOC: int = 0
    LLOC: int = 0
    TLLOC: int = 0
    LOC: int = 0
    TLOC: int = 0
    NOS: int = 0
    TNOS: int = 0
    NUMPAR: int = 0
    PARAMS: int = 0
    HOR_D: int = 0
    HOR_T: int = 0
    HON_D: int = 0
    HON_T: int = 0
    HLEN: int = 0
    HVOC: int = 0
    HDIFF: float = 0.0
    HVOL: float = 0.0
    HEFF: float = 0.0
    HBUGS: float = 0.0
    HTIME: float = 0.0
    CYCL_DENS: float = 0.0

    def as_list(self) -> list[float]:
        return list(astuple(self))

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


assert tuple(f.name for f in fields(MetricVector)) == METRIC_NAMES


def own_tokens(fn: SourceFunction) -> list[Token]:
    """Tokens of ``fn`` that do not belong to any nested function."""
    holes = [(c.body_tokens[0].offset, c.body_tokens[-1].offset) for c in fn.children]
    if not holes:
        return list(fn.body_tokens)
    return [t for t in fn.body_tokens if not any(lo <= t.offset <= hi for lo, hi in holes)]


def _lines(tokens, predicate) -> set[int]:
    out: set[int] = set()
    for t in tokens:
        if t.kind != "eol" and predicate(t):
            out.update(range(t.line, t.end_line + 1))
    return out


def _match(tokens: list[Token]) -> dict[int, int]:
    """Bracket partners; unmatched openers pair with the end of the list."""
    pairs: dict[int, int] = {}
    stack: list[int] = []
    for i, t in enumerate(tokens):
        if t.kind != "punctuator":
            continue
        if t.text in _OPEN:
            stack.append(i)
        elif t.text in (")", "]", "}"):
            # Pop through mismatches so garbage input cannot wedge the parser.
            while stack and _OPEN[tokens[stack[-1]].text] != t.text:
                pairs[stack.pop()] = len(tokens)
            if stack:
                j = stack.pop()
                pairs[j] = i
                pairs[i] = j
    while stack:
        pairs[stack.pop()] = len(tokens)
    return pairs


def _punct(tok: Token | None, *texts: str) -> bool:
    return tok is not None and tok.kind == "punctuator" and tok.text in texts


def _kw(tok: Token | None, *texts: str) -> bool:
    return tok is not None and tok.kind == "keyword" and tok.text in texts


class _StatementWalker:
    """Walks statement structure to count statements and nesting depth."""

    def __init__(self, tokens: list[Token]):
        self.t = tokens
        self.pairs = _match(tokens)
        self.nos = 0
        self.nl = 0
        self.nle = 0
        self.do_trailers: set[int] = set()

    def at(self, i: int) -> Token | None:
        return self.t[i] if 0 <= i < len(self.t) else None

    def items(self, i: int, end: int, lv: int, lve: int) -> None:
        while i < end:
            nxt = self.statement(i, end, lv, lve)
            i = max(nxt, i + 1)

    def _body(self, i: int, end: int, lv: int, lve: int) -> int:
        self.nl = max(self.nl, lv)
        self.nle = max(self.nle, lve)
        if i >= end:
            return i
        return self.statement(i, end, lv, lve)

    def _skip_group(self, i: int, end: int) -> int:
        """Skip a bracketed group starting at ``i`` if there is one."""
        if i < end and _punct(self.t[i], "(", "[", "{"):
            return min(self.pairs.get(i, end), end - 1) + 1
        return i

    def statement(self, i: int, end: int, lv: int, lve: int) -> int:
        tok = self.t[i]
        if _punct(tok, "{"):
            close = min(self.pairs.get(i, end), end)
            self.items(i + 1, close, lv, lve)
            return close + 1
        if _punct(tok, ";"):
            return i + 1
        if tok.kind == "keyword":
            word = tok.text
            if word == "if":
                self.nos += 1
                j = self._skip_group(i + 1, end)
                j = self._body(j, end, lv + 1, lve + 1)
                if j < end and _kw(self.t[j], "else"):
                    if j + 1 < end and _kw(self.t[j + 1], "if"):
                        self.nl = max(self.nl, lv + 1)
                        return self.statement(j + 1, end, lv + 1, lve)
                    return self._body(j + 1, end, lv + 1, lve + 1)
                return j
            if word in ("for", "while", "with"):
                self.nos += 1
                j = i + 1
                if _kw(self.at(j), "await"):
                    j += 1
                j = self._skip_group(j, end)
                return self._body(j, end, lv + 1, lve + 1)
            if word == "do":
                self.nos += 1
                j = self._body(i + 1, end, lv + 1, lve + 1)
                if j < end and _kw(self.t[j], "while"):
                    self.do_trailers.add(j)
                    j = self._skip_group(j + 1, end)
                    if j < end and _punct(self.t[j], ";"):
                        j += 1
                return j
            if word == "switch":
                self.nos += 1
                j = self._skip_group(i + 1, end)
                if j < end and _punct(self.t[j], "{"):
                    close = min(self.pairs.get(j, end), end)
                    self._switch_body(j + 1, close, lv + 1, lve + 1)
                    return close + 1
                return j
            if word == "try":
                self.nos += 1
                j = self._body(i + 1, end, lv + 1, lve + 1)
                if j < end and _kw(self.t[j], "catch"):
                    j = self._skip_group(j + 1, end)
                    j = self._body(j, end, lv + 1, lve + 1)
                if j < end and _kw(self.t[j], "finally"):
                    j = self._body(j + 1, end, lv + 1, lve + 1)
                return j
            if word in ("return", "throw"):
                self.nos += 1
                return self._simple(i + 1, end, restricted=True, start_line=tok.end_line)
            if word in ("break", "continue"):
                self.nos += 1
                j = i + 1
                nxt = self.at(j)
                if j < end and nxt.kind == "identifier" and nxt.line == tok.end_line:
                    j += 1
                if j < end and _punct(self.t[j], ";"):
                    j += 1
                return j
            if word in ("else", "case", "default", "catch", "finally"):
                # stray clause keyword in malformed input
                return i + 1
        if tok.kind == "identifier" and _punct(self.at(i + 1), ":") and i + 1 < end:
            return self.statement(i + 2, end, lv, lve) if i + 2 < end else i + 2
        self.nos += 1
        return self._simple(i, end)

    def _switch_body(self, i: int, end: int, lv: int, lve: int) -> None:
        self.nl = max(self.nl, lv)
        self.nle = max(self.nle, lve)
        while i < end:
            tok = self.t[i]
            if _kw(tok, "case", "default"):
                i = self._clause_colon(i + 1, end)
                continue
            i = max(self.statement(i, end, lv, lve), i + 1)

    def _clause_colon(self, i: int, end: int) -> int:
        ternary = 0
        while i < end:
            tok = self.t[i]
            if _punct(tok, "(", "[", "{"):
                i = self._skip_group(i, end)
                continue
            if _punct(tok, "?"):
                ternary += 1
            elif _punct(tok, ":"):
                if ternary == 0:
                    return i + 1
                ternary -= 1
            i += 1
        return i

    def _simple(self, i: int, end: int, restricted: bool = False, start_line: int | None = None) -> int:
        """Consume one expression/declaration statement; return the next index."""
        first = i
        while i < end:
            tok = self.t[i]
            if restricted and i == first and tok.line > (start_line or tok.line):
                return i
            if i > first and _asi(self.t[i - 1], tok):
                return i
            if tok.kind == "punctuator":
                if tok.text == ";":
                    return i + 1
                if tok.text == "}":
                    return i
                if tok.text in _OPEN:
                    i = self._skip_group(i, end)
                    continue
            i += 1
        return i


def _asi(prev: Token, tok: Token) -> bool:
    if tok.line <= prev.end_line:
        return False
    prev_ends = (
        prev.kind in ("identifier", "number", "string", "template", "regex")
        or _kw(prev, *OPERAND_KEYWORDS)
        or _punct(prev, ")", "]", "}", "++", "--")
    )
    if not prev_ends:
        return False
    if tok.kind == "keyword":
        return tok.text not in ("in", "instanceof")
    return tok.kind in ("identifier", "number", "string", "template", "regex") or _punct(tok, "++", "--")


def _is_operand(tok: Token) -> bool:
    return tok.kind in ("identifier", "number", "string", "regex", "template") or (
        tok.kind == "keyword" and tok.text in OPERAND_KEYWORDS
    )


def halstead_counts(code: list[Token], skip: Token | None = None) -> tuple[int, int, int, int]:
    """Return (n1, N1, n2, N2): distinct/total operators and operands."""
    operators: dict[str, int] = {}
    operands: dict[str, int] = {}
    for tok in code:
        if skip is not None and tok.offset == skip.offset and tok.text == skip.text:
            continue
        bucket = operands if _is_operand(tok) else operators
        bucket[tok.text] = bucket.get(tok.text, 0) + 1
    return len(operators), sum(operators.values()), len(operands), sum(operands.values())


def halstead(n1: int, N1: int, n2: int, N2: int) -> dict[str, float]:
    length = N1 + N2
    vocabulary = n1 + n2
    volume = length * math.log2(vocabulary) if vocabulary > 0 else 0.0
    difficulty = (n1 / 2) * (N2 / n2) if n2 > 0 else 0.0
    effort = difficulty * volume
    return {
        "HOR_D": n1,
        "HOR_T": N1,
        "HON_D": n2,
        "HON_T": N2,
        "HLEN": length,
        "HVOC": vocabulary,
        "HVOL": volume,
        "HDIFF": difficulty,
        "HEFF": effort,
        "HTIME": effort / 18,
        "HBUGS": volume / 3000,
    }


def _structure(fn: SourceFunction, code: list[Token]) -> tuple[int, int, int, int]:
    """Return (NOS, NL, NLE, McCC) for the function's own code tokens."""
    walker = _StatementWalker(code)
    body_start = None
    if fn.body_open is not None:
        for i, tok in enumerate(code):
            if tok.offset == fn.body_open.offset:
                body_start = i
                break
    if body_start is not None:
        close = walker.pairs.get(body_start, len(code))
        walker.items(body_start + 1, min(close, len(code)), 0, 0)
    elif fn.body_open is None and fn.body_tokens and code:
        # expression-bodied arrow: the expression is an implicit return
        walker.nos = 1
    else:
        walker.items(0, len(code), 0, 0)
    branches = 0
    for i, tok in enumerate(code):
        if tok.kind == "keyword" and tok.text in _BRANCH_KEYWORDS and i not in walker.do_trailers:
            branches += 1
        elif tok.kind == "punctuator" and tok.text in _BRANCH_PUNCT:
            branches += 1
    return walker.nos, walker.nl, walker.nle, 1 + branches


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def total_statements(fn: SourceFunction) -> int:
    own = [t for t in own_tokens(fn) if t.is_code]
    return _structure(fn, own)[0] + sum(total_statements(c) for c in fn.children)


def compute_metrics(fn: SourceFunction) -> MetricVector:
    """Compute the metric vector of one function."""
    own = own_tokens(fn)
    code = [t for t in own if t.is_code]
    span = range(fn.start_line, fn.end_line + 1)

    child_lines = set()
    for child in fn.children:
        child_lines.update(range(child.start_line, child.end_line + 1))
    own_any = _lines(own, lambda t: True)
    loc = sum(1 for line in span if line in own_any or line not in child_lines)
    lloc = len(_lines(own, lambda t: t.is_code))
    cloc = len(_lines(own, lambda t: t.is_comment))

    tloc = len(span)
    tlloc = len(_lines(fn.body_tokens, lambda t: t.is_code))
    tcloc = len(_lines(fn.body_tokens, lambda t: t.is_comment))

    nos, nl, nle, mccc = _structure(fn, code)
    tnos = nos + sum(total_statements(c) for c in fn.children)
    h = halstead(*halstead_counts(code, skip=fn.name_token))

    return MetricVector(
        McCC=mccc,
        CYCL=mccc,
        NL=nl,
        NLE=nle,
        CD=_ratio(cloc, cloc + lloc),
        TCD=_ratio(tcloc, tcloc + tlloc),
        CLOC=cloc,
        TCLOC=tcloc,
        DLOC=fn.doc_lines,
        LLOC=lloc,
        TLLOC=tlloc,
        LOC=loc,
        TLOC=tloc,
        NOS=nos,
        TNOS=tnos,
        NUMPAR=fn.param_count,
        PARAMS=fn.param_count,
        CYCL_DENS=_ratio(mccc, lloc),
        **h,
    )
