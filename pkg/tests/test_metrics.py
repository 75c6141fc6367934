import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import GOLDEN_JS
from jsvuln.js.functions import SourceFunction, extract_functions
from jsvuln.js.lexer import Token, tokenize
from jsvuln.js.metrics import (
    CLONE_METRICS,
    METRIC_NAMES,
    compute_metrics,
    halstead,
    halstead_counts,
)

# Hand-counted values, written down before running the analyzer.
# Halstead counts are (n1, N1, n2, N2).
GOLDEN = {
    ("foo.js", "foo"): dict(
        LOC=6, TLOC=6, LLOC=5, TLLOC=5, CLOC=1, TCLOC=1, DLOC=0, NOS=3, TNOS=3,
        McCC=1, NL=0, NLE=0, PARAMS=1, halstead=(10, 16, 5, 8),
    ),
    ("empty.js", "e"): dict(
        LOC=1, TLOC=1, LLOC=1, TLLOC=1, CLOC=0, TCLOC=0, DLOC=0, NOS=0, TNOS=0,
        McCC=1, NL=0, NLE=0, PARAMS=0, halstead=(5, 5, 0, 0),
    ),
    ("arrow.js", "f"): dict(
        LOC=1, TLOC=1, LLOC=1, TLLOC=1, CLOC=0, TCLOC=0, DLOC=0, NOS=1, TNOS=1,
        McCC=1, NL=0, NLE=0, PARAMS=1, halstead=(4, 4, 2, 3),
    ),
    ("classify.js", "classify"): dict(
        LOC=14, TLOC=14, LLOC=14, TLLOC=14, CLOC=0, TCLOC=0, DLOC=0, NOS=9, TNOS=9,
        McCC=7, NL=2, NLE=1, PARAMS=2, halstead=(24, 51, 11, 24),
    ),
    ("outer.js", "outer"): dict(
        LOC=6, TLOC=7, LLOC=5, TLLOC=6, CLOC=1, TCLOC=1, DLOC=0, NOS=2, TNOS=3,
        McCC=1, NL=0, NLE=0, PARAMS=1, halstead=(10, 14, 4, 6),
    ),
    ("outer.js", "outer.<anonymous@L3C27>"): dict(
        LOC=3, TLOC=3, LLOC=3, TLLOC=3, CLOC=0, TCLOC=0, DLOC=0, NOS=1, TNOS=1,
        McCC=1, NL=0, NLE=0, PARAMS=1, halstead=(8, 8, 2, 3),
    ),
    ("add.js", "add"): dict(
        LOC=3, TLOC=3, LLOC=3, TLLOC=3, CLOC=1, TCLOC=1, DLOC=4, NOS=1, TNOS=1,
        McCC=1, NL=0, NLE=0, PARAMS=2, halstead=(9, 9, 2, 4),
    ),
    ("run.js", "run"): dict(
        LOC=19, TLOC=19, LLOC=19, TLLOC=19, CLOC=0, TCLOC=0, DLOC=0, NOS=10, TNOS=10,
        McCC=6, NL=1, NLE=1, PARAMS=1, halstead=(24, 53, 11, 19),
    ),
    ("stack.js", "Stack.push"): dict(
        LOC=4, TLOC=4, LLOC=4, TLLOC=4, CLOC=0, TCLOC=0, DLOC=0, NOS=2, TNOS=2,
        McCC=1, NL=0, NLE=0, PARAMS=1, halstead=(7, 11, 4, 6),
    ),
    ("pick.js", "pick"): dict(
        LOC=4, TLOC=4, LLOC=4, TLLOC=4, CLOC=0, TCLOC=0, DLOC=0, NOS=2, TNOS=2,
        McCC=4, NL=0, NLE=0, PARAMS=2, halstead=(15, 20, 4, 11),
    ),
    ("slug.js", "slug"): dict(
        LOC=4, TLOC=4, LLOC=4, TLLOC=4, CLOC=0, TCLOC=0, DLOC=0, NOS=2, TNOS=2,
        McCC=1, NL=0, NLE=0, PARAMS=1, halstead=(11, 17, 7, 8),
    ),
}  # fmt: skip


def metrics_of(filename: str, qualified: str):
    source = (GOLDEN_JS / filename).read_text(encoding="utf-8")
    fns = extract_functions(tokenize(source), filename)
    (fn,) = [f for f in fns if f.qualified_name == qualified]
    return compute_metrics(fn).as_dict()


def expected_vector(oracle: dict) -> dict:
    n1, N1, n2, N2 = oracle["halstead"]
    length, vocab = N1 + N2, n1 + n2
    vol = length * math.log2(vocab) if vocab else 0.0
    diff = (n1 / 2) * (N2 / n2) if n2 else 0.0
    cd = oracle["CLOC"] / (oracle["CLOC"] + oracle["LLOC"]) if oracle["CLOC"] + oracle["LLOC"] else 0.0
    tcd = oracle["TCLOC"] / (oracle["TCLOC"] + oracle["TLLOC"]) if oracle["TCLOC"] + oracle["TLLOC"] else 0.0
    out = {k: v for k, v in oracle.items() if k != "halstead"}
    out.update(
        CYCL=oracle["McCC"], NUMPAR=oracle["PARAMS"], CD=cd, TCD=tcd,
        HOR_D=n1, HOR_T=N1, HON_D=n2, HON_T=N2, HLEN=length, HVOC=vocab,
        HVOL=vol, HDIFF=diff, HEFF=diff * vol, HTIME=diff * vol / 18, HBUGS=vol / 3000,
        CYCL_DENS=oracle["McCC"] / oracle["LLOC"],
    )  # fmt: skip
    out.update({name: 0 for name in CLONE_METRICS})
    return out


@pytest.mark.parametrize("key", sorted(GOLDEN), ids=lambda k: k[1])
def test_golden_function(key):
    got = metrics_of(*key)
    want = expected_vector(GOLDEN[key])
    assert set(want) == set(METRIC_NAMES)
    for name in METRIC_NAMES:
        assert got[name] == pytest.approx(want[name], rel=1e-12, abs=1e-12), name


def test_example_halstead_operator_set():
    fn = extract_functions(tokenize((GOLDEN_JS / "foo.js").read_text()), "x.js")[0]
    code = [t for t in fn.body_tokens if t.is_code and t is not fn.name_token]
    operators = {t.text for t in code if t.kind in ("keyword", "punctuator")}
    assert operators == {"function", "(", ")", "{", "}", "var", "=", "*", ";", "return"}


def test_empty_function_guards():
    m = metrics_of("empty.js", "e")
    assert m["HDIFF"] == 0 and m["HEFF"] == 0 and m["HTIME"] == 0
    assert m["HVOL"] == pytest.approx(5 * math.log2(5))


def test_halstead_zero_vocabulary():
    h = halstead(0, 0, 0, 0)
    assert h["HVOL"] == 0 and h["HDIFF"] == 0 and h["HLEN"] == 0


def _random_stream(rng) -> list[Token]:
    pool = [
        ("identifier", "a"), ("identifier", "b"), ("identifier", "foo"), ("number", "1"), ("number", "42"),
        ("string", "'s'"), ("template", "`t`"), ("regex", "/x/g"), ("keyword", "if"), ("keyword", "for"),
        ("keyword", "return"), ("keyword", "this"), ("keyword", "null"), ("keyword", "var"), ("keyword", "else"),
        ("keyword", "while"), ("keyword", "do"), ("keyword", "case"), ("punctuator", "{"), ("punctuator", "}"),
        ("punctuator", "("), ("punctuator", ")"), ("punctuator", ";"), ("punctuator", "&&"), ("punctuator", "?"),
        ("punctuator", ":"), ("punctuator", "="), ("punctuator", "+"), ("punctuator", ","),
        ("comment_line", "// c"), ("eol", "\n"),
    ]  # fmt: skip
    out, line, col = [], 1, 1
    for i in range(int(rng.integers(0, 60))):
        kind, text = pool[int(rng.integers(len(pool)))]
        out.append(Token(kind, text, line, col, i))
        if kind == "eol":
            line, col = line + 1, 1
        else:
            col += len(text) + 1
    return out


def test_halstead_identities_on_fuzzed_streams():
    rng = np.random.default_rng(20240601)
    for _ in range(1000):
        toks = _random_stream(rng)
        last = toks[-1].line if toks else 1
        fn = SourceFunction("f", "f.js", 1, 1, last, 1, toks)
        m = compute_metrics(fn)
        assert m.HLEN == m.HOR_T + m.HON_T
        assert m.HVOC == m.HOR_D + m.HON_D
        assert m.HEFF == m.HDIFF * m.HVOL
        assert m.HTIME == m.HEFF / 18
        assert m.HBUGS == m.HVOL / 3000
        assert m.McCC >= 1 and m.McCC == m.CYCL
        assert all(v >= 0 and math.isfinite(v) for v in m.as_list())


SNIPPETS = [
    "var x = 1;",
    "if (a) { b(); } else { c(); }",
    "for (var i = 0; i < n; i++) { s += i; }",
    "while (a && b) { a--; }",
    "return a ? b : c;",
    "// note",
    "try { f(); } catch (e) { g(e); }",
    "switch (k) { case 1: x(); break; default: y(); }",
    "var g = function (q) { return q * 2; };",
]


@settings(max_examples=150, deadline=None)
@given(st.lists(st.sampled_from(SNIPPETS), max_size=8), st.integers(min_value=1, max_value=6))
def test_structural_invariants(body, blank_at):
    lines = ["function f(a, b) {"] + ["  " + s for s in body] + ["}"]
    fns = extract_functions(tokenize("\n".join(lines) + "\n"), "f.js")
    for fn in fns:
        m = compute_metrics(fn)
        assert m.LLOC <= m.LOC <= m.TLOC
        assert m.TLLOC <= m.TLOC and m.CLOC <= m.LOC
        assert m.NUMPAR == m.PARAMS
        assert all(getattr(m, c) == 0 for c in CLONE_METRICS)
        if not fn.children:
            for plain, total in (("LOC", "TLOC"), ("LLOC", "TLLOC"), ("CLOC", "TCLOC"), ("NOS", "TNOS"), ("CD", "TCD")):
                assert getattr(m, plain) == getattr(m, total)
    # a blank line inside the outer body changes LOC/TLOC only
    pos = min(blank_at, len(lines) - 1)
    padded = lines[:pos] + [""] + lines[pos:]
    before = compute_metrics(fns[0])
    after = compute_metrics(extract_functions(tokenize("\n".join(padded) + "\n"), "f.js")[0])
    assert after.LOC == before.LOC + 1 and after.TLOC == before.TLOC + 1
    for name in ("LLOC", "NOS", "HOR_D", "HOR_T", "HON_D", "HON_T", "HVOL", "HDIFF", "McCC"):
        assert getattr(after, name) == getattr(before, name)


def test_metrics_are_deterministic():
    source = (GOLDEN_JS / "run.js").read_text()
    a = compute_metrics(extract_functions(tokenize(source), "r.js")[0])
    b = compute_metrics(extract_functions(tokenize(source), "r.js")[0])
    assert a == b


def test_counts_skip_only_the_name_token():
    toks = [t for t in tokenize("function foo() { foo(); }") if t.is_code]
    fn = extract_functions(tokenize("function foo() { foo(); }"), "x.js")[0]
    n1, N1, n2, N2 = halstead_counts(toks, skip=fn.name_token)
    assert (n2, N2) == (1, 1)  # the recursive call still counts
