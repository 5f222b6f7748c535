"""Mixed-model formula parsing and rewriting.

Grammar (a deliberately small Wilkinson-style subset)::

    formula  :=  response '~' term ('+' term)*
    term     :=  '1' | '0' | '-' '1' | ident | ident ':' ident
               | 'offset' '(' ident ')'
               | '(' relhs bar group ')'
    relhs    :=  reterm ('+' reterm)*        # 1 / 0 / -1 / ident only
    bar      :=  '|' | '||'
    group    :=  ident (':' ident)* | ident ('/' ident)*

Other function calls (``poly``, ``ns``, ``log`` ...) are rejected with a
message asking for precomputed columns.  ``rewrite`` expands ``/`` nesting
and ``||`` independence so every surviving random term has a plain or
``a:b`` grouping and correlated coefficients.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

from .errors import FormulaError

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<ident>[A-Za-z_.][A-Za-z0-9_.]*)"
    r"|(?P<num>\d+)"
    r"|(?P<op>\|\||[~+\-:/()|,]))"
)


@dataclass(frozen=True)
class Token:
    kind: str  # ident | num | op | end
    text: str
    offset: int


def tokenize(src: str):
    tokens = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            stripped = src[pos:].lstrip()
            if not stripped:
                break
            bad = len(src) - len(stripped)
            raise FormulaError(f"unexpected character {src[bad]!r}", bad)
        if m.group("ident"):
            tokens.append(Token("ident", m.group("ident"), m.start("ident")))
        elif m.group("num"):
            tokens.append(Token("num", m.group("num"), m.start("num")))
        else:
            tokens.append(Token("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(Token("end", "", len(src)))
    return tokens


@dataclass(frozen=True)
class RandomTermSpec:
    """One random-effects term ``(lhs | grouping)``."""

    intercept: bool
    covariates: tuple  # identifiers, in source order
    grouping: tuple    # factor identifiers; len > 1 means interaction/nesting
    nested: bool = False      # grouping written with '/'
    correlated: bool = True   # False when written with '||'

    def grouping_name(self) -> str:
        sep = "/" if self.nested else ":"
        return sep.join(self.grouping)


@dataclass(frozen=True)
class FormulaAst:
    response: str
    intercept: bool
    covariates: tuple      # identifiers and 'a:b' interactions, source order
    offsets: tuple         # identifiers inside offset(...)
    random: tuple          # RandomTermSpec, source order


class _Parser:
    def __init__(self, src: str):
        if not src or not src.strip():
            raise FormulaError("empty formula", 0)
        self.src = src
        self.tokens = tokenize(src)
        self.i = 0

    def peek(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> Token:
        tok = self.advance()
        if tok.text != text:
            raise FormulaError(f"expected {text!r}, found {tok.text!r}", tok.offset)
        return tok

    def parse(self) -> FormulaAst:
        resp = self.advance()
        if resp.kind != "ident":
            raise FormulaError("formula must start with a response identifier",
                               resp.offset)
        self.expect("~")
        intercept = True
        intercept_removed = False
        covariates = []
        offsets = []
        random = []
        while True:
            tok = self.peek()
            if tok.kind == "end":
                break
            got = self._term()
            kind, value = got
            if kind == "intercept":
                if value:
                    intercept = True
                    intercept_removed = False
                else:
                    intercept_removed = True
            elif kind == "covariate":
                covariates.append(value)
            elif kind == "offset":
                offsets.append(value)
            else:
                random.append(value)
            nxt = self.peek()
            if nxt.kind == "end":
                break
            if nxt.text != "+":
                raise FormulaError(f"expected '+', found {nxt.text!r}", nxt.offset)
            self.advance()
        if intercept_removed:
            intercept = False
        return FormulaAst(resp.text, intercept, tuple(covariates),
                          tuple(offsets), tuple(random))

    def _term(self):
        tok = self.advance()
        if tok.text == "-":
            one = self.advance()
            if one.text != "1":
                raise FormulaError("'-' is only allowed as '-1'", one.offset)
            return "intercept", False
        if tok.kind == "num":
            if tok.text == "1":
                return "intercept", True
            if tok.text == "0":
                return "intercept", False
            raise FormulaError(f"unexpected number {tok.text!r}", tok.offset)
        if tok.kind == "ident":
            if self.peek().text == "(":
                if tok.text == "offset":
                    self.advance()
                    name = self.advance()
                    if name.kind != "ident":
                        raise FormulaError("offset() needs a column name", name.offset)
                    self.expect(")")
                    return "offset", name.text
                raise FormulaError(
                    f"function call {tok.text!r}() is not supported; "
                    "precompute the columns instead", tok.offset)
            if self.peek().text == ":":
                self.advance()
                rhs = self.advance()
                if rhs.kind != "ident":
                    raise FormulaError("':' needs identifiers on both sides",
                                       rhs.offset)
                return "covariate", f"{tok.text}:{rhs.text}"
            return "covariate", tok.text
        if tok.text == "(":
            return "random", self._random_term(tok.offset)
        if tok.text == "|":
            raise FormulaError("'|' is only allowed inside a parenthesized "
                               "random-effects term", tok.offset)
        raise FormulaError(f"unexpected token {tok.text!r}", tok.offset)

    def _random_term(self, open_offset: int) -> RandomTermSpec:
        intercept = True
        removed = False
        covariates = []
        saw_item = False
        while True:
            tok = self.peek()
            if tok.kind == "end":
                raise FormulaError("unclosed random-effects term", open_offset)
            if tok.text in ("|", "||"):
                break
            tok = self.advance()
            if tok.text == "-":
                one = self.advance()
                if one.text != "1":
                    raise FormulaError("'-' is only allowed as '-1'", one.offset)
                removed = True
            elif tok.kind == "num" and tok.text == "1":
                intercept = True
                removed = False
            elif tok.kind == "num" and tok.text == "0":
                removed = True
            elif tok.kind == "ident":
                if self.peek().text in (":", "("):
                    bad = self.peek()
                    raise FormulaError(
                        "only plain covariates are allowed on the left of '|'",
                        bad.offset)
                covariates.append(tok.text)
            else:
                raise FormulaError(f"unexpected token {tok.text!r} in "
                                   "random-effects term", tok.offset)
            saw_item = True
            nxt = self.peek()
            if nxt.text == "+":
                self.advance()
            elif nxt.text not in ("|", "||"):
                raise FormulaError(f"expected '+' or '|', found {nxt.text!r}",
                                   nxt.offset)
        if not saw_item:
            raise FormulaError("empty random-effects term", open_offset)
        bar = self.advance()
        correlated = bar.text == "|"
        group, nested = self._grouping()
        self.expect(")")
        return RandomTermSpec(intercept and not removed, tuple(covariates),
                              tuple(group), nested, correlated)

    def _grouping(self):
        first = self.advance()
        if first.kind != "ident":
            raise FormulaError("grouping factor must be an identifier",
                               first.offset)
        names = [first.text]
        sep = None
        while self.peek().text in (":", "/"):
            tok = self.advance()
            if sep is None:
                sep = tok.text
            elif tok.text != sep:
                raise FormulaError("mixing ':' and '/' in a grouping "
                                   "expression is not supported", tok.offset)
            nxt = self.advance()
            if nxt.kind != "ident":
                raise FormulaError("grouping factor must be an identifier",
                                   nxt.offset)
            names.append(nxt.text)
        return names, sep == "/"


def parse_formula(src: str) -> FormulaAst:
    """Parse a mixed-model formula string into an AST."""
    return _Parser(src).parse()


def rewrite(ast: FormulaAst) -> FormulaAst:
    """Expand '/' nesting and '||' independence into plain random terms."""
    out = []
    for term in ast.random:
        expanded = [term]
        if term.nested:
            expanded = []
            for depth in range(1, len(term.grouping) + 1):
                expanded.append(replace(term, grouping=term.grouping[:depth],
                                        nested=False))
        final = []
        for t in expanded:
            if t.correlated or (t.intercept and not t.covariates):
                final.append(replace(t, correlated=True))
            else:
                if t.intercept:
                    final.append(replace(t, intercept=True, covariates=(),
                                         correlated=True))
                for cov in t.covariates:
                    final.append(replace(t, intercept=False, covariates=(cov,),
                                         correlated=True))
        out.extend(final)
    return replace(ast, random=tuple(out))


def _lhs_text(term: RandomTermSpec) -> str:
    parts = ["1" if term.intercept else "0"]
    parts.extend(term.covariates)
    return " + ".join(parts)


def _random_text(term: RandomTermSpec, compact: bool) -> str:
    bar = "|" if term.correlated else "||"
    if compact and term.intercept and term.covariates:
        lhs = " + ".join(term.covariates)
    elif compact and term.intercept:
        lhs = "1"
    else:
        lhs = _lhs_text(term)
    return f"({lhs} {bar} {term.grouping_name()})"


def print_formula(ast: FormulaAst, compact: bool = False) -> str:
    """Render an AST back to a formula string.

    The canonical form spells the intercept out (``1 +`` / ``0 +``); the
    compact form drops a redundant intercept the way fitted-model summaries
    conventionally do.
    """
    parts = []
    if not compact or not (ast.covariates or ast.offsets or ast.random):
        parts.append("1" if ast.intercept else "0")
    elif not ast.intercept:
        parts.append("0")
    parts.extend(ast.covariates)
    parts.extend(f"offset({o})" for o in ast.offsets)
    parts.extend(_random_text(t, compact) for t in ast.random)
    rhs = " + ".join(parts) if parts else "1"
    return f"{ast.response} ~ {rhs}"
