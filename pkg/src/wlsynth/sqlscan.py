"""Base-table reference scanner for benchmark SQL.

This is a token scanner over FROM / JOIN / WITH structure, not a SQL grammar.
It covers the dialect used by JOB, CEB and TPC-DS query files: comma joins,
explicit JOINs with ON/USING, derived tables, nested subqueries anywhere,
CTEs and set operators.  Every table reference counts, so a self-join through
two aliases contributes two references.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .trace import Scanset


class SqlAnalysisError(ValueError):
    def __init__(self, message: str, sql: str, start: int, end: int) -> None:
        self.span = (start, end)
        self.fragment = sql[start:end]
        super().__init__(f"{message} at [{start}:{end}]: {self.fragment[:80]!r}")


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<line_comment>--[^\n]*)
  | (?P<block_comment>/\*.*?\*/)
  | (?P<string>'(?:[^']|'')*')
  | (?P<quoted>"(?:[^"]|"")*"|`[^`]*`)
  | (?P<word>[A-Za-z_][A-Za-z0-9_$]*)
  | (?P<number>\d+(?:\.\d*)?(?:[eE][-+]?\d+)?|\.\d+)
  | (?P<punct>[(),;.])
  | (?P<op>.)
    """,
    re.VERBOSE | re.DOTALL,
)


@dataclass(frozen=True)
class Token:
    kind: str  # word | ident | string | number | punct | op
    value: str  # lowercased for words and identifiers
    start: int
    end: int

    def is_word(self, *words: str) -> bool:
        return self.kind == "word" and (not words or self.value in words)

    def is_punct(self, ch: str) -> bool:
        return self.kind == "punct" and self.value == ch


def tokenize(sql: str) -> list[Token]:
    tokens = []
    pos = 0
    while pos < len(sql):
        if sql.startswith("/*", pos) and sql.find("*/", pos + 2) < 0:
            raise SqlAnalysisError("unterminated comment", sql, pos, len(sql))
        if sql[pos] in "'\"`" and _TOKEN_RE.match(sql, pos).lastgroup == "op":
            raise SqlAnalysisError("unterminated quoted text", sql, pos, len(sql))
        m = _TOKEN_RE.match(sql, pos)
        kind = m.lastgroup
        text = m.group()
        if kind == "quoted":
            tokens.append(Token("ident", text[1:-1].lower(), m.start(), m.end()))
        elif kind == "word":
            tokens.append(Token("word", text.lower(), m.start(), m.end()))
        elif kind in ("string", "number", "punct", "op"):
            tokens.append(Token(kind, text, m.start(), m.end()))
        pos = m.end()
    return tokens


RESERVED = frozenset(
    """
    all and any as asc between by case cross desc distinct else end except exists
    fetch for from full group having in inner intersect into is join lateral left
    like limit natural not null offset on or order outer qualify returning right
    select set straight_join tablesample then union using values when where window with
    """.split()
)
JOIN_START = frozenset({"join", "inner", "left", "right", "full", "cross", "natural", "straight_join"})
CONDITION_END = frozenset(
    {"where", "group", "order", "having", "limit", "union", "intersect", "except",
     "window", "qualify", "offset", "fetch", "returning", "for", "into"}
) | JOIN_START
# FROM inside these calls is an argument separator, not a table clause.
FROM_ARG_FUNCS = frozenset({"extract", "trim", "substring", "overlay", "position"})
SUBQUERY_START = frozenset({"select", "with", "values"})


class _Scanner:
    def __init__(self, sql: str, cte_exclusion: bool) -> None:
        self.sql = sql
        self.toks = tokenize(sql)
        self.cte_exclusion = cte_exclusion
        self.ctes: set[str] = set()
        self.refs: list[str] = []
        self.match = self._match_parens()

    def _match_parens(self) -> dict[int, int]:
        match: dict[int, int] = {}
        stack: list[int] = []
        for i, tok in enumerate(self.toks):
            if tok.is_punct("("):
                stack.append(i)
            elif tok.is_punct(")"):
                if not stack:
                    raise SqlAnalysisError("unbalanced ')'", self.sql, tok.start, tok.end)
                match[stack.pop()] = i
        if stack:
            tok = self.toks[stack[-1]]
            raise SqlAnalysisError("unbalanced '('", self.sql, tok.start, len(self.sql))
        return match

    def _fail(self, message: str, i: int) -> SqlAnalysisError:
        if i < len(self.toks):
            tok = self.toks[i]
            return SqlAnalysisError(message, self.sql, tok.start, tok.end)
        return SqlAnalysisError(message, self.sql, max(0, len(self.sql) - 20), len(self.sql))

    def _is_name(self, i: int, end: int) -> bool:
        if i >= end:
            return False
        tok = self.toks[i]
        return tok.kind == "ident" or (tok.kind == "word" and tok.value not in RESERVED)

    def run(self) -> None:
        self.block(0, len(self.toks))

    def block(self, i: int, end: int, ignore_from: bool = False) -> None:
        toks = self.toks
        while i < end:
            tok = toks[i]
            if tok.is_punct("("):
                close = self.match[i]
                special = i > 0 and toks[i - 1].is_word(*FROM_ARG_FUNCS)
                self.block(i + 1, close, ignore_from=special)
                i = close + 1
            elif tok.is_word("with"):
                i = self.with_clause(i + 1, end)
            elif tok.is_word("from") and not ignore_from and not self._is_distinct_from(i):
                i = self.from_list(i + 1, end)
            else:
                i += 1

    def _is_distinct_from(self, i: int) -> bool:
        # "a IS [NOT] DISTINCT FROM b"
        return i >= 2 and self.toks[i - 1].is_word("distinct") and self.toks[i - 2].is_word("is", "not")

    def with_clause(self, i: int, end: int) -> int:
        toks = self.toks
        if i < end and toks[i].is_word("recursive"):
            i += 1
        while True:
            if not self._is_name(i, end):
                raise self._fail("expected CTE name after WITH", i)
            self.ctes.add(toks[i].value)
            i += 1
            if i < end and toks[i].is_punct("("):
                i = self.match[i] + 1
            if not (i < end and toks[i].is_word("as")):
                raise self._fail("expected AS in CTE definition", i)
            i += 1
            while i < end and toks[i].is_word("not", "materialized"):
                i += 1
            if not (i < end and toks[i].is_punct("(")):
                raise self._fail("expected parenthesized CTE body", i)
            close = self.match[i]
            self.block(i + 1, close)
            i = close + 1
            if i < end and toks[i].is_punct(","):
                i += 1
                continue
            return i

    def from_list(self, i: int, end: int) -> int:
        while True:
            i = self.table_ref(i, end)
            i = self.join_condition(i, end)
            if i < end and self.toks[i].is_punct(","):
                i += 1
                continue
            after_join = self.join_keyword(i, end)
            if after_join is None:
                return i
            i = after_join

    def table_ref(self, i: int, end: int) -> int:
        toks = self.toks
        while i < end and toks[i].is_word("lateral", "only"):
            i += 1
        if i >= end:
            raise self._fail("empty FROM clause", i)
        tok = toks[i]
        if tok.is_punct("("):
            close = self.match[i]
            first = i + 1
            while first < close and toks[first].is_punct("("):
                first += 1
            if first < close and toks[first].is_word(*SUBQUERY_START):
                self.block(i + 1, close)
            else:
                inner = self.from_list(i + 1, close)
                if inner != close:
                    self.block(inner, close)
            i = close + 1
        elif self._is_name(i, end):
            name = tok.value
            i += 1
            while i + 1 < end and toks[i].is_punct(".") and self._is_name(i + 1, end):
                name = toks[i + 1].value
                i += 2
            if i < end and toks[i].is_punct("("):
                # table-valued function, not a base table
                close = self.match[i]
                self.block(i + 1, close)
                i = close + 1
            elif not (self.cte_exclusion and name in self.ctes):
                self.refs.append(name)
        else:
            raise self._fail("cannot resolve table reference in FROM", i)
        return self.alias(i, end)

    def alias(self, i: int, end: int) -> int:
        toks = self.toks
        if i < end and toks[i].is_word("as"):
            i += 1
            if not self._is_name(i, end):
                raise self._fail("expected alias after AS", i)
            i += 1
        elif self._is_name(i, end):
            i += 1
        else:
            return i
        if i < end and toks[i].is_punct("("):
            i = self.match[i] + 1
        return i

    def join_condition(self, i: int, end: int) -> int:
        toks = self.toks
        if i < end and toks[i].is_word("using"):
            i += 1
            if i < end and toks[i].is_punct("("):
                i = self.match[i] + 1
            return i
        if not (i < end and toks[i].is_word("on")):
            return i
        i += 1
        while i < end:
            tok = toks[i]
            if tok.is_punct("("):
                close = self.match[i]
                special = toks[i - 1].is_word(*FROM_ARG_FUNCS)
                self.block(i + 1, close, ignore_from=special)
                i = close + 1
                continue
            if tok.is_punct(",") or tok.is_punct(";"):
                break
            if tok.kind == "word" and tok.value in CONDITION_END:
                # left(...) / right(...) are string functions
                if not (i + 1 < end and toks[i + 1].is_punct("(")):
                    break
            i += 1
        return i

    def join_keyword(self, i: int, end: int) -> int | None:
        toks = self.toks
        j = i
        if j < end and toks[j].is_word("straight_join"):
            return j + 1
        if j < end and toks[j].is_word("natural"):
            j += 1
        if j < end and toks[j].is_word("inner", "cross", "left", "right", "full"):
            j += 1
        if j < end and toks[j].is_word("outer"):
            j += 1
        if j < end and toks[j].is_word("join"):
            return j + 1
        return None


def table_references(sql_text: str, cte_exclusion: bool = True) -> list[str]:
    """All base-table references in order of appearance, lowercased."""
    scanner = _Scanner(sql_text, cte_exclusion)
    scanner.run()
    return scanner.refs


def analyze_sql(sql_text: str, cte_exclusion: bool = True) -> tuple[Scanset, int]:
    refs = table_references(sql_text, cte_exclusion)
    return Scanset.of(refs), max(0, len(refs) - 1)
