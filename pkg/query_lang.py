# -*- coding: utf-8 -*-
"""
그래프 질의 언어 (Cypher 유사, 단일 바인딩 + 1-hop 관계 조건)

    MATCH (p:Park) WHERE p.gdp > 100 AND (p)-[:AdjacentTo]->(q:Park WHERE q.gdp > 50)
    RETURN p.name, p.gdp ORDER BY p.gdp DESC LIMIT 5

문법은 _Parser 주석 참고
"""
import re
from dataclasses import dataclass
from decimal import Decimal

import pandas as pd

from graph_store import ENTITY_KINDS, RELATIONS

KEYWORDS = {"MATCH", "WHERE", "RETURN", "ORDER", "BY", "ASC", "DESC", "LIMIT", "AND", "CONTAINS", "COUNT"}
COMPARISON_OPS = ("=", "<", ">", "<=", ">=", "CONTAINS")
PSEUDO_ATTRIBUTES = ("id", "label")

KIND_ALIASES = {kind: kind for kind in ENTITY_KINDS}
KIND_ALIASES.update({"Park": "IndustrialPark", "Ent": "Enterprise", "Function": "GridDominantFunction"})

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<number>\d+(?:\.\d+)?)
  | (?P<string>'(?:[^'\\]|\\.)*'|"(?:[^"\\]|\\.)*")
  | (?P<word>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<symbol>->|<-|<=|>=|[()\[\]:.,*=<>{}-])
""", re.VERBOSE)


class QueryError(Exception):
    """질의 파싱/평가 오류"""


class QuerySyntaxError(QueryError):
    """문법 오류 (줄/열 + 기대 토큰 집합)"""

    def __init__(self, line, column, expected, found):
        self.line = line
        self.column = column
        self.expected = frozenset(expected)
        self.found = found
        expected_text = " or ".join(sorted(self.expected)) if self.expected else "end of query"
        super().__init__(
            f"syntax error at line {line}, column {column}: expected {expected_text}, found {found}"
        )


class QueryTypeError(QueryError):
    """비교 타입 불일치"""


# ----------------------------------------------------------------------
# AST
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class AttrRef:
    binding: str
    attribute: str


@dataclass(frozen=True)
class Comparison:
    ref: AttrRef
    op: str
    value: object


@dataclass(frozen=True)
class RelationExists:
    binding: str
    relation: str
    direction: str            # outgoing | incoming | both
    other_binding: str        # None 가능
    other_kind: str
    condition: Comparison     # None 가능


@dataclass(frozen=True)
class CountAll:
    pass


@dataclass(frozen=True)
class OrderBy:
    ref: AttrRef
    descending: bool = False


@dataclass(frozen=True)
class Query:
    binding: str
    kind: str
    predicates: tuple = ()
    projections: tuple = ()
    order_by: OrderBy = None
    limit: int = None


@dataclass
class ResultTable:
    columns: tuple
    rows: list
    total: int
    ids: list

    def to_dict(self):
        return {"columns": list(self.columns), "rows": [list(row) for row in self.rows], "total": self.total}

    def to_text(self, max_rows=None):
        """pandas 표 렌더링 (상위 max_rows 행)"""
        if not self.rows:
            return "0 rows"
        rows = self.rows if max_rows is None else self.rows[:max_rows]
        frame = pd.DataFrame([[_render_cell(v) for v in row] for row in rows], columns=list(self.columns))
        text = frame.to_string(index=False)
        footer = f"({len(self.rows)} rows"
        if self.total != len(self.rows):
            footer += f", {self.total} before limit"
        footer += ")"
        if max_rows is not None and len(self.rows) > max_rows:
            footer = f"... {footer}"
        return f"{text}\n{footer}"


def _render_cell(value):
    if value is None:
        return ""
    if isinstance(value, (list, tuple)):
        return ";".join(value)
    return value


# ----------------------------------------------------------------------
# 토크나이저 / 파서
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class _Token:
    kind: str      # word | number | string | symbol | eof
    text: str
    line: int
    column: int

    def describe(self):
        if self.kind == "eof":
            return "end of query"
        return repr(self.text)


def _tokenize(text):
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise QuerySyntaxError(line, pos - line_start + 1, (), repr(text[pos]))
        kind = match.lastgroup
        chunk = match.group()
        if kind != "ws":
            tokens.append(_Token(kind, chunk, line, pos - line_start + 1))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = pos + chunk.rfind("\n") + 1
        pos = match.end()
    tokens.append(_Token("eof", "", line, pos - line_start + 1))
    return tokens


def _unquote(text):
    body = text[1:-1]
    return re.sub(r"\\(.)", r"\1", body)


class _Parser:
    def __init__(self, text):
        self.tokens = _tokenize(text)
        self.index = 0

    @property
    def current(self):
        return self.tokens[self.index]

    def error(self, expected):
        token = self.current
        raise QuerySyntaxError(token.line, token.column, expected, token.describe())

    def advance(self):
        token = self.current
        self.index += 1
        return token

    def at_keyword(self, keyword):
        token = self.current
        return token.kind == "word" and token.text.upper() == keyword

    def at_symbol(self, symbol):
        token = self.current
        return token.kind == "symbol" and token.text == symbol

    def expect_keyword(self, keyword):
        if not self.at_keyword(keyword):
            self.error({keyword})
        return self.advance()

    def expect_symbol(self, symbol):
        if not self.at_symbol(symbol):
            self.error({symbol})
        return self.advance()

    def expect_name(self, what="identifier"):
        if self.current.kind != "word":
            self.error({what})
        return self.advance().text

    def expect_binding(self, what="identifier"):
        token = self.current
        if token.kind != "word" or token.text.upper() in KEYWORDS:
            self.error({what})
        return self.advance().text

    # query := MATCH (b:Kind) [WHERE ...] RETURN ... [ORDER BY ...] [LIMIT n]
    def parse_query(self):
        self.expect_keyword("MATCH")
        self.expect_symbol("(")
        binding = self.expect_binding("binding name")
        self.expect_symbol(":")
        kind = self.expect_name("entity kind")
        self.expect_symbol(")")

        predicates = []
        if self.at_keyword("WHERE"):
            self.advance()
            predicates.append(self.parse_predicate(binding))
            while self.at_keyword("AND"):
                self.advance()
                predicates.append(self.parse_predicate(binding))

        if not self.at_keyword("RETURN"):
            self.error({"WHERE", "AND", "RETURN"} if predicates else {"WHERE", "RETURN"})
        self.advance()
        projections = [self.parse_projection(binding)]
        while self.at_symbol(","):
            self.advance()
            projections.append(self.parse_projection(binding))
        if any(isinstance(p, CountAll) for p in projections) and len(projections) > 1:
            raise QueryError("COUNT(*) must be the only projection")

        order_by = None
        if self.at_keyword("ORDER"):
            self.advance()
            self.expect_keyword("BY")
            ref = self.parse_attr_ref(binding)
            descending = False
            if self.at_keyword("ASC"):
                self.advance()
            elif self.at_keyword("DESC"):
                self.advance()
                descending = True
            order_by = OrderBy(ref, descending)

        limit = None
        if self.at_keyword("LIMIT"):
            self.advance()
            token = self.current
            if token.kind != "number" or "." in token.text:
                self.error({"positive integer"})
            limit = int(self.advance().text)
            if limit < 1:
                raise QuerySyntaxError(token.line, token.column, {"positive integer"}, token.describe())

        if self.current.kind != "eof":
            expected = set()
            if order_by is None and limit is None:
                expected |= {",", "ORDER"}
            if limit is None:
                expected.add("LIMIT")
            self.error(expected)

        return Query(binding, kind, tuple(predicates), tuple(projections), order_by, limit)

    def parse_attr_ref(self, binding):
        token = self.current
        name = self.expect_binding("binding name")
        if name != binding:
            raise QuerySyntaxError(token.line, token.column, {binding}, token.describe())
        self.expect_symbol(".")
        return AttrRef(name, self.expect_name("attribute name"))

    def parse_projection(self, binding):
        if self.at_keyword("COUNT"):
            self.advance()
            self.expect_symbol("(")
            self.expect_symbol("*")
            self.expect_symbol(")")
            return CountAll()
        return self.parse_attr_ref(binding)

    def parse_predicate(self, binding):
        if self.at_symbol("("):
            return self.parse_pattern(binding)
        return self.parse_comparison(binding)

    def parse_comparison(self, binding):
        ref = self.parse_attr_ref(binding)
        token = self.current
        negative_literal = False
        if token.kind == "symbol" and token.text in ("=", "<", ">", "<=", ">="):
            op = self.advance().text
        elif token.kind == "symbol" and token.text == "<-":
            # "x <-5" 는 "x < -5"
            self.advance()
            op, negative_literal = "<", True
        elif self.at_keyword("CONTAINS"):
            self.advance()
            op = "CONTAINS"
        else:
            self.error(set(COMPARISON_OPS))
        return Comparison(ref, op, self.parse_literal(negative_literal))

    def parse_literal(self, negative=False):
        if not negative and self.at_symbol("-"):
            self.advance()
            negative = True
        token = self.current
        if token.kind == "number":
            self.advance()
            value = float(token.text) if "." in token.text else int(token.text)
            return -value if negative else value
        if token.kind == "string" and not negative:
            self.advance()
            return _unquote(token.text)
        self.error({"number"} if negative else {"number", "string"})

    def parse_pattern(self, binding):
        self.expect_symbol("(")
        token = self.current
        name = self.expect_binding("binding name")
        if name != binding:
            raise QuerySyntaxError(token.line, token.column, {binding}, token.describe())
        self.expect_symbol(")")

        if self.at_symbol("<-"):
            self.advance()
            relation = self.parse_relation_type()
            self.expect_symbol("-")
            direction = "incoming"
        else:
            self.expect_symbol("-")
            relation = self.parse_relation_type()
            if self.at_symbol("->"):
                self.advance()
                direction = "outgoing"
            elif self.at_symbol("-"):
                self.advance()
                direction = "both"
            else:
                self.error({"->", "-"})

        self.expect_symbol("(")
        other_binding = None
        if self.current.kind == "word" and self.current.text.upper() not in KEYWORDS:
            token = self.current
            other_binding = self.advance().text
            if other_binding == binding:
                raise QueryError(f"binding '{binding}' declared twice")
        self.expect_symbol(":")
        other_kind = self.expect_name("entity kind")

        condition = None
        if self.at_keyword("WHERE"):
            if other_binding is None:
                self.error({")"})
            self.advance()
            condition = self.parse_comparison(other_binding)
        self.expect_symbol(")")
        return RelationExists(binding, relation, direction, other_binding, other_kind, condition)

    def parse_relation_type(self):
        self.expect_symbol("[")
        self.expect_symbol(":")
        relation = self.expect_name("relation name")
        self.expect_symbol("]")
        return relation


def parse(text):
    """질의 텍스트 → Query AST"""
    return _Parser(text).parse_query()


# ----------------------------------------------------------------------
# 출력 (parse(format_query(q)) == q)
# ----------------------------------------------------------------------
def _format_literal(value):
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace("'", "\\'")
        return f"'{escaped}'"
    if isinstance(value, float):
        text = format(Decimal(repr(value)), 'f')
        return text if "." in text else f"{text}.0"
    return str(value)


def _format_ref(ref):
    return f"{ref.binding}.{ref.attribute}"


def _format_comparison(comparison):
    return f"{_format_ref(comparison.ref)} {comparison.op} {_format_literal(comparison.value)}"


def _format_predicate(predicate):
    if isinstance(predicate, Comparison):
        return _format_comparison(predicate)
    if predicate.direction == "outgoing":
        arrow_in, arrow_out = "-", "->"
    elif predicate.direction == "incoming":
        arrow_in, arrow_out = "<-", "-"
    else:
        arrow_in, arrow_out = "-", "-"
    inner = f"{predicate.other_binding or ''}:{predicate.other_kind}"
    if predicate.condition is not None:
        inner += f" WHERE {_format_comparison(predicate.condition)}"
    return f"({predicate.binding}){arrow_in}[:{predicate.relation}]{arrow_out}({inner})"


def format_query(query):
    """Query AST → 정규화된 질의 텍스트"""
    parts = [f"MATCH ({query.binding}:{query.kind})"]
    if query.predicates:
        parts.append("WHERE " + " AND ".join(_format_predicate(p) for p in query.predicates))
    projections = ["COUNT(*)" if isinstance(p, CountAll) else _format_ref(p) for p in query.projections]
    parts.append("RETURN " + ", ".join(projections))
    if query.order_by is not None:
        parts.append(f"ORDER BY {_format_ref(query.order_by.ref)} {'DESC' if query.order_by.descending else 'ASC'}")
    if query.limit is not None:
        parts.append(f"LIMIT {query.limit}")
    return " ".join(parts)


# ----------------------------------------------------------------------
# 평가
# ----------------------------------------------------------------------
def _resolve_kind(kind):
    resolved = KIND_ALIASES.get(kind)
    if resolved is None:
        raise QueryError(f"unknown kind '{kind}'")
    return resolved


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _lookup(graph, entity, attribute):
    if attribute == "id":
        return entity
    if attribute == "label":
        return graph.entity(entity).label
    return graph.attribute(entity, attribute)


def _compare(value, op, literal, ref):
    """누락 속성은 False, 타입 불일치는 QueryTypeError"""
    if value is None:
        return False

    if op == "CONTAINS":
        if not isinstance(literal, str):
            raise QueryTypeError(f"CONTAINS on '{_format_ref(ref)}' needs a text literal")
        if isinstance(value, str):
            return literal in value
        if isinstance(value, tuple):
            return literal in value
        raise QueryTypeError(f"CONTAINS on numeric attribute '{_format_ref(ref)}'")

    if isinstance(value, tuple):
        raise QueryTypeError(f"cannot compare list attribute '{_format_ref(ref)}' with {op}")
    if _is_number(value) != _is_number(literal):
        raise QueryTypeError(
            f"type mismatch: '{_format_ref(ref)}' is {type(value).__name__}, literal is {type(literal).__name__}"
        )

    if op == "=":
        return value == literal
    if op == "<":
        return value < literal
    if op == ">":
        return value > literal
    if op == "<=":
        return value <= literal
    return value >= literal


def _collect_refs(query):
    refs = []
    for predicate in query.predicates:
        if isinstance(predicate, Comparison):
            refs.append(predicate.ref)
        elif predicate.condition is not None:
            refs.append(predicate.condition.ref)
    refs.extend(p for p in query.projections if isinstance(p, AttrRef))
    if query.order_by is not None:
        refs.append(query.order_by.ref)
    return refs


def _validate(query, graph):
    kind = _resolve_kind(query.kind)
    known = graph.attribute_names() | set(PSEUDO_ATTRIBUTES)
    for ref in _collect_refs(query):
        if ref.attribute not in known:
            raise QueryError(f"unknown attribute '{ref.attribute}'")
    for predicate in query.predicates:
        if isinstance(predicate, RelationExists):
            if predicate.relation not in RELATIONS:
                raise QueryError(f"unknown relation '{predicate.relation}'")
            _resolve_kind(predicate.other_kind)
    return kind


def _matches(graph, entity, predicate):
    if isinstance(predicate, Comparison):
        return _compare(_lookup(graph, entity, predicate.ref.attribute), predicate.op, predicate.value, predicate.ref)

    other_kind = _resolve_kind(predicate.other_kind)
    for other in graph.neighbors(entity, predicate.relation, predicate.direction):
        if graph.entity(other).kind != other_kind:
            continue
        condition = predicate.condition
        if condition is None or _compare(
            _lookup(graph, other, condition.ref.attribute), condition.op, condition.value, condition.ref
        ):
            return True
    return False


def _order(graph, entities, order_by):
    attribute = order_by.ref.attribute
    present, missing = [], []
    for entity in entities:
        value = _lookup(graph, entity, attribute)
        (missing if value is None else present).append((entity, value))

    if any(isinstance(value, tuple) for _, value in present):
        raise QueryTypeError(f"cannot order by list attribute '{_format_ref(order_by.ref)}'")
    if len({_is_number(value) for _, value in present}) > 1:
        raise QueryTypeError(f"mixed value types in ORDER BY '{_format_ref(order_by.ref)}'")

    # 동률은 EntityId 오름차순 (안정 정렬), 누락값은 맨 뒤
    present.sort(key=lambda item: item[0])
    present.sort(key=lambda item: item[1], reverse=order_by.descending)
    return [entity for entity, _ in present] + sorted(entity for entity, _ in missing)


def evaluate(query, graph):
    """Query → ResultTable (조건 필터 → 정렬 → LIMIT → 투영)"""
    if isinstance(query, str):
        query = parse(query)
    kind = _validate(query, graph)

    matched = [
        entity for entity in graph.entities_of_kind(kind)
        if all(_matches(graph, entity, predicate) for predicate in query.predicates)
    ]
    if query.order_by is not None:
        matched = _order(graph, matched, query.order_by)

    total = len(matched)
    if any(isinstance(p, CountAll) for p in query.projections):
        return ResultTable(("count",), [(total,)], total, [])

    if query.limit is not None:
        matched = matched[:query.limit]

    columns = tuple(_format_ref(p) for p in query.projections)
    rows = []
    for entity in matched:
        row = []
        for projection in query.projections:
            value = _lookup(graph, entity, projection.attribute)
            row.append(list(value) if isinstance(value, tuple) else value)
        rows.append(tuple(row))
    return ResultTable(columns, rows, total, matched)
