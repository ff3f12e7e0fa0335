# -*- coding: utf-8 -*-
"""
의사결정 지원 도구 6종
- structured_query : 그래프 질의 실행
- similarity_search: 유사 단지 추천 (임베딩 코사인 유사도)
- geo_encode / geo_decode : 주소 <-> 격자 ID (가제티어)
- rank_master      : Borda Count 순위 집계
- function_planner : 격자 기능 계획용 컨텍스트

도구는 예외를 밖으로 던지지 않고 실패도 Observation 으로 반환한다.
"""
import hashlib
import json
import re
import threading
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from common_utils import cosine_similarity, log, normalize_text, edit_distance, post_json_with_retry, write_json
from query_lang import QueryError, evaluate, parse

DEFAULT_SUMMARY_CAP = 2000
DEFAULT_TOP_K = 5
EMBEDDING_DIM = 256
MAX_SUGGESTIONS = 3
SUMMARY_TABLE_ROWS = 10

TOOL_MANIFEST = (
    {
        "name": "structured_query",
        "description": "Run a graph query: MATCH (b:Kind) [WHERE ...] RETURN ... [ORDER BY ...] [LIMIT n]",
        "arguments": {"query": {"type": "text", "required": True}},
    },
    {
        "name": "similarity_search",
        "description": "Find parks similar to a description text or to an existing park id",
        "arguments": {
            "text": {"type": "text", "required": False},
            "park": {"type": "text", "required": False},
            "top_k": {"type": "integer", "required": False, "default": DEFAULT_TOP_K},
        },
    },
    {
        "name": "geo_encode",
        "description": "Convert an address into a grid id",
        "arguments": {"address": {"type": "text", "required": True}},
    },
    {
        "name": "geo_decode",
        "description": "Convert a grid id into a readable address",
        "arguments": {"grid": {"type": "text", "required": True}},
    },
    {
        "name": "rank_master",
        "description": "Borda count ranking of candidate sites; criteria as 'name' (higher is better) or 'name:lower'",
        "arguments": {
            "candidates": {"type": "list", "required": True},
            "criteria": {"type": "list", "required": True},
        },
    },
    {
        "name": "function_planner",
        "description": "Planning context of a grid: indicators, dominant function, neighbors, park leading industries",
        "arguments": {"grid": {"type": "text", "required": True}},
    },
)

TOOL_NAMES = tuple(tool["name"] for tool in TOOL_MANIFEST)
_MANIFEST_BY_NAME = {tool["name"]: tool for tool in TOOL_MANIFEST}


@dataclass(frozen=True)
class ToolInvocation:
    tool: str
    arguments: dict = field(default_factory=dict)
    step: int = 0

    def key(self):
        """중복 판정 키 (step 제외)"""
        return json.dumps([self.tool, self.arguments], sort_keys=True, ensure_ascii=False)

    def to_dict(self):
        return {"tool": self.tool, "arguments": self.arguments, "step": self.step}


@dataclass
class Observation:
    tool: str
    success: bool
    summary: str
    payload: dict = field(default_factory=dict)
    error: str = None

    def to_dict(self):
        return {
            "tool": self.tool,
            "success": self.success,
            "summary": self.summary,
            "payload": self.payload,
            "error": self.error,
        }

    @property
    def result_size(self):
        """결과 크기 (외부 피드백용)"""
        for key in ("rows", "results", "ordering", "neighbors"):
            if isinstance(self.payload.get(key), list):
                return len(self.payload[key])
        return 1 if self.success and self.payload else 0


def _cap(text, cap):
    text = str(text)
    if len(text) <= cap:
        return text
    return text[:max(cap - 3, 0)] + "..."


def _ok(tool, summary, payload, cap=DEFAULT_SUMMARY_CAP):
    return Observation(tool, True, _cap(summary, cap), payload)


def _fail(tool, error, payload=None, cap=DEFAULT_SUMMARY_CAP):
    error = str(error) or "unknown error"
    return Observation(tool, False, _cap(f"ERROR: {error}", cap), payload or {}, error)


def export_manifest(path=None):
    """도구 매니페스트(이름 + 인자 스키마). path가 있으면 JSON 저장"""
    manifest = [dict(tool) for tool in TOOL_MANIFEST]
    if path:
        write_json(path, manifest)
    return manifest


def validate_arguments(tool, arguments):
    """인자 스키마 검증. 문제가 없으면 None, 있으면 오류 메시지"""
    spec = _MANIFEST_BY_NAME.get(tool)
    if spec is None:
        return f"unknown tool '{tool}'"
    if not isinstance(arguments, dict):
        return "arguments must be an object"

    schema = spec["arguments"]
    unknown = sorted(set(arguments) - set(schema))
    if unknown:
        return f"unknown argument(s) for {tool}: {', '.join(unknown)}"

    for name, rule in schema.items():
        if name not in arguments:
            if rule.get("required"):
                return f"missing required argument '{name}' for {tool}"
            continue
        value = arguments[name]
        if rule["type"] == "text" and not isinstance(value, str):
            return f"argument '{name}' must be text"
        if rule["type"] == "integer" and (isinstance(value, bool) or not isinstance(value, int)):
            return f"argument '{name}' must be an integer"
        if rule["type"] == "list" and not isinstance(value, (list, tuple)):
            return f"argument '{name}' must be a list"

    if tool == "similarity_search" and ("text" in arguments) == ("park" in arguments):
        return "similarity_search needs exactly one of 'text' or 'park'"
    return None


# ----------------------------------------------------------------------
# 임베딩 제공자
# ----------------------------------------------------------------------
class HashEmbeddingProvider:
    """토큰 해시 bag-of-words 임베딩 (오프라인, 결정적)"""

    def __init__(self, dim=EMBEDDING_DIM):
        self.dim = dim

    def embed(self, texts):
        vectors = np.zeros((len(texts), self.dim))
        for i, text in enumerate(texts):
            for token in re.findall(r"\w+", normalize_text(text)):
                digest = hashlib.md5(token.encode('utf-8')).hexdigest()
                vectors[i, int(digest, 16) % self.dim] += 1.0
        return vectors


class RemoteEmbeddingProvider:
    """원격 임베딩 엔드포인트: 요청 {"texts": [...]} → 응답 {"vectors": [[...]]}"""

    def __init__(self, url, api_key=None, timeout=30, max_retries=3):
        self.url = url
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries

    def embed(self, texts):
        response = post_json_with_retry(
            self.url, {"texts": list(texts)}, self.api_key, self.timeout, self.max_retries
        )
        vectors = response.get("vectors") if isinstance(response, dict) else None
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise ValueError("embedding endpoint returned a malformed 'vectors' field")
        array = np.asarray(vectors, dtype=float)
        if array.ndim != 2:
            raise ValueError("embedding vectors must share one dimension")
        return array


# ----------------------------------------------------------------------
# 가제티어
# ----------------------------------------------------------------------
class Gazetteer:
    """주소 <-> 격자 ID 조회표 (CSV: address, grid_id)"""

    def __init__(self, entries=()):
        self.entries = [(str(address), str(grid)) for address, grid in entries]
        self._exact = {}
        self._normalized = {}
        self._by_grid = {}
        for address, grid in self.entries:
            self._exact.setdefault(address, grid)
            self._normalized.setdefault(normalize_text(address), grid)
            # 격자별 첫 주소가 정식 주소
            self._by_grid.setdefault(grid, address)

    @classmethod
    def from_csv(cls, path):
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
        missing = {"address", "grid_id"} - set(frame.columns)
        if missing:
            raise ValueError(f"{path}: gazetteer needs columns address, grid_id")
        gazetteer = cls(zip(frame["address"], frame["grid_id"]))
        log(f"🗺️ 가제티어 로드: {len(gazetteer.entries)}개 주소")
        return gazetteer

    def __len__(self):
        return len(self.entries)

    def lookup(self, address):
        """정확 일치 → 정규화 일치 → None"""
        if address in self._exact:
            return self._exact[address]
        return self._normalized.get(normalize_text(address))

    def suggestions(self, address, limit=MAX_SUGGESTIONS):
        target = normalize_text(address)
        ranked = sorted(
            {entry for entry, _ in self.entries},
            key=lambda entry: (edit_distance(target, normalize_text(entry)), entry),
        )
        return ranked[:limit]

    def address_of(self, grid):
        return self._by_grid.get(grid)


# ----------------------------------------------------------------------
# Borda Count
# ----------------------------------------------------------------------
@dataclass
class RankedRecommendation:
    candidates: tuple
    criteria: tuple                 # ((name, direction), ...)
    ranks: dict                     # candidate -> (r_i1, ..., r_in)
    scores: dict                    # candidate -> B(s_i)
    ordering: list
    excluded: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "candidates": list(self.candidates),
            "criteria": [{"name": name, "direction": direction} for name, direction in self.criteria],
            "ranks": {c: list(r) for c, r in self.ranks.items()},
            "scores": dict(self.scores),
            "ordering": list(self.ordering),
            "excluded": dict(self.excluded),
        }


def parse_criterion(criterion):
    """'name' | 'name:higher' | 'name:lower' | {"name", "direction"} → (name, direction)"""
    if isinstance(criterion, dict):
        name, direction = criterion.get("name"), criterion.get("direction", "higher")
    elif isinstance(criterion, str):
        name, _, direction = criterion.partition(":")
        direction = direction or "higher"
    else:
        raise ValueError(f"invalid criterion {criterion!r}")
    direction = str(direction).strip().lower()
    if direction not in ("higher", "lower"):
        raise ValueError(f"criterion '{name}': direction must be higher or lower")
    if not name or not str(name).strip():
        raise ValueError("criterion name must be non-empty")
    return str(name).strip(), direction


def criterion_ranks(values, direction):
    """1 = 최선, 동률은 평균 순위"""
    series = pd.Series(values, dtype=float)
    return series.rank(method="average", ascending=(direction == "lower")).tolist()


def borda_scores(rank_matrix):
    """B(s_i) = Σ_j (m − r_ij). rank_matrix: m x n"""
    matrix = np.asarray(rank_matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        return np.zeros(0)
    m = matrix.shape[0]
    return (m - matrix).sum(axis=1)


def rank_candidates(candidates, criteria, graph):
    """후보 × 기준 → RankedRecommendation (누락값 후보는 제외 후 보고)"""
    parsed = tuple(parse_criterion(c) for c in criteria)
    if not parsed:
        raise ValueError("at least one criterion is required")
    known = graph.attribute_names()
    for name, _ in parsed:
        if name not in known:
            raise ValueError(f"unknown attribute '{name}'")

    kept, excluded = [], {}
    for candidate in dict.fromkeys(str(c) for c in candidates):
        if candidate not in graph:
            excluded[candidate] = "unknown entity"
            continue
        missing = [
            name for name, _ in parsed
            if not isinstance(graph.attribute(candidate, name), (int, float))
        ]
        if missing:
            excluded[candidate] = "missing " + ", ".join(missing)
            continue
        kept.append(candidate)

    if not kept:
        raise ValueError("no candidates left after exclusions")

    columns = []
    for name, direction in parsed:
        columns.append(criterion_ranks([graph.attribute(c, name) for c in kept], direction))
    rank_matrix = np.array(columns, dtype=float).T
    scores = borda_scores(rank_matrix)

    score_map = {c: float(s) for c, s in zip(kept, scores)}
    ordering = sorted(kept, key=lambda c: (-score_map[c], c))
    return RankedRecommendation(
        candidates=tuple(kept),
        criteria=parsed,
        ranks={c: tuple(float(r) for r in rank_matrix[i]) for i, c in enumerate(kept)},
        scores=score_map,
        ordering=ordering,
        excluded=excluded,
    )


def _format_score(value):
    return f"{value:g}"


def rank_master(candidates, criteria, graph, cap=DEFAULT_SUMMARY_CAP):
    """Borda Count 순위 집계 도구"""
    try:
        result = rank_candidates(candidates, criteria, graph)
    except Exception as e:
        return _fail("rank_master", e, cap=cap)

    criteria_text = ", ".join(f"{name} ({direction} is better)" for name, direction in result.criteria)
    lines = [f"Borda ranking of {len(result.candidates)} candidates by {criteria_text}:"]
    for position, candidate in enumerate(result.ordering, start=1):
        lines.append(f"{position}. {candidate} score={_format_score(result.scores[candidate])}")
    if result.excluded:
        lines.append("excluded: " + "; ".join(f"{c} ({reason})" for c, reason in sorted(result.excluded.items())))
    return _ok("rank_master", "\n".join(lines), result.to_dict(), cap)


# ----------------------------------------------------------------------
# 기능 계획 컨텍스트
# ----------------------------------------------------------------------
_GRID_BOOKKEEPING = {"row", "col"}


def _grid_indicators(graph, grid):
    return {
        name: value for name, value in graph.attributes(grid).items()
        if isinstance(value, (int, float)) and name not in _GRID_BOOKKEEPING
    }


def function_planner(grid, graph, cap=DEFAULT_SUMMARY_CAP):
    """대상 격자 + 인접 격자 지표/기능 + 단지 선도산업"""
    entity = graph.get_entity(grid)
    if entity is None or entity.kind != "Grid":
        return _fail("function_planner", f"unknown grid '{grid}'", cap=cap)

    cell = graph.grid_cell(grid)
    neighbors = []
    for other in graph.neighbors(grid, "AdjacentTo"):
        other_cell = graph.grid_cell(other)
        if other_cell is None:
            continue
        neighbors.append({
            "grid": other,
            "row": other_cell.row,
            "col": other_cell.col,
            "dominant_function": graph.attribute(other, "dominant_function"),
            "indicators": _grid_indicators(graph, other),
        })

    histogram = Counter(n["dominant_function"] for n in neighbors if n["dominant_function"])
    leading = {}
    for level in (1, 2, 3):
        label = graph.attribute(cell.park, f"leading_industry_{level}")
        if label:
            leading[str(level)] = label

    payload = {
        "grid": grid,
        "row": cell.row,
        "col": cell.col,
        "park": cell.park,
        "dominant_function": graph.attribute(grid, "dominant_function"),
        "indicators": _grid_indicators(graph, grid),
        "neighbors": neighbors,
        "neighbor_functions": dict(sorted(histogram.items())),
        "park_leading_industries": leading,
    }

    lines = [
        f"Grid {grid} at ({cell.row},{cell.col}) in park {cell.park}",
        f"current function: {payload['dominant_function'] or 'unknown'}",
        "indicators: " + ", ".join(f"{k}={_format_score(v)}" for k, v in payload["indicators"].items()),
        f"neighbors ({len(neighbors)}): " + ", ".join(
            f"{n['grid']}={n['dominant_function']}" for n in neighbors
        ),
        "neighbor functions: " + ", ".join(f"{k}: {v}" for k, v in payload["neighbor_functions"].items()),
        "park leading industries: " + ", ".join(f"L{k}={v}" for k, v in leading.items()),
    ]
    return _ok("function_planner", "\n".join(lines), payload, cap)


# ----------------------------------------------------------------------
# 도구 묶음
# ----------------------------------------------------------------------
def park_profile_text(graph, park):
    """유사도 검색용 단지 프로필 문장"""
    parts = [graph.entity(park).label]
    planned = graph.attribute(park, "planned_industries") or ()
    if planned:
        parts.append("planned industries: " + ", ".join(planned))
    leading = [graph.attribute(park, f"leading_industry_{level}") for level in (1, 2, 3)]
    leading = [label for label in leading if label]
    if leading:
        parts.append("leading industries: " + ", ".join(leading))
    scope = graph.attribute(park, "leading_scope")
    if scope:
        parts.append(f"scope of operation: {scope}")
    return ". ".join(parts)


class Toolbox:
    """얼린(frozen) 그래프 + 가제티어 + 임베딩 제공자 위의 도구 실행기"""

    def __init__(self, graph, gazetteer=None, embedder=None, summary_cap=DEFAULT_SUMMARY_CAP, registry=None):
        self.graph = graph
        self.gazetteer = gazetteer if gazetteer is not None else Gazetteer()
        self.embedder = embedder if embedder is not None else HashEmbeddingProvider()
        self.summary_cap = summary_cap
        self.registry = registry
        self._park_embeddings = None
        self._park_features = None
        self._lock = threading.Lock()

    @property
    def manifest(self):
        return export_manifest()

    def invoke(self, invocation):
        """ToolInvocation 실행. 어떤 경우에도 예외 대신 Observation 반환"""
        error = validate_arguments(invocation.tool, invocation.arguments)
        if error:
            log(f"❌ 도구 인자 오류: {error}")
            return _fail(invocation.tool, error, cap=self.summary_cap)

        handler = getattr(self, invocation.tool)
        try:
            return handler(**invocation.arguments)
        except Exception as e:
            log(f"❌ 도구 실행 실패 ({invocation.tool}): {e}")
            return _fail(invocation.tool, e, cap=self.summary_cap)

    def structured_query(self, query):
        try:
            table = evaluate(parse(query), self.graph)
        except QueryError as e:
            return _fail("structured_query", e, cap=self.summary_cap)
        payload = table.to_dict()
        payload["ids"] = list(table.ids)
        return _ok("structured_query", table.to_text(SUMMARY_TABLE_ROWS), payload, self.summary_cap)

    def _park_matrix(self):
        with self._lock:
            if self._park_embeddings is None:
                parks = self.graph.entities_of_kind("IndustrialPark")
                texts = [park_profile_text(self.graph, park) for park in parks]
                matrix = self.embedder.embed(texts) if parks else np.zeros((0, 0))
                self._park_embeddings = (parks, np.asarray(matrix, dtype=float))
            return self._park_embeddings

    def _park_feature_vectors(self):
        """SimilarTo 엣지와 같은 z-score 특징 벡터 (단지 ID → FeatureVector)"""
        # kg_builder → benchmark → policy → toolbox 순환 때문에 지연 import
        from kg_builder import default_feature_schema, load_registry, park_feature_vectors

        with self._lock:
            if self._park_features is None:
                registry = self.registry if self.registry is not None else load_registry()
                schema = default_feature_schema(self.graph, registry)
                self._park_features = park_feature_vectors(self.graph, schema)
            return self._park_features

    def _similar_to_park(self, park):
        vectors = self._park_feature_vectors()
        anchor = vectors[park].as_array()
        scores = []
        for candidate in sorted(vectors):
            score = cosine_similarity(anchor, vectors[candidate].as_array())
            scores.append((candidate, 0.0 if score is None else score))
        return scores

    def _similar_to_text(self, text):
        parks, matrix = self._park_matrix()
        query_vector = np.asarray(self.embedder.embed([text]), dtype=float)[0]
        scores = []
        for i, candidate in enumerate(parks):
            score = cosine_similarity(matrix[i], query_vector)
            scores.append((candidate, 0.0 if score is None else score))
        return scores

    def similarity_search(self, text=None, park=None, top_k=DEFAULT_TOP_K):
        if top_k < 1:
            return _fail("similarity_search", "top_k must be at least 1", cap=self.summary_cap)
        if park is not None:
            entity = self.graph.get_entity(park)
            if entity is None or entity.kind != "IndustrialPark":
                return _fail("similarity_search", f"unknown park '{park}'", cap=self.summary_cap)

        if park is not None:
            # 단지 기준 검색은 그래프 특징 공간, 문장 검색은 임베딩 공간
            scores, space = self._similar_to_park(park), "features"
        else:
            try:
                scores, space = self._similar_to_text(text), "embedding"
            except Exception as e:
                return _fail("similarity_search", f"embedding provider failed: {e}", cap=self.summary_cap)
        scores.sort(key=lambda item: (-item[1], item[0]))
        results = [{"park": p, "score": s} for p, s in scores[:top_k]]

        lines = [f"Top {len(results)} similar parks:"]
        lines += [f"{i}. {r['park']} ({self.graph.entity(r['park']).label}) score={r['score']:.4f}"
                  for i, r in enumerate(results, start=1)]
        return _ok("similarity_search", "\n".join(lines), {"results": results, "space": space}, self.summary_cap)

    def geo_encode(self, address):
        grid = self.gazetteer.lookup(address)
        if grid is None:
            suggestions = self.gazetteer.suggestions(address)
            hint = f"; did you mean: {', '.join(suggestions)}" if suggestions else ""
            return _fail("geo_encode", f"unknown address '{address}'{hint}",
                         {"suggestions": suggestions}, self.summary_cap)
        return _ok("geo_encode", f"{address} -> {grid}", {"address": address, "grid": grid}, self.summary_cap)

    def geo_decode(self, grid):
        entity = self.graph.get_entity(grid)
        if entity is None or entity.kind != "Grid":
            return _fail("geo_decode", f"unknown grid '{grid}'", cap=self.summary_cap)
        address = self.gazetteer.address_of(grid)
        if address is None:
            cell = self.graph.grid_cell(grid)
            address = f"Park {self.graph.entity(cell.park).label}, cell ({cell.row},{cell.col})"
        return _ok("geo_decode", f"{grid} -> {address}", {"grid": grid, "address": address}, self.summary_cap)

    def rank_master(self, candidates, criteria):
        return rank_master(candidates, criteria, self.graph, self.summary_cap)

    def function_planner(self, grid):
        return function_planner(grid, self.graph, self.summary_cap)
