# -*- coding: utf-8 -*-
"""
지식 그래프 구축 모듈
원천 테이블(parks / grids / pois / enterprises) → 포함관계, 인접관계, 선도산업(빈도 argmax),
격자 우세기능, 유사/산업연관 엣지, 지표 계산 및 단지 집계
"""
import os
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from common_utils import log, cosine_similarity, ProcessingResults
from graph_store import PropertyGraph, Entity, RelationalTriple, GridCell
from benchmark import hill_numbers_from_counts

# 격자 기능 분류 (15종). POI 카테고리도 같은 분류를 사용
FUNCTION_TYPES = (
    "Residential",
    "Green Space",
    "Sports Recreation",
    "Healthcare",
    "Commercial Services",
    "Business Office",
    "Education",
    "Culture",
    "Life Services",
    "Research Institutions",
    "Dining Services",
    "Traffic",
    "Industrial Manufacturing",
    "Public Services",
    "Financial Services",
)
POI_CATEGORIES = FUNCTION_TYPES
POI_TO_FUNCTION = {category: category for category in POI_CATEGORIES}
UNASSIGNED = "Unassigned"

INDUSTRY_LEVELS = (1, 2, 3)
FORMULA_KINDS = ("count", "density", "share", "diversity", "accessibility", "aggregate-of-grid")
AGGREGATIONS = ("sum", "mean", "max")
DIVERSITY_SOURCES = ("poi_category", "dominant_function", "industry_1")

DEFAULT_SIMILARITY_THRESHOLD = 0.95
DEFAULT_CORRELATION_THRESHOLD = 0.9
# 동일 벡터의 코사인이 부동소수 오차로 1 미만이 되는 경우 보정
COSINE_TOLERANCE = 1e-9

ASSETS_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "assets")
DEFAULT_REGISTRY_PATH = os.path.join(ASSETS_DIR, "indicators.json")

TABLE_FILES = ("parks.csv", "grids.csv", "pois.jsonl", "enterprises.jsonl")

PARK_COLUMNS = ["park_id", "name", "planned_industries", "row_min", "row_max", "col_min", "col_max"]
GRID_COLUMNS = ["grid_id", "row", "col", "lat", "lon", "park_id"]
POI_COLUMNS = ["poi_id", "category", "grid_id", "name", "address"]
ENTERPRISE_COLUMNS = ["ent_id", "name", "industry_1", "industry_2", "industry_3", "scopes", "grid_id", "attributes"]


class IngestError(Exception):
    """원천 테이블 참조/형식 오류"""


class RegistryError(Exception):
    """지표 레지스트리 설정 오류"""


@dataclass
class RawTables:
    parks: pd.DataFrame
    grids: pd.DataFrame
    pois: pd.DataFrame
    enterprises: pd.DataFrame

    @classmethod
    def empty(cls):
        return cls(
            parks=pd.DataFrame(columns=PARK_COLUMNS),
            grids=pd.DataFrame(columns=GRID_COLUMNS),
            pois=pd.DataFrame(columns=POI_COLUMNS),
            enterprises=pd.DataFrame(columns=ENTERPRISE_COLUMNS),
        )


def load_tables(tables_dir):
    """수집 파일 4종 로드 (없는 파일은 파일명을 포함한 FileNotFoundError)"""
    tables_dir = Path(tables_dir)
    for name in TABLE_FILES:
        if not (tables_dir / name).exists():
            raise FileNotFoundError(f"missing ingestion file: {tables_dir / name}")

    def read_jsonl(path, columns):
        if os.path.getsize(path) == 0:
            return pd.DataFrame(columns=columns)
        return pd.read_json(path, lines=True, dtype=False)

    def read_csv(path, columns):
        if os.path.getsize(path) == 0:
            return pd.DataFrame(columns=columns)
        return pd.read_csv(path, dtype={"park_id": str, "grid_id": str, "name": str})

    tables = RawTables(
        parks=read_csv(tables_dir / "parks.csv", PARK_COLUMNS),
        grids=read_csv(tables_dir / "grids.csv", GRID_COLUMNS),
        pois=read_jsonl(tables_dir / "pois.jsonl", POI_COLUMNS),
        enterprises=read_jsonl(tables_dir / "enterprises.jsonl", ENTERPRISE_COLUMNS),
    )
    log(f"📂 원천 테이블 로드: 단지 {len(tables.parks)} / 격자 {len(tables.grids)} / "
        f"POI {len(tables.pois)} / 기업 {len(tables.enterprises)}")
    return tables


def _is_blank(value):
    if value is None:
        return True
    if isinstance(value, float) and math.isnan(value):
        return True
    return isinstance(value, str) and not value.strip()


def _split_list(value):
    """'a;b;c' 문자열 또는 리스트 → 텍스트 리스트"""
    if isinstance(value, (list, tuple)):
        return [str(item).strip() for item in value if not _is_blank(item)]
    if _is_blank(value):
        return []
    return [part.strip() for part in str(value).split(";") if part.strip()]


def _extra_numeric(row, known_columns):
    """알려진 컬럼 외 숫자 컬럼 → 속성"""
    extras = {}
    for column, value in row.items():
        if column in known_columns or _is_blank(value):
            continue
        if isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(value, bool):
            if math.isfinite(float(value)):
                extras[column] = float(value)
    return extras


def _industry_node(graph, kind, prefix, level, label):
    """산업 분류 노드 (없으면 생성)"""
    node_id = f"{prefix}:{level}:{label}"
    if node_id not in graph:
        graph.add_entity(Entity(node_id, kind, label))
        graph.set_attribute(node_id, "level", level)
    return node_id


def ingest(tables):
    """테이블 → 엔티티 + 포함관계(LocatedIn) 트리플"""
    graph = PropertyGraph()
    park_ranges = {}

    log("🏗️ 엔티티 생성 시작...")

    for i, row in enumerate(tables.parks.to_dict('records')):
        park_id = str(row.get("park_id", "")).strip()
        if not park_id or park_id == "nan":
            raise IngestError(f"parks.csv row {i + 2}: missing park_id")
        if park_id in graph:
            raise IngestError(f"parks.csv row {i + 2}: duplicate id '{park_id}'")
        name = row.get("name")
        label = park_id if _is_blank(name) else str(name)
        graph.add_entity(Entity(park_id, "IndustrialPark", label))
        graph.set_attribute(park_id, "name", label)
        graph.set_attribute(park_id, "planned_industries", _split_list(row.get("planned_industries")))
        for column, value in _extra_numeric(row, PARK_COLUMNS).items():
            graph.set_attribute(park_id, column, value)

        bounds = [row.get(key) for key in ("row_min", "row_max", "col_min", "col_max")]
        if not any(_is_blank(value) for value in bounds):
            park_ranges[park_id] = tuple(int(value) for value in bounds)

    for i, row in enumerate(tables.grids.to_dict('records')):
        grid_id = str(row.get("grid_id", "")).strip()
        park_id = str(row.get("park_id", "")).strip()
        where = f"grids.csv row {i + 2}"
        if not grid_id or grid_id == "nan":
            raise IngestError(f"{where}: missing grid_id")
        if grid_id in graph:
            raise IngestError(f"{where}: duplicate id '{grid_id}'")
        if park_id not in graph:
            raise IngestError(f"{where}: unknown park_id '{park_id}'")

        grid_row, grid_col = int(row["row"]), int(row["col"])
        if park_id in park_ranges:
            row_min, row_max, col_min, col_max = park_ranges[park_id]
            if not (row_min <= grid_row <= row_max and col_min <= grid_col <= col_max):
                raise IngestError(f"{where}: cell ({grid_row}, {grid_col}) outside park '{park_id}' range")

        graph.add_entity(Entity(grid_id, "Grid", grid_id))
        try:
            graph.add_grid(GridCell(grid_id, grid_row, grid_col, float(row["lat"]), float(row["lon"]), park_id))
        except Exception as e:
            raise IngestError(f"{where}: {e}") from None
        graph.add_relation(RelationalTriple(grid_id, "LocatedIn", park_id))
        graph.set_attribute(grid_id, "row", grid_row)
        graph.set_attribute(grid_id, "col", grid_col)
        graph.set_attribute(grid_id, "park_id", park_id)
        for column, value in _extra_numeric(row, GRID_COLUMNS).items():
            graph.set_attribute(grid_id, column, value)

    for i, row in enumerate(tables.pois.to_dict('records')):
        poi_id = str(row.get("poi_id", "")).strip()
        grid_id = str(row.get("grid_id", "")).strip()
        category = row.get("category")
        where = f"pois.jsonl line {i + 1}"
        if not poi_id:
            raise IngestError(f"{where}: missing poi_id")
        if poi_id in graph:
            raise IngestError(f"{where}: duplicate id '{poi_id}'")
        if grid_id not in graph or graph.entity(grid_id).kind != "Grid":
            raise IngestError(f"{where}: unknown grid_id '{grid_id}'")
        if category not in POI_CATEGORIES:
            raise IngestError(f"{where}: category '{category}' not in POI taxonomy")

        park_id = graph.grid_cell(grid_id).park
        label = poi_id if _is_blank(row.get("name")) else str(row["name"])
        graph.add_entity(Entity(poi_id, "POI", label))
        graph.add_relation(RelationalTriple(poi_id, "LocatedIn", grid_id))
        graph.add_relation(RelationalTriple(poi_id, "LocatedIn", park_id))
        graph.set_attribute(poi_id, "name", label)
        graph.set_attribute(poi_id, "category", category)
        graph.set_attribute(poi_id, "grid_id", grid_id)
        graph.set_attribute(poi_id, "park_id", park_id)
        if not _is_blank(row.get("address")):
            graph.set_attribute(poi_id, "address", str(row["address"]))

    for i, row in enumerate(tables.enterprises.to_dict('records')):
        ent_id = str(row.get("ent_id", "")).strip()
        grid_id = str(row.get("grid_id", "")).strip()
        where = f"enterprises.jsonl line {i + 1}"
        if not ent_id:
            raise IngestError(f"{where}: missing ent_id")
        if ent_id in graph:
            raise IngestError(f"{where}: duplicate id '{ent_id}'")
        if grid_id not in graph or graph.entity(grid_id).kind != "Grid":
            raise IngestError(f"{where}: unknown grid_id '{grid_id}'")

        park_id = graph.grid_cell(grid_id).park
        label = ent_id if _is_blank(row.get("name")) else str(row["name"])
        graph.add_entity(Entity(ent_id, "Enterprise", label))
        graph.add_relation(RelationalTriple(ent_id, "LocatedIn", grid_id))
        graph.add_relation(RelationalTriple(ent_id, "LocatedIn", park_id))
        graph.set_attribute(ent_id, "name", label)
        graph.set_attribute(ent_id, "grid_id", grid_id)
        graph.set_attribute(ent_id, "park_id", park_id)
        graph.set_attribute(ent_id, "scopes", _split_list(row.get("scopes")))

        for level in INDUSTRY_LEVELS:
            industry = row.get(f"industry_{level}")
            if _is_blank(industry):
                continue
            industry = str(industry).strip()
            graph.set_attribute(ent_id, f"industry_{level}", industry)
            node = _industry_node(graph, "EnterpriseIndustry", "eind", level, industry)
            graph.add_relation(RelationalTriple(ent_id, "Has", node))

        attributes = row.get("attributes")
        if isinstance(attributes, dict):
            for name, value in sorted(attributes.items()):
                if isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value):
                    graph.set_attribute(ent_id, name, float(value))

    log(f"✅ 엔티티 생성 완료: {graph.statistics()['entities']}개")
    return graph


def extract_adjacency(graph, neighborhood=8):
    """격자 인접(8-이웃 기본) + 단지 인접 (서로 다른 단지 격자가 인접하면 단지도 인접)"""
    if neighborhood == 8:
        offsets = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]
    elif neighborhood == 4:
        offsets = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        raise ValueError(f"neighborhood must be 4 or 8, got {neighborhood}")

    added = 0
    for cell in graph.grid_cells():
        for dr, dc in offsets:
            other_id = graph.grid_at(cell.row + dr, cell.col + dc)
            if other_id is None:
                continue
            triple = RelationalTriple(cell.entity, "AdjacentTo", other_id)
            if not graph.has_relation(triple):
                graph.add_relation(triple)
                added += 1

            other_park = graph.grid_cell(other_id).park
            if other_park != cell.park:
                park_triple = RelationalTriple(cell.park, "AdjacentTo", other_park)
                if not graph.has_relation(park_triple):
                    graph.add_relation(park_triple)

    log(f"🧭 격자 인접 관계 {added}쌍 생성 ({neighborhood}-이웃)")
    return added


def _leading_label(counts):
    """최빈 라벨, 동률이면 사전순 최소"""
    if not counts:
        return None
    return sorted(counts.items(), key=lambda item: (-item[1], item[0]))[0][0]


def _materialize_has(graph, owner, node):
    triple = RelationalTriple(owner, "Has", node)
    if not graph.has_relation(triple):
        graph.add_relation(triple)


def leading_industry(graph, park, level):
    """단지 내 기업의 level 단계 산업 최빈값. 기업이 없거나 해당 단계 라벨이 없으면 None (선도산업 미정)"""
    enterprises = graph.members_of(park, "Enterprise")
    counts = Counter(
        label for label in (graph.attribute(ent, f"industry_{level}") for ent in enterprises)
        if label
    )
    label = _leading_label(counts)
    if label is None:
        if enterprises:
            log(f"⚠️ {park}: {level}단계 선도산업 미정 (기업 {len(enterprises)}개 모두 {level}단계 산업 라벨 없음)")
        else:
            log(f"⚠️ {park}: {level}단계 선도산업 미정 (기업 없음)")
        return None

    node = _industry_node(graph, "ParkIndustry", "pind", level, label)
    _materialize_has(graph, park, node)
    graph.set_attribute(park, f"leading_industry_{level}", label)
    return label


def leading_scope(graph, park):
    """기업별 경영범위 목록에서 가장 많은 기업이 등재한 범위"""
    enterprises = graph.members_of(park, "Enterprise")
    counts = Counter()
    for ent in enterprises:
        # 한 기업이 같은 범위를 여러 번 적어도 1회로 계산
        counts.update(set(graph.attribute(ent, "scopes") or ()))
    label = _leading_label(counts)
    if label is None:
        log(f"⚠️ {park}: 주요 경영범위 미정")
        return None

    graph.set_attribute(park, "leading_scope", label)
    graph.set_attribute(park, "leading_scope_share", counts[label] / len(enterprises))
    return label


def leading_grid_industry(graph, grid, level):
    """격자 단위 선도산업"""
    enterprises = graph.members_of(grid, "Enterprise")
    counts = Counter(
        label for label in (graph.attribute(ent, f"industry_{level}") for ent in enterprises)
        if label
    )
    label = _leading_label(counts)
    if label is None:
        return None

    node = _industry_node(graph, "GridIndustry", "gind", level, label)
    _materialize_has(graph, grid, node)
    graph.set_attribute(grid, f"leading_industry_{level}", label)
    return label


def dominant_function(graph, grid, overrides=None):
    """격자 내 POI 카테고리 최빈값 → 기능. 오버라이드(AOI 보정)가 있으면 우선"""
    if overrides and grid in overrides:
        label = overrides[grid]
    else:
        counts = Counter(
            POI_TO_FUNCTION[graph.attribute(poi, "category")]
            for poi in graph.members_of(grid, "POI")
        )
        label = _leading_label(counts) or UNASSIGNED

    node_id = f"func:{label}"
    if node_id not in graph:
        graph.add_entity(Entity(node_id, "GridDominantFunction", label))
    _materialize_has(graph, grid, node_id)
    graph.set_attribute(grid, "dominant_function", label)
    return label


def read_document(path):
    """JSON 또는 TOML(.toml) 설정 문서"""
    if str(path).endswith(".toml"):
        import tomllib
        with open(path, 'rb') as f:
            return tomllib.load(f)
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def load_overrides(path):
    """격자 → 기능 오버라이드 파일 (JSON 객체 또는 TOML 테이블)"""
    overrides = read_document(path)
    if not isinstance(overrides, dict):
        raise RegistryError(f"{path}: overrides must be an object of grid -> function")
    for grid, label in overrides.items():
        if label not in FUNCTION_TYPES:
            raise RegistryError(f"{path}: override for '{grid}' uses unknown function '{label}'")
    return overrides


# ----------------------------------------------------------------------
# 지표 레지스트리
# ----------------------------------------------------------------------
@dataclass
class Indicator:
    name: str
    scope: str
    formula: str
    params: dict = field(default_factory=dict)
    aggregation: str = None
    direction: str = "higher"
    unit: str = None
    pillar: str = None


class IndicatorRegistry:
    """설정 가능한 지표 목록 (단지/격자 범위, 산식, 파라미터, 집계 규칙)"""

    def __init__(self, indicators):
        self.indicators = list(indicators)
        self._validate()
        self._by_name = {indicator.name: indicator for indicator in self.indicators}

    @classmethod
    def from_records(cls, records):
        indicators = []
        for record in records:
            try:
                indicators.append(Indicator(
                    name=record["name"],
                    scope=record["scope"],
                    formula=record["formula"],
                    params=dict(record.get("params", {})),
                    aggregation=record.get("aggregation"),
                    direction=record.get("direction", "higher"),
                    unit=record.get("unit"),
                    pillar=record.get("pillar"),
                ))
            except KeyError as e:
                raise RegistryError(f"indicator record missing field {e}") from None
        return cls(indicators)

    @classmethod
    def from_file(cls, path=None):
        path = path or DEFAULT_REGISTRY_PATH
        data = read_document(path)
        records = data.get("indicators") if isinstance(data, dict) else data
        if not isinstance(records, list):
            raise RegistryError(f"{path}: registry needs an 'indicators' list")
        return cls.from_records(records)

    def __iter__(self):
        return iter(self.indicators)

    def __len__(self):
        return len(self.indicators)

    def get(self, name):
        return self._by_name.get(name)

    def names(self):
        return [indicator.name for indicator in self.indicators]

    def level_criteria(self, level):
        """벤치마크 기준 후보: level(park|grid)에서 값을 가지는 숫자 지표"""
        if level == "grid":
            return [i for i in self.indicators if i.scope == "grid"]
        return [i for i in self.indicators if i.scope == "park" or i.aggregation]

    def _validate(self):
        seen = set()
        for indicator in self.indicators:
            name = indicator.name
            if not name or name in seen:
                raise RegistryError(f"indicator names must be unique and non-empty: '{name}'")
            seen.add(name)
            if indicator.scope not in ("grid", "park"):
                raise RegistryError(f"{name}: scope must be grid or park")
            if indicator.formula not in FORMULA_KINDS:
                raise RegistryError(f"{name}: unknown formula kind '{indicator.formula}'")
            if indicator.aggregation is not None and indicator.aggregation not in AGGREGATIONS:
                raise RegistryError(f"{name}: unknown aggregation '{indicator.aggregation}'")
            if indicator.direction not in ("higher", "lower"):
                raise RegistryError(f"{name}: direction must be higher or lower")

            params = indicator.params
            category = params.get("category")
            if category is not None and category not in POI_CATEGORIES:
                raise RegistryError(f"{name}: unknown category parameter '{category}'")

            if indicator.formula in ("count", "density"):
                if params.get("target", "POI") not in ("POI", "Enterprise"):
                    raise RegistryError(f"{name}: target must be POI or Enterprise")
                if params.get("weight") and params.get("target", "POI") != "Enterprise":
                    raise RegistryError(f"{name}: weight is only valid for Enterprise targets")
                if params.get("cell_area", 1.0) <= 0:
                    raise RegistryError(f"{name}: cell_area must be positive")
            elif indicator.formula in ("share", "accessibility"):
                if category is None:
                    raise RegistryError(f"{name}: {indicator.formula} requires a category parameter")
                if indicator.formula == "accessibility" and indicator.scope != "grid":
                    raise RegistryError(f"{name}: accessibility indicators are grid-scoped")
            elif indicator.formula == "diversity":
                if params.get("over", "poi_category") not in DIVERSITY_SOURCES:
                    raise RegistryError(f"{name}: unknown diversity source '{params.get('over')}'")
                if params.get("q", 1) < 0:
                    raise RegistryError(f"{name}: q must be non-negative")
                if params.get("over") == "dominant_function" and indicator.scope != "park":
                    raise RegistryError(f"{name}: dominant_function diversity is park-scoped")
            elif indicator.formula == "aggregate-of-grid":
                if indicator.scope != "park" or not params.get("source") or indicator.aggregation is None:
                    raise RegistryError(f"{name}: aggregate-of-grid needs park scope, source and aggregation")


def load_registry(path=None):
    registry = IndicatorRegistry.from_file(path)
    log(f"📋 지표 레지스트리 로드: {len(registry)}개")
    return registry


def _filter_targets(graph, members, params):
    target = params.get("target", "POI")
    selected = [m for m in members if graph.entity(m).kind == target]
    if params.get("category"):
        selected = [m for m in selected if graph.attribute(m, "category") == params["category"]]
    if params.get("industry"):
        selected = [m for m in selected if graph.attribute(m, "industry_1") == params["industry"]]
    return selected


def _weighted_count(graph, entities, params):
    weight = params.get("weight")
    if not weight:
        return float(len(entities))
    return float(sum(graph.attribute(e, weight) or 0.0 for e in entities))


def _accessibility_targets(graph, category):
    """카테고리 POI가 있는 격자 좌표 배열"""
    cells = []
    for cell in graph.grid_cells():
        if any(graph.attribute(poi, "category") == category for poi in graph.members_of(cell.entity, "POI")):
            cells.append((cell.row, cell.col))
    return np.array(cells, dtype=float).reshape(-1, 2)


def _diversity_labels(graph, owner, over):
    if over == "poi_category":
        return [graph.attribute(poi, "category") for poi in graph.members_of(owner, "POI")]
    if over == "dominant_function":
        labels = [graph.attribute(grid, "dominant_function") for grid in graph.grids_of_park(owner)]
        return [label for label in labels if label and label != UNASSIGNED]
    labels = [graph.attribute(ent, "industry_1") for ent in graph.members_of(owner, "Enterprise")]
    return [label for label in labels if label]


def _indicator_value(graph, indicator, owner, targets_cache):
    params = indicator.params
    formula = indicator.formula

    if formula == "count":
        members = graph.neighbors(owner, "LocatedIn", "incoming")
        return _weighted_count(graph, _filter_targets(graph, members, params), params)

    if formula == "density":
        members = graph.neighbors(owner, "LocatedIn", "incoming")
        count = _weighted_count(graph, _filter_targets(graph, members, params), params)
        n_grids = 1 if indicator.scope == "grid" else len(graph.grids_of_park(owner))
        if n_grids == 0:
            return None
        return count / (n_grids * params.get("cell_area", 1.0))

    if formula == "share":
        pois = graph.members_of(owner, "POI")
        if not pois:
            return 0.0
        hits = sum(1 for poi in pois if graph.attribute(poi, "category") == params["category"])
        return hits / len(pois)

    if formula == "diversity":
        labels = _diversity_labels(graph, owner, params.get("over", "poi_category"))
        return hill_numbers_from_counts(list(Counter(labels).values()), params.get("q", 1))

    if formula == "accessibility":
        category = params["category"]
        if category not in targets_cache:
            targets_cache[category] = _accessibility_targets(graph, category)
        targets = targets_cache[category]
        if len(targets) == 0:
            return None
        cell = graph.grid_cell(owner)
        # Chebyshev 격자 거리 (8-이웃과 일관)
        distances = np.max(np.abs(targets - np.array([cell.row, cell.col], dtype=float)), axis=1)
        return float(distances.min())

    return None


def compute_indicators(graph, registry, report=None):
    """레지스트리의 격자/단지 지표를 속성 트리플로 기록"""
    report = report or ProcessingResults("지표 계산")
    targets_cache = {}
    written = 0

    for indicator in registry:
        if indicator.formula == "aggregate-of-grid":
            continue
        graph.declare_attribute(indicator.name, indicator.unit)
        owners = graph.entities_of_kind("Grid" if indicator.scope == "grid" else "IndustrialPark")
        for owner in owners:
            value = _indicator_value(graph, indicator, owner, targets_cache)
            if value is None:
                report.add_missing(owner, indicator.name, "not computable")
                continue
            graph.set_attribute(owner, indicator.name, value)
            written += 1

    report.add_count("indicator_values", written)
    log(f"📊 지표 계산 완료: {written}개 값")
    return written


def _aggregate(values, rule):
    if rule == "sum":
        return float(np.sum(values))
    if rule == "mean":
        return float(np.mean(values))
    return float(np.max(values))


def aggregate_to_park(graph, registry, report=None):
    """격자 지표 → 단지 속성 (레지스트리 집계 규칙 sum/mean/max)"""
    report = report or ProcessingResults("단지 집계")
    written = 0

    for indicator in registry:
        if indicator.formula == "aggregate-of-grid":
            source, target = indicator.params["source"], indicator.name
        elif indicator.scope == "grid" and indicator.aggregation:
            source, target = indicator.name, indicator.name
        else:
            continue

        graph.declare_attribute(target, indicator.unit)
        for park in graph.entities_of_kind("IndustrialPark"):
            grids = graph.grids_of_park(park)
            values = [graph.attribute(grid, source) for grid in grids]
            values = [v for v in values if isinstance(v, (int, float))]
            if not values:
                reason = "park has no grids" if not grids else f"no grid values for '{source}'"
                report.add_missing(park, target, reason)
                continue
            graph.set_attribute(park, target, _aggregate(values, indicator.aggregation))
            written += 1

    report.add_count("park_aggregates", written)
    log(f"📊 단지 집계 완료: {written}개 값")
    return written


# ----------------------------------------------------------------------
# 단지 특징 벡터 / 유사 및 산업연관 엣지
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class FeatureVector:
    entity: str
    schema: tuple
    values: tuple

    def as_array(self):
        return np.asarray(self.values, dtype=float)


def default_feature_schema(graph, registry):
    """단지에 값이 기록되는 숫자 지표 이름"""
    return tuple(indicator.name for indicator in registry.level_criteria("park"))


def park_feature_vectors(graph, schema, report=None):
    """모든 단지에 대한 z-score 정규화 특징 벡터 (누락값은 정규화 후 0)"""
    schema = tuple(schema)
    parks = graph.entities_of_kind("IndustrialPark")
    if not parks:
        return {}

    matrix = np.full((len(parks), len(schema)), np.nan)
    for i, park in enumerate(parks):
        for j, name in enumerate(schema):
            value = graph.attribute(park, name)
            if isinstance(value, (int, float)):
                matrix[i, j] = float(value)
            elif report is not None:
                report.add_missing(park, name, "missing for feature vector")

    zscores = np.zeros_like(matrix)
    for j in range(len(schema)):
        column = matrix[:, j]
        present = ~np.isnan(column)
        if not present.any():
            continue
        mean = column[present].mean()
        std = column[present].std()
        if std > 0:
            zscores[present, j] = (column[present] - mean) / std

    return {
        park: FeatureVector(park, schema, tuple(float(v) for v in zscores[i]))
        for i, park in enumerate(parks)
    }


def park_feature_vector(graph, park, schema, report=None):
    vectors = park_feature_vectors(graph, schema, report)
    if park not in vectors:
        raise KeyError(f"unknown park '{park}'")
    return vectors[park]


def park_industry_vectors(graph, levels=INDUSTRY_LEVELS):
    """계획 산업 + 선도 산업 라벨에 대한 빈도 벡터 (산업 관련 특징만 사용)"""
    parks = graph.entities_of_kind("IndustrialPark")
    labels_by_park = {}
    for park in parks:
        labels = list(graph.attribute(park, "planned_industries") or ())
        for level in levels:
            leading = graph.attribute(park, f"leading_industry_{level}")
            if leading:
                labels.append(leading)
        labels_by_park[park] = Counter(labels)

    vocabulary = tuple(sorted({label for counts in labels_by_park.values() for label in counts}))
    return {
        park: FeatureVector(park, vocabulary, tuple(float(labels_by_park[park].get(label, 0)) for label in vocabulary))
        for park in parks
    }


def _pair_edges(graph, vectors, threshold, relation, report):
    schemas = {vector.schema for vector in vectors.values()}
    if len(schemas) > 1:
        raise ValueError("feature vectors must share one schema")

    parks = sorted(vectors)
    added = []
    for i, left in enumerate(parks):
        for right in parks[i + 1:]:
            score = cosine_similarity(vectors[left].as_array(), vectors[right].as_array())
            if score is None:
                if report is not None:
                    report.add_warning(f"{relation}: zero vector, pair ({left}, {right}) skipped")
                continue
            if score >= threshold - COSINE_TOLERANCE:
                triple = RelationalTriple(left, relation, right)
                if not graph.has_relation(triple):
                    graph.add_relation(triple)
                added.append((left, right))
    return added


def similarity_edges(graph, vectors, threshold=DEFAULT_SIMILARITY_THRESHOLD, report=None):
    """코사인 유사도 ≥ threshold 인 단지 쌍에 SimilarTo"""
    added = _pair_edges(graph, vectors, threshold, "SimilarTo", report)
    log(f"🔗 유사 단지 엣지 {len(added)}쌍 (임계값 {threshold})")
    return added


def correlation_edges(graph, industry_vectors, threshold=DEFAULT_CORRELATION_THRESHOLD, report=None):
    """산업 벡터 코사인 ≥ threshold(기본 0.9) 인 단지 쌍에 RelatedTo"""
    added = _pair_edges(graph, industry_vectors, threshold, "RelatedTo", report)
    log(f"🔗 산업연관 단지 엣지 {len(added)}쌍 (임계값 {threshold})")
    return added


def build_knowledge_graph(tables, registry, overrides=None, neighborhood=8,
                          similarity_threshold=DEFAULT_SIMILARITY_THRESHOLD,
                          correlation_threshold=DEFAULT_CORRELATION_THRESHOLD):
    """전체 추출 파이프라인 실행 → (graph, 완전성 리포트)"""
    report = ProcessingResults("지식 그래프 구축")

    graph = ingest(tables)
    extract_adjacency(graph, neighborhood)

    for park in graph.entities_of_kind("IndustrialPark"):
        for level in INDUSTRY_LEVELS:
            if leading_industry(graph, park, level) is None:
                report.add_missing(park, f"leading_industry_{level}", "undefined leading industry")
        if leading_scope(graph, park) is None:
            report.add_missing(park, "leading_scope", "undefined scope of operation")

    grids = graph.entities_of_kind("Grid")
    for grid in grids:
        for level in INDUSTRY_LEVELS:
            leading_grid_industry(graph, grid, level)
        dominant_function(graph, grid, overrides)

    compute_indicators(graph, registry, report)
    aggregate_to_park(graph, registry, report)

    vectors = park_feature_vectors(graph, default_feature_schema(graph, registry), report)
    similarity_edges(graph, vectors, similarity_threshold, report)
    correlation_edges(graph, park_industry_vectors(graph), correlation_threshold, report)

    stats = graph.statistics()
    for kind, count in stats["entities_by_kind"].items():
        report.add_count(f"entities.{kind}", count)
    for relation, count in stats["triples_by_relation"].items():
        report.add_count(f"triples.{relation}", count)
    return graph, report
