# -*- coding: utf-8 -*-
"""
산업단지 지식 그래프 저장소
- 엔티티 / 관계 트리플 / 속성 트리플 + 격자(row, col) 인덱스
- 한 줄당 JSON 레코드 하나 형식으로 저장/로드
"""
import json
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from common_utils import log

SCHEMA_VERSION = "scopekg/1"

ENTITY_KINDS = (
    "IndustrialPark",
    "Grid",
    "GridDominantFunction",
    "POI",
    "Enterprise",
    "EnterpriseIndustry",
    "ParkIndustry",
    "GridIndustry",
)

RELATIONS = ("LocatedIn", "AdjacentTo", "SimilarTo", "RelatedTo", "Has")
SYMMETRIC_RELATIONS = frozenset({"AdjacentTo", "SimilarTo", "RelatedTo"})
DIRECTIONS = ("outgoing", "incoming", "both")


class GraphError(Exception):
    """그래프 저장소 오류"""


class GraphFormatError(GraphError):
    """저장 파일 형식 오류 (줄 번호 포함)"""

    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class Entity:
    id: str
    kind: str
    label: str


@dataclass(frozen=True, order=True)
class RelationalTriple:
    head: str
    relation: str
    tail: str

    def reversed(self):
        return RelationalTriple(self.tail, self.relation, self.head)


@dataclass(frozen=True)
class AttributionalTriple:
    entity: str
    attribute: str
    value: object


@dataclass(frozen=True)
class GridCell:
    entity: str
    row: int
    col: int
    lat: float
    lon: float
    park: str


def _check_value(name, value):
    """속성값 검증: 유한 숫자, 문자열, 문자열 리스트만 허용"""
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, bool):
        raise GraphError(f"attribute '{name}': boolean values are not supported")
    if isinstance(value, (int, float)):
        if not math.isfinite(value):
            raise GraphError(f"attribute '{name}': numeric value must be finite")
        return value
    if isinstance(value, str):
        return value
    if isinstance(value, (list, tuple)):
        if not all(isinstance(item, str) for item in value):
            raise GraphError(f"attribute '{name}': list values must contain text only")
        return tuple(value)
    raise GraphError(f"attribute '{name}': unsupported value type {type(value).__name__}")


class PropertyGraph:
    """엔티티/트리플/속성/격자 인덱스를 가진 메모리 그래프"""

    def __init__(self):
        self._entities = {}
        self._by_kind = defaultdict(set)
        self._outgoing = defaultdict(set)   # (head, relation) -> {tail}
        self._incoming = defaultdict(set)   # (tail, relation) -> {head}
        self._by_relation = defaultdict(set)
        self._attributes = defaultdict(dict)
        self._declared_attributes = {}
        self._lattice = {}
        self._cells = {}
        self._frozen = False

    # ------------------------------------------------------------------
    # 쓰기 (freeze 이전에만 허용)
    # ------------------------------------------------------------------
    def _ensure_writable(self):
        if self._frozen:
            raise GraphError("graph is frozen")

    def freeze(self):
        """이후 그래프는 읽기 전용 (동시 읽기 허용)"""
        self._frozen = True
        return self

    @property
    def frozen(self):
        return self._frozen

    def add_entity(self, entity):
        self._ensure_writable()
        if entity.kind not in ENTITY_KINDS:
            raise GraphError(f"unknown entity kind '{entity.kind}'")
        if not entity.id:
            raise GraphError("entity id must be non-empty")
        if not entity.label or not str(entity.label).strip():
            raise GraphError(f"entity '{entity.id}': label must be non-empty")
        if entity.id in self._entities:
            raise GraphError(f"duplicate entity id '{entity.id}'")

        self._entities[entity.id] = entity
        self._by_kind[entity.kind].add(entity.id)
        return entity.id

    def _insert_triple(self, triple):
        self._outgoing[(triple.head, triple.relation)].add(triple.tail)
        self._incoming[(triple.tail, triple.relation)].add(triple.head)
        self._by_relation[triple.relation].add(triple)

    def add_relation(self, triple):
        self._ensure_writable()
        if triple.relation not in RELATIONS:
            raise GraphError(f"unknown relation '{triple.relation}'")
        for endpoint in (triple.head, triple.tail):
            if endpoint not in self._entities:
                raise GraphError(f"dangling endpoint '{endpoint}' in {triple.relation} triple")
        if triple.relation in SYMMETRIC_RELATIONS and triple.head == triple.tail:
            raise GraphError(f"self-loop not allowed for {triple.relation}: '{triple.head}'")
        if self.has_relation(triple):
            raise GraphError(f"duplicate triple ({triple.head}, {triple.relation}, {triple.tail})")

        self._insert_triple(triple)
        if triple.relation in SYMMETRIC_RELATIONS:
            self._insert_triple(triple.reversed())

    def declare_attribute(self, name, unit=None):
        """속성 레지스트리에 이름(과 단위) 등록"""
        self._ensure_writable()
        self._declared_attributes[name] = unit

    def set_attribute(self, entity, name, value):
        """속성 저장 (마지막 값이 유지됨)"""
        self._ensure_writable()
        if entity not in self._entities:
            raise GraphError(f"unknown entity '{entity}'")
        self._attributes[entity][name] = _check_value(name, value)
        self._declared_attributes.setdefault(name, None)

    def add_grid(self, cell):
        """격자 셀 등록 (row, col은 그래프 내 유일)"""
        self._ensure_writable()
        grid = self._entities.get(cell.entity)
        if grid is None or grid.kind != "Grid":
            raise GraphError(f"grid cell '{cell.entity}' must reference an existing Grid entity")
        park = self._entities.get(cell.park)
        if park is None or park.kind != "IndustrialPark":
            raise GraphError(f"grid cell '{cell.entity}': unknown park '{cell.park}'")
        if cell.row < 0 or cell.col < 0:
            raise GraphError(f"grid cell '{cell.entity}': row/col must be non-negative")
        if not (-90.0 <= cell.lat <= 90.0) or not (-180.0 <= cell.lon <= 180.0):
            raise GraphError(f"grid cell '{cell.entity}': centroid out of range")
        if (cell.row, cell.col) in self._lattice:
            raise GraphError(f"lattice position ({cell.row}, {cell.col}) already registered")
        if cell.entity in self._cells:
            raise GraphError(f"grid '{cell.entity}' already has a lattice cell")

        self._lattice[(cell.row, cell.col)] = cell.entity
        self._cells[cell.entity] = cell

    # ------------------------------------------------------------------
    # 읽기
    # ------------------------------------------------------------------
    def __contains__(self, entity_id):
        return entity_id in self._entities

    def __len__(self):
        return len(self._entities)

    def entity(self, entity_id):
        try:
            return self._entities[entity_id]
        except KeyError:
            raise GraphError(f"unknown entity '{entity_id}'") from None

    def get_entity(self, entity_id):
        return self._entities.get(entity_id)

    def entities_of_kind(self, kind):
        return sorted(self._by_kind.get(kind, ()))

    def kinds(self):
        return {kind: len(ids) for kind, ids in sorted(self._by_kind.items()) if ids}

    def has_relation(self, triple):
        return triple.tail in self._outgoing.get((triple.head, triple.relation), ())

    def neighbors(self, entity, relation=None, direction="outgoing"):
        """저장된 끝점 목록 (EntityId 순 정렬). relation=None이면 모든 관계"""
        if entity not in self._entities:
            raise GraphError(f"unknown entity '{entity}'")
        if direction not in DIRECTIONS:
            raise GraphError(f"unknown direction '{direction}'")

        relations = RELATIONS if relation is None else (relation,)
        found = set()
        for rel in relations:
            if direction in ("outgoing", "both"):
                found.update(self._outgoing.get((entity, rel), ()))
            if direction in ("incoming", "both"):
                found.update(self._incoming.get((entity, rel), ()))
        return sorted(found)

    def triples(self, relation=None):
        if relation is None:
            found = set()
            for triples in self._by_relation.values():
                found.update(triples)
            return sorted(found)
        return sorted(self._by_relation.get(relation, ()))

    def attribute(self, entity, name):
        """속성값 또는 None (미설정은 오류가 아님)"""
        if entity not in self._entities:
            raise GraphError(f"unknown entity '{entity}'")
        return self._attributes.get(entity, {}).get(name)

    def attributes(self, entity):
        if entity not in self._entities:
            raise GraphError(f"unknown entity '{entity}'")
        return dict(sorted(self._attributes.get(entity, {}).items()))

    def attribute_triples(self, entity=None):
        """(엔티티, 속성, 값) 트리플, 엔티티 -> 속성 이름 순"""
        entities = sorted(self._attributes) if entity is None else [entity]
        return [
            AttributionalTriple(entity_id, name, value)
            for entity_id in entities
            for name, value in sorted(self._attributes.get(entity_id, {}).items())
        ]

    def attribute_names(self):
        return set(self._declared_attributes)

    def attribute_unit(self, name):
        return self._declared_attributes.get(name)

    def grid_at(self, row, col):
        return self._lattice.get((row, col))

    def grid_cell(self, grid):
        return self._cells.get(grid)

    def grid_cells(self):
        return [self._cells[grid] for grid in sorted(self._cells)]

    def grids_of_park(self, park):
        return sorted(grid for grid, cell in self._cells.items() if cell.park == park)

    def members_of(self, container, kind):
        """container에 LocatedIn 된 특정 종류의 엔티티"""
        return [
            member for member in self.neighbors(container, "LocatedIn", "incoming")
            if self._entities[member].kind == kind
        ]

    def statistics(self):
        """엔티티/트리플/속성/격자 통계 (인덱스 크기와 동일)"""
        by_relation = {rel: len(self._by_relation.get(rel, ())) for rel in RELATIONS}
        return {
            "entities": len(self._entities),
            "entities_by_kind": {kind: len(self._by_kind.get(kind, ())) for kind in ENTITY_KINDS},
            "triples": sum(by_relation.values()),
            "triples_by_relation": by_relation,
            "attributes": sum(len(values) for values in self._attributes.values()),
            "grids": len(self._lattice),
        }

    def signature(self):
        """구조 비교용 요약 (엔티티, 트리플 집합, 속성 맵, 격자)"""
        return (
            tuple(sorted(self._entities.values(), key=lambda e: e.id)),
            tuple(self.triples()),
            tuple(
                (entity, name, values[name])
                for entity, values in sorted(self._attributes.items())
                for name in sorted(values)
            ),
            tuple(self.grid_cells()),
        )

    # ------------------------------------------------------------------
    # 저장 / 로드
    # ------------------------------------------------------------------
    def save(self, path):
        """한 줄 JSON 레코드 형식으로 저장 (정렬 고정 → 동일 그래프는 동일 바이트)"""
        lines = [json.dumps({"schema": SCHEMA_VERSION})]

        for entity_id in sorted(self._entities):
            entity = self._entities[entity_id]
            lines.append(json.dumps(
                {"record": "entity", "id": entity.id, "kind": entity.kind, "label": entity.label},
                ensure_ascii=False,
            ))

        for cell in self.grid_cells():
            lines.append(json.dumps({
                "record": "grid", "entity": cell.entity, "row": cell.row, "col": cell.col,
                "lat": cell.lat, "lon": cell.lon, "park": cell.park,
            }, ensure_ascii=False))

        for triple in self.triples():
            # 대칭 관계는 한 방향만 저장, 로드 시 역방향 복원
            if triple.relation in SYMMETRIC_RELATIONS and triple.head > triple.tail:
                continue
            lines.append(json.dumps(
                {"record": "rel", "head": triple.head, "relation": triple.relation, "tail": triple.tail},
                ensure_ascii=False,
            ))

        for triple in self.attribute_triples():
            value = list(triple.value) if isinstance(triple.value, tuple) else triple.value
            lines.append(json.dumps(
                {"record": "attr", "entity": triple.entity, "attribute": triple.attribute, "value": value},
                ensure_ascii=False,
            ))

        with open(path, 'w', encoding='utf-8') as f:
            f.write("\n".join(lines) + "\n")

        log(f"💾 그래프 저장 완료: {path} (엔티티 {len(self._entities)}개)")
        return path

    @classmethod
    def load(cls, path):
        """저장 파일 로드. 형식/참조 오류는 줄 번호와 함께 GraphFormatError"""
        graph = cls()
        header_seen = False

        with open(path, 'r', encoding='utf-8') as f:
            for line_no, raw in enumerate(f, start=1):
                text = raw.strip()
                if not text:
                    continue
                try:
                    record = json.loads(text)
                except json.JSONDecodeError as e:
                    raise GraphFormatError(line_no, f"malformed JSON ({e.msg})") from None
                if not isinstance(record, dict):
                    raise GraphFormatError(line_no, "record must be a JSON object")

                if not header_seen:
                    if record.get("schema") != SCHEMA_VERSION:
                        raise GraphFormatError(
                            line_no, f"schema version mismatch: expected {SCHEMA_VERSION}, got {record.get('schema')!r}"
                        )
                    header_seen = True
                    continue

                try:
                    graph._load_record(record)
                except KeyError as e:
                    raise GraphFormatError(line_no, f"missing field {e}") from None
                except (GraphError, TypeError, ValueError) as e:
                    raise GraphFormatError(line_no, str(e)) from None

        log(f"📂 그래프 로드 완료: {path} (엔티티 {len(graph)}개)")
        return graph

    def _load_record(self, record):
        kind = record.get("record")
        if kind == "entity":
            self.add_entity(Entity(record["id"], record["kind"], record["label"]))
        elif kind == "rel":
            self.add_relation(RelationalTriple(record["head"], record["relation"], record["tail"]))
        elif kind == "attr":
            self.set_attribute(record["entity"], record["attribute"], record["value"])
        elif kind == "grid":
            self.add_grid(GridCell(
                record["entity"], int(record["row"]), int(record["col"]),
                float(record["lat"]), float(record["lon"]), record["park"],
            ))
        else:
            raise GraphError(f"unknown record kind {kind!r}")
