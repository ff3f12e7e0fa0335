# -*- coding: utf-8 -*-
import json
import time

import numpy as np
import pytest

from graph_store import (
    SCHEMA_VERSION,
    AttributionalTriple,
    Entity,
    GraphError,
    GraphFormatError,
    GridCell,
    PropertyGraph,
    RelationalTriple,
)


def two_parks():
    graph = PropertyGraph()
    graph.add_entity(Entity("park_a", "IndustrialPark", "Alpha"))
    graph.add_entity(Entity("park_b", "IndustrialPark", "Beta"))
    return graph


class TestMutation:
    def test_duplicate_entity_rejected(self):
        graph = two_parks()
        with pytest.raises(GraphError):
            graph.add_entity(Entity("park_a", "IndustrialPark", "Again"))

    def test_unknown_kind_and_empty_label(self):
        graph = PropertyGraph()
        with pytest.raises(GraphError):
            graph.add_entity(Entity("x", "Factory", "X"))
        with pytest.raises(GraphError):
            graph.add_entity(Entity("x", "POI", "  "))

    def test_dangling_endpoint(self):
        graph = two_parks()
        with pytest.raises(GraphError, match="dangling"):
            graph.add_relation(RelationalTriple("park_a", "AdjacentTo", "park_z"))

    def test_duplicate_triple(self):
        graph = two_parks()
        graph.add_relation(RelationalTriple("park_a", "AdjacentTo", "park_b"))
        with pytest.raises(GraphError, match="duplicate"):
            graph.add_relation(RelationalTriple("park_a", "AdjacentTo", "park_b"))

    def test_symmetric_relation_visible_both_ways(self):
        graph = two_parks()
        graph.add_relation(RelationalTriple("park_a", "SimilarTo", "park_b"))
        assert graph.neighbors("park_a", "SimilarTo") == ["park_b"]
        assert graph.neighbors("park_b", "SimilarTo") == ["park_a"]
        assert graph.has_relation(RelationalTriple("park_b", "SimilarTo", "park_a"))

    def test_symmetric_self_loop_rejected(self):
        graph = two_parks()
        with pytest.raises(GraphError, match="self-loop"):
            graph.add_relation(RelationalTriple("park_a", "AdjacentTo", "park_a"))

    def test_attribute_last_write_wins(self):
        graph = two_parks()
        graph.set_attribute("park_a", "gdp", 10)
        graph.set_attribute("park_a", "gdp", 20.5)
        assert graph.attribute("park_a", "gdp") == 20.5
        assert graph.attribute("park_a", "missing") is None

    def test_attribute_values_are_checked(self):
        graph = two_parks()
        with pytest.raises(GraphError):
            graph.set_attribute("park_a", "gdp", float("nan"))
        with pytest.raises(GraphError):
            graph.set_attribute("park_a", "flag", True)
        graph.set_attribute("park_a", "count", np.int64(3))
        assert graph.attribute("park_a", "count") == 3
        assert isinstance(graph.attribute("park_a", "count"), int)

    def test_grid_lattice_unique(self):
        graph = two_parks()
        graph.add_entity(Entity("g1", "Grid", "g1"))
        graph.add_entity(Entity("g2", "Grid", "g2"))
        graph.add_grid(GridCell("g1", 0, 0, 31.0, 121.0, "park_a"))
        with pytest.raises(GraphError, match="already registered"):
            graph.add_grid(GridCell("g2", 0, 0, 31.0, 121.0, "park_a"))
        assert graph.grid_at(0, 0) == "g1"
        assert graph.grids_of_park("park_a") == ["g1"]

    def test_frozen_graph_is_read_only(self):
        graph = two_parks().freeze()
        with pytest.raises(GraphError, match="frozen"):
            graph.set_attribute("park_a", "gdp", 1)
        assert graph.entity("park_a").label == "Alpha"


class TestQueries:
    def test_neighbors_by_direction(self):
        graph = two_parks()
        graph.add_entity(Entity("g1", "Grid", "g1"))
        graph.add_relation(RelationalTriple("g1", "LocatedIn", "park_a"))
        assert graph.neighbors("g1", "LocatedIn") == ["park_a"]
        assert graph.neighbors("park_a", "LocatedIn", "incoming") == ["g1"]
        assert graph.neighbors("park_a", "LocatedIn", "outgoing") == []
        assert graph.members_of("park_a", "Grid") == ["g1"]

    def test_unknown_entity(self):
        with pytest.raises(GraphError):
            two_parks().neighbors("nope")

    def test_attribute_triples_sorted(self):
        graph = two_parks()
        graph.set_attribute("park_b", "gdp", 80.0)
        graph.set_attribute("park_a", "gdp", 120.0)
        graph.set_attribute("park_a", "area", 3.5)
        assert graph.attribute_triples() == [
            AttributionalTriple("park_a", "area", 3.5),
            AttributionalTriple("park_a", "gdp", 120.0),
            AttributionalTriple("park_b", "gdp", 80.0),
        ]
        assert graph.attribute_triples("park_b") == [AttributionalTriple("park_b", "gdp", 80.0)]

    def test_statistics_count_indices(self):
        graph = two_parks()
        graph.add_relation(RelationalTriple("park_a", "AdjacentTo", "park_b"))
        stats = graph.statistics()
        assert stats["entities"] == 2
        assert stats["entities_by_kind"]["IndustrialPark"] == 2
        # 대칭 관계는 양방향 모두 인덱스에 존재
        assert stats["triples_by_relation"]["AdjacentTo"] == 2


class TestPersistence:
    def test_round_trip_structural_identity(self, tiny_graph, tmp_path):
        path = tmp_path / "kg.jsonl"
        tiny_graph.save(path)
        loaded = PropertyGraph.load(path)
        assert loaded.signature() == tiny_graph.signature()

    def test_save_is_byte_stable(self, tiny_graph, tmp_path):
        first, second = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        tiny_graph.save(first)
        PropertyGraph.load(first).save(second)
        assert first.read_bytes() == second.read_bytes()

    def test_symmetric_relations_written_once(self, tmp_path):
        graph = two_parks()
        graph.add_relation(RelationalTriple("park_b", "AdjacentTo", "park_a"))
        path = tmp_path / "kg.jsonl"
        graph.save(path)
        records = [json.loads(line) for line in path.read_text().splitlines()[1:]]
        rels = [r for r in records if r["record"] == "rel"]
        assert rels == [{"record": "rel", "head": "park_a", "relation": "AdjacentTo", "tail": "park_b"}]
        assert PropertyGraph.load(path).neighbors("park_b", "AdjacentTo") == ["park_a"]

    def test_empty_file_loads_empty_graph(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert len(PropertyGraph.load(path)) == 0

    def test_schema_mismatch(self, tmp_path):
        path = tmp_path / "old.jsonl"
        path.write_text(json.dumps({"schema": "scopekg/0"}) + "\n")
        with pytest.raises(GraphFormatError, match="schema version"):
            PropertyGraph.load(path)

    def test_errors_carry_line_numbers(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        lines = [
            json.dumps({"schema": SCHEMA_VERSION}),
            json.dumps({"record": "entity", "id": "park_a", "kind": "IndustrialPark", "label": "A"}),
            json.dumps({"record": "rel", "head": "park_a", "relation": "AdjacentTo", "tail": "ghost"}),
        ]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(GraphFormatError) as excinfo:
            PropertyGraph.load(path)
        assert excinfo.value.line_no == 3

    def test_malformed_json_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps({"schema": SCHEMA_VERSION}) + "\n{not json\n")
        with pytest.raises(GraphFormatError) as excinfo:
            PropertyGraph.load(path)
        assert excinfo.value.line_no == 2

    @pytest.mark.slow
    def test_large_graph_round_trip(self, tmp_path):
        graph = PropertyGraph()
        n = 20000
        for i in range(n):
            graph.add_entity(Entity(f"poi_{i:05d}", "POI", f"poi {i}"))
        for i in range(n):
            for offset in range(1, 6):
                graph.add_relation(RelationalTriple(f"poi_{i:05d}", "LocatedIn", f"poi_{(i + offset) % n:05d}"))
        assert graph.statistics()["triples"] == 100000

        path = tmp_path / "large.jsonl"
        graph.save(path)
        started = time.perf_counter()
        loaded = PropertyGraph.load(path)
        elapsed = time.perf_counter() - started
        assert loaded.signature() == graph.signature()
        assert elapsed < 10.0
