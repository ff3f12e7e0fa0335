# -*- coding: utf-8 -*-
import pandas as pd
import pytest

from graph_store import Entity, GridCell, PropertyGraph, RelationalTriple
from kg_builder import RawTables, build_knowledge_graph, load_registry
from synthetic_data import synthesize_tables
from toolbox import Gazetteer, Toolbox


def make_tables(parks, grids, pois=(), enterprises=()):
    tables = RawTables.empty()
    if parks:
        tables.parks = pd.DataFrame(parks)
    if grids:
        tables.grids = pd.DataFrame(grids)
    if pois:
        tables.pois = pd.DataFrame(pois)
    if enterprises:
        tables.enterprises = pd.DataFrame(enterprises)
    return tables


def grid_row(row, col, park, **extra):
    return {"grid_id": f"g_{row:02d}_{col:02d}", "row": row, "col": col,
            "lat": 31.0 + row * 0.01, "lon": 121.0 + col * 0.01, "park_id": park, **extra}


@pytest.fixture
def tiny_tables():
    """3x3 격자: park_a = 0-1열, park_b = 2열"""
    parks = [
        {"park_id": "park_a", "name": "Alpha Park", "planned_industries": "Biomedicine;Aerospace",
         "row_min": 0, "row_max": 2, "col_min": 0, "col_max": 1, "gdp": 300.0},
        {"park_id": "park_b", "name": "Beta Park", "planned_industries": "Fintech",
         "row_min": 0, "row_max": 2, "col_min": 2, "col_max": 2, "gdp": 120.0},
    ]
    grids = [grid_row(r, c, "park_a" if c < 2 else "park_b", population=100 * (r + 1))
             for r in range(3) for c in range(3)]
    pois = [
        {"poi_id": "p1", "category": "Residential", "grid_id": "g_00_00", "name": "Home 1", "address": "No.1 Science Rd"},
        {"poi_id": "p2", "category": "Residential", "grid_id": "g_00_00", "name": "Home 2", "address": "No.1 Science Rd"},
        {"poi_id": "p3", "category": "Green Space", "grid_id": "g_00_01", "name": "Lawn", "address": None},
        {"poi_id": "p4", "category": "Traffic", "grid_id": "g_02_02", "name": "Metro", "address": None},
        {"poi_id": "p5", "category": "Dining Services", "grid_id": "g_01_01", "name": "Canteen", "address": None},
    ]
    enterprises = [
        {"ent_id": "e1", "name": "Bio One", "industry_1": "Biomedicine", "scopes": ["consulting", "software"],
         "grid_id": "g_00_00", "attributes": {"employees": 10}},
        {"ent_id": "e2", "name": "Bio Two", "industry_1": "Biomedicine", "scopes": ["software"],
         "grid_id": "g_01_00", "attributes": {"employees": 30}},
        {"ent_id": "e3", "name": "Aero", "industry_1": "Aerospace", "scopes": ["software", "wholesale"],
         "grid_id": "g_01_01", "attributes": {"employees": 5}},
        {"ent_id": "e4", "name": "Pay", "industry_1": "Fintech", "scopes": ["consulting"],
         "grid_id": "g_02_02", "attributes": {"employees": 50}},
    ]
    return make_tables(parks, grids, pois, enterprises)


@pytest.fixture(scope="session")
def registry():
    return load_registry()


@pytest.fixture
def tiny_graph(tiny_tables, registry):
    graph, _ = build_knowledge_graph(tiny_tables, registry)
    return graph.freeze()


@pytest.fixture
def park_graph():
    """단지 5개, 속성 gdp / name / planned_industries"""
    graph = PropertyGraph()
    values = {"park_001": 300, "park_002": 120, "park_003": 80, "park_004": 100, "park_005": None}
    for park, gdp in values.items():
        graph.add_entity(Entity(park, "IndustrialPark", park.replace("_", " ").title()))
        if gdp is not None:
            graph.set_attribute(park, "gdp", gdp)
        graph.set_attribute(park, "planned_industries", ["Biomedicine"] if gdp and gdp > 100 else ["Logistics"])
    graph.add_relation(RelationalTriple("park_001", "AdjacentTo", "park_002"))
    graph.add_relation(RelationalTriple("park_003", "SimilarTo", "park_004"))
    return graph.freeze()


@pytest.fixture
def lattice_graph():
    """5x5 격자 단지 하나 (속성 없음)"""
    graph = PropertyGraph()
    graph.add_entity(Entity("park_x", "IndustrialPark", "Lattice Park"))
    for r in range(5):
        for c in range(5):
            gid = f"g_{r:02d}_{c:02d}"
            graph.add_entity(Entity(gid, "Grid", gid))
            graph.add_grid(GridCell(gid, r, c, 31.0, 121.0, "park_x"))
            graph.add_relation(RelationalTriple(gid, "LocatedIn", "park_x"))
    return graph


@pytest.fixture(scope="session")
def synthetic():
    """단지 5개, 20x20 격자 합성 그래프 + 가제티어"""
    tables, gazetteer_frame = synthesize_tables(seed=7, parks=5, rows=20, cols=20)
    graph, report = build_knowledge_graph(tables, load_registry())
    graph.freeze()
    gazetteer = Gazetteer(zip(gazetteer_frame["address"], gazetteer_frame["grid_id"]))
    return graph, gazetteer, report


@pytest.fixture(scope="session")
def synthetic_toolbox(synthetic):
    graph, gazetteer, _ = synthetic
    return Toolbox(graph, gazetteer)
