# -*- coding: utf-8 -*-
"""
시드 고정 합성 원천 테이블 생성 (단지 / 격자 / POI / 기업 + 가제티어)
"""
import os

import numpy as np
import pandas as pd

from common_utils import log
from kg_builder import FUNCTION_TYPES, RawTables

INDUSTRIES = (
    "Biomedicine",
    "Integrated Circuits",
    "Artificial Intelligence",
    "New Energy Vehicles",
    "Advanced Materials",
    "Aerospace",
    "Fintech",
    "Logistics",
)
SCOPES = (
    "software development",
    "technical services",
    "import and export",
    "equipment manufacturing",
    "business consulting",
    "wholesale trade",
)
PARK_NAMES = ("Zhangjiang", "Caohejing", "Lingang", "Jinqiao", "Songjiang", "Minhang", "Jiading", "Baoshan")
ROAD_NAMES = ("Science", "Keyuan", "Huatuo", "Chenhui", "Gaoke", "Jinke", "Bibo", "Cailun", "Halei", "Libing")

BASE_LAT, BASE_LON, CELL_DEG = 31.20, 121.55, 0.005


def grid_id(row, col):
    return f"g_{row:02d}_{col:02d}"


def grid_address(row, col):
    """격자 정식 주소 (행마다 다른 도로명)"""
    road = ROAD_NAMES[row % len(ROAD_NAMES)]
    section = f" Section {row // len(ROAD_NAMES) + 1}" if row >= len(ROAD_NAMES) else ""
    return f"No.{col + 1} {road} Rd{section}"


def synthesize_tables(seed, parks=5, rows=20, cols=20):
    """격자 열을 단지 수만큼 세로 띠로 나눈 합성 데이터 → (RawTables, 가제티어 DataFrame)"""
    if parks < 1 or cols < parks or rows < 1:
        raise ValueError("need at least one park and one column per park")
    rng = np.random.default_rng(seed)

    park_rows, grid_rows, poi_rows, ent_rows, gazetteer_rows = [], [], [], [], []
    bands = [(i * cols // parks, (i + 1) * cols // parks - 1) for i in range(parks)]

    park_profiles = {}
    for i, (col_min, col_max) in enumerate(bands):
        park_id = f"park_{i + 1:03d}"
        planned = sorted(rng.choice(INDUSTRIES, size=2, replace=False).tolist())
        name = f"{PARK_NAMES[i % len(PARK_NAMES)]} Industrial Park" + (f" {i // len(PARK_NAMES) + 1}" if i >= len(PARK_NAMES) else "")
        park_rows.append({
            "park_id": park_id,
            "name": name,
            "planned_industries": ";".join(planned),
            "row_min": 0, "row_max": rows - 1,
            "col_min": col_min, "col_max": col_max,
            "gdp": round(float(rng.uniform(50, 500)), 2),
            "area": float((col_max - col_min + 1) * rows),
        })
        # 단지별 POI 카테고리 분포 / 산업 선호
        park_profiles[park_id] = {
            "poi_weights": rng.dirichlet(np.full(len(FUNCTION_TYPES), 0.6)),
            "industries": planned + [INDUSTRIES[int(rng.integers(len(INDUSTRIES)))]],
        }

        for row in range(rows):
            for col in range(col_min, col_max + 1):
                gid = grid_id(row, col)
                grid_rows.append({
                    "grid_id": gid,
                    "row": row, "col": col,
                    "lat": round(BASE_LAT + row * CELL_DEG, 6),
                    "lon": round(BASE_LON + col * CELL_DEG, 6),
                    "park_id": park_id,
                    "population": int(rng.integers(0, 5000)),
                    "land_price": round(float(rng.uniform(1.0, 10.0)), 3),
                    "mobility": round(float(rng.uniform(0.0, 1.0)), 4),
                })
                # 일부 격자는 가제티어에 없음 (합성 주소로 역변환)
                if (row * cols + col) % 7 != 3:
                    gazetteer_rows.append({"address": grid_address(row, col), "grid_id": gid})

    for grid in grid_rows:
        profile = park_profiles[grid["park_id"]]
        for _ in range(int(rng.poisson(2.0))):
            category = FUNCTION_TYPES[int(rng.choice(len(FUNCTION_TYPES), p=profile["poi_weights"]))]
            poi_id = f"poi_{len(poi_rows) + 1:05d}"
            poi_rows.append({
                "poi_id": poi_id,
                "category": category,
                "grid_id": grid["grid_id"],
                "name": f"{category} {poi_id}",
                "address": grid_address(grid["row"], grid["col"]),
            })

        for _ in range(int(rng.poisson(1.0))):
            industries = profile["industries"]
            industry = industries[int(rng.integers(len(industries)))]
            ent_id = f"ent_{len(ent_rows) + 1:05d}"
            scopes = sorted(rng.choice(SCOPES, size=int(rng.integers(1, 4)), replace=False).tolist())
            ent_rows.append({
                "ent_id": ent_id,
                "name": f"{industry} Co. {ent_id}",
                "industry_1": industry,
                "industry_2": f"{industry} / segment {int(rng.integers(1, 4))}",
                "industry_3": f"{industry} / segment {int(rng.integers(1, 4))} / line {int(rng.integers(1, 3))}",
                "scopes": scopes,
                "grid_id": grid["grid_id"],
                "attributes": {
                    "employees": int(rng.integers(5, 800)),
                    "patents": int(rng.integers(0, 40)),
                },
            })

    tables = RawTables(
        parks=pd.DataFrame(park_rows),
        grids=pd.DataFrame(grid_rows),
        pois=pd.DataFrame(poi_rows),
        enterprises=pd.DataFrame(ent_rows),
    )
    gazetteer = pd.DataFrame(gazetteer_rows, columns=["address", "grid_id"])
    log(f"🧪 합성 데이터: 단지 {parks} / 격자 {len(grid_rows)} / POI {len(poi_rows)} / 기업 {len(ent_rows)}")
    return tables, gazetteer


def write_tables(tables, gazetteer, out_dir):
    """수집 파일 4종 + gazetteer.csv 저장"""
    os.makedirs(out_dir, exist_ok=True)
    tables.parks.to_csv(os.path.join(out_dir, "parks.csv"), index=False)
    tables.grids.to_csv(os.path.join(out_dir, "grids.csv"), index=False)
    for name, frame in (("pois.jsonl", tables.pois), ("enterprises.jsonl", tables.enterprises)):
        path = os.path.join(out_dir, name)
        if frame.empty:
            open(path, 'w', encoding='utf-8').close()
        else:
            frame.to_json(path, orient="records", lines=True, force_ascii=False)
    if gazetteer is not None:
        gazetteer.to_csv(os.path.join(out_dir, "gazetteer.csv"), index=False)
    log(f"✅ 합성 테이블 저장: {out_dir}")
    return out_dir
