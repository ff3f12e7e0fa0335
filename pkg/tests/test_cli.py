# -*- coding: utf-8 -*-
import json

import pytest

from benchmark import QAItem
from main import EXIT_ANSWERLESS, EXIT_CONFIG, EXIT_INPUT, EXIT_OK, main


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    """합성 테이블 생성 + 그래프 구축 (단지 3개, 6x6)"""
    root = tmp_path_factory.mktemp("world")
    tables = root / "tables"
    out = root / "runs"
    assert main(["gen", str(tables), "--seed", "7", "--parks", "3", "--rows", "6", "--cols", "6"]) == EXIT_OK
    graph = root / "kg.jsonl"
    assert main(["build", str(tables), str(graph), "--out", str(out)]) == EXIT_OK
    return {"root": root, "tables": tables, "graph": graph, "out": out}


class TestBuild:
    def test_gen_writes_tables(self, world):
        for name in ("parks.csv", "grids.csv", "pois.jsonl", "enterprises.jsonl", "gazetteer.csv"):
            assert (world["tables"] / name).exists()

    def test_build_reports_statistics(self, world, tmp_path, capsys):
        graph = tmp_path / "kg.jsonl"
        assert main(["build", str(world["tables"]), str(graph), "--format", "json", "--out", str(tmp_path)]) == EXIT_OK
        stats = json.loads(capsys.readouterr().out)
        assert stats["grids"] == 36
        assert stats["entities_by_kind"]["IndustrialPark"] == 3
        assert graph.read_bytes() == world["graph"].read_bytes()
        assert (tmp_path / "build_report.json").exists()

    def test_missing_ingestion_file(self, world, tmp_path):
        for name in ("parks.csv", "pois.jsonl", "enterprises.jsonl"):
            (tmp_path / name).write_bytes((world["tables"] / name).read_bytes())
        assert main(["build", str(tmp_path), str(tmp_path / "kg.jsonl"), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_bad_overrides_file(self, world, tmp_path):
        overrides = tmp_path / "overrides.json"
        overrides.write_text(json.dumps({"g_00_00": "Volcano"}))
        code = main(["build", str(world["tables"]), str(tmp_path / "kg.jsonl"),
                     "--overrides", str(overrides), "--out", str(tmp_path)])
        assert code == EXIT_CONFIG


class TestQuery:
    def test_table_output(self, world, capsys):
        code = main(["query", str(world["graph"]), "MATCH (p:Park) RETURN p.id ORDER BY p.id ASC"])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "park_001" in out and "(3 rows)" in out

    def test_empty_result(self, world, capsys):
        code = main(["query", str(world["graph"]), "MATCH (p:Park) WHERE p.id = 'nothing' RETURN p.id"])
        assert code == EXIT_OK
        assert capsys.readouterr().out.strip() == "0 rows"

    def test_json_output(self, world, capsys):
        code = main(["query", str(world["graph"]), "MATCH (g:Grid) RETURN COUNT(*)", "--format", "json"])
        assert code == EXIT_OK
        assert json.loads(capsys.readouterr().out) == {"columns": ["count"], "rows": [[36]], "total": 36}

    def test_syntax_error_keeps_stdout_clean(self, world, capsys):
        assert main(["query", str(world["graph"]), "MATCH (p:"]) == EXIT_INPUT
        captured = capsys.readouterr()
        assert captured.out == ""
        assert "column 10" in captured.err

    def test_missing_graph(self, tmp_path):
        assert main(["query", str(tmp_path / "none.jsonl"), "MATCH (p:Park) RETURN p.id"]) == EXIT_CONFIG


class TestConfig:
    def test_remote_mode_without_endpoint(self, world, tmp_path, monkeypatch):
        monkeypatch.delenv("SCOPEKG_LLM_URL", raising=False)
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"policy_mode": "remote"}))
        code = main(["query", str(world["graph"]), "MATCH (p:Park) RETURN p.id", "--config", str(config)])
        assert code == EXIT_CONFIG

    def test_unknown_config_key(self, world, tmp_path):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"omega": 1.0, "temperature": 3}))
        assert main(["query", str(world["graph"]), "MATCH (p:Park) RETURN p.id", "--config", str(config)]) == EXIT_CONFIG

    def test_toml_config(self, world, tmp_path, capsys):
        config = tmp_path / "run.toml"
        config.write_text('format = "json"\niteration_limit = 10\n')
        assert main(["query", str(world["graph"]), "MATCH (p:Park) RETURN COUNT(*)", "--config", str(config)]) == EXIT_OK
        assert json.loads(capsys.readouterr().out)["total"] == 3

    def test_invalid_search_parameters(self, world, tmp_path):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"decay": 1.5}))
        assert main(["query", str(world["graph"]), "MATCH (p:Park) RETURN p.id", "--config", str(config)]) == EXIT_CONFIG


class TestRecommend:
    QUESTION = (
        "Where should a new clinic be located among the industrial parks?\n"
        "Level: park\n"
        "Evaluate candidates by: poi_count (higher is better); mean_land_price (lower is better)\n"
        "Return the top 1"
    )

    def test_oracle_answers(self, world, tmp_path, capsys):
        code = main(["recommend", str(world["graph"]), self.QUESTION, "--format", "json", "--out", str(tmp_path),
                     "--gazetteer", str(world["tables"] / "gazetteer.csv")])
        assert code == EXIT_OK
        result = json.loads(capsys.readouterr().out)
        assert result["answer"].startswith("ANSWER: park_")
        assert result["criteria"] == ["poi_count:higher", "mean_land_price:lower"]
        assert list(tmp_path.glob("recommend_*.json"))

    def test_unparsable_question_is_answerless(self, world, tmp_path):
        code = main(["recommend", str(world["graph"]), "Where should a bakery go?", "--out", str(tmp_path)])
        assert code == EXIT_ANSWERLESS


class TestPlan:
    @pytest.fixture
    def green_graph(self, world, tmp_path):
        grids = [f"g_{r:02d}_{c:02d}" for r in range(6) for c in range(2)]
        overrides = tmp_path / "overrides.json"
        overrides.write_text(json.dumps({grid: "Green Space" for grid in grids}))
        graph = tmp_path / "green.jsonl"
        code = main(["build", str(world["tables"]), str(graph), "--overrides", str(overrides), "--out", str(tmp_path)])
        assert code == EXIT_OK
        return graph

    def test_plan_diversifies_single_function_park(self, green_graph, tmp_path, capsys):
        capsys.readouterr()
        code = main(["plan", str(green_graph), "park_001", "--format", "json", "--out", str(tmp_path)])
        assert code == EXIT_OK
        plan = json.loads(capsys.readouterr().out)
        assert plan["park"] == "park_001"
        assert len(plan["assignments"]) == 12
        assert {a["current"] for a in plan["assignments"]} == {"Green Space"}
        assert plan["as_is"]["h0"] == 1.0
        assert plan["proposed"]["h0"] > plan["as_is"]["h0"]
        assert (tmp_path / "plan_park_001.json").exists()

    def test_unknown_park(self, world, tmp_path):
        assert main(["plan", str(world["graph"]), "park_404", "--out", str(tmp_path)]) == EXIT_INPUT


class TestBench:
    def test_reports_are_byte_identical(self, world, tmp_path):
        reports = []
        for run in ("a", "b"):
            report = tmp_path / f"report_{run}.json"
            code = main(["bench", str(world["graph"]), "--generate", "4", "--seed", "3",
                         "--policy-kind", "random", "--report", str(report), "--out", str(tmp_path / run)])
            assert code == EXIT_OK
            reports.append(report.read_bytes())
        assert reports[0] == reports[1]

    def test_saved_dataset_replays(self, world, tmp_path, capsys):
        dataset = tmp_path / "qa.jsonl"
        assert main(["bench", str(world["graph"]), "--generate", "3", "--seed", "1",
                     "--save-dataset", str(dataset), "--out", str(tmp_path)]) == EXIT_OK
        capsys.readouterr()
        assert main(["bench", str(world["graph"]), str(dataset), "--format", "json", "--out", str(tmp_path)]) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["accuracy"] == 1.0
        assert len(report["items"]) == 3

    def test_cot_planner_option(self, world, tmp_path, capsys):
        code = main(["bench", str(world["graph"]), "--generate", "2", "--seed", "1", "--planner", "cot",
                     "--format", "json", "--out", str(tmp_path)])
        assert code == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["planner"] == "cot"
        assert len(report["items"]) == 2

    def test_malformed_dataset_line(self, world, tmp_path, capsys):
        dataset = tmp_path / "qa.jsonl"
        good = QAItem("q", "park", False, ("park_001",), ("poi_count",))
        dataset.write_text(json.dumps(good.to_dict()) + "\n{broken\n")
        assert main(["bench", str(world["graph"]), str(dataset), "--out", str(tmp_path)]) == EXIT_INPUT
        assert "line 2" in capsys.readouterr().err

    def test_bench_needs_items(self, world, tmp_path):
        assert main(["bench", str(world["graph"]), "--out", str(tmp_path)]) == EXIT_INPUT
