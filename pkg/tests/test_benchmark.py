# -*- coding: utf-8 -*-
import json
import random

import pytest
from openpyxl import load_workbook

from benchmark import (
    BenchmarkError,
    DatasetError,
    PlannerBundle,
    QAItem,
    candidate_query,
    diversity_profile,
    export_report_excel,
    generate_benchmark,
    hill_number,
    load_dataset,
    parse_question,
    profile_from_labels,
    render_question,
    render_report_text,
    report_json,
    run_benchmark,
    save_dataset,
    scripted_benchmark_policy,
    site_metrics,
)
from planner import SearchConfig
from query_lang import evaluate
from toolbox import rank_candidates


def proportions(*counts):
    total = sum(counts)
    return [c / total for c in counts]


class TestHillNumbers:
    @pytest.mark.parametrize("counts, h1, h2", [
        ((1, 6), 1.51, 1.32),
        ((3, 4), 1.98, 1.96),
        ((1, 3), 1.76, 1.60),
        ((8, 3, 1), 2.28, 1.95),
    ])
    def test_reference_values(self, counts, h1, h2):
        p = proportions(*counts)
        assert hill_number(p, 1) == pytest.approx(h1, abs=0.01)
        assert hill_number(p, 2) == pytest.approx(h2, abs=0.01)
        assert hill_number(p, 0) == len(counts)

    def test_uniform_equals_richness(self):
        for s in range(1, 12):
            p = [1 / s] * s
            for q in (0, 0.5, 1, 2, 3):
                assert hill_number(p, q) == pytest.approx(s)

    def test_order_and_continuity(self):
        rng = random.Random(4)
        for _ in range(200):
            p = proportions(*[rng.randint(1, 20) for _ in range(rng.randint(1, 8))])
            h0, h1, h2 = (hill_number(p, q) for q in (0, 1, 2))
            assert h0 >= h1 - 1e-9 >= h2 - 2e-9
            assert hill_number(p, 1 - 1e-7) == pytest.approx(h1, rel=1e-5)
            assert hill_number(p, 1 + 1e-7) == pytest.approx(h1, rel=1e-5)

    @pytest.mark.parametrize("p, q", [([0.5, 0.4], 1), ([1.2, -0.2], 2), ([0.5, 0.5], -1)])
    def test_invalid_input(self, p, q):
        with pytest.raises(ValueError):
            hill_number(p, q)

    def test_single_function_park(self):
        profile = profile_from_labels(["Green Space"] * 6 + ["Unassigned"])
        assert (profile.h0, profile.h1, profile.h2) == (1.0, 1.0, 1.0)
        assert profile.proportions == {"Green Space": 1.0}

    def test_assignment_must_cover_park(self, lattice_graph):
        assignment = {grid: "Green Space" for grid in lattice_graph.grids_of_park("park_x")}
        assert diversity_profile(lattice_graph, "park_x", assignment).h0 == 1.0
        del assignment["g_02_02"]
        with pytest.raises(BenchmarkError, match="g_02_02"):
            diversity_profile(lattice_graph, "park_x", assignment)


class TestSiteMetrics:
    def test_partial_overlap(self):
        report = site_metrics([["A", "B"]], [["A", "C"]])
        assert (report.accuracy, report.precision, report.recall, report.f1) == (0.0, 0.5, 0.5, 0.5)

    def test_empty_prediction(self):
        report = site_metrics([[], ["A"]], [["A"], ["A"]])
        assert report.items[0]["precision"] == report.items[0]["f1"] == 0.0
        assert report.accuracy == 0.5
        assert report.recall == 0.5

    def test_zero_items(self):
        report = site_metrics([], [])
        assert report.to_dict() == {
            "accuracy": 0.0, "precision": 0.0, "recall": 0.0, "f1": 0.0, "items": [], "planner": None,
        }

    def test_question_order_does_not_matter(self):
        predicted = [["A"], ["B", "C"], ["D"]]
        gold = [["A"], ["C"], ["E", "D"]]
        forward = site_metrics(predicted, gold)
        backward = site_metrics(predicted[::-1], gold[::-1])
        assert forward.precision == pytest.approx(backward.precision)
        assert forward.f1 == pytest.approx(backward.f1)
        assert forward.accuracy <= forward.recall

    def test_length_mismatch(self):
        with pytest.raises(BenchmarkError):
            site_metrics([["A"]], [])


class TestQuestions:
    def test_template_round_trip(self):
        question = render_question("clinic", "grid", "g.park_id = 'park_002'",
                                   [("poi_count", "higher"), ("mean_land_price", "lower")], 2)
        fields = parse_question(question)
        assert fields == {
            "level": "grid",
            "condition": "g.park_id = 'park_002'",
            "criteria": ["poi_count:higher", "mean_land_price:lower"],
            "top_j": 2,
        }
        assert candidate_query("grid", fields["condition"]) == \
            "MATCH (g:Grid) WHERE g.park_id = 'park_002' RETURN g.id"

    def test_question_without_level(self):
        with pytest.raises(BenchmarkError):
            parse_question("Where should a new bank go?")


class TestGeneration:
    def test_seeded_and_consistent(self, synthetic, registry, tmp_path):
        graph = synthetic[0]
        first = generate_benchmark(graph, 20, seed=9, registry=registry)
        second = generate_benchmark(graph, 20, seed=9, registry=registry)
        save_dataset(first, tmp_path / "a.jsonl")
        save_dataset(second, tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

        for item in first:
            assert 5 <= len(item.gold_criteria) <= 8
            fields = parse_question(item.question)
            candidates = evaluate(candidate_query(fields["level"], fields["condition"]), graph).ids
            ranking = rank_candidates(candidates, fields["criteria"], graph)
            assert item.gold_ids == tuple(ranking.ordering[:1])

    def test_dataset_round_trip(self, synthetic, registry, tmp_path):
        graph = synthetic[0]
        items = generate_benchmark(graph, 5, seed=1, registry=registry, top_j=2)
        path = save_dataset(items, tmp_path / "qa.jsonl")
        assert load_dataset(path, graph) == items

    def test_insufficient_candidates(self, tiny_graph, registry):
        with pytest.raises(BenchmarkError, match="insufficient candidates"):
            generate_benchmark(tiny_graph, 1, seed=0, registry=registry, top_j=20)

    @pytest.mark.parametrize("line, message", [
        ("{not json", "invalid JSON"),
        ('{"question": "q"}', "missing field"),
        ('{"question": "q", "level": "city", "conditional": false, "gold_ids": ["a"], "gold_criteria": []}', "level"),
        ('{"question": "q", "level": "park", "conditional": false, "gold_ids": [], "gold_criteria": []}', "gold_ids"),
    ])
    def test_malformed_lines_name_the_line(self, tmp_path, line, message):
        good = QAItem("q", "park", False, ("park_a",), ("gdp",))
        path = tmp_path / "qa.jsonl"
        path.write_text(json.dumps(good.to_dict()) + "\n" + line + "\n")
        with pytest.raises(DatasetError, match=message) as excinfo:
            load_dataset(path)
        assert excinfo.value.line_no == 2

    def test_gold_kind_checked(self, tiny_graph, tmp_path):
        path = tmp_path / "qa.jsonl"
        path.write_text(json.dumps(QAItem("q", "park", False, ("g_00_00",), ()).to_dict()) + "\n")
        with pytest.raises(DatasetError, match="not a IndustrialPark"):
            load_dataset(path, tiny_graph)


class TestRun:
    def test_empty_run(self, synthetic_toolbox):
        bundle = PlannerBundle(synthetic_toolbox, scripted_benchmark_policy("oracle"))
        report = run_benchmark([], bundle)
        assert report.accuracy == 0.0
        assert "0 items" in render_report_text(report)

    @pytest.mark.slow
    def test_oracle_beats_degenerate(self, synthetic, synthetic_toolbox, registry):
        items = generate_benchmark(synthetic[0], 100, seed=42, registry=registry)
        config = SearchConfig(iteration_limit=50, branching=2)

        oracle = run_benchmark(items, PlannerBundle(synthetic_toolbox, scripted_benchmark_policy("oracle"), config),
                               jobs=4)
        assert (oracle.accuracy, oracle.precision, oracle.recall, oracle.f1) == (1.0, 1.0, 1.0, 1.0)

        degenerate = run_benchmark(items, PlannerBundle(synthetic_toolbox, scripted_benchmark_policy("degenerate"),
                                                        config), jobs=4)
        assert degenerate.accuracy < oracle.accuracy
        assert degenerate.precision < oracle.precision
        assert degenerate.recall < oracle.recall
        assert degenerate.f1 < oracle.f1

    def test_reports_are_reproducible(self, synthetic, synthetic_toolbox, registry, tmp_path):
        items = generate_benchmark(synthetic[0], 6, seed=5, registry=registry)
        bundle = PlannerBundle(synthetic_toolbox, scripted_benchmark_policy("random"))
        first = report_json(run_benchmark(items, bundle, jobs=3, trace_dir=tmp_path / "traces"))
        second = report_json(run_benchmark(items, bundle, jobs=1))
        assert first == second
        assert len(list((tmp_path / "traces").glob("item_*.json"))) == 6

    def test_react_planner_and_excel(self, synthetic, synthetic_toolbox, registry, tmp_path):
        items = generate_benchmark(synthetic[0], 3, seed=2, registry=registry)
        bundle = PlannerBundle(synthetic_toolbox, scripted_benchmark_policy("oracle"), planner="react")
        report = run_benchmark(items, bundle)
        assert report.accuracy == 1.0
        path = export_report_excel(report, tmp_path / "report.xlsx")
        assert (tmp_path / "report.xlsx").exists() and path

        workbook = load_workbook(path)
        summary = workbook["summary"]
        assert [cell.value for cell in summary[1]][:2] == ["planner", "accuracy"]
        assert [cell.value for cell in summary[2]][:2] == ["react", 1.0]
        items_sheet = workbook["items"]
        header = {cell.value: cell.column for cell in items_sheet[1]}
        assert items_sheet.max_row == 4
        for row in range(2, items_sheet.max_row + 1):
            for column in ("question", "predicted", "gold"):
                assert items_sheet.cell(row, header[column]).number_format == '@'
            assert items_sheet.cell(row, header["f1"]).number_format != '@'
        assert items_sheet.cell(2, header["gold"]).value == ", ".join(items[0].gold_ids)

    def test_cot_planner_reports_under_own_name(self, synthetic, synthetic_toolbox, registry):
        items = generate_benchmark(synthetic[0], 3, seed=2, registry=registry)
        policy = scripted_benchmark_policy("oracle")
        react = run_benchmark(items, PlannerBundle(synthetic_toolbox, policy, planner="react"))
        cot = run_benchmark(items, PlannerBundle(synthetic_toolbox, policy, planner="cot"))
        assert cot.planner == "cot" and react.planner == "react"
        assert json.loads(report_json(cot))["planner"] == "cot"
        assert render_report_text(cot).splitlines()[0] == "planner: cot"
        # 관측 없이 세운 계획은 질의 뒤 순위 단계를 만들지 못한다
        assert cot.accuracy < react.accuracy
        assert all(record["flagged"] for record in cot.items)
        assert all(record["iterations"] == 2 for record in cot.items)

    def test_unknown_planner(self, synthetic, synthetic_toolbox, registry):
        items = generate_benchmark(synthetic[0], 1, seed=2, registry=registry)
        with pytest.raises(BenchmarkError, match="unknown planner"):
            run_benchmark(items, PlannerBundle(synthetic_toolbox, scripted_benchmark_policy("oracle"), planner="tot"))

    def test_unknown_policy_kind(self):
        with pytest.raises(BenchmarkError):
            scripted_benchmark_policy("psychic")
