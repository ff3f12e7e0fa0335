# -*- coding: utf-8 -*-
"""
벤치마크 하네스
- Hill number 다양성 지표 (q = 0, 1, 2)
- 입지 추천 정확도/정밀도/재현율/F1
- 합성 QA 생성 (5-8개 평가 기준, Borda 최적 순위가 정답)
- 스크립트 정책(oracle / degenerate / random)으로 전체 실행
- 비교 기준: mcts / react (단일 경로) / cot (계획 후 실행)
"""
import json
import os
import random
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from common_utils import ProcessingResults, log, write_json
from policy import (
    ActionCandidate,
    FinalAnswer,
    ScriptedEvaluator,
    ScriptedPolicy,
    build_initial_state,
    parse_answer_ids,
    state_fingerprint,
)
from planner import MCTSPlanner, SearchConfig
from query_lang import evaluate, parse
from toolbox import ToolInvocation, rank_candidates

NORMALIZATION_TOLERANCE = 1e-9
UNASSIGNED = "Unassigned"
LEVELS = ("park", "grid")
LEVEL_KINDS = {"park": ("IndustrialPark", "p"), "grid": ("Grid", "g")}
MIN_CRITERIA, MAX_CRITERIA = 5, 8
MIN_CANDIDATES = 2
MAX_ATTEMPTS = 50
PLANNERS = ("mcts", "react", "cot")
POLICY_KINDS = ("oracle", "degenerate", "random")
EXCEL_TEXT_COLUMNS = ("question", "predicted", "gold")

FACILITY_TYPES = (
    "bank branch",
    "data center",
    "logistics hub",
    "R&D center",
    "clinic",
    "shopping center",
    "business hotel",
    "vocational school",
)


class BenchmarkError(Exception):
    """벤치마크 생성/실행 오류"""


class DatasetError(BenchmarkError):
    """QA 데이터셋 형식 오류 (줄 번호 포함)"""

    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


# ----------------------------------------------------------------------
# Hill numbers
# ----------------------------------------------------------------------
def hill_number(proportions, q):
    """H_q = (Σ p_i^q)^(1/(1-q)), q = 1 은 exp(-Σ p_i ln p_i)"""
    p = np.asarray(proportions, dtype=float)
    if q < 0:
        raise ValueError("q must be non-negative")
    if (p < 0).any():
        raise ValueError("proportions must be non-negative")
    if abs(p.sum() - 1.0) > NORMALIZATION_TOLERANCE:
        raise ValueError(f"proportions must sum to 1 (got {p.sum()})")

    p = p[p > 0]
    if q == 0:
        return float(len(p))
    if q == 1:
        return float(np.exp(-np.sum(p * np.log(p))))
    return float(np.exp(np.log(np.sum(p ** q)) / (1 - q)))


def hill_numbers_from_counts(counts, q):
    """빈도 → Hill number. 빈도가 없으면 0.0"""
    counts = np.asarray(list(counts), dtype=float)
    total = counts.sum() if counts.size else 0.0
    if total <= 0:
        return 0.0
    return hill_number(counts / total, q)


@dataclass
class DiversityProfile:
    proportions: dict
    h0: float
    h1: float
    h2: float

    def to_dict(self):
        return {"proportions": dict(self.proportions), "h0": self.h0, "h1": self.h1, "h2": self.h2}


def profile_from_labels(labels):
    """기능 라벨 목록 → 다양성 프로필 ("Unassigned" 제외)"""
    counts = Counter(label for label in labels if label and label != UNASSIGNED)
    total = sum(counts.values())
    if total == 0:
        return DiversityProfile({}, 0.0, 0.0, 0.0)
    proportions = {label: count / total for label, count in sorted(counts.items())}
    values = [hill_numbers_from_counts(counts.values(), q) for q in (0, 1, 2)]
    return DiversityProfile(proportions, *values)


def diversity_profile(graph, park, function_assignment):
    """단지 격자별 기능 배정 → 다양성 프로필"""
    grids = graph.grids_of_park(park)
    uncovered = [grid for grid in grids if grid not in function_assignment]
    if uncovered:
        raise BenchmarkError(f"assignment does not cover grid '{uncovered[0]}'")
    return profile_from_labels(function_assignment[grid] for grid in grids)


# ----------------------------------------------------------------------
# 지표
# ----------------------------------------------------------------------
@dataclass
class MetricsReport:
    accuracy: float = 0.0
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    items: list = field(default_factory=list)
    planner: str = None

    def to_dict(self):
        return asdict(self)


def _harmonic(a, b):
    return 2 * a * b / (a + b) if a > 0 and b > 0 else 0.0


def site_metrics(predicted, gold):
    """질문별 집합 비교 → 매크로 평균 (F1 은 매크로 P, R 의 조화평균)"""
    if len(predicted) != len(gold):
        raise BenchmarkError(f"length mismatch: {len(predicted)} predictions vs {len(gold)} gold sets")

    records = []
    for pred, truth in zip(predicted, gold):
        pred, truth = set(pred), set(truth)
        hits = len(pred & truth)
        precision = hits / len(pred) if pred else 0.0
        recall = hits / len(truth) if truth else 0.0
        records.append({
            "predicted": sorted(pred),
            "gold": sorted(truth),
            "precision": precision,
            "recall": recall,
            "f1": _harmonic(precision, recall),
            "exact": pred == truth,
        })

    if not records:
        return MetricsReport()
    n = len(records)
    precision = sum(r["precision"] for r in records) / n
    recall = sum(r["recall"] for r in records) / n
    return MetricsReport(
        accuracy=sum(1 for r in records if r["exact"]) / n,
        precision=precision,
        recall=recall,
        f1=_harmonic(precision, recall),
        items=records,
    )


# ----------------------------------------------------------------------
# QA 데이터셋
# ----------------------------------------------------------------------
@dataclass
class QAItem:
    question: str
    level: str
    conditional: bool
    gold_ids: tuple
    gold_criteria: tuple

    def to_dict(self):
        return {
            "question": self.question,
            "level": self.level,
            "conditional": self.conditional,
            "gold_ids": list(self.gold_ids),
            "gold_criteria": list(self.gold_criteria),
        }


def _item_from_record(record, line_no):
    if not isinstance(record, dict):
        raise DatasetError(line_no, "expected a JSON object")
    for key in ("question", "level", "conditional", "gold_ids", "gold_criteria"):
        if key not in record:
            raise DatasetError(line_no, f"missing field '{key}'")
    if record["level"] not in LEVELS:
        raise DatasetError(line_no, f"level must be park or grid, got {record['level']!r}")
    gold = record["gold_ids"]
    if not isinstance(gold, list) or not gold or not all(isinstance(g, str) for g in gold):
        raise DatasetError(line_no, "gold_ids must be a non-empty list of ids")
    if not isinstance(record["gold_criteria"], list):
        raise DatasetError(line_no, "gold_criteria must be a list")
    return QAItem(
        question=str(record["question"]),
        level=record["level"],
        conditional=bool(record["conditional"]),
        gold_ids=tuple(gold),
        gold_criteria=tuple(str(c) for c in record["gold_criteria"]),
    )


def load_dataset(path, graph=None):
    """JSONL QA 데이터셋 로드. graph 가 있으면 정답 ID 종류도 검증"""
    items = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(line_no, f"invalid JSON: {e.msg}") from None
            item = _item_from_record(record, line_no)
            if graph is not None:
                kind = LEVEL_KINDS[item.level][0]
                for gold_id in item.gold_ids:
                    entity = graph.get_entity(gold_id)
                    if entity is None or entity.kind != kind:
                        raise DatasetError(line_no, f"gold id '{gold_id}' is not a {kind}")
            items.append(item)
    log(f"📂 QA 데이터셋 로드: {len(items)}개 ({path})")
    return items


def save_dataset(items, path):
    """한 줄당 JSON 객체 하나 (키 정렬 고정)"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for item in items:
            f.write(json.dumps(item.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
    return path


# ----------------------------------------------------------------------
# 질문 템플릿
# ----------------------------------------------------------------------
def render_question(facility, level, condition, criteria, top_j):
    scope = "industrial parks" if level == "park" else "grids"
    criteria_text = "; ".join(f"{name} ({direction} is better)" for name, direction in criteria)
    lines = [
        f"Where should a new {facility} be located among the {scope}?",
        f"Level: {level}",
    ]
    if condition:
        lines.append(f"Condition: {condition}")
    lines.append(f"Evaluate candidates by: {criteria_text}")
    lines.append(f"Return the top {top_j}")
    return "\n".join(lines)


_CRITERION_RE = re.compile(r"^\s*(\S+)\s+\((higher|lower) is better\)\s*$")


def parse_question(question):
    """템플릿 질문 → {level, condition, criteria, top_j}"""
    fields = {"level": None, "condition": None, "criteria": [], "top_j": 1}
    for line in question.splitlines():
        if line.startswith("Level:"):
            fields["level"] = line.split(":", 1)[1].strip()
        elif line.startswith("Condition:"):
            fields["condition"] = line.split(":", 1)[1].strip()
        elif line.startswith("Evaluate candidates by:"):
            for part in line.split(":", 1)[1].split(";"):
                match = _CRITERION_RE.match(part)
                if match:
                    fields["criteria"].append(f"{match.group(1)}:{match.group(2)}")
        elif line.startswith("Return the top"):
            fields["top_j"] = int(line.rsplit(" ", 1)[-1])
    if fields["level"] not in LEVELS:
        raise BenchmarkError("question does not name a level")
    return fields


def candidate_query(level, condition=None):
    """후보 수집 질의 텍스트"""
    kind, binding = LEVEL_KINDS[level]
    where = f" WHERE {condition}" if condition else ""
    return f"MATCH ({binding}:{kind}){where} RETURN {binding}.id"


def _conditions(graph, level):
    """조건부 질문에 쓸 조건 후보"""
    if level == "park":
        labels = sorted({
            label for park in graph.entities_of_kind("IndustrialPark")
            for label in (graph.attribute(park, "planned_industries") or ())
        })
        return [f"p.planned_industries CONTAINS '{label}'" for label in labels]
    return [f"g.park_id = '{park}'" for park in graph.entities_of_kind("IndustrialPark")]


def _available_criteria(graph, registry, level):
    names = graph.attribute_names()
    return [(i.name, i.direction) for i in registry.level_criteria(level) if i.name in names]


def generate_benchmark(graph, count, seed, registry, top_j=1, conditional_rate=0.5):
    """시드 고정 합성 QA. 정답 = 선택 기준에 대한 Borda 순위 상위 top_j"""
    rng = np.random.default_rng(seed)
    items = []

    for index in range(count):
        for _ in range(MAX_ATTEMPTS):
            level = LEVELS[int(rng.integers(len(LEVELS)))]
            available = _available_criteria(graph, registry, level)
            if len(available) < MIN_CRITERIA:
                continue

            n_criteria = int(rng.integers(MIN_CRITERIA, min(MAX_CRITERIA, len(available)) + 1))
            picked = rng.choice(len(available), size=n_criteria, replace=False)
            criteria = [available[int(i)] for i in picked]

            condition = None
            if rng.random() < conditional_rate:
                options = _conditions(graph, level)
                if options:
                    condition = options[int(rng.integers(len(options)))]

            candidates = evaluate(parse(candidate_query(level, condition)), graph).ids
            criteria_args = [f"{name}:{direction}" for name, direction in criteria]
            try:
                ranking = rank_candidates(candidates, criteria_args, graph)
            except ValueError:
                continue
            if len(ranking.candidates) < max(MIN_CANDIDATES, top_j + 1):
                continue

            facility = FACILITY_TYPES[int(rng.integers(len(FACILITY_TYPES)))]
            items.append(QAItem(
                question=render_question(facility, level, condition, criteria, top_j),
                level=level,
                conditional=condition is not None,
                gold_ids=tuple(ranking.ordering[:top_j]),
                gold_criteria=tuple(criteria_args),
            ))
            break
        else:
            raise BenchmarkError(f"item {index}: insufficient candidates after {MAX_ATTEMPTS} attempts")

    log(f"✅ 합성 QA {len(items)}개 생성 (seed={seed})")
    return items


# ----------------------------------------------------------------------
# 스크립트 벤치마크 정책
# ----------------------------------------------------------------------
def _last_success(state, tool):
    last = state.last_step
    if last is None or last.is_answer or last.tool != tool:
        return None
    return last.observation.payload if last.observation and last.observation.success else None


def _siting_rule(pick):
    """질의 → rank_master → 답. pick(ordering, top_j, state) 가 답 ID 를 고른다"""

    def rule(state):
        fields = parse_question(state.question)
        if not state.steps:
            query = candidate_query(fields["level"], fields["condition"])
            return [ActionCandidate("collect candidate sites", ToolInvocation("structured_query", {"query": query}))]

        payload = _last_success(state, "structured_query")
        if payload is not None:
            return [ActionCandidate(
                "aggregate the evaluation criteria with Borda count",
                ToolInvocation("rank_master", {"candidates": payload["ids"], "criteria": fields["criteria"]}),
            )]

        payload = _last_success(state, "rank_master")
        if payload is not None:
            chosen = pick(payload["ordering"], fields["top_j"], state)
            return [ActionCandidate("report the ranked sites", FinalAnswer("ANSWER: " + ", ".join(chosen)))]
        return []

    return rule


def oracle_rule():
    return _siting_rule(lambda ordering, top_j, state: ordering[:top_j])


def degenerate_rule():
    """최하위 후보를 답하는 정책"""
    return _siting_rule(lambda ordering, top_j, state: list(reversed(ordering))[:top_j])


def random_rule():
    """상태 지문으로 시드한 무작위 후보"""

    def pick(ordering, top_j, state):
        rng = random.Random(int(state_fingerprint(state)[:16], 16))
        return rng.sample(sorted(ordering), min(top_j, len(ordering)))

    return _siting_rule(pick)


def scripted_benchmark_policy(kind):
    rules = {"oracle": oracle_rule, "degenerate": degenerate_rule, "random": random_rule}
    if kind not in rules:
        raise BenchmarkError(f"unknown scripted policy kind '{kind}'")
    return ScriptedPolicy(rule=rules[kind]())


# ----------------------------------------------------------------------
# 실행
# ----------------------------------------------------------------------
@dataclass
class PlannerBundle:
    toolbox: object
    policy: object
    config: SearchConfig = field(default_factory=SearchConfig)
    evaluator: object = None          # None 이면 정답 기반 ScriptedEvaluator
    planner: str = "mcts"
    few_shot_dir: str = None


def _run_item(index, item, bundle, evaluator, trace_dir):
    state = build_initial_state(item.question, bundle.toolbox.graph, few_shot_dir=bundle.few_shot_dir)
    planner = MCTSPlanner(state, bundle.policy, evaluator, bundle.toolbox, bundle.config)
    execute = {"mcts": planner.search, "react": planner.rollout, "cot": planner.planned_rollout}[bundle.planner]
    trajectory = execute()
    if trace_dir:
        planner.export_trace(os.path.join(trace_dir, f"item_{index:04d}.json"), trajectory)
    ids = parse_answer_ids(trajectory.answer)
    return ids, planner.iterations


def run_benchmark(items, bundle, jobs=1, trace_dir=None):
    """항목별 탐색 → 답 ID 추출 → site_metrics. 파싱 불가 답은 빈 예측으로 처리"""
    if bundle.planner not in PLANNERS:
        raise BenchmarkError(f"unknown planner '{bundle.planner}'")
    evaluator = bundle.evaluator or ScriptedEvaluator(gold={item.question: item.gold_ids for item in items})
    flags = ProcessingResults("벤치마크")

    def run(pair):
        index, item = pair
        return _run_item(index, item, bundle, evaluator, trace_dir)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as executor:
        outcomes = list(executor.map(run, enumerate(items)))

    predicted = []
    for index, (ids, _) in enumerate(outcomes):
        if ids is None:
            flags.add_warning(f"item {index}: answer unparsable or missing")
            ids = []
        predicted.append(ids)

    report = site_metrics(predicted, [item.gold_ids for item in items])
    report.planner = bundle.planner
    for index, (record, item, (ids, iterations)) in enumerate(zip(report.items, items, outcomes)):
        record.update({
            "index": index,
            "question": item.question,
            "level": item.level,
            "conditional": item.conditional,
            "iterations": iterations,
            "flagged": ids is None,
        })
        flags.add_count("items")

    log(flags.get_summary())
    return report


# ----------------------------------------------------------------------
# 리포트 출력
# ----------------------------------------------------------------------
def report_json(report):
    return json.dumps(report.to_dict(), ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def render_report_text(report):
    summary = pd.DataFrame(
        [[report.accuracy, report.precision, report.recall, report.f1]],
        columns=["accuracy", "precision", "recall", "f1"],
    )
    lines = [summary.to_string(index=False, float_format=lambda v: f"{v:.4f}")]
    if report.planner:
        lines.insert(0, f"planner: {report.planner}")
    if report.items:
        frame = pd.DataFrame([
            {
                "index": r["index"] if "index" in r else i,
                "level": r.get("level", ""),
                "predicted": ", ".join(r["predicted"]),
                "gold": ", ".join(r["gold"]),
                "f1": r["f1"],
                "exact": r["exact"],
            }
            for i, r in enumerate(report.items)
        ])
        lines.append("")
        lines.append(frame.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    else:
        lines.append("0 items")
    return "\n".join(lines)


def save_report(report, path):
    return write_json(path, report.to_dict())


def export_report_excel(report, path):
    """요약 시트 + 항목 시트 xlsx. 질문과 답/정답 ID 목록은 텍스트 셀"""
    summary = pd.DataFrame([{
        "planner": report.planner or "",
        "accuracy": report.accuracy,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "items": len(report.items),
    }])
    frame = pd.DataFrame([
        {**{k: v for k, v in r.items() if k not in ("predicted", "gold")},
         "predicted": ", ".join(r["predicted"]), "gold": ", ".join(r["gold"])}
        for r in report.items
    ])

    with pd.ExcelWriter(path, engine='openpyxl') as writer:
        summary.to_excel(writer, sheet_name="summary", index=False)
        frame.to_excel(writer, sheet_name="items", index=False)
        sheet = writer.sheets["items"]
        for col_idx, column in enumerate(frame.columns, start=1):
            if column not in EXCEL_TEXT_COLUMNS:
                continue
            for (cell,) in sheet.iter_rows(min_row=2, min_col=col_idx, max_col=col_idx):
                cell.number_format = '@'
    log(f"📄 Excel 리포트 저장: {path}")
    return path
