# -*- coding: utf-8 -*-
"""
산업단지 계획/운영 의사결정 엔진 - 메인 실행 파일

    python main.py gen data/ --seed 7
    python main.py build data/ kg.jsonl
    python main.py query kg.jsonl "MATCH (p:Park) RETURN p.name"
    python main.py recommend kg.jsonl "<question>" --gazetteer data/gazetteer.csv
    python main.py plan kg.jsonl park_001
    python main.py bench kg.jsonl --generate 100 --seed 7

종료 코드: 0 성공, 1 설정/입출력, 2 입력/파싱, 3 답 없음
"""
import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, fields

import pandas as pd

from benchmark import (
    PLANNERS,
    POLICY_KINDS,
    BenchmarkError,
    PlannerBundle,
    diversity_profile,
    export_report_excel,
    generate_benchmark,
    load_dataset,
    render_report_text,
    report_json,
    run_benchmark,
    save_dataset,
    scripted_benchmark_policy,
)
from common_utils import ConfigError, get_output_dir, log, write_json
from graph_store import GraphError, PropertyGraph
from kg_builder import (
    DEFAULT_REGISTRY_PATH,
    FUNCTION_TYPES,
    IngestError,
    RegistryError,
    build_knowledge_graph,
    load_overrides,
    load_registry,
    load_tables,
)
from planner import MCTSPlanner, SearchConfig
from policy import (
    DEFAULT_QUERY_TEMPERATURE,
    PolicyRequest,
    RemoteEvaluator,
    RemotePolicy,
    ScriptedEvaluator,
    ScriptedPolicy,
    Step,
    build_initial_state,
    diversifying_rule,
    parse_assignment,
    render_prompt,
)
from query_lang import QueryError, evaluate, parse
from synthetic_data import synthesize_tables, write_tables
from toolbox import Gazetteer, HashEmbeddingProvider, RemoteEmbeddingProvider, Toolbox, export_manifest

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_ANSWERLESS = 0, 1, 2, 3
BANNER = "=" * 60


@dataclass
class RunConfig:
    graph: str = None
    gazetteer: str = None
    registry: str = None
    overrides: str = None
    few_shot_dir: str = None
    omega: float = 1.0
    decay: float = 0.95
    branching: int = 2
    max_depth: int = 5
    iteration_limit: int = 50
    same_tool_cap: int = 4
    policy_mode: str = "scripted"
    output_dir: str = None
    format: str = "table"
    llm_timeout: int = 60
    llm_retries: int = 3
    summary_cap: int = 2000
    similarity_threshold: float = 0.95
    correlation_threshold: float = 0.9
    neighborhood: int = 8
    top_j: int = 1

    def search_config(self):
        try:
            return SearchConfig(
                omega=self.omega, decay=self.decay, branching=self.branching, max_depth=self.max_depth,
                iteration_limit=self.iteration_limit, same_tool_cap=self.same_tool_cap,
                observation_cap=self.summary_cap,
            )
        except ValueError as e:
            raise ConfigError(f"invalid search parameters: {e}") from None

    def validate(self):
        if self.policy_mode not in ("scripted", "remote"):
            raise ConfigError(f"policy_mode must be scripted or remote, got '{self.policy_mode}'")
        if self.format not in ("table", "json"):
            raise ConfigError(f"format must be table or json, got '{self.format}'")
        for name in ("gazetteer", "registry", "overrides", "few_shot_dir"):
            path = getattr(self, name)
            if path and not os.path.exists(path):
                raise ConfigError(f"{name} path does not exist: {path}")
        if self.policy_mode == "remote" and not os.getenv('SCOPEKG_LLM_URL'):
            raise ConfigError("policy_mode remote requires SCOPEKG_LLM_URL (and SCOPEKG_LLM_KEY)")
        self.search_config()
        return self


def load_run_config(path=None):
    """JSON 또는 TOML 설정 파일 → RunConfig (알 수 없는 키는 오류)"""
    if not path:
        return RunConfig()
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")

    try:
        if path.endswith(".toml"):
            import tomllib
            with open(path, 'rb') as f:
                data = tomllib.load(f)
        else:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
    except Exception as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None

    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be an object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown config key(s): {', '.join(unknown)}")
    return RunConfig(**data)


def resolve_config(args):
    config = load_run_config(args.config)
    if args.format:
        config.format = args.format
    for name in ("gazetteer", "registry", "overrides", "few_shot_dir"):
        value = getattr(args, name, None)
        if value:
            setattr(config, name, value)
    if getattr(args, "out", None):
        config.output_dir = args.out
    return config.validate()


# ----------------------------------------------------------------------
# 공통 구성 요소
# ----------------------------------------------------------------------
def emit(text):
    """명령 결과는 stdout"""
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def load_graph(path):
    if not path or not os.path.exists(path):
        raise ConfigError(f"graph file not found: {path}")
    graph = PropertyGraph.load(path)
    return graph.freeze()


def make_toolbox(graph, config):
    gazetteer = Gazetteer.from_csv(config.gazetteer) if config.gazetteer else Gazetteer()
    embed_url = os.getenv('SCOPEKG_EMBED_URL')
    if config.policy_mode == "remote" and embed_url:
        embedder = RemoteEmbeddingProvider(embed_url, os.getenv('SCOPEKG_LLM_KEY'), config.llm_timeout, config.llm_retries)
    else:
        embedder = HashEmbeddingProvider()
    registry = load_registry(config.registry) if config.registry else None
    return Toolbox(graph, gazetteer, embedder, config.summary_cap, registry)


def make_policy(config, scripted):
    if config.policy_mode == "remote":
        return RemotePolicy(timeout=config.llm_timeout, max_retries=config.llm_retries)
    return scripted


def make_evaluator(config, scripted):
    if config.policy_mode == "remote":
        return RemoteEvaluator(timeout=config.llm_timeout, max_retries=config.llm_retries)
    return scripted


def _trace_name(prefix, text):
    return f"{prefix}_{hashlib.sha256(text.encode('utf-8')).hexdigest()[:12]}.json"


# ----------------------------------------------------------------------
# 명령
# ----------------------------------------------------------------------
def cmd_build(args, config):
    log(BANNER)
    log("🏗️ 지식 그래프 구축")
    log(BANNER)
    try:
        tables = load_tables(args.tables)
    except FileNotFoundError as e:
        log(f"❌ {e}")
        return EXIT_CONFIG

    try:
        registry = load_registry(config.registry or DEFAULT_REGISTRY_PATH)
        overrides = load_overrides(config.overrides) if config.overrides else None
        graph, report = build_knowledge_graph(
            tables, registry, overrides, config.neighborhood,
            config.similarity_threshold, config.correlation_threshold,
        )
        graph.save(args.out_graph)
    except (IngestError, RegistryError, GraphError, ValueError, OSError) as e:
        log(f"❌ 구축 실패: {e}")
        return EXIT_CONFIG

    log(report.get_summary())
    output_dir = get_output_dir(config.output_dir)
    write_json(os.path.join(output_dir, "build_report.json"), report.to_dict())

    stats = graph.statistics()
    if config.format == "json":
        emit(json.dumps(stats, sort_keys=True))
    else:
        lines = [f"entities: {stats['entities']}"]
        lines += [f"  {kind}: {count}" for kind, count in stats["entities_by_kind"].items()]
        lines.append(f"triples: {stats['triples']}")
        lines += [f"  {relation}: {count}" for relation, count in stats["triples_by_relation"].items()]
        lines.append(f"attributes: {stats['attributes']}")
        lines.append(f"grids: {stats['grids']}")
        emit("\n".join(lines))
    log(f"✅ 그래프 저장: {args.out_graph}")
    return EXIT_OK


def cmd_query(args, config):
    graph = load_graph(args.graph or config.graph)
    try:
        table = evaluate(parse(args.query), graph)
    except QueryError as e:
        log(f"❌ {e}")
        return EXIT_INPUT

    if config.format == "json":
        emit(json.dumps(table.to_dict(), ensure_ascii=False, sort_keys=True))
    else:
        emit(table.to_text())
    return EXIT_OK


def _criteria_used(trajectory):
    for step in trajectory.leaf.state.steps:
        if not step.is_answer and step.tool == "rank_master":
            return list(step.action.arguments.get("criteria", []))
    return []


def cmd_recommend(args, config):
    graph = load_graph(args.graph or config.graph)
    toolbox = make_toolbox(graph, config)
    policy = make_policy(config, scripted_benchmark_policy(args.policy_kind))
    evaluator = make_evaluator(config, ScriptedEvaluator())

    log(BANNER)
    log("🔍 입지 추천 탐색")
    log(BANNER)
    state = build_initial_state(args.question, graph, few_shot_dir=config.few_shot_dir)
    planner = MCTSPlanner(state, policy, evaluator, toolbox, config.search_config())
    trajectory = planner.search()

    trace_path = os.path.join(get_output_dir(config.output_dir), _trace_name("recommend", args.question))
    planner.export_trace(trace_path, trajectory)
    log(f"📄 트레이스 저장: {trace_path}")

    result = {
        "answer": trajectory.answer,
        "criteria": _criteria_used(trajectory),
        "value": trajectory.value,
        "iterations": planner.iterations,
        "steps": [
            step.action.text if step.is_answer else f"{step.tool}: {'ok' if step.observation.success else 'failed'}"
            for step in trajectory.leaf.state.steps
        ],
        "trace": trace_path,
    }
    if config.format == "json":
        emit(json.dumps(result, ensure_ascii=False, sort_keys=True))
    else:
        lines = [f"answer: {result['answer'] or '(none)'}", "criteria: " + ", ".join(result["criteria"])]
        lines += [f"step {i}: {text}" for i, text in enumerate(result["steps"], start=1)]
        lines.append(f"value: {result['value']:.3f} after {result['iterations']} iterations")
        emit("\n".join(lines))

    if trajectory.answerless:
        log("⚠️ 답을 찾지 못했습니다")
        return EXIT_ANSWERLESS
    return EXIT_OK


def _assign_function(grid, graph, toolbox, policy, config):
    """기능 계획 컨텍스트 → 정책 배정. 배정 실패 시 현재 기능 유지"""
    state = build_initial_state(f"Assign a function to grid {grid}", graph, "function_planning", config.few_shot_dir)
    manifest = export_manifest()
    for _ in range(config.max_depth):
        request = PolicyRequest(
            render_prompt(state, manifest, config.summary_cap), manifest, 1, DEFAULT_QUERY_TEMPERATURE, state,
        )
        try:
            candidates = policy.propose(request)
        except Exception as e:
            log(f"❌ {grid}: 정책 실패 ({e})")
            break
        if not candidates:
            break
        candidate = candidates[0]
        if candidate.is_answer:
            label = parse_assignment(candidate.action.text)
            if label in FUNCTION_TYPES:
                return label
            log(f"⚠️ {grid}: 알 수 없는 기능 '{label}'")
            break
        observation = toolbox.invoke(candidate.action)
        state = state.extend(Step(candidate.thought, candidate.action, observation))
    return graph.attribute(grid, "dominant_function")


def cmd_plan(args, config):
    graph = load_graph(args.graph or config.graph)
    entity = graph.get_entity(args.park)
    if entity is None or entity.kind != "IndustrialPark":
        log(f"❌ unknown park '{args.park}'")
        return EXIT_INPUT

    toolbox = make_toolbox(graph, config)
    policy = make_policy(config, ScriptedPolicy(rule=diversifying_rule(FUNCTION_TYPES)))

    log(BANNER)
    log(f"🗺️ {args.park} 격자 기능 계획")
    log(BANNER)
    assignments = []
    for grid in graph.grids_of_park(args.park):
        cell = graph.grid_cell(grid)
        assignments.append({
            "grid": grid,
            "row": cell.row,
            "col": cell.col,
            "current": graph.attribute(grid, "dominant_function"),
            "proposed": _assign_function(grid, graph, toolbox, policy, config),
        })

    as_is = diversity_profile(graph, args.park, {a["grid"]: a["current"] for a in assignments})
    proposed = diversity_profile(graph, args.park, {a["grid"]: a["proposed"] for a in assignments})
    plan = {"park": args.park, "assignments": assignments, "as_is": as_is.to_dict(), "proposed": proposed.to_dict()}

    plan_path = os.path.join(get_output_dir(config.output_dir), f"plan_{args.park}.json")
    write_json(plan_path, plan)
    log(f"📄 계획 저장: {plan_path}")

    if config.format == "json":
        emit(json.dumps(plan, ensure_ascii=False, sort_keys=True))
    else:
        frame = pd.DataFrame(assignments, columns=["grid", "row", "col", "current", "proposed"])
        lines = [frame.to_string(index=False), ""]
        for name, profile in (("as-is", as_is), ("proposed", proposed)):
            lines.append(f"{name}: H0={profile.h0:.2f} H1={profile.h1:.2f} H2={profile.h2:.2f}")
        emit("\n".join(lines))
    return EXIT_OK


def cmd_bench(args, config):
    graph = load_graph(args.graph or config.graph)
    try:
        if args.generate is not None:
            registry = load_registry(config.registry or DEFAULT_REGISTRY_PATH)
            items = generate_benchmark(graph, args.generate, args.seed, registry, config.top_j)
            if args.save_dataset:
                save_dataset(items, args.save_dataset)
        elif args.dataset:
            items = load_dataset(args.dataset, graph)
        else:
            log("❌ bench needs a dataset file or --generate N")
            return EXIT_INPUT
    except (BenchmarkError, RegistryError) as e:
        log(f"❌ {e}")
        return EXIT_INPUT

    output_dir = get_output_dir(config.output_dir)
    bundle = PlannerBundle(
        toolbox=make_toolbox(graph, config),
        policy=make_policy(config, scripted_benchmark_policy(args.policy_kind)),
        config=config.search_config(),
        evaluator=make_evaluator(config, None),
        planner=args.planner,
        few_shot_dir=config.few_shot_dir,
    )

    log(BANNER)
    log(f"📊 벤치마크 실행: {len(items)}개 항목 ({args.planner}, {args.policy_kind})")
    log(BANNER)
    report = run_benchmark(items, bundle, args.jobs, os.path.join(output_dir, "traces"))

    report_path = args.report or os.path.join(output_dir, "bench_report.json")
    with open(report_path, 'w', encoding='utf-8') as f:
        f.write(report_json(report))
    log(f"📄 리포트 저장: {report_path}")
    if args.excel:
        export_report_excel(report, args.excel)

    emit(report_json(report) if config.format == "json" else render_report_text(report))
    return EXIT_OK


def cmd_gen(args, config):
    tables, gazetteer = synthesize_tables(args.seed, args.parks, args.rows, args.cols)
    write_tables(tables, gazetteer, args.out_dir)
    emit(json.dumps({
        "parks": len(tables.parks), "grids": len(tables.grids),
        "pois": len(tables.pois), "enterprises": len(tables.enterprises),
        "out_dir": args.out_dir,
    }, sort_keys=True))
    return EXIT_OK


# ----------------------------------------------------------------------
# 인자 파서
# ----------------------------------------------------------------------
def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or TOML run configuration")
    common.add_argument("--format", choices=("table", "json"), help="output format")
    common.add_argument("--seed", type=int, default=0, help="seed for every random choice")
    common.add_argument("--jobs", type=int, default=1, help="parallel benchmark items")
    common.add_argument("--out", help="output directory for traces and reports")

    parser = argparse.ArgumentParser(prog="scopekg", description="Industrial park planning decision engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", parents=[common], help="build the knowledge graph from raw tables")
    p.add_argument("tables")
    p.add_argument("out_graph")
    p.add_argument("--registry")
    p.add_argument("--overrides")
    p.set_defaults(handler=cmd_build)

    p = sub.add_parser("query", parents=[common], help="run a graph query")
    p.add_argument("graph")
    p.add_argument("query")
    p.set_defaults(handler=cmd_query)

    p = sub.add_parser("recommend", parents=[common], help="site recommendation via tree search")
    p.add_argument("graph")
    p.add_argument("question")
    p.add_argument("--gazetteer")
    p.add_argument("--few-shot-dir", dest="few_shot_dir")
    p.add_argument("--policy-kind", choices=POLICY_KINDS, default="oracle")
    p.set_defaults(handler=cmd_recommend)

    p = sub.add_parser("plan", parents=[common], help="functional plan for every grid of a park")
    p.add_argument("graph")
    p.add_argument("park")
    p.add_argument("--gazetteer")
    p.set_defaults(handler=cmd_plan)

    p = sub.add_parser("bench", parents=[common], help="run the QA benchmark")
    p.add_argument("graph")
    p.add_argument("dataset", nargs="?")
    p.add_argument("--generate", type=int, metavar="N")
    p.add_argument("--save-dataset", dest="save_dataset")
    p.add_argument("--registry")
    p.add_argument("--gazetteer")
    p.add_argument("--policy-kind", choices=POLICY_KINDS, default="oracle")
    p.add_argument("--planner", choices=PLANNERS, default="mcts")
    p.add_argument("--report")
    p.add_argument("--excel")
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("gen", parents=[common], help="write seeded synthetic raw tables")
    p.add_argument("out_dir")
    p.add_argument("--parks", type=int, default=5)
    p.add_argument("--rows", type=int, default=20)
    p.add_argument("--cols", type=int, default=20)
    p.set_defaults(handler=cmd_gen)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        return args.handler(args, config)
    except ConfigError as e:
        log(f"❌ 설정 오류: {e}")
        return EXIT_CONFIG
    except (GraphError, OSError) as e:
        log(f"❌ 입출력 오류: {e}")
        return EXIT_CONFIG
    except (QueryError, BenchmarkError) as e:
        log(f"❌ 입력 오류: {e}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
