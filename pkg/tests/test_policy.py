# -*- coding: utf-8 -*-
import pytest
import requests

from policy import (
    REWARD_FAILED_STEP,
    REWARD_GROUNDED_ANSWER,
    REWARD_PRODUCTIVE_STEP,
    ActionCandidate,
    AgentState,
    EvaluationRequest,
    FinalAnswer,
    PolicyError,
    PolicyRequest,
    RemoteEvaluator,
    RemotePolicy,
    ScriptedEvaluator,
    ScriptedPolicy,
    Step,
    build_initial_state,
    diversifying_rule,
    external_feedback,
    parse_answer_ids,
    parse_assignment,
    parse_candidates,
    render_prompt,
    state_fingerprint,
    task_family,
)
from toolbox import Observation, ToolInvocation, export_manifest


def tool_step(tool, arguments, success=True, payload=None, error=None):
    observation = Observation(tool, success, "ok" if success else f"ERROR: {error}", payload or {}, error)
    return Step("thinking", ToolInvocation(tool, arguments), observation)


def answer_step(text):
    return Step("done", FinalAnswer(text))


def evaluate(evaluator, state):
    return evaluator.evaluate(EvaluationRequest("transcript", external_feedback(state), state=state))


class TestState:
    def test_same_tool_suffix(self):
        state = AgentState("q")
        for tool in ("geo_encode", "structured_query", "structured_query", "structured_query"):
            state = state.extend(tool_step(tool, {"n": state.depth}))
        assert state.same_tool_suffix() == 3
        assert state.extend(answer_step("ANSWER: x")).same_tool_suffix() == 0

    def test_fingerprint_depends_on_steps(self):
        base = AgentState("q")
        assert state_fingerprint(base) == state_fingerprint(AgentState("q", task="other task"))
        assert state_fingerprint(base) != state_fingerprint(base.extend(answer_step("ANSWER: a")))

    @pytest.mark.parametrize("question, family", [
        ("Where should a new hospital be located among the industrial parks?", "site_recommendation"),
        ("Where should a new bank be located?\nCondition: g.park_id = 'park_001'", "conditional_siting"),
        ("Assign a function to grid g_01_02", "function_planning"),
    ])
    def test_task_family(self, question, family):
        assert task_family(question) == family


class TestPrompt:
    def test_transcript_extends_previous_render(self, tiny_graph):
        manifest = export_manifest()
        state = build_initial_state("Where should a new school be located?", tiny_graph)
        first = render_prompt(state, manifest)
        second_state = state.extend(tool_step("structured_query", {"query": "MATCH (p:Park) RETURN p.id"}))
        second = render_prompt(second_state, manifest)
        third = render_prompt(second_state.extend(answer_step("ANSWER: park_a")), manifest)
        assert second.startswith(first)
        assert third.startswith(second)
        assert "### Transcript" not in first
        assert render_prompt(second_state, manifest) == second

    def test_sections_and_schema(self, tiny_graph):
        state = build_initial_state("Assign a function to grid g_00_00", tiny_graph)
        text = render_prompt(state, export_manifest())
        for heading in ("### Question", "### Task", "### Graph schema", "### Tools", "### Examples"):
            assert heading in text
        assert "IndustrialPark (2)" in text
        assert "ASSIGN:" in state.task

    def test_observation_truncated(self):
        long_obs = Observation("structured_query", True, "x" * 500, {})
        state = AgentState("q").extend(Step("t", ToolInvocation("structured_query", {"query": "q"}), long_obs))
        text = render_prompt(state, export_manifest(), observation_cap=50)
        assert "x" * 47 + "..." in text
        assert "x" * 48 not in text


class TestScriptedPolicy:
    def test_fingerprint_lookup_before_rule(self):
        state = AgentState("q")
        scripted = [ActionCandidate("a", FinalAnswer("ANSWER: a"))]
        policy = ScriptedPolicy({state_fingerprint(state): scripted}, rule=lambda s: [])
        assert policy.propose(PolicyRequest("t", [], 2, state=state)) == scripted

    def test_truncates_to_k(self):
        candidates = [ActionCandidate(str(i), FinalAnswer(f"ANSWER: {i}")) for i in range(5)]
        policy = ScriptedPolicy(rule=lambda s: candidates)
        assert len(policy.propose(PolicyRequest("t", [], 2, state=AgentState("q")))) == 2

    @pytest.mark.parametrize("k, temperature", [(0, 0.0), (1, -0.1)])
    def test_request_validation(self, k, temperature):
        with pytest.raises(ValueError):
            PolicyRequest("t", [], k, temperature)

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="proposal mode"):
            PolicyRequest("t", [], 1, mode="tree")

    def test_plan_mode_unrolls_rule_without_observations(self):
        seen = []

        def rule(state):
            seen.append(state)
            if state.depth < 2:
                return [ActionCandidate(f"q{state.depth}", ToolInvocation("structured_query", {"query": "x"}, 0))]
            return [ActionCandidate("done", FinalAnswer("ANSWER: a"))]

        plan = ScriptedPolicy(rule=rule).propose(PolicyRequest("t", [], 5, state=AgentState("q"), mode="plan"))
        assert [c.thought for c in plan] == ["q0", "q1", "done"]
        assert all(step.observation is None for state in seen for step in state.steps)

    def test_plan_mode_stops_at_k(self):
        query = ActionCandidate("q", ToolInvocation("structured_query", {"query": "x"}))
        plan = ScriptedPolicy(rule=lambda s: [query]).propose(PolicyRequest("t", [], 3, state=AgentState("q"),
                                                                            mode="plan"))
        assert len(plan) == 3

    def test_diversifying_rule(self):
        rule = diversifying_rule(["Residential", "Green Space", "Traffic"])
        state = AgentState("Assign a function to grid g_00_01")
        first = rule(state)[0]
        assert first.action.tool == "function_planner"
        assert first.action.arguments == {"grid": "g_00_01"}

        payload = {"row": 0, "col": 1, "neighbor_functions": {"Green Space": 2, "Traffic": 0, "Residential": 1}}
        state = state.extend(Step("t", first.action, Observation("function_planner", True, "ok", payload)))
        assert rule(state)[0].action.text == "ASSIGN: Traffic"


class TestScriptedEvaluator:
    def test_gold_match_and_miss(self):
        state = AgentState("q").extend(answer_step("ANSWER: park_b, park_a"))
        assert evaluate(ScriptedEvaluator({"q": ["park_a", "park_b"]}), state).reward == 1.0
        assert evaluate(ScriptedEvaluator({"q": ["park_a"]}), state).reward == 0.0

    def test_grounded_answer_without_gold(self):
        state = AgentState("q").extend(
            tool_step("structured_query", {"query": "x"}, payload={"ids": ["park_a"], "rows": [["park_a"]]})
        )
        grounded = evaluate(ScriptedEvaluator(), state.extend(answer_step("ANSWER: park_a")))
        assert grounded.reward == REWARD_GROUNDED_ANSWER
        invented = evaluate(ScriptedEvaluator(), state.extend(answer_step("ANSWER: park_z")))
        assert invented.reward == 0.0

    def test_tool_steps(self):
        state = AgentState("q").extend(tool_step("structured_query", {"query": "a"}, payload={"rows": [[1]]}))
        assert evaluate(ScriptedEvaluator(), state).reward == REWARD_PRODUCTIVE_STEP
        repeated = state.extend(tool_step("structured_query", {"query": "a"}, payload={"rows": [[1]]}))
        assert evaluate(ScriptedEvaluator(), repeated).reward == 0.0
        empty = state.extend(tool_step("structured_query", {"query": "b"}, payload={"rows": []}))
        assert evaluate(ScriptedEvaluator(), empty).reward == 0.0
        failed = state.extend(tool_step("geo_encode", {"address": "x"}, success=False, error="unknown address"))
        assert evaluate(ScriptedEvaluator(), failed).reward == REWARD_FAILED_STEP

    def test_empty_transcript_rejected(self):
        with pytest.raises(ValueError):
            EvaluationRequest("", [])


class TestParsing:
    @pytest.mark.parametrize("text, expected", [
        ("ANSWER: park_001", ["park_001"]),
        ("Thought...\nanswer: 'g_01_02', g_03_04\nmore text", ["g_01_02", "g_03_04"]),
        ("ANSWER: a, a, b", ["a", "b"]),
        ("no marker here", None),
    ])
    def test_answer_ids(self, text, expected):
        assert parse_answer_ids(text) == expected

    def test_assignment(self):
        assert parse_assignment("ASSIGN: Green Space") == "Green Space"
        assert parse_assignment("nothing") is None

    def test_candidates_from_fenced_block(self):
        content = 'Sure.\n```json\n[{"thought": "t", "tool": "geo_decode", "arguments": {"grid": "g"}},' \
                  ' {"thought": "done", "answer": "ANSWER: g"}]\n```'
        candidates = parse_candidates(content, step=3)
        assert candidates[0].action == ToolInvocation("geo_decode", {"grid": "g"}, 3)
        assert candidates[1].action == FinalAnswer("ANSWER: g")

    @pytest.mark.parametrize("content", [
        "no block at all",
        "```json\n{not json}\n```",
        '```json\n[{"thought": "t"}]\n```',
        '```json\n[{"tool": "teleport"}]\n```',
    ])
    def test_malformed_replies(self, content):
        with pytest.raises(PolicyError):
            parse_candidates(content)


class TestRemote:
    def test_policy_reads_reply(self, monkeypatch):
        sent = {}

        def fake_post(url, payload, api_key, timeout, max_retries):
            sent.update(payload)
            return {"content": '```json\n[{"thought": "t", "answer": "ANSWER: park_a"}]\n```'}

        monkeypatch.setattr("policy.post_json_with_retry", fake_post)
        policy = RemotePolicy(url="http://llm.invalid")
        candidates = policy.propose(PolicyRequest("prompt", [], 1, 0.0, AgentState("q")))
        assert candidates[0].action.text == "ANSWER: park_a"
        assert sent["temperature"] == 0.0
        assert sent["messages"][-1]["content"] == "prompt"

    def test_plan_mode_asks_for_whole_plan(self, monkeypatch):
        sent = {}

        def fake_post(url, payload, api_key, timeout, max_retries):
            sent.update(payload)
            return {"content": '```json\n[{"thought": "a", "tool": "structured_query", "arguments": {"query": "x"}},'
                               ' {"thought": "b", "tool": "rank_master", "arguments": {}}]\n```'}

        monkeypatch.setattr("policy.post_json_with_retry", fake_post)
        plan = RemotePolicy(url="http://llm.invalid").propose(
            PolicyRequest("prompt", [], 5, state=AgentState("q"), mode="plan"))
        assert [c.action.tool for c in plan] == ["structured_query", "rank_master"]
        assert "complete plan" in sent["messages"][0]["content"]
        assert "at most 5 actions" in sent["messages"][0]["content"]

    def test_malformed_reply_is_policy_error(self, monkeypatch):
        monkeypatch.setattr("policy.post_json_with_retry", lambda *a, **k: {"text": "hi"})
        with pytest.raises(PolicyError):
            RemotePolicy(url="http://llm.invalid").propose(PolicyRequest("p", [], 1, state=AgentState("q")))

    def test_transport_error_is_policy_error(self, monkeypatch):
        def fail(*args, **kwargs):
            raise requests.ConnectionError("refused")

        monkeypatch.setattr("policy.post_json_with_retry", fail)
        with pytest.raises(PolicyError, match="refused"):
            RemotePolicy(url="http://llm.invalid").propose(PolicyRequest("p", [], 1, state=AgentState("q")))

    def test_evaluator_clamps_reward(self, monkeypatch):
        monkeypatch.setattr(
            "policy.post_json_with_retry",
            lambda *a, **k: {"content": '```json\n{"reward": 1.7, "rationale": "great"}\n```'},
        )
        evaluation = RemoteEvaluator(url="http://llm.invalid").evaluate(EvaluationRequest("t", []))
        assert evaluation.reward == 1.0
        assert "clamped" in evaluation.rationale

    def test_missing_endpoint(self, monkeypatch):
        monkeypatch.delenv("SCOPEKG_LLM_URL", raising=False)
        with pytest.raises(PolicyError, match="SCOPEKG_LLM_URL"):
            RemotePolicy()
