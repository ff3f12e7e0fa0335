# -*- coding: utf-8 -*-
"""
행동 제안 정책(π)과 반성 평가기
- ScriptedPolicy / ScriptedEvaluator : 결정적 (테스트, 벤치마크)
- RemotePolicy / RemoteEvaluator     : HTTP 채팅 엔드포인트 연동
"""
import hashlib
import json
import os
import re
from dataclasses import dataclass, field

import requests

from common_utils import log, post_json_with_retry
from graph_store import ENTITY_KINDS, RELATIONS
from toolbox import TOOL_NAMES, Observation, ToolInvocation

ASSETS_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "assets")
DEFAULT_FEW_SHOT_DIR = os.path.join(ASSETS_DIR, "few_shot")

TASK_FAMILIES = ("site_recommendation", "conditional_siting", "function_planning")
TASK_DESCRIPTIONS = {
    "site_recommendation": (
        "Recommend the best sites for the requested facility. Use structured_query to collect "
        "candidates, rank_master to aggregate the evaluation criteria, then reply with "
        "'ANSWER: <id>[, <id>...]'."
    ),
    "conditional_siting": (
        "Recommend the best sites that satisfy the stated condition. Filter candidates with "
        "structured_query, rank them with rank_master, then reply with 'ANSWER: <id>[, <id>...]'."
    ),
    "function_planning": (
        "Propose a function for the grid. Inspect it with function_planner and reply with "
        "'ASSIGN: <function>' using one of the 15 function types."
    ),
}

DEFAULT_QUERY_TEMPERATURE = 0.0
DEFAULT_ANSWER_TEMPERATURE = 0.7
DEFAULT_OBSERVATION_CAP = 2000
RUBRIC_ID = "siting-v1"
PROPOSAL_MODES = ("step", "plan")     # plan: 관측 없이 도구 계획 전체를 한 번에

REWARD_GOLD = 1.0
REWARD_GROUNDED_ANSWER = 0.8
REWARD_PRODUCTIVE_STEP = 0.5
REWARD_FAILED_STEP = 0.1

_ANSWER_RE = re.compile(r"ANSWER:\s*(.*)", re.IGNORECASE)
_ASSIGN_RE = re.compile(r"ASSIGN:\s*(.+)", re.IGNORECASE)
_FENCED_JSON_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


class PolicyError(Exception):
    """정책/평가기 실패 (전송 오류, 형식 오류)"""


# ----------------------------------------------------------------------
# 상태 / 요청 타입
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class FinalAnswer:
    text: str


@dataclass(frozen=True)
class ActionCandidate:
    thought: str
    action: object      # ToolInvocation | FinalAnswer

    def __post_init__(self):
        if not isinstance(self.action, (ToolInvocation, FinalAnswer)):
            raise TypeError("action must be a ToolInvocation or a FinalAnswer")

    @property
    def is_answer(self):
        return isinstance(self.action, FinalAnswer)

    def key(self):
        if self.is_answer:
            return json.dumps(["ANSWER", self.action.text])
        return self.action.key()


@dataclass(frozen=True)
class Step:
    thought: str
    action: object
    observation: Observation = None

    @property
    def is_answer(self):
        return isinstance(self.action, FinalAnswer)

    @property
    def tool(self):
        return None if self.is_answer else self.action.tool

    def to_dict(self):
        if self.is_answer:
            action = {"answer": self.action.text}
        else:
            action = {"tool": self.action.tool, "arguments": self.action.arguments}
        return {
            "thought": self.thought,
            "action": action,
            "observation": self.observation.to_dict() if self.observation else None,
        }


@dataclass(frozen=True)
class AgentState:
    question: str
    task: str = ""
    schema: str = ""
    few_shot: str = ""
    steps: tuple = ()

    def extend(self, step):
        return AgentState(self.question, self.task, self.schema, self.few_shot, self.steps + (step,))

    @property
    def depth(self):
        return len(self.steps)

    @property
    def last_step(self):
        return self.steps[-1] if self.steps else None

    @property
    def answer(self):
        last = self.last_step
        return last.action.text if last is not None and last.is_answer else None

    def same_tool_suffix(self):
        """끝에서부터 연속된 같은 도구 사용 횟수"""
        if not self.steps or self.steps[-1].is_answer:
            return 0
        tool = self.steps[-1].tool
        count = 0
        for step in reversed(self.steps):
            if step.tool != tool:
                break
            count += 1
        return count


@dataclass
class PolicyRequest:
    transcript: str
    manifest: list
    k: int
    temperature: float = DEFAULT_QUERY_TEMPERATURE
    state: AgentState = None
    mode: str = "step"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.mode not in PROPOSAL_MODES:
            raise ValueError(f"unknown proposal mode: {self.mode}")


@dataclass
class EvaluationRequest:
    transcript: str
    feedback: list
    rubric: str = RUBRIC_ID
    temperature: float = DEFAULT_ANSWER_TEMPERATURE
    state: AgentState = None
    memory: list = field(default_factory=list)

    def __post_init__(self):
        if not self.transcript:
            raise ValueError("evaluation transcript must be non-empty")


@dataclass(frozen=True)
class Evaluation:
    reward: float
    rationale: str


# ----------------------------------------------------------------------
# 프롬프트
# ----------------------------------------------------------------------
def schema_summary(graph):
    """엔티티 종류, 관계, 속성 레지스트리 요약"""
    counts = graph.kinds()
    lines = ["Entity kinds: " + ", ".join(f"{kind} ({counts.get(kind, 0)})" for kind in ENTITY_KINDS)]
    lines.append("Relations: " + ", ".join(RELATIONS))
    lines.append("Attributes: " + ", ".join(sorted(graph.attribute_names())))
    return "\n".join(lines)


def task_family(question):
    text = question.lower()
    if "assign a function" in text or "function plan" in text:
        return "function_planning"
    if "condition:" in text:
        return "conditional_siting"
    return "site_recommendation"


def load_few_shot(family, few_shot_dir=None):
    path = os.path.join(few_shot_dir or DEFAULT_FEW_SHOT_DIR, f"{family}.txt")
    if not os.path.exists(path):
        log(f"⚠️ few-shot 예시 없음: {path}")
        return ""
    with open(path, 'r', encoding='utf-8') as f:
        return f.read().strip()


def build_initial_state(question, graph, family=None, few_shot_dir=None):
    """질문 + 과업 설명 + 스키마 + few-shot 을 담은 루트 상태"""
    family = family or task_family(question)
    return AgentState(
        question=question,
        task=TASK_DESCRIPTIONS[family],
        schema=schema_summary(graph),
        few_shot=load_few_shot(family, few_shot_dir),
    )


def _render_action(action):
    if isinstance(action, FinalAnswer):
        return action.text
    return f"{action.tool}({json.dumps(action.arguments, sort_keys=True, ensure_ascii=False)})"


def _truncate(text, cap):
    return text if len(text) <= cap else text[:max(cap - 3, 0)] + "..."


def render_prompt(state, manifest, observation_cap=DEFAULT_OBSERVATION_CAP):
    """결정적 프롬프트. 단계가 늘어나면 이전 렌더링 뒤에 이어 붙는다"""
    tools = "\n".join(
        f"- {tool['name']}({', '.join(tool['arguments'])}): {tool['description']}" for tool in manifest
    )
    parts = [
        f"### Question\n{state.question}\n",
        f"### Task\n{state.task}\n",
        f"### Graph schema\n{state.schema}\n",
        f"### Tools\n{tools}\n",
        f"### Examples\n{state.few_shot}\n",
    ]
    if state.steps:
        parts.append("### Transcript\n")
        for index, step in enumerate(state.steps, start=1):
            block = f"Step {index}\nThought: {step.thought}\nAction: {_render_action(step.action)}\n"
            if step.observation is not None:
                block += f"Observation: {_truncate(step.observation.summary, observation_cap)}\n"
            parts.append(block)
    return "\n".join(parts)


def state_fingerprint(state):
    """질문 + 단계 기록의 SHA-256"""
    canonical = json.dumps(
        {"question": state.question, "steps": [step.to_dict() for step in state.steps]},
        sort_keys=True, ensure_ascii=False,
    )
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def external_feedback(state):
    """단계별 성공 여부 / 결과 크기"""
    feedback = []
    for index, step in enumerate(state.steps, start=1):
        if step.is_answer:
            feedback.append({"step": index, "tool": None, "answer": True})
            continue
        obs = step.observation
        feedback.append({
            "step": index,
            "tool": step.tool,
            "success": bool(obs and obs.success),
            "result_size": obs.result_size if obs else 0,
        })
    return feedback


def parse_answer_ids(text):
    """'ANSWER: id1, id2' → ['id1', 'id2']. 표식이 없으면 None"""
    if text is None:
        return None
    match = _ANSWER_RE.search(text)
    if match is None:
        return None
    ids = [part.strip().strip("'\"") for part in match.group(1).splitlines()[0].split(",")] if match.group(1) else []
    return list(dict.fromkeys(i for i in ids if i))


def parse_assignment(text):
    """'ASSIGN: Green Space' → 'Green Space'"""
    match = _ASSIGN_RE.search(text or "")
    return match.group(1).strip() if match else None


# ----------------------------------------------------------------------
# 스크립트 정책 / 평가기
# ----------------------------------------------------------------------
class ScriptedPolicy:
    """상태 지문(fingerprint) → 후보 목록 조회표 + 결정적 규칙"""

    def __init__(self, script=None, rule=None):
        self.script = dict(script or {})
        self.rule = rule

    def propose(self, request):
        state = request.state
        if state is None:
            raise PolicyError("scripted policy needs the agent state")
        if request.mode == "plan":
            return self._plan(state, request.k)
        return self._candidates(state)[:request.k]

    def _candidates(self, state):
        fingerprint = state_fingerprint(state)
        if fingerprint in self.script:
            return list(self.script[fingerprint])
        if self.rule is not None:
            return list(self.rule(state))
        return []

    def _plan(self, state, k):
        """관측 없는 상태로 첫 후보를 k개까지 이어 붙인 도구 계획"""
        plan = []
        while len(plan) < k:
            candidates = self._candidates(state)
            if not candidates:
                break
            candidate = candidates[0]
            plan.append(candidate)
            if candidate.is_answer:
                break
            state = state.extend(Step(candidate.thought, candidate.action))
        return plan


def _grounded(ids, state):
    """답의 ID가 이전 관측 payload 에 등장했는지"""
    seen = " ".join(
        json.dumps(step.observation.payload, ensure_ascii=False)
        for step in state.steps if step.observation is not None and step.observation.success
    )
    return all(f'"{i}"' in seen for i in ids)


class ScriptedEvaluator:
    """루브릭 siting-v1
    - 최종 답 = 정답 집합 → 1.0, 오답 → 0.0
    - 정답 미지정: 관측에 근거한 비어 있지 않은 답 → 0.8
    - 마지막 도구 호출 실패 → 0.1
    - 성공 + 비어 있지 않은 + 처음 보는 도구 호출 → 0.5
    - 그 외 0
    """

    def __init__(self, gold=None):
        # gold: 질문 → 정답 ID 집합, 또는 하나의 정답 집합
        self.gold = gold

    def _gold_for(self, question):
        if self.gold is None:
            return None
        if isinstance(self.gold, dict):
            found = self.gold.get(question)
            return set(found) if found is not None else None
        return set(self.gold)

    def evaluate(self, request):
        state = request.state
        if state is None or not state.steps:
            return Evaluation(0.0, "empty trajectory")
        last = state.last_step

        if last.is_answer:
            ids = parse_answer_ids(last.action.text)
            if not ids:
                return Evaluation(0.0, "answer has no parsable ids")
            gold = self._gold_for(state.question)
            if gold is not None:
                if set(ids) == gold:
                    return Evaluation(REWARD_GOLD, "answer matches the gold set")
                return Evaluation(0.0, "answer differs from the gold set")
            if _grounded(ids, state):
                return Evaluation(REWARD_GROUNDED_ANSWER, "answer grounded in tool observations")
            return Evaluation(0.0, "answer not grounded in any observation")

        obs = last.observation
        if obs is None or not obs.success:
            detail = obs.error if obs is not None else "no observation"
            return Evaluation(REWARD_FAILED_STEP, f"tool step failed: {detail}")

        earlier = {step.action.key() for step in state.steps[:-1] if not step.is_answer}
        if last.action.key() in earlier:
            return Evaluation(0.0, "repeated tool call")
        if obs.result_size == 0:
            return Evaluation(0.0, "tool returned an empty result")
        return Evaluation(REWARD_PRODUCTIVE_STEP, "productive tool step")


# ----------------------------------------------------------------------
# 원격 엔드포인트
# ----------------------------------------------------------------------
def _extract_json_block(content):
    match = _FENCED_JSON_RE.search(content or "")
    if match is None:
        raise PolicyError("reply has no fenced JSON block")
    try:
        return json.loads(match.group(1))
    except json.JSONDecodeError as e:
        raise PolicyError(f"reply JSON block is malformed: {e}") from None


def parse_candidates(content, step=0):
    """원격 응답 → ActionCandidate 목록. 형식 오류는 PolicyError"""
    data = _extract_json_block(content)
    if isinstance(data, dict):
        data = data.get("candidates", [data])
    if not isinstance(data, list):
        raise PolicyError("candidate block must be a list")

    candidates = []
    for item in data:
        if not isinstance(item, dict):
            raise PolicyError("candidate must be an object")
        thought = str(item.get("thought", ""))
        if "answer" in item:
            candidates.append(ActionCandidate(thought, FinalAnswer(str(item["answer"]))))
            continue
        tool = item.get("tool")
        if not tool:
            raise PolicyError("candidate is missing the tool name")
        if tool not in TOOL_NAMES:
            raise PolicyError(f"candidate names unknown tool '{tool}'")
        arguments = item.get("arguments", {})
        if not isinstance(arguments, dict):
            raise PolicyError("candidate arguments must be an object")
        candidates.append(ActionCandidate(thought, ToolInvocation(tool, arguments, step)))
    return candidates


class _ChatEndpoint:
    def __init__(self, url=None, api_key=None, timeout=60, max_retries=3):
        self.url = url or os.getenv('SCOPEKG_LLM_URL')
        self.api_key = api_key or os.getenv('SCOPEKG_LLM_KEY')
        self.timeout = timeout
        self.max_retries = max_retries
        if not self.url:
            raise PolicyError("SCOPEKG_LLM_URL is not set")

    def chat(self, messages, temperature):
        try:
            reply = post_json_with_retry(
                self.url, {"messages": messages, "temperature": temperature},
                self.api_key, self.timeout, self.max_retries,
            )
        except (requests.RequestException, ValueError) as e:
            raise PolicyError(f"chat endpoint failed: {e}") from None
        content = reply.get("content") if isinstance(reply, dict) else None
        if not isinstance(content, str):
            raise PolicyError("chat endpoint reply has no 'content' text")
        return content


class RemotePolicy(_ChatEndpoint):
    """원격 채팅 정책: 응답의 ```json 블록에서 후보 파싱"""

    def propose(self, request):
        if request.mode == "plan":
            ask = (
                f"Write the complete plan for the industrial park planning agent as an ordered list of at most "
                f"{request.k} actions. Tool results are shown only after the whole plan has run. "
            )
        else:
            ask = f"Propose up to {request.k} next actions for the industrial park planning agent. "
        system = ask + (
            "Reply with one fenced ```json block holding a list of objects, each either "
            '{"thought": ..., "tool": <tool name>, "arguments": {...}} or {"thought": ..., "answer": "ANSWER: ..."}.'
        )
        messages = [{"role": "system", "content": system}, {"role": "user", "content": request.transcript}]
        content = self.chat(messages, request.temperature)
        step = request.state.depth if request.state is not None else 0
        return parse_candidates(content, step)[:request.k]


class RemoteEvaluator(_ChatEndpoint):
    """원격 채팅 평가기: 보상은 [0, 1]로 보정"""

    def evaluate(self, request):
        system = (
            f"Score the trajectory with rubric {request.rubric}. Consider the whole transcript and the "
            'external feedback. Reply with a fenced ```json block {"reward": <0..1>, "rationale": "..."}.'
        )
        user = (
            f"{request.transcript}\n\n### External feedback\n"
            f"{json.dumps(request.feedback, sort_keys=True, ensure_ascii=False)}"
        )
        messages = [{"role": "system", "content": system}, {"role": "user", "content": user}]
        data = _extract_json_block(self.chat(messages, request.temperature))
        if not isinstance(data, dict):
            raise PolicyError("evaluation reply must be an object")
        try:
            reward = float(data.get("reward"))
        except (TypeError, ValueError):
            raise PolicyError("evaluation reply has no numeric reward") from None

        rationale = str(data.get("rationale", ""))
        clamped = min(max(reward, 0.0), 1.0)
        if clamped != reward:
            log(f"⚠️ 평가 보상 {reward} → {clamped} 로 보정")
            rationale = f"{rationale} (warning: reward {reward} clamped to {clamped})".strip()
        return Evaluation(clamped, rationale)


# ----------------------------------------------------------------------
# 기능 계획용 스크립트 규칙
# ----------------------------------------------------------------------
def diversifying_rule(taxonomy):
    """인접 격자에서 가장 드문 기능을 배정 (동률은 격자 위치로 회전)"""
    taxonomy = tuple(taxonomy)

    def rule(state):
        context = None
        for step in reversed(state.steps):
            obs = step.observation
            if obs is not None and obs.success and obs.tool == "function_planner":
                context = obs.payload
                break
        if context is None:
            grid = state.question.rsplit(" ", 1)[-1].strip(" ?.")
            return [ActionCandidate("inspect the grid first", ToolInvocation("function_planner", {"grid": grid}, state.depth))]

        histogram = context.get("neighbor_functions", {})
        offset = (context["row"] * 3 + context["col"]) % len(taxonomy)
        rotated = taxonomy[offset:] + taxonomy[:offset]
        choice = min(rotated, key=lambda label: histogram.get(label, 0))
        return [ActionCandidate(
            f"least represented function among neighbors is {choice}",
            FinalAnswer(f"ASSIGN: {choice}"),
        )]

    return rule
