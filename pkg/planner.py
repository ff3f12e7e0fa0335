# -*- coding: utf-8 -*-
"""
MCTS 기반 도구 오케스트레이션
- 선택: 감쇠 탐색항을 가진 UCT (ω·d^N·sqrt(2 ln N(p) / N))
- 확장: 정책이 제안한 k개 행동을 병렬 실행, 장기 메모리에 기록
- 반성: 전체 궤적 + 외부 피드백으로 보상 R ∈ [0, 1]
- 역전파: N ← N + 1, V ← V + (R − V) / N
"""
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

from common_utils import log, write_json
from policy import (
    DEFAULT_ANSWER_TEMPERATURE,
    DEFAULT_OBSERVATION_CAP,
    DEFAULT_QUERY_TEMPERATURE,
    RUBRIC_ID,
    AgentState,
    EvaluationRequest,
    FinalAnswer,
    PolicyRequest,
    Step,
    build_initial_state,
    external_feedback,
    render_prompt,
    state_fingerprint,
)
from toolbox import export_manifest

BEST_TRAJECTORY_RULES = ("max-mean",)


@dataclass
class SearchConfig:
    omega: float = 1.0
    decay: float = 0.95
    branching: int = 2
    max_depth: int = 5
    iteration_limit: int = 50
    same_tool_cap: int = 4
    best_rule: str = "max-mean"
    early_accept: bool = True
    query_temperature: float = DEFAULT_QUERY_TEMPERATURE
    answer_temperature: float = DEFAULT_ANSWER_TEMPERATURE
    observation_cap: int = DEFAULT_OBSERVATION_CAP

    def __post_init__(self):
        if self.omega < 0:
            raise ValueError("omega must be non-negative")
        if not (0 < self.decay <= 1):
            raise ValueError("decay must be in (0, 1]")
        if self.branching < 1:
            raise ValueError("branching must be at least 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")
        if self.iteration_limit < 0:
            raise ValueError("iteration_limit must be non-negative")
        if self.same_tool_cap < 1:
            raise ValueError("same_tool_cap must be at least 1")
        if self.best_rule not in BEST_TRAJECTORY_RULES:
            raise ValueError(f"unknown best-trajectory rule '{self.best_rule}'")


class SearchNode:
    """탐색 트리 노드. value 는 받은 보상의 이동 평균"""

    def __init__(self, state, parent=None, index=0):
        self.state = state
        self.parent = parent
        self.depth = 0 if parent is None else parent.depth + 1
        self.index = index
        self.children = []
        self.value = 0.0
        self.visits = 0
        self.self_visits = 0
        self.reward = None
        self.note = ""
        self.failed = False
        self.same_tool_count = state.same_tool_suffix()

    @property
    def answer(self):
        return self.state.answer

    @property
    def is_answer(self):
        return self.state.answer is not None

    @property
    def terminal(self):
        return self.is_answer or self.failed

    def expandable(self, config):
        return not self.terminal and self.depth < config.max_depth

    def path(self):
        nodes = []
        node = self
        while node is not None:
            nodes.append(node)
            node = node.parent
        return list(reversed(nodes))

    def iter_subtree(self):
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def to_dict(self):
        last = self.state.last_step
        return {
            "id": self.index,
            "parent": self.parent.index if self.parent is not None else None,
            "depth": self.depth,
            "visits": self.visits,
            "self_visits": self.self_visits,
            "value": self.value,
            "reward": self.reward,
            "terminal": self.terminal,
            "failed": self.failed,
            "answer": self.answer,
            "same_tool_count": self.same_tool_count,
            "note": self.note,
            "step": last.to_dict() if last is not None else None,
            "children": [child.index for child in self.children],
        }


@dataclass
class Trajectory:
    path: list
    answer: str = None
    value: float = 0.0

    @property
    def answerless(self):
        return self.answer is None

    @property
    def leaf(self):
        return self.path[-1]

    def to_dict(self):
        return {
            "answer": self.answer,
            "answerless": self.answerless,
            "value": self.value,
            "path": [node.index for node in self.path],
            "steps": [step.to_dict() for step in self.leaf.state.steps],
        }


class LongTermMemory:
    """탐색 전체의 (상태 지문, 행동, 관측) 추가 전용 기록"""

    def __init__(self):
        self._records = []
        self._lock = threading.Lock()

    def append(self, fingerprint, action, observation):
        with self._lock:
            self._records.append({"state": fingerprint, "action": action, "observation": observation})

    def snapshot(self):
        with self._lock:
            return list(self._records)

    def __len__(self):
        return len(self._records)


def uct_score(node, parent_visits, omega=1.0, decay=0.95):
    """미방문 노드는 +inf (방문 우선)"""
    if node.visits == 0:
        return math.inf
    parent_visits = max(parent_visits, 1)
    exploration = omega * (decay ** node.visits) * math.sqrt(2 * math.log(parent_visits) / node.visits)
    return node.value + exploration


def select(root, config):
    """UCT 최대 자식으로 하강 (동률은 생성 순서)"""
    node = root
    while node.children:
        best, best_score = None, -math.inf
        for child in node.children:
            score = uct_score(child, node.visits, config.omega, config.decay)
            if best is None or score > best_score:
                best, best_score = child, score
        node = best
    return node


def backpropagate(leaf, reward):
    """잎에서 루트까지 N ← N + 1, V ← V + (R − V) / N"""
    leaf.self_visits += 1
    node = leaf
    while node is not None:
        node.visits += 1
        node.value += (reward - node.value) / node.visits
        node = node.parent


def _action_dict(action):
    if isinstance(action, FinalAnswer):
        return {"answer": action.text}
    return action.to_dict()


def _best_leaf_key(node):
    # 평균 가치 최대 → 더 깊은 노드 → 먼저 생성된 노드
    return (node.value, node.depth, -node.index)


def best_trajectory(root):
    """방문된 답 노드 중 평균 가치 최대 경로. 없으면 답 없는 최선 부분 경로"""
    nodes = list(root.iter_subtree())
    answered = [n for n in nodes if n.is_answer and n.visits > 0]
    if answered:
        leaf = max(answered, key=_best_leaf_key)
        return Trajectory(leaf.path(), leaf.answer, leaf.value)

    visited = [n for n in nodes if n.visits > 0 and n is not root]
    leaf = max(visited, key=_best_leaf_key) if visited else root
    return Trajectory(leaf.path(), None, leaf.value)


class MCTSPlanner:
    """질문 하나에 대한 탐색 트리 + 장기 메모리"""

    def __init__(self, state, policy, evaluator, toolbox, config=None):
        self.config = config or SearchConfig()
        self.policy = policy
        self.evaluator = evaluator
        self.toolbox = toolbox
        self.manifest = export_manifest()
        self.memory = LongTermMemory()
        self.root = SearchNode(state)
        self.iterations = 0
        self.accepted = False
        self._next_index = 1
        self._lock = threading.Lock()

    # ------------------------------------------------------------------
    # 단계별 연산
    # ------------------------------------------------------------------
    def _propose(self, node, k=None, mode="step"):
        config = self.config
        request = PolicyRequest(
            transcript=render_prompt(node.state, self.manifest, config.observation_cap),
            manifest=self.manifest,
            k=k or config.branching,
            temperature=config.query_temperature,
            state=node.state,
            mode=mode,
        )
        return self.policy.propose(request)

    def _filter_candidates(self, node, candidates):
        """중복 제거 + 같은 도구 연속 사용 상한 초과 후보 제거"""
        kept, seen, pruned = [], set(), 0
        last_tool = node.state.last_step.tool if node.state.steps else None
        for candidate in candidates:
            key = candidate.key()
            if key in seen:
                continue
            seen.add(key)
            if not candidate.is_answer:
                run = node.same_tool_count + 1 if candidate.action.tool == last_tool else 1
                if run > self.config.same_tool_cap:
                    pruned += 1
                    continue
            kept.append(candidate)
        return kept, pruned

    def _execute(self, node, candidate):
        if candidate.is_answer:
            return Step(candidate.thought, candidate.action, None)
        invocation = replace(candidate.action, step=node.depth)
        observation = self.toolbox.invoke(invocation)
        return Step(candidate.thought, invocation, observation)

    def expand(self, node):
        """정책 후보 k개 실행 → 자식 노드. 실패 시 노드는 terminal-failed"""
        try:
            candidates = list(self._propose(node))
        except Exception as e:
            log(f"❌ 정책 실패 (depth {node.depth}): {e}")
            node.failed = True
            node.note = f"policy failure: {e}"
            return []

        candidates, pruned = self._filter_candidates(node, candidates)
        if not candidates:
            node.failed = True
            node.note = (
                f"same tool used more than {self.config.same_tool_cap} times in a row"
                if pruned else "policy proposed no actions"
            )
            return []

        with ThreadPoolExecutor(max_workers=len(candidates)) as executor:
            steps = list(executor.map(lambda c: self._execute(node, c), candidates))
        return self._attach(node, steps)

    def _attach(self, node, steps):
        """실행된 단계 → 자식 노드 + 장기 메모리 기록"""
        fingerprint = state_fingerprint(node.state)
        children = []
        with self._lock:
            for step in steps:
                self.memory.append(
                    fingerprint, _action_dict(step.action),
                    step.observation.to_dict() if step.observation else None,
                )
                child = SearchNode(node.state.extend(step), node, self._next_index)
                self._next_index += 1
                node.children.append(child)
                children.append(child)
        return children

    def reflect(self, node):
        """전체 궤적 + 외부 피드백 → 보상. 평가기 실패는 R = 0"""
        config = self.config
        try:
            request = EvaluationRequest(
                transcript=render_prompt(node.state, self.manifest, config.observation_cap),
                feedback=external_feedback(node.state),
                rubric=RUBRIC_ID,
                temperature=config.answer_temperature,
                state=node.state,
                memory=self.memory.snapshot(),
            )
            evaluation = self.evaluator.evaluate(request)
            reward = min(max(float(evaluation.reward), 0.0), 1.0)
            node.note = evaluation.rationale
        except Exception as e:
            log(f"❌ 평가 실패 (node {node.index}): {e}")
            reward = 0.0
            node.note = f"evaluator failure: {e}"
        node.reward = reward
        return reward

    def _reflect_all(self, children):
        with ThreadPoolExecutor(max_workers=len(children)) as executor:
            return list(executor.map(self.reflect, children))

    # ------------------------------------------------------------------
    # 탐색 루프
    # ------------------------------------------------------------------
    def iterate(self):
        """선택 → (확장 → 반성) → 역전파 한 번"""
        config = self.config
        node = select(self.root, config)

        if node.visits == 0 and node.reward is not None:
            backpropagate(node, node.reward)
            return node

        if node.expandable(config):
            children = self.expand(node)
            if not children:
                node.reward = 0.0
                backpropagate(node, 0.0)
                return node
            rewards = self._reflect_all(children)
            best = children[rewards.index(max(rewards))]
            backpropagate(best, best.reward)
            return best

        backpropagate(node, node.reward if node.reward is not None else 0.0)
        return node

    def search(self):
        config = self.config
        while self.iterations < config.iteration_limit:
            node = self.iterate()
            self.iterations += 1
            if config.early_accept and node.is_answer and node.reward is not None and node.reward >= 1.0:
                self.accepted = True
                break
            if self.root.terminal or self.exhausted():
                break
        trajectory = best_trajectory(self.root)
        status = "✅" if not trajectory.answerless else "⚠️"
        log(f"{status} 탐색 종료: 반복 {self.iterations}회, 노드 {self.node_count()}개, "
            f"답 {trajectory.answer!r}, 가치 {trajectory.value:.3f}")
        return trajectory

    def rollout(self):
        """단일 체인 탐욕 실행 (k = 1)"""
        node = self.root
        while node.expandable(self.config) and self.iterations < self.config.iteration_limit:
            self.iterations += 1
            children = self.expand(node)
            if not children:
                node.reward = 0.0
                backpropagate(node, 0.0)
                break
            child = children[0]
            self.reflect(child)
            backpropagate(child, child.reward)
            node = child
        return best_trajectory(self.root)

    def planned_rollout(self):
        """정책 호출 한 번으로 도구 계획 전체 → 관측 없이 순서대로 실행 → 답 한 번 요청"""
        config = self.config
        self.iterations = 1
        try:
            plan = list(self._propose(self.root, k=config.max_depth, mode="plan"))
        except Exception as e:
            log(f"❌ 정책 실패 (계획): {e}")
            self.root.failed = True
            self.root.note = f"policy failure: {e}"
            return best_trajectory(self.root)
        if not plan:
            self.root.failed = True
            self.root.note = "policy proposed no plan"
            return best_trajectory(self.root)

        node = self.root
        for candidate in plan:
            if not node.expandable(config):
                break
            kept, _ = self._filter_candidates(node, [candidate])
            if not kept:
                log(f"⚠️ 계획 중단 (depth {node.depth}): 같은 도구 연속 {config.same_tool_cap}회 초과")
                break
            node = self._advance(node, self._execute(node, candidate))
            if node.is_answer:
                return best_trajectory(self.root)

        # 계획에 답이 없으면 관측을 다 본 뒤 답만 한 번 요청
        if node.expandable(config):
            self.iterations += 1
            try:
                answers = [c for c in self._propose(node, k=1) if c.is_answer]
            except Exception as e:
                log(f"❌ 정책 실패 (답 요청): {e}")
                answers = []
            if answers:
                self._advance(node, self._execute(node, answers[0]))
        return best_trajectory(self.root)

    def _advance(self, node, step):
        child = self._attach(node, [step])[0]
        self.reflect(child)
        backpropagate(child, child.reward)
        return child

    def exhausted(self):
        """확장 가능하거나 역전파 대기 중인 노드가 없으면 True"""
        for node in self.root.iter_subtree():
            if (not node.children and node.expandable(self.config)) or (node.visits == 0 and node.reward is not None):
                return False
        return True

    def node_count(self):
        return sum(1 for _ in self.root.iter_subtree())

    def trace(self, trajectory=None):
        trajectory = trajectory or best_trajectory(self.root)
        return {
            "question": self.root.state.question,
            "config": asdict(self.config),
            "iterations": self.iterations,
            "accepted": self.accepted,
            "memory_size": len(self.memory),
            "trajectory": trajectory.to_dict(),
            "nodes": [node.to_dict() for node in sorted(self.root.iter_subtree(), key=lambda n: n.index)],
        }

    def export_trace(self, path, trajectory=None):
        """탐색 트리 JSON 덤프"""
        return write_json(path, self.trace(trajectory))


def _initial_state(query, toolbox, few_shot_dir=None):
    if isinstance(query, AgentState):
        return query
    return build_initial_state(query, toolbox.graph, few_shot_dir=few_shot_dir)


def search(query, policy, evaluator, toolbox, config=None, few_shot_dir=None):
    """질문 → 최선 궤적"""
    planner = MCTSPlanner(_initial_state(query, toolbox, few_shot_dir), policy, evaluator, toolbox, config)
    return planner.search()


def react_rollout(query, policy, evaluator, toolbox, config=None, few_shot_dir=None):
    """비교용 단일 경로 도구 사용 에이전트 (분기 1)"""
    config = replace(config or SearchConfig(), branching=1)
    planner = MCTSPlanner(_initial_state(query, toolbox, few_shot_dir), policy, evaluator, toolbox, config)
    return planner.rollout()


def cot_rollout(query, policy, evaluator, toolbox, config=None, few_shot_dir=None):
    """비교용 계획 후 실행 에이전트 (중간 관측 없음)"""
    planner = MCTSPlanner(_initial_state(query, toolbox, few_shot_dir), policy, evaluator, toolbox, config)
    return planner.planned_rollout()
