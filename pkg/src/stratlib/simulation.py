"""Conversation generation between an agent runner and the simulated customer."""

from __future__ import annotations

import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

from .domain import (
    BasePrompt,
    Conversation,
    CustomerProfile,
    EndReason,
    Generator,
    Library,
    Scenario,
    Speaker,
    Utterance,
    scenario_prefix,
)
from .gateway import (
    AGENT_PARAMS,
    CUSTOMER_PARAMS,
    BackendConfig,
    GatewayError,
    GenerationParams,
    chat,
    embed,
)
from .prompts import (
    DEFAULT_HANGUP_MARKER,
    DEFAULT_OPENING_LINE,
    render_agent_messages,
    render_customer_messages,
    render_transcript_text,
)
from .retrieval import VectorIndex, RetrievalResult, aggregate_strategies, nearest

log = logging.getLogger(__name__)


class ScheduleMode(str, Enum):
    LINEAR = "linear"
    GEOMETRIC = "geometric"


@dataclass(frozen=True)
class GeneratorSchedule:
    """Probability of picking the teacher as generator, decaying over iterations."""

    p0: float = 1.0
    decay: float = 0.3
    p_min: float = 0.1
    mode: ScheduleMode = ScheduleMode.LINEAR

    def __post_init__(self):
        if self.p0 != 1.0:
            raise ValueError("p0 is fixed at 1.0: the teacher generates everything at t=1")
        if not 0.0 <= self.p_min <= 1.0:
            raise ValueError("p_min must be in [0, 1]")


def schedule_p(schedule: GeneratorSchedule, t: int) -> float:
    """Teacher-selection probability at iteration t >= 1, floored at p_min."""
    if t < 1:
        raise ValueError("t must be >= 1")
    if schedule.mode is ScheduleMode.LINEAR:
        return max(schedule.p_min, 1.0 - schedule.decay * (t - 1))
    return max(schedule.p_min, schedule.decay ** (t - 1))


def select_generator(p: float, rng: random.Random) -> Generator:
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    return Generator.TEACHER if rng.random() < p else Generator.STUDENT


@dataclass(frozen=True)
class ConversationLimits:
    max_agent_turns: int = 10
    hangup_marker: str = DEFAULT_HANGUP_MARKER
    opening_line: str = DEFAULT_OPENING_LINE

    def __post_init__(self):
        if self.max_agent_turns < 1:
            raise ValueError("max_agent_turns must be >= 1")


class AgentRunner:
    """Produces the next agent utterance for a transcript."""

    role: Generator

    def respond(self, transcript: list[Utterance]) -> str:
        raise NotImplementedError


@dataclass
class TeacherRunner(AgentRunner):
    """The teacher answers from the base prompt alone."""

    backend: BackendConfig
    base: BasePrompt
    params: GenerationParams = AGENT_PARAMS
    role = Generator.TEACHER

    def respond(self, transcript: list[Utterance]) -> str:
        return chat(self.backend, render_agent_messages(self.base, None, transcript),
                    self.params, role="teacher")


@dataclass
class StudentRunner(AgentRunner):
    """The student answers from the base prompt plus retrieved strategies."""

    backend: BackendConfig
    base: BasePrompt
    params: GenerationParams = AGENT_PARAMS
    embedder: Optional[BackendConfig] = None
    index: Optional[VectorIndex] = None
    library: Optional[Library] = None
    k: int = 1
    token_budget: int = 512
    summarizer: Optional[BackendConfig] = None
    role = Generator.STUDENT

    def respond_with_trace(
        self, transcript: list[Utterance]
    ) -> tuple[str, Optional[RetrievalResult]]:
        strategy_text = None
        result: Optional[RetrievalResult] = None
        if self.index is not None and len(self.index) > 0:
            assert self.embedder is not None and self.library is not None
            query = embed(self.embedder, render_transcript_text(transcript), role="embedder")
            result = nearest(self.index, query.values, self.k)
            entries = [self.library.get(eid) for eid, _ in result.hits]
            # entries may have converged to zero bullets; skip the empty header then
            strategy_text = aggregate_strategies(
                entries, self.token_budget, self.summarizer) or None
        text = chat(self.backend, render_agent_messages(self.base, strategy_text, transcript),
                    self.params, role="student")
        return text, result

    def respond(self, transcript: list[Utterance]) -> str:
        return self.respond_with_trace(transcript)[0]


def run_conversation(agent: AgentRunner, profile: CustomerProfile,
                     limits: ConversationLimits, *,
                     customer_backend: BackendConfig,
                     context: str,
                     customer_params: GenerationParams = CUSTOMER_PARAMS,
                     iteration: int = 1,
                     conv_id: str = "conv") -> Conversation:
    """Alternate agent and customer turns until hangup or the agent-turn cap.

    The agent opens with the fixed opening line (agent turn 1). A backend
    failure mid-conversation stores what exists with end_reason=backend_error.
    """
    utterances: list[Utterance] = [Utterance(Speaker.AGENT, limits.opening_line, 1)]
    end_reason = EndReason.MAX_TURNS
    try:
        while True:
            k = utterances[-1].turn_index
            reply = chat(customer_backend,
                         render_customer_messages(profile, context, utterances,
                                                  limits.hangup_marker),
                         customer_params, role="customer")
            if limits.hangup_marker in reply:
                text = reply.replace(limits.hangup_marker, "").strip()
                # marker-only replies: keep a minimal sign-off so alternation holds
                utterances.append(Utterance(Speaker.CUSTOMER, text or "Goodbye.", k))
                end_reason = EndReason.CUSTOMER_HANGUP
                break
            utterances.append(Utterance(Speaker.CUSTOMER, reply, k))
            if k >= limits.max_agent_turns:
                end_reason = EndReason.MAX_TURNS
                break
            utterances.append(Utterance(Speaker.AGENT, agent.respond(utterances), k + 1))
    except GatewayError as exc:
        log.warning("conversation %s aborted on backend error: %s", conv_id, exc)
        end_reason = EndReason.BACKEND_ERROR
    return Conversation(
        id=conv_id,
        iteration=iteration,
        generator=agent.role,
        profile=profile,
        utterances=utterances,
        end_reason=end_reason,
    )


def generate_batch(t: int, agent_pair: tuple[AgentRunner, AgentRunner],
                   schedule: GeneratorSchedule, profiles: list[CustomerProfile],
                   reps: int, rng: random.Random, *,
                   customer_backend: BackendConfig,
                   context: str,
                   limits: ConversationLimits = ConversationLimits(),
                   customer_params: GenerationParams = CUSTOMER_PARAMS,
                   iteration_tag: str = "",
                   concurrency: int = 1) -> list[Conversation]:
    """|profiles| * reps conversations; each generator drawn at p = schedule_p(t).

    Per-conversation seeds are drawn from rng up front, so results match between
    sequential and concurrent execution.
    """
    if not profiles:
        raise ValueError("profiles must be non-empty")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    teacher_runner, student_runner = agent_pair
    p = schedule_p(schedule, t)
    jobs = []
    idx = 0
    for rep in range(reps):
        for profile in profiles:
            child = random.Random(rng.getrandbits(64))
            jobs.append((idx, profile, child))
            idx += 1

    def run_one(job):
        i, profile, child = job
        gen = select_generator(p, child)
        runner = teacher_runner if gen is Generator.TEACHER else student_runner
        params = replace(customer_params, seed=child.getrandbits(32))
        tag = iteration_tag or f"t{t}"
        return run_conversation(runner, profile, limits,
                                customer_backend=customer_backend, context=context,
                                customer_params=params, iteration=t,
                                conv_id=f"conv-{tag}-{i}")

    if concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            return list(pool.map(run_one, jobs))
    return [run_one(job) for job in jobs]


def sample_scenarios(conv: Conversation, m: int, rng: random.Random, *,
                     embedder: Optional[BackendConfig] = None) -> list[Scenario]:
    """min(m, K) scenarios with distinct k, uniform without replacement over 1..K."""
    if not conv.usable:
        raise ValueError(f"conversation {conv.id} ended in backend_error; not sampleable")
    total = conv.customer_turns()
    if total < 1:
        raise ValueError(f"conversation {conv.id} has no completed customer turns")
    ks = sorted(rng.sample(range(1, total + 1), min(m, total)))
    scenarios = []
    for k in ks:
        scenario = scenario_prefix(conv, k)
        if embedder is not None:
            vec = embed(embedder, render_transcript_text(scenario.utterances), role="embedder")
            scenario.embedding = list(vec.values)
        scenarios.append(scenario)
    return scenarios


def batch_manifest(t: int, seed: int, schedule: GeneratorSchedule,
                   convs: list[Conversation]) -> dict:
    """Summary written alongside a batch's transcript log."""
    counts = {
        "teacher": sum(1 for c in convs if c.generator is Generator.TEACHER),
        "student": sum(1 for c in convs if c.generator is Generator.STUDENT),
    }
    return {
        "iteration": t,
        "seed": seed,
        "schedule": {
            "p0": schedule.p0,
            "decay": schedule.decay,
            "p_min": schedule.p_min,
            "mode": schedule.mode.value,
        },
        "counts": counts,
    }
