"""The tool-use loop: one assistant turn, at most one tool call, repeat.

The loop ends when the assistant produces a complete <answer>...</answer>
block on a turn without a tool call, or when the turn budget runs out.
Protocol violations never crash a rollout: multiple tool calls in one
turn become a corrective observation, an unknown tool name becomes an
error observation, and both consume the turn that produced them.
"""

from __future__ import annotations

import concurrent.futures
import logging
import re
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

from tacit.errors import BackendUnavailableError, MultipleToolCallsError
from tacit.gateway import (
    EXEC_ROLE,
    Completion,
    GenerationParams,
    ImageAttachment,
    Message,
    ModelGateway,
    TokenUsage,
    ToolCall,
)
from tacit.prompts import get_template
from tacit.tools.registry import ToolSession

logger = logging.getLogger(__name__)

# Observations longer than this are cut before being shown to the model.
OBSERVATION_CHAR_CAP = 16000

NUDGE_OBSERVATION = (
    "Your last message contained neither a tool call nor a final answer. "
    "Either call exactly one tool, or give your final answer inside complete "
    "<answer>...</answer> tags."
)

MULTI_CALL_OBSERVATION = (
    "You attempted several tool calls in a single turn. You can ONLY call one "
    "tool at one turn! Please repeat the single most useful call by itself."
)

_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)


def extract_answer(text: str) -> Optional[str]:
    """Content of the last complete <answer> block, or None."""
    found = _ANSWER_RE.findall(text)
    if not found:
        return None
    return found[-1].strip()


def parse_tool_call(completion: Completion) -> Optional[ToolCall]:
    """The single tool call from a completion, None if there is none."""
    calls = completion.tool_calls
    if not calls:
        return None
    if len(calls) > 1:
        raise MultipleToolCallsError(f"{len(calls)} tool calls in one turn")
    return calls[0]


def truncate_observation(text: str, cap: int = OBSERVATION_CHAR_CAP) -> str:
    if len(text) <= cap:
        return text
    return text[:cap] + "\n...[observation truncated]"


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TaskInstance:
    task_id: str
    query: str
    images: Tuple[bytes, ...] = ()  # raw input image payloads, in order
    ground_truth: str = ""
    category: str = ""


@dataclass(frozen=True)
class TurnRecord:
    index: int  # 1-based
    assistant_text: str
    tool_call: Optional[ToolCall] = None
    observation: Optional[str] = None
    images_produced: Tuple[str, ...] = ()
    error_class: Optional[str] = None  # set when the tool call failed


@dataclass
class Trajectory:
    task_id: str
    rollout: int
    turns: List[TurnRecord] = field(default_factory=list)
    final_answer: Optional[str] = None
    terminated_reason: str = "max_turns"  # "answered" | "max_turns" | "fatal_error"
    token_usage: TokenUsage = TokenUsage()
    # image payloads seen this rollout (inputs + tool products), by registry name;
    # kept in memory for the knowledge phase, never serialized
    images_by_name: dict = field(default_factory=dict)

    @property
    def tool_calls(self) -> List[ToolCall]:
        return [t.tool_call for t in self.turns if t.tool_call is not None]


@dataclass
class RuntimeConfig:
    params: GenerationParams = GenerationParams(temperature=0.6, top_p=1.0, max_tokens=8192)
    max_turns: int = 20
    observation_char_cap: int = OBSERVATION_CHAR_CAP
    concurrency: int = 1


def select_system_prompt(session: ToolSession) -> str:
    """Tool-less tasks reason directly; anything with tools gets the agent prompt."""
    if session.enabled:
        return get_template("multi_tool_agent_search").text
    return get_template("direct_cot").text


# ---------------------------------------------------------------------------
# The loop
# ---------------------------------------------------------------------------

def run_task(
    task: TaskInstance,
    user_text: str,
    gateway: ModelGateway,
    session: ToolSession,
    config: Optional[RuntimeConfig] = None,
    rollout: int = 1,
    system_text: Optional[str] = None,
) -> Trajectory:
    config = config or RuntimeConfig()
    trajectory = Trajectory(task_id=task.task_id, rollout=rollout)

    attachments = tuple(
        session.registry.get(session.registry.register_original(data)) for data in task.images
    )
    for attachment in attachments:
        trajectory.images_by_name[attachment.name] = attachment.data
    messages: List[Message] = [
        Message(role="system", content=system_text if system_text is not None else select_system_prompt(session)),
        Message(role="user", content=user_text, images=attachments),
    ]
    tools = session.declarations() or None

    for turn_index in range(1, config.max_turns + 1):
        try:
            completion = gateway.complete(
                EXEC_ROLE, messages, config.params, tools=tools, tag="agent_turn"
            )
        except BackendUnavailableError as exc:
            logger.error("task %s rollout %d: backend gave up: %s", task.task_id, rollout, exc)
            trajectory.terminated_reason = "fatal_error"
            return trajectory

        trajectory.token_usage = trajectory.token_usage + completion.usage
        assistant_text = completion.text

        try:
            call = parse_tool_call(completion)
        except MultipleToolCallsError:
            trajectory.turns.append(
                TurnRecord(index=turn_index, assistant_text=assistant_text,
                           observation=MULTI_CALL_OBSERVATION)
            )
            messages.append(Message(role="assistant", content=assistant_text))
            messages.append(Message(role="user", content=MULTI_CALL_OBSERVATION))
            continue

        if call is None:
            answer = extract_answer(assistant_text)
            if answer is not None:
                trajectory.turns.append(
                    TurnRecord(index=turn_index, assistant_text=assistant_text)
                )
                trajectory.final_answer = answer
                trajectory.terminated_reason = "answered"
                return trajectory
            trajectory.turns.append(
                TurnRecord(index=turn_index, assistant_text=assistant_text,
                           observation=NUDGE_OBSERVATION)
            )
            messages.append(Message(role="assistant", content=assistant_text))
            messages.append(Message(role="user", content=NUDGE_OBSERVATION))
            continue

        result = session.dispatch(call)  # total: unknown tools come back as errors
        observation = truncate_observation(result.text_body, config.observation_char_cap)
        produced = tuple(name for name, _ in result.images)
        for name, data in result.images:
            trajectory.images_by_name[name] = data
        trajectory.turns.append(
            TurnRecord(
                index=turn_index,
                assistant_text=assistant_text,
                tool_call=call,
                observation=observation,
                images_produced=produced,
                error_class=result.error_class,
            )
        )
        messages.append(Message(role="assistant", content=assistant_text))
        obs_images = tuple(session.registry.get(name) for name in produced)
        messages.append(Message(role="user", content=observation, images=obs_images))

    trajectory.terminated_reason = "max_turns"
    return trajectory


def run_rollouts(
    task: TaskInstance,
    user_text: str,
    gateway: ModelGateway,
    session_factory: Callable[[], ToolSession],
    config: Optional[RuntimeConfig] = None,
    n: int = 4,
    system_text: Optional[str] = None,
) -> List[Trajectory]:
    """N independent attempts; each gets a fresh tool session and registry."""
    config = config or RuntimeConfig()

    def attempt(rollout: int) -> Trajectory:
        session = session_factory()
        try:
            return run_task(
                task, user_text, gateway, session,
                config=config, rollout=rollout, system_text=system_text,
            )
        finally:
            session.close()

    if config.concurrency > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=config.concurrency) as pool:
            futures = {pool.submit(attempt, r): r for r in range(1, n + 1)}
            results: List[Optional[Trajectory]] = [None] * n
            for future, rollout in futures.items():
                results[rollout - 1] = future.result()
            return [t for t in results if t is not None]
    return [attempt(r) for r in range(1, n + 1)]
