"""Gateway behavior: role routing, retries, scripted guards, image fallback."""

import pytest

from tacit.errors import (
    BackendUnavailableError,
    ScriptExhaustedError,
    ScriptMismatchError,
)
from tacit.gateway import (
    EXEC_ROLE,
    KB_ROLE,
    Completion,
    FunctionChatBackend,
    GenerationParams,
    ImageAttachment,
    Message,
    ModelGateway,
    ScriptedChatBackend,
    ScriptedReply,
    TokenUsage,
)

from conftest import TINY_PNG, make_gateway, reply

PARAMS = GenerationParams()
USER = [Message(role="user", content="hello")]


def test_roles_route_to_their_own_backend():
    gateway = make_gateway(exec_replies=[reply("from exec")], kb_replies=[reply("from kb")])
    assert gateway.complete(EXEC_ROLE, USER, PARAMS).text == "from exec"
    assert gateway.complete(KB_ROLE, USER, PARAMS).text == "from kb"


def test_unknown_role_rejected():
    gateway = make_gateway()
    with pytest.raises(ValueError):
        gateway.complete("judge", USER, PARAMS)


def test_scripted_backend_replays_in_order_and_exhausts():
    backend = ScriptedChatBackend([ScriptedReply(text="one"), ScriptedReply(text="two")])
    assert backend.complete(USER, PARAMS).text == "one"
    assert backend.complete(USER, PARAMS).text == "two"
    assert backend.remaining == 0
    with pytest.raises(ScriptExhaustedError):
        backend.complete(USER, PARAMS)


def test_scripted_expectations_guard_tag_and_content():
    backend = ScriptedChatBackend([ScriptedReply(text="ok", expect_tag="summary")])
    with pytest.raises(ScriptMismatchError):
        backend.complete(USER, PARAMS, tag="critique")

    backend = ScriptedChatBackend([ScriptedReply(text="ok", expect_contains="needle")])
    with pytest.raises(ScriptMismatchError):
        backend.complete(USER, PARAMS, tag=None)
    backend = ScriptedChatBackend([ScriptedReply(text="ok", expect_contains="hello")])
    assert backend.complete(USER, PARAMS).text == "ok"


def test_retry_only_on_backend_unavailable():
    attempts = []

    def flaky(messages, params, tag):
        attempts.append(tag)
        if len(attempts) < 3:
            raise BackendUnavailableError("down")
        return "recovered"

    gateway = ModelGateway(
        exec_backend=FunctionChatBackend(flaky),
        kb_backend=ScriptedChatBackend([]),
        sleeper=lambda _s: None,
    )
    completion = gateway.complete(EXEC_ROLE, USER, PARAMS, tag="t")
    assert completion.text == "recovered"
    assert len(attempts) == 3
    assert gateway.usage_records[-1].attempts == 3


def test_gateway_gives_up_after_max_attempts_with_backoff():
    sleeps = []

    def always_down(messages, params, tag):
        raise BackendUnavailableError("down")

    gateway = ModelGateway(
        exec_backend=FunctionChatBackend(always_down),
        kb_backend=ScriptedChatBackend([]),
        max_attempts=3,
        backoff_s=1.0,
        sleeper=sleeps.append,
    )
    with pytest.raises(BackendUnavailableError):
        gateway.complete(EXEC_ROLE, USER, PARAMS)
    assert sleeps == [1.0, 2.0]  # doubling, and no sleep after the final attempt


def test_script_mismatch_is_not_retried():
    calls = []

    class Guarded:
        supports_images = False

        def complete(self, messages, params, tools=None, tag=None):
            calls.append(tag)
            raise ScriptMismatchError("wrong tag")

    gateway = ModelGateway(
        exec_backend=Guarded(), kb_backend=ScriptedChatBackend([]), sleeper=lambda _s: None
    )
    with pytest.raises(ScriptMismatchError):
        gateway.complete(EXEC_ROLE, USER, PARAMS)
    assert len(calls) == 1


def test_images_stripped_for_text_only_backend():
    seen = []

    def record(messages, params, tag):
        seen.extend(messages)
        return "ok"

    gateway = ModelGateway(
        exec_backend=FunctionChatBackend(record),
        kb_backend=ScriptedChatBackend([]),
        sleeper=lambda _s: None,
    )
    attachment = ImageAttachment(name="original_image", data=TINY_PNG)
    gateway.complete(
        EXEC_ROLE,
        [Message(role="user", content="look", images=(attachment, attachment))],
        PARAMS,
    )
    assert seen[0].images == ()
    assert seen[0].content == "look\n[image omitted]\n[image omitted]"


def test_usage_records_accumulate_by_role():
    def with_usage(messages, params, tag):
        return Completion(text="ok", usage=TokenUsage(prompt_tokens=7, completion_tokens=3))

    gateway = ModelGateway(
        exec_backend=FunctionChatBackend(with_usage),
        kb_backend=FunctionChatBackend(with_usage),
        sleeper=lambda _s: None,
    )
    gateway.complete(EXEC_ROLE, USER, PARAMS, tag="a")
    gateway.complete(EXEC_ROLE, USER, PARAMS, tag="b")
    gateway.complete(KB_ROLE, USER, PARAMS, tag="c")
    assert gateway.total_usage(EXEC_ROLE) == TokenUsage(14, 6)
    assert gateway.total_usage().total_tokens == 30
    assert [r.tag for r in gateway.usage_records] == ["a", "b", "c"]


def test_token_usage_addition():
    assert TokenUsage(1, 2) + TokenUsage(3, 4) == TokenUsage(4, 6)
    assert TokenUsage(1, 2).total_tokens == 3
