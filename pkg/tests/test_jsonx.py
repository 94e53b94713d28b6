"""Extracting the last top-level JSON value from free-form completions."""

import pytest

from tacit.errors import NoJsonFoundError
from tacit.jsonx import extract_last_json_array, extract_last_json_object


def test_last_array_wins():
    text = 'First try [1, 2]. On reflection the real answer is ["a", "b"].'
    assert extract_last_json_array(text) == ["a", "b"]


def test_last_object_wins():
    text = '{"draft": 1} some prose {"final": 2}'
    assert extract_last_json_object(text) == {"final": 2}


def test_nested_values_are_not_top_level():
    text = '{"ops": [{"option": "add"}]}'
    # the array lives inside the object; it is still the last *top-level* array
    assert extract_last_json_array(text) == [{"option": "add"}]
    assert extract_last_json_object(text) == {"ops": [{"option": "add"}]}


def test_object_scan_skips_past_parsed_values():
    # the nested object must not shadow a later top-level one
    text = '{"outer": {"inner": 1}} trailing {"last": true}'
    assert extract_last_json_object(text) == {"last": True}


def test_fenced_json_is_found():
    text = "Here you go:\n```json\n[{\"option\": \"add\", \"experience\": \"tip\"}]\n```\nDone."
    assert extract_last_json_array(text) == [{"option": "add", "experience": "tip"}]


def test_malformed_candidates_are_skipped():
    text = "broken [1, 2 then fixed [3]"
    assert extract_last_json_array(text) == [3]


def test_no_json_raises():
    with pytest.raises(NoJsonFoundError):
        extract_last_json_array("no structured content here")
    with pytest.raises(NoJsonFoundError):
        extract_last_json_object("[1, 2, 3]")


def test_empty_containers_count():
    assert extract_last_json_array("answer: []") == []
    assert extract_last_json_object("answer: {}") == {}
