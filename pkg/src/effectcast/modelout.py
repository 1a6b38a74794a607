"""Tolerant extraction of structured JSON from raw model text.

Hosted models wrap payloads in code fences, prepend prose, and emit trailing
commas (the forecast prompt itself demonstrates one). Extraction tolerates
that wrapping; everything past the JSON boundary is still validated strictly
by the stage-specific parsers.
"""

from __future__ import annotations

import json
import re

from .errors import ResponseFormatError

_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)
_TRAILING_COMMA_RE = re.compile(r",(\s*[}\]])")


def strip_code_fences(raw: str) -> str:
    m = _FENCE_RE.search(raw)
    return m.group(1) if m else raw


def _remove_trailing_commas(text: str) -> str:
    return _TRAILING_COMMA_RE.sub(r"\1", text)


def _loads(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return json.loads(_remove_trailing_commas(text))


def extract_json_value(raw: str):
    """Parse the first JSON object or array found in the response."""
    text = strip_code_fences(raw).strip()
    start = min((i for i in (text.find("{"), text.find("[")) if i >= 0), default=-1)
    if start < 0:
        raise ResponseFormatError("no JSON payload in response", raw=raw)
    decoder = json.JSONDecoder()
    candidate = _remove_trailing_commas(text[start:])
    try:
        value, _ = decoder.raw_decode(candidate)
        return value
    except json.JSONDecodeError as exc:
        raise ResponseFormatError(f"unparseable JSON payload: {exc.msg}", raw=raw) from exc


def extract_json_objects(raw: str) -> list:
    """Parse a response holding either a JSON array or concatenated objects."""
    value = extract_json_value(raw)
    if isinstance(value, list):
        return value
    objects = [value]
    text = _remove_trailing_commas(strip_code_fences(raw).strip())
    decoder = json.JSONDecoder()
    pos = text.find("{")
    _, end = decoder.raw_decode(text[pos:])
    pos += end
    while True:
        nxt = text.find("{", pos)
        if nxt < 0:
            break
        try:
            obj, end = decoder.raw_decode(text[nxt:])
        except json.JSONDecodeError:
            break
        objects.append(obj)
        pos = nxt + end
    return objects
