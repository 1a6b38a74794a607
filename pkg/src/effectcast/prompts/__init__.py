"""Checked-in prompt template assets and their rendering helpers.

Templates are stored verbatim as package data and must never be edited
casually: the test suite asserts their content hashes, because silent prompt
drift changes every dataset generated afterwards. Rendering only replaces the
named placeholder tokens; substituted values get their braces escaped so the
template's own JSON-shaped structure stays unambiguous.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return resources.files("effectcast.prompts").joinpath(f"{name}.txt").read_text("utf-8")


def escape_braces(value: str) -> str:
    return value.replace("{", "\\{").replace("}", "\\}")


def render_template(template: str, mapping: dict[str, str], escape: bool = True) -> str:
    out = template
    for key, value in mapping.items():
        token = "{" + key + "}"
        if token not in out:
            raise KeyError(f"placeholder {token} not present in template")
        out = out.replace(token, escape_braces(value) if escape else value)
    return out


QUERY_GENERATION = "query_generation"
SYNTHETIC_RCT = "synthetic_rct"
EFFECT_FORECAST = "effect_forecast"
