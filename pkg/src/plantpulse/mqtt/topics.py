"""Topic filter parsing and matching.

``+`` matches exactly one level, ``#`` matches any number of trailing
levels (including zero) and may only close a filter. A wildcard must
occupy a whole level: ``a+`` is invalid.
"""

from __future__ import annotations

from dataclasses import dataclass


class InvalidFilter(ValueError):
    """The string is not a legal subscription filter."""


@dataclass(frozen=True)
class TopicFilter:
    levels: tuple[str, ...]

    def __str__(self) -> str:
        return "/".join(self.levels)


def validate_filter(s: str) -> TopicFilter:
    """Parse ``s`` into a :class:`TopicFilter`, or raise :class:`InvalidFilter`."""
    if not s:
        raise InvalidFilter("empty filter")
    if "\u0000" in s:
        raise InvalidFilter("NUL in filter")
    if len(s.encode("utf-8")) > 65_535:
        raise InvalidFilter("filter too long")
    levels = tuple(s.split("/"))
    for i, level in enumerate(levels):
        if level == "#":
            if i != len(levels) - 1:
                raise InvalidFilter(f"'#' not final in {s!r}")
        elif ("+" in level or "#" in level) and len(level) > 1:
            raise InvalidFilter(f"wildcard mixed with literals in level {level!r}")
    return TopicFilter(levels)


def topic_matches(filt: TopicFilter, topic: str) -> bool:
    """Level-wise match of a publish topic against a subscription filter."""
    levels = topic.split("/")
    for i, pattern in enumerate(filt.levels):
        if pattern == "#":
            return True
        if i >= len(levels):
            return False
        if pattern != "+" and pattern != levels[i]:
            return False
    return len(levels) == len(filt.levels)
