"""Minimal 5-field cron expressions: parse and match at minute resolution.

Supports ``*``, lists, ranges, and ``/step``, with standard semantics for
the day-of-month / day-of-week pair: when both are restricted, a time
matches if either field matches.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime

from .errors import InvalidArgumentError

# (low, high) inclusive bounds per field: minute hour dom month dow
_BOUNDS = ((0, 59), (0, 23), (1, 31), (1, 12), (0, 6))
_FIELD_NAMES = ("minute", "hour", "day-of-month", "month", "day-of-week")


@dataclass(frozen=True)
class CronExpr:
    """A parsed cron expression; each field is a frozenset of allowed values."""

    minute: frozenset[int]
    hour: frozenset[int]
    dom: frozenset[int]
    month: frozenset[int]
    dow: frozenset[int]
    dom_is_star: bool
    dow_is_star: bool
    source: str

    def matches(self, when: datetime) -> bool:
        if when.minute not in self.minute or when.hour not in self.hour:
            return False
        if when.month not in self.month:
            return False
        dom_ok = when.day in self.dom
        dow_ok = when.isoweekday() % 7 in self.dow  # cron: 0 = Sunday
        if self.dom_is_star:
            return dow_ok
        if self.dow_is_star:
            return dom_ok
        return dom_ok or dow_ok


def parse(expr: str) -> CronExpr:
    parts = expr.split()
    if len(parts) != 5:
        raise InvalidArgumentError(f"cron expression needs 5 fields, got {len(parts)}: {expr!r}")
    sets = []
    for text, (lo, hi), name in zip(parts, _BOUNDS, _FIELD_NAMES):
        sets.append(_parse_field(text, lo, hi, name))
    return CronExpr(
        minute=sets[0],
        hour=sets[1],
        dom=sets[2],
        month=sets[3],
        dow=sets[4],
        dom_is_star=parts[2] == "*",
        dow_is_star=parts[4] == "*",
        source=expr,
    )


def matches(expr: str, when: datetime) -> bool:
    return parse(expr).matches(when)


def _parse_field(text: str, lo: int, hi: int, name: str) -> frozenset[int]:
    values: set[int] = set()
    for piece in text.split(","):
        body, _, step_text = piece.partition("/")
        step = 1
        if step_text:
            step = _parse_int(step_text, name)
            if step < 1:
                raise InvalidArgumentError(f"cron {name}: step must be >= 1 in {piece!r}")
        if body == "*":
            start, end = lo, hi
        elif "-" in body:
            a, _, b = body.partition("-")
            start, end = _parse_int(a, name), _parse_int(b, name)
        else:
            start = end = _parse_int(body, name)
        if not (lo <= start <= hi and lo <= end <= hi and start <= end):
            raise InvalidArgumentError(f"cron {name}: {piece!r} outside {lo}..{hi}")
        values.update(range(start, end + 1, step))
    return frozenset(values)


def _parse_int(text: str, name: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise InvalidArgumentError(f"cron {name}: not a number: {text!r}") from None
