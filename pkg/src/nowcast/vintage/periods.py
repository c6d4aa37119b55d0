"""Calendar periods encoded as ``YYYY-MM`` (monthly) or ``YYYY-Qn`` (quarterly)."""
from __future__ import annotations

import calendar
import re
from datetime import date

from ..errors import ValidationError

MONTHLY = "monthly"
QUARTERLY = "quarterly"
FREQUENCIES = (MONTHLY, QUARTERLY)

_MONTH_RE = re.compile(r"^(\d{4})-(0[1-9]|1[0-2])$")
_QUARTER_RE = re.compile(r"^(\d{4})-Q([1-4])$")


def parse_period(text: str) -> tuple[str, int, int]:
    """Return ``(frequency, year, sub)`` where sub is the month or quarter number."""
    if not isinstance(text, str):
        raise ValidationError(f"period must be a string, got {text!r}")
    m = _MONTH_RE.match(text)
    if m:
        return MONTHLY, int(m.group(1)), int(m.group(2))
    m = _QUARTER_RE.match(text)
    if m:
        return QUARTERLY, int(m.group(1)), int(m.group(2))
    raise ValidationError(f"malformed period {text!r}; expected YYYY-MM or YYYY-Qn")


def period_frequency(text: str) -> str:
    return parse_period(text)[0]


def make_period(frequency: str, year: int, sub: int) -> str:
    if frequency == MONTHLY:
        return f"{year:04d}-{sub:02d}"
    if frequency == QUARTERLY:
        return f"{year:04d}-Q{sub}"
    raise ValidationError(f"unknown frequency {frequency!r}")


def period_ordinal(text: str) -> int:
    freq, year, sub = parse_period(text)
    per_year = 12 if freq == MONTHLY else 4
    return year * per_year + sub - 1


def period_from_ordinal(frequency: str, ordinal: int) -> str:
    per_year = 12 if frequency == MONTHLY else 4
    year, rem = divmod(ordinal, per_year)
    return make_period(frequency, year, rem + 1)


def shift_period(text: str, k: int) -> str:
    return period_from_ordinal(period_frequency(text), period_ordinal(text) + k)


def period_range(first: str, last: str) -> list[str]:
    freq = period_frequency(first)
    if period_frequency(last) != freq:
        raise ValidationError("period_range endpoints must share a frequency")
    return [period_from_ordinal(freq, o) for o in range(period_ordinal(first), period_ordinal(last) + 1)]


def period_start(text: str) -> date:
    freq, year, sub = parse_period(text)
    month = sub if freq == MONTHLY else 3 * (sub - 1) + 1
    return date(year, month, 1)


def period_end(text: str) -> date:
    freq, year, sub = parse_period(text)
    month = sub if freq == MONTHLY else 3 * sub
    return date(year, month, calendar.monthrange(year, month)[1])


def quarter_of(month_period: str) -> str:
    freq, year, month = parse_period(month_period)
    if freq != MONTHLY:
        raise ValidationError(f"{month_period!r} is not a monthly period")
    return make_period(QUARTERLY, year, (month - 1) // 3 + 1)


def months_of_quarter(quarter: str) -> list[str]:
    freq, year, q = parse_period(quarter)
    if freq != QUARTERLY:
        raise ValidationError(f"{quarter!r} is not a quarterly period")
    return [make_period(MONTHLY, year, 3 * (q - 1) + i) for i in (1, 2, 3)]


def quarter_containing(day: date) -> str:
    return make_period(QUARTERLY, day.year, (day.month - 1) // 3 + 1)


def parse_date(value) -> date:
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value).strip())
    except ValueError as exc:
        raise ValidationError(f"malformed ISO-8601 date {value!r}") from exc
