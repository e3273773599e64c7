"""YYYY-MM month labels and integer month arithmetic."""

import re

_MONTH_RE = re.compile(r"^(\d{4})-(\d{2})$")


def parse_month(label: str) -> int:
    """Map ``'YYYY-MM'`` to a serial month number (year * 12 + month - 1)."""
    m = _MONTH_RE.match(label.strip())
    if not m or not 1 <= int(m.group(2)) <= 12:
        raise ValueError(f"invalid month label {label!r}; expected YYYY-MM")
    return int(m.group(1)) * 12 + int(m.group(2)) - 1


def format_month(serial: int) -> str:
    year, month = divmod(int(serial), 12)
    return f"{year:04d}-{month + 1:02d}"


def shift_month(label: str, offset: int) -> str:
    return format_month(parse_month(label) + offset)


def month_range(start: str, end: str) -> list[str]:
    """Inclusive list of consecutive month labels."""
    a, b = parse_month(start), parse_month(end)
    return [format_month(s) for s in range(a, b + 1)]
