"""Month and quarter stamps.

Months and quarters are plain integer ordinals so they can index arrays and be
compared directly: ``month = 12*year + (month_of_year - 1)`` and
``quarter = 4*year + (quarter_of_year - 1)``.  A quarter is dated by its last
month.
"""

import re
from datetime import date

_MONTH_RE = re.compile(r"^\s*(\d{4})[-:M/](\d{1,2})\s*$", re.IGNORECASE)
_QUARTER_RE = re.compile(r"^\s*(\d{4})\s*[-:]?\s*Q([1-4])\s*$", re.IGNORECASE)


def month(year, mon):
    if not 1 <= mon <= 12:
        raise ValueError(f"month of year out of range: {mon}")
    return 12 * year + mon - 1


def quarter(year, qtr):
    if not 1 <= qtr <= 4:
        raise ValueError(f"quarter of year out of range: {qtr}")
    return 4 * year + qtr - 1


def parse_month(text):
    """Parse ``YYYY-MM``, ``YYYY:MM``, ``YYYYMmm`` or a full date (``M/D/YYYY``, ``YYYY-MM-DD``)."""
    s = str(text).strip()
    m = _MONTH_RE.match(s)
    if m:
        return month(int(m.group(1)), int(m.group(2)))
    d = _parse_date(s)
    return month(d.year, d.month)


def parse_quarter(text):
    """Parse ``YYYYQn``/``YYYY:Qn`` or a date; a date maps to the quarter containing it."""
    s = str(text).strip()
    m = _QUARTER_RE.match(s)
    if m:
        return quarter(int(m.group(1)), int(m.group(2)))
    return quarter_of_month(parse_month(s))


def _parse_date(s):
    parts = s.split("/")
    if len(parts) == 3:
        mo, dd, yy = (int(p) for p in parts)
        if yy < 100:
            yy += 1900 if yy >= 50 else 2000
        return date(yy, mo, dd)
    return date.fromisoformat(s)


def format_month(m):
    return f"{m // 12:04d}-{m % 12 + 1:02d}"


def format_quarter(q):
    return f"{q // 4:04d}Q{q % 4 + 1}"


def quarter_of_month(m):
    return (m // 12) * 4 + (m % 12) // 3


def last_month(q):
    """Month stamp of quarter ``q`` (its third month)."""
    return (q // 4) * 12 + (q % 4) * 3 + 2


def scenario_month(q, j):
    """Month ``m_j`` of quarter ``q`` for the j-month information set, j in 1..3."""
    if j not in (1, 2, 3):
        raise ValueError(f"scenario must be 1, 2 or 3, got {j}")
    return last_month(q) - 3 + j


def quarter_of_year(q):
    return q % 4 + 1
