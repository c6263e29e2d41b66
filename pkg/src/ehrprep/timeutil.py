"""Wall-clock timestamp handling.

MIMIC dates are shifted per patient, so only ordering and differences carry
meaning. Timestamps are held as integer seconds since 1970-01-01 00:00:00 in a
naive (timezone-free) calendar.
"""
from datetime import datetime, timedelta

_EPOCH = datetime(1970, 1, 1)
_ONE_SECOND = timedelta(seconds=1)

HOUR = 3600
DAY = 86400


def parse_timestamp(text: str) -> int:
    """Parse ``YYYY-MM-DD HH:MM:SS`` (or a bare ``YYYY-MM-DD``) to epoch seconds."""
    text = text.strip()
    if len(text) == 10:
        dt = datetime.strptime(text, "%Y-%m-%d")
    elif len(text) == 19 and text[10] == " ":
        dt = datetime.fromisoformat(text)
    else:
        raise ValueError(f"unrecognized timestamp {text!r}")
    return (dt - _EPOCH) // _ONE_SECOND


def format_timestamp(seconds: int) -> str:
    return (_EPOCH + timedelta(seconds=int(seconds))).strftime("%Y-%m-%d %H:%M:%S")


def year_of(seconds: int) -> int:
    return (_EPOCH + timedelta(seconds=int(seconds))).year
