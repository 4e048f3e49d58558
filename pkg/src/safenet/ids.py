"""Identifier grammar for platforms, networks, regions and datasets, and the
integer-second UTC timestamp type.

    apid:<org-label>:<platform-label>
    apni:<org-label>:<network-label>
    ds:<org-label>:<dataset-label>
    arid:iso3166:<CC> | arid:global

Labels are 1-63 characters of ``[a-z0-9.-]`` and may not start or end
with ``.`` or ``-``. Comparison is plain string equality.
"""

from __future__ import annotations

import calendar
import re
import time
from dataclasses import dataclass
from typing import Union

from .errors import BadCountryCode, BadLabel, BadScheme, BadTimestamp

Text = Union[str, bytes]

_LABEL_CHARS = frozenset("abcdefghijklmnopqrstuvwxyz0123456789.-")
MAX_LABEL = 63


def _as_text(text: Text) -> str:
    if isinstance(text, (bytes, bytearray)):
        try:
            return bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise BadScheme(repr(bytes(text)[:32]), exc.start, "input is not valid UTF-8") from None
    if not isinstance(text, str):
        raise BadScheme(repr(text), 0, f"expected a string, got {type(text).__name__}")
    return text


def _check_label(text: str, label: str, start: int, what: str) -> None:
    if not label:
        raise BadLabel(text, start, f"empty {what}")
    if len(label) > MAX_LABEL:
        raise BadLabel(text, start + MAX_LABEL, f"{what} longer than {MAX_LABEL} characters")
    for i, ch in enumerate(label):
        if ch not in _LABEL_CHARS:
            raise BadLabel(text, start + i, f"invalid character {ch!r} in {what}")
    if label[0] in ".-":
        raise BadLabel(text, start, f"{what} starts with {label[0]!r}")
    if label[-1] in ".-":
        raise BadLabel(text, start + len(label) - 1, f"{what} ends with {label[-1]!r}")


def _parse_scoped(text: Text, scheme: str, second: str) -> str:
    s = _as_text(text)
    prefix = scheme + ":"
    if not s.startswith(prefix):
        raise BadScheme(s, 0, f"expected scheme {scheme!r}")
    rest = s[len(prefix):]
    parts = rest.split(":")
    if len(parts) != 2:
        # position of the offending separator, or end of input
        if len(parts) < 2:
            raise BadLabel(s, len(s), f"missing {second}")
        raise BadLabel(s, len(prefix) + len(parts[0]) + len(parts[1]) + 1, "unexpected ':'")
    org, name = parts
    _check_label(s, org, len(prefix), "org-label")
    _check_label(s, name, len(prefix) + len(org) + 1, second)
    return s


@dataclass(frozen=True, order=True)
class Apid:
    value: str

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True, order=True)
class Apni:
    value: str

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True, order=True)
class Arid:
    value: str

    @property
    def is_global(self) -> bool:
        return self.value == ARID_GLOBAL

    def __str__(self) -> str:
        return self.value


ARID_GLOBAL = "arid:global"
_ISO_PREFIX = "arid:iso3166:"


def parse_apid(text: Text) -> Apid:
    return Apid(_parse_scoped(text, "apid", "platform-label"))


def parse_apni(text: Text) -> Apni:
    return Apni(_parse_scoped(text, "apni", "network-label"))


def parse_dataset_id(text: Text) -> str:
    return _parse_scoped(text, "ds", "dataset-label")


def parse_arid(text: Text) -> Arid:
    s = _as_text(text)
    if s == ARID_GLOBAL:
        return Arid(s)
    if not s.startswith(_ISO_PREFIX):
        raise BadScheme(s, 0, "expected 'arid:iso3166:' or 'arid:global'")
    cc = s[len(_ISO_PREFIX):]
    if len(cc) != 2 or not all("A" <= c <= "Z" for c in cc):
        raise BadCountryCode(s, len(_ISO_PREFIX), "country code must be two uppercase letters")
    return Arid(s)


# timestamps

_TS_RE = re.compile(r"\A(\d{4})-(\d{2})-(\d{2})T(\d{2}):(\d{2}):(\d{2})Z\Z")


@dataclass(frozen=True, order=True)
class Timestamp:
    """UTC instant with integer-second resolution, rendered as RFC 3339."""

    epoch: int

    @classmethod
    def parse(cls, text: str) -> "Timestamp":
        if not isinstance(text, str):
            raise BadTimestamp(f"expected RFC 3339 string, got {type(text).__name__}")
        if not _TS_RE.match(text):
            raise BadTimestamp(f"not an RFC 3339 UTC second-resolution timestamp: {text!r}")
        try:
            st = time.strptime(text, "%Y-%m-%dT%H:%M:%SZ")
        except ValueError:
            raise BadTimestamp(f"invalid calendar date: {text!r}") from None
        ts = cls(calendar.timegm(st))
        # strptime accepts some out-of-range values; require an exact round trip
        if str(ts) != text:
            raise BadTimestamp(f"invalid calendar date: {text!r}")
        return ts

    def __str__(self) -> str:
        return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(self.epoch))

    def __add__(self, seconds: int) -> "Timestamp":
        return Timestamp(self.epoch + int(seconds))

    def __sub__(self, other):
        """``t - u`` is seconds between instants; ``t - n`` shifts back ``n`` seconds."""
        if isinstance(other, Timestamp):
            return self.epoch - other.epoch
        return Timestamp(self.epoch - int(other))

    @classmethod
    def now(cls) -> "Timestamp":
        return cls(int(time.time()))


def ts(text: str) -> Timestamp:
    return Timestamp.parse(text)


DAY = 86400
