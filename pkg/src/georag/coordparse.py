"""Extract a latitude/longitude pair from free-form model output."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .geodesy import GeoCoord

_NUM = r"([+-]?(?:\d+(?:\.\d*)?|\.\d+))"
_HEM = r"(?:\s*°?\s*([NSEW])(?![A-Za-z]))?°?"
_START = r"(?<![\w.+-])"

_PAIR_RE = re.compile(_START + _NUM + _HEM + r"\s*,\s*" + _NUM + r"(?![\d.])" + _HEM)
_LABELED_RE = re.compile(
    r"\b(latitude|lat|longitude|long|lng|lon)\b\s*[:=]?\s*" + _NUM + r"(?![\d.])" + _HEM,
    re.IGNORECASE,
)


@dataclass(frozen=True, slots=True)
class ParseOutcome:
    coord: GeoCoord | None
    matched_span: tuple[int, int] | None
    candidates_seen: int


@dataclass(frozen=True, slots=True)
class _Candidate:
    lat: float
    lon: float
    span: tuple[int, int]


def _signed(value: str, hem: str | None) -> float:
    v = float(value)
    if hem in ("S", "W"):
        return -abs(v)
    if hem in ("N", "E"):
        return abs(v)
    return v


def _overlaps(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[0] < b[1] and b[0] < a[1]


def _labeled_pairs(text: str) -> list[_Candidate]:
    pairs = []
    pending = None  # (is_lat, value, span)
    for m in _LABELED_RE.finditer(text):
        is_lat = m.group(1).lower().startswith("lat")
        tok = (is_lat, _signed(m.group(2), m.group(3)), m.span())
        if pending is not None and pending[0] != is_lat:
            lat_tok, lon_tok = (pending, tok) if pending[0] else (tok, pending)
            pairs.append(_Candidate(lat_tok[1], lon_tok[1], (pending[2][0], tok[2][1])))
            pending = None
        else:
            pending = tok
    return pairs


def _unlabeled_pairs(text: str, exclude: list[tuple[int, int]]) -> list[_Candidate]:
    pairs = []
    for m in _PAIR_RE.finditer(text):
        if any(_overlaps(m.span(), s) for s in exclude):
            continue
        a, ha, b, hb = m.groups()
        if ha in ("E", "W") and hb in ("N", "S"):
            a, ha, b, hb = b, hb, a, ha
        pairs.append(_Candidate(_signed(a, ha), _signed(b, hb), m.span()))
    return pairs


def parse_coordinates(text: str) -> ParseOutcome:
    """Return the last range-valid coordinate pair in ``text``.

    Recognised forms are ``a, b`` and ``(a, b)`` (latitude first), and labelled
    ``latitude: a ... longitude: b`` in either order. Trailing hemisphere
    letters are honoured (S and W negate). Never raises.
    """
    labeled = _labeled_pairs(text)
    cands = labeled + _unlabeled_pairs(text, [c.span for c in labeled])
    valid = [c for c in cands if GeoCoord.is_valid(c.lat, c.lon)]
    if not valid:
        return ParseOutcome(None, None, 0)
    last = max(valid, key=lambda c: (c.span[1], c.span[0]))
    return ParseOutcome(GeoCoord(last.lat, last.lon), last.span, len(valid))


def find_all_coordinates(text: str) -> list[GeoCoord]:
    """Every range-valid pair in ``text``, in order of appearance."""
    labeled = _labeled_pairs(text)
    cands = labeled + _unlabeled_pairs(text, [c.span for c in labeled])
    cands.sort(key=lambda c: c.span)
    return [GeoCoord(c.lat, c.lon) for c in cands if GeoCoord.is_valid(c.lat, c.lon)]
