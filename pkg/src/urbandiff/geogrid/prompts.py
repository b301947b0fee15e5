"""Prompt templating with numeric slots, and its inverse parser.

The rendered template is fixed:

    Satellite imagery of {city}.[ The BCR in this area is {v}%.][ The BVD is
    {v} m³/m².][ The Road Density is {v} km/km².][ The RPD in this area is
    {v} persons/m².][ The RVC is {v} m³/person.][ The fossil fuel CO2
    emissions in this area are {v} tonnes of carbon][ Land use parcels
    include: {p}% residential, {p}% commercial, ...][ {free_text}]

Numbers render with two decimals, trailing zeros (and a bare trailing dot)
stripped, so 0.3925 becomes "39.25" as a percent and 37.70 becomes "37.7".
The parser accepts unstripped variants ("37.70") but canonical rendering is
stripped; round-trips are exact for canonically rendered strings.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import NamedTuple

from urbandiff.errors import PromptParseError
from urbandiff.geogrid.density import LAND_USE_CATEGORIES, DensityMetrics, LandUseMix


class NumericSlot(NamedTuple):
    """One numeral in a rendered prompt: position in token stream, value, unit."""

    token_index: int
    value: float
    unit: str


class Token(NamedTuple):
    text: str
    is_numeral: bool
    value: float | None


_TOKEN_RE = re.compile(r"\d+(?:\.\d+)?|[A-Za-z]+|[^\sA-Za-z0-9]")
_NUMERAL_RE = re.compile(r"\d+(?:\.\d+)?")

UNIT_PERCENT = "%"
UNIT_BVD = "m³/m²"
UNIT_ROAD = "km/km²"
UNIT_RPD = "persons/m²"
UNIT_RVC = "m³/person"
UNIT_EMISSION = "tonnes of carbon"
UNIT_NONE = ""

# Clause order is fixed; each entry is (metric name, sentence builder, unit).
_METRIC_CLAUSES = (
    ("bcr", lambda v: f" The BCR in this area is {format_quantity(v * 100.0)}%.", UNIT_PERCENT),
    ("bvd", lambda v: f" The BVD is {format_quantity(v)} m³/m².", UNIT_BVD),
    ("road_density", lambda v: f" The Road Density is {format_quantity(v)} km/km².", UNIT_ROAD),
    ("rpd", lambda v: f" The RPD in this area is {format_quantity(v)} persons/m².", UNIT_RPD),
    ("rvc", lambda v: f" The RVC is {format_quantity(v)} m³/person.", UNIT_RVC),
)

_CITY_RE = re.compile(r"^Satellite imagery of (?P<city>[^.]+)\.")
_CLAUSE_RES = {
    "bcr": re.compile(r"^ The BCR in this area is (?P<v>\d+(?:\.\d+)?)%\."),
    "bvd": re.compile(r"^ The BVD is (?P<v>\d+(?:\.\d+)?) m³/m²\."),
    "road_density": re.compile(r"^ The Road Density is (?P<v>\d+(?:\.\d+)?) km/km²\."),
    "rpd": re.compile(r"^ The RPD in this area is (?P<v>\d+(?:\.\d+)?) persons/m²\."),
    "rvc": re.compile(r"^ The RVC is (?P<v>\d+(?:\.\d+)?) m³/person\."),
}
_EMISSION_RE = re.compile(
    r"^ The fossil fuel CO2 emissions in this area are (?P<v>\d+(?:\.\d+)?) tonnes of carbon"
)
_CATEGORY_DISPLAY = {name: name.replace("_", " ") for name in LAND_USE_CATEGORIES}
_CATEGORY_FROM_DISPLAY = {v: k for k, v in _CATEGORY_DISPLAY.items()}

_LANDUSE_HEAD_RE = re.compile(r"^ Land use parcels include: ")
_CATEGORY_ALTERNATION = "|".join(
    re.escape(name) for name in sorted(_CATEGORY_FROM_DISPLAY, key=len, reverse=True)
)
_LANDUSE_ITEM_RE = re.compile(
    rf"^(?P<p>\d+(?:\.\d+)?)% (?P<cat>{_CATEGORY_ALTERNATION})"
)


def format_quantity(value: float) -> str:
    """Format with two decimals, stripping trailing zeros and a bare dot."""
    if value < 0:
        raise ValueError(f"prompt quantities are nonnegative, got {value}")
    text = f"{round(value + 0.0, 2):.2f}"
    return text.rstrip("0").rstrip(".") or "0"


def tokenize_prompt(text: str) -> list[Token]:
    """Split prompt text into word / numeral / punctuation tokens.

    Word tokens are lowercased (the conditioning vocabulary is case-free);
    numerals keep their value. This tokenizer is the shared canonical one:
    numeric_slots token indices refer to this stream.
    """
    tokens = []
    for match in _TOKEN_RE.finditer(text):
        raw = match.group(0)
        if _NUMERAL_RE.fullmatch(raw):
            tokens.append(Token(raw, True, float(raw)))
        else:
            tokens.append(Token(raw.lower(), False, None))
    return tokens


@dataclass(frozen=True)
class PromptSpec:
    """Structured content of one prompt."""

    city_name: str
    metrics: DensityMetrics = field(default_factory=DensityMetrics)
    land_use: LandUseMix | None = None
    emission_tc: float | None = None
    free_text: str = ""

    def numeric_slots(self) -> tuple[NumericSlot, ...]:
        """Every numeral in the rendered template, in token order."""
        return extract_numeric_slots(render_prompt(self))


def render_prompt(spec: PromptSpec) -> str:
    parts = [f"Satellite imagery of {spec.city_name}."]
    for name, clause, _unit in _METRIC_CLAUSES:
        value = getattr(spec.metrics, name)
        if value is not None:
            parts.append(clause(value))
    if spec.emission_tc is not None:
        parts.append(
            f" The fossil fuel CO2 emissions in this area are "
            f"{format_quantity(spec.emission_tc)} tonnes of carbon"
        )
    if spec.land_use is not None and spec.land_use.ratios:
        items = [
            f"{format_quantity(spec.land_use.ratios[cat] * 100.0)}% {_CATEGORY_DISPLAY[cat]}"
            for cat in LAND_USE_CATEGORIES
            if cat in spec.land_use.ratios
        ]
        parts.append(" Land use parcels include: " + ", ".join(items))
    if spec.free_text:
        parts.append(" " + spec.free_text)
    return "".join(parts)


def extract_numeric_slots(text: str) -> tuple[NumericSlot, ...]:
    """Locate every numeral in tokenized text and attach its unit.

    Units are recognized from the tokens that follow the numeral ("%", the
    m³/m² group, ...); numerals with no recognized unit (free text) get the
    empty unit.
    """
    tokens = tokenize_prompt(text)
    slots = []
    for i, token in enumerate(tokens):
        if not token.is_numeral:
            continue
        slots.append(NumericSlot(i, token.value, _unit_after(tokens, i)))
    return tuple(slots)


def _unit_after(tokens: list[Token], i: int) -> str:
    tail = "".join(t.text for t in tokens[i + 1 : i + 6])
    tail_spaced = " ".join(t.text for t in tokens[i + 1 : i + 5])
    if tail.startswith("%"):
        return UNIT_PERCENT
    if tail.startswith("m³/m²"):
        return UNIT_BVD
    if tail.startswith("km/km²"):
        return UNIT_ROAD
    if tail.startswith("persons/m²"):
        return UNIT_RPD
    if tail.startswith("m³/person"):
        return UNIT_RVC
    if tail_spaced.startswith("tonnes of carbon"):
        return UNIT_EMISSION
    return UNIT_NONE


def parse_prompt(text: str) -> PromptSpec:
    """Invert render_prompt, accepting slightly unstripped numeral dialects.

    Raises PromptParseError (with character position) when the text deviates
    from the template grammar.
    """
    match = _CITY_RE.match(text)
    if not match:
        raise PromptParseError("prompt must start with 'Satellite imagery of {city}.'", 0)
    city = match.group("city")
    pos = match.end()

    values: dict[str, float] = {}
    for name in _CLAUSE_RES:
        m = _CLAUSE_RES[name].match(text[pos:])
        if m:
            raw = m.group("v")
            values[name] = float(raw) / 100.0 if name == "bcr" else float(raw)
            pos += m.end()

    emission = None
    m = _EMISSION_RE.match(text[pos:])
    if m:
        emission = float(m.group("v"))
        pos += m.end()

    land_use = None
    m = _LANDUSE_HEAD_RE.match(text[pos:])
    if m:
        pos += m.end()
        ratios: dict[str, float] = {}
        while True:
            item = _LANDUSE_ITEM_RE.match(text[pos:])
            if not item:
                raise PromptParseError("expected '{p}% {category}' in land-use list", pos)
            ratios[_CATEGORY_FROM_DISPLAY[item.group("cat")]] = float(item.group("p")) / 100.0
            pos += item.end()
            if text[pos : pos + 2] == ", ":
                pos += 2
                continue
            break
        land_use = LandUseMix(ratios=ratios)

    free_text = ""
    rest = text[pos:]
    if rest:
        if not rest.startswith(" "):
            raise PromptParseError(f"unparseable prompt tail {rest[:40]!r}", pos)
        free_text = rest[1:]

    metrics = DensityMetrics(
        bcr=values.get("bcr"),
        bvd=values.get("bvd"),
        rpd=values.get("rpd"),
        rvc=values.get("rvc"),
        road_density=values.get("road_density"),
    )
    return PromptSpec(
        city_name=city,
        metrics=metrics,
        land_use=land_use,
        emission_tc=emission,
        free_text=free_text,
    )
