"""Prompt templating: exact template strings, slots, and round-trip identity."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from urbandiff.errors import PromptParseError
from urbandiff.geogrid import (
    DensityMetrics,
    LandUseMix,
    PromptSpec,
    parse_prompt,
    render_prompt,
    tokenize_prompt,
)
from urbandiff.geogrid.density import LAND_USE_CATEGORIES
from urbandiff.geogrid.prompts import format_quantity

BOSTON = PromptSpec(
    city_name="Boston",
    metrics=DensityMetrics(bcr=0.3925, bvd=3.29, road_density=37.7),
    land_use=LandUseMix(ratios={"residential": 0.17, "commercial": 0.04, "industrial": 0.30}),
)
BOSTON_TEXT = (
    "Satellite imagery of Boston. The BCR in this area is 39.25%. "
    "The BVD is 3.29 m³/m². The Road Density is 37.7 km/km². "
    "Land use parcels include: 17% residential, 4% commercial, 30% industrial"
)


def test_boston_template_exact():
    assert render_prompt(BOSTON) == BOSTON_TEXT


def test_city_only():
    assert render_prompt(PromptSpec(city_name="Boston")) == "Satellite imagery of Boston."


def test_emission_variant_exact():
    spec = PromptSpec(city_name="Boston", emission_tc=52.3)
    assert (
        render_prompt(spec)
        == "Satellite imagery of Boston. The fossil fuel CO2 emissions in this area are 52.3 tonnes of carbon"
    )


def test_quantity_formatting():
    assert format_quantity(39.25) == "39.25"
    assert format_quantity(37.70) == "37.7"
    assert format_quantity(0.0) == "0"
    assert format_quantity(17.0) == "17"
    assert format_quantity(3.2899999) == "3.29"
    with pytest.raises(ValueError):
        format_quantity(-1.0)


def test_boston_round_trip():
    spec = parse_prompt(BOSTON_TEXT)
    assert render_prompt(spec) == BOSTON_TEXT
    assert spec.city_name == "Boston"
    assert spec.metrics.bcr == pytest.approx(0.3925, abs=1e-12)
    assert spec.metrics.bvd == 3.29
    assert spec.metrics.road_density == 37.7
    assert spec.land_use.ratios["industrial"] == pytest.approx(0.30, abs=1e-12)


def test_zero_bvd_parse():
    spec = parse_prompt("Satellite imagery of Kigali. The BVD is 0 m³/m².")
    assert spec.metrics.bvd == 0.0
    slots = spec.numeric_slots()
    assert len(slots) == 1
    assert slots[0].value == 0.0
    assert slots[0].unit == "m³/m²"


def test_numeric_slots_enumerate_in_order():
    slots = BOSTON.numeric_slots()
    values = [s.value for s in slots]
    units = [s.unit for s in slots]
    assert values == [39.25, 3.29, 37.7, 17.0, 4.0, 30.0]
    assert units == ["%", "m³/m²", "km/km²", "%", "%", "%"]
    tokens = tokenize_prompt(BOSTON_TEXT)
    for slot in slots:
        assert tokens[slot.token_index].is_numeral
        assert tokens[slot.token_index].value == slot.value


def test_slots_cover_free_text_numerals():
    spec = PromptSpec(city_name="Oslo", free_text="built after 1950")
    slots = spec.numeric_slots()
    assert len(slots) == 1
    assert slots[0].value == 1950.0
    assert slots[0].unit == ""


def test_parse_accepts_unstripped_dialect():
    spec = parse_prompt("Satellite imagery of Lyon. The BVD is 3.20 m³/m².")
    assert spec.metrics.bvd == 3.2
    assert render_prompt(spec) == "Satellite imagery of Lyon. The BVD is 3.2 m³/m²."


def test_parse_errors_carry_position():
    with pytest.raises(PromptParseError) as err:
        parse_prompt("Aerial view of Boston.")
    assert err.value.position == 0
    with pytest.raises(PromptParseError):
        parse_prompt("Satellite imagery of Boston. Land use parcels include: x% residential")
    with pytest.raises(PromptParseError) as err2:
        parse_prompt("Satellite imagery of Boston.unexpected")
    assert err2.value.position > 0


def _random_spec(rng) -> PromptSpec:
    cities = ("Boston", "Kigali", "Lyon", "Atlanta", "Nairobi", "Porto")
    metrics = DensityMetrics(
        bcr=round(float(rng.uniform(0, 0.95)), 4) if rng.random() < 0.7 else None,
        bvd=round(float(rng.uniform(0, 25)), 2) if rng.random() < 0.7 else None,
        rpd=round(float(rng.uniform(0, 0.1)), 2) if rng.random() < 0.3 else None,
        rvc=round(float(rng.uniform(0, 900)), 2) if rng.random() < 0.3 else None,
        road_density=round(float(rng.uniform(0, 60)), 2) if rng.random() < 0.5 else None,
    )
    land_use = None
    if rng.random() < 0.6:
        k = int(rng.integers(1, 5))
        cats = list(rng.choice(LAND_USE_CATEGORIES, size=k, replace=False))
        raw = rng.dirichlet(np.ones(k)) * rng.uniform(0.2, 0.99)
        ratios = {c: round(float(v), 4) for c, v in zip(cats, raw)}
        land_use = LandUseMix(ratios=ratios)
    return PromptSpec(
        city_name=str(rng.choice(cities)),
        metrics=metrics,
        land_use=land_use,
        emission_tc=round(float(rng.uniform(0, 300)), 2) if rng.random() < 0.3 else None,
        free_text="dense historic core" if rng.random() < 0.3 else "",
    )


def test_thousand_random_round_trips(rng):
    for _ in range(1000):
        spec = _random_spec(rng)
        text = render_prompt(spec)
        back = parse_prompt(text)
        assert render_prompt(back) == text
        for name in ("bcr", "bvd", "rpd", "rvc", "road_density"):
            a, b = getattr(spec.metrics, name), getattr(back.metrics, name)
            if a is None:
                assert b is None
            else:
                assert b == pytest.approx(a, abs=5e-3)  # two rendered decimals
        if spec.land_use is None:
            assert back.land_use is None
        else:
            for cat, ratio in spec.land_use.ratios.items():
                assert back.land_use.ratios[cat] == pytest.approx(ratio, abs=5e-5)


@given(
    bcr=st.one_of(st.none(), st.decimals(min_value=0, max_value=0.95, places=4).map(float)),
    bvd=st.one_of(st.none(), st.decimals(min_value=0, max_value=30, places=2).map(float)),
    city=st.sampled_from(["Boston", "Quito", "Lagos", "Hanoi"]),
)
def test_round_trip_property(bcr, bvd, city):
    spec = PromptSpec(city_name=city, metrics=DensityMetrics(bcr=bcr, bvd=bvd))
    text = render_prompt(spec)
    back = parse_prompt(text)
    assert render_prompt(back) == text
    slots = back.numeric_slots()
    assert len(slots) == sum(v is not None for v in (bcr, bvd))
