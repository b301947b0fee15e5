import pytest

from urbandiff.geogrid import GridCell, assign_splits


def make_cells(n_per_city, cities=("a", "b")):
    return [
        GridCell(cell_id=f"{city}_{i:04d}", city_id=city)
        for city in cities
        for i in range(n_per_city)
    ]


def test_split_is_80_20_per_city():
    cells = assign_splits(make_cells(10), global_seed=7)
    for city in ("a", "b"):
        ours = [c for c in cells if c.city_id == city]
        assert sum(c.split == "train" for c in ours) == 8
        assert sum(c.split == "test" for c in ours) == 2


def test_split_fraction_within_one_cell():
    for n in (3, 7, 11, 401):
        cells = assign_splits(make_cells(n, cities=("x",)), global_seed=0)
        n_train = sum(c.split == "train" for c in cells)
        assert abs(n_train - 0.8 * n) <= 1.0


def test_split_deterministic_and_order_independent():
    cells = make_cells(25)
    a = assign_splits(cells, global_seed=3)
    b = assign_splits(list(reversed(cells)), global_seed=3)
    split_a = {c.cell_id: c.split for c in a}
    split_b = {c.cell_id: c.split for c in b}
    assert split_a == split_b
    c = assign_splits(cells, global_seed=4)
    assert {x.cell_id: x.split for x in c} != split_a


def test_split_independent_across_cities():
    cells = make_cells(10, cities=("a", "b"))
    joint = assign_splits(cells, global_seed=9)
    only_a = assign_splits([c for c in cells if c.city_id == "a"], global_seed=9)
    expected = {c.cell_id: c.split for c in only_a}
    got = {c.cell_id: c.split for c in joint if c.city_id == "a"}
    assert got == expected


def test_cell_validation():
    with pytest.raises(ValueError):
        GridCell(cell_id="x", city_id="c", size_m=0.0)
    with pytest.raises(ValueError):
        GridCell(cell_id="x", city_id="c", split="validation")
    assert GridCell(cell_id="x", city_id="c").land_area_m2 == 160_000.0
