import json

import numpy as np
import pytest

import growth
from causet import antichain, antichain_masks, chain, chain_equivalence_classes, offspring, parse_causet, producers
from growth import (
    Complement,
    CylOf,
    GrowthError,
    Intersection,
    NamedPath,
    PathSpace,
    SetSpecError,
    SiteOf,
    Union,
    approximate,
    build_levels,
    comparable,
    enumerate_paths,
    levels_from_dict,
    levels_to_dict,
    load_levels,
    load_levels_json,
    one_step,
    parse_path,
    parse_setspec,
    paths_through,
    save_levels_json,
    site_indicator,
)


def test_level_sizes(levels):
    assert [len(level.causets) for level in levels] == [1, 2, 5, 16, 63]


def test_levels_are_in_canonical_order(levels):
    assert [c.literal() for c in levels[1].causets] == ["2;0<1", "2;"]
    assert [c.literal() for c in levels[2].causets] == ["3;0<1,1<2", "3;0<1,0<2", "3;0<1", "3;0<2,1<2", "3;"]
    for level in levels:
        codes = [c.canonical_code for c in level.causets]
        assert codes == sorted(codes)


def test_transitions_into_level_three(levels):
    assert levels[2].transitions == {(0, 0): 1, (0, 1): 1, (0, 2): 1, (1, 2): 2, (1, 3): 1, (1, 4): 1}
    assert levels[2].children == {0: (0, 1, 2), 1: (2, 3, 4)}
    assert levels[2].parents[2] == (0, 1)
    assert levels[2].offspring_total(1) == 4


def test_offspring_totals_match_antichains(levels):
    for n in range(1, 5):
        for i, x in enumerate(levels[n - 1].causets):
            assert levels[n].offspring_total(i) == len(antichain_masks(x))


@pytest.fixture(scope="module")
def deep_levels():
    return build_levels(7)


@pytest.mark.slow
@pytest.mark.parametrize("n, size", list(enumerate([1, 2, 5, 16, 63, 318, 2045], start=1)))
def test_level_sizes_up_to_seven(deep_levels, n, size):
    assert len(deep_levels[n - 1].causets) == size


@pytest.mark.slow
@pytest.mark.parametrize("n", range(1, 7))
def test_offspring_with_multiplicity_match_antichains(deep_levels, n):
    for i, x in enumerate(deep_levels[n - 1].causets):
        total = sum(record.multiplicity for record in offspring(x))
        assert total == len(antichain_masks(x)), x.literal()
        assert deep_levels[n].offspring_total(i) == total, x.literal()
        assert n + 1 <= total <= 2**n


@pytest.mark.slow
@pytest.mark.parametrize("n", range(2, 7))
def test_producers_match_classes_of_maximal_chains(deep_levels, n):
    for i, y in enumerate(deep_levels[n - 1].causets):
        count = len(producers(y))
        assert count == len(chain_equivalence_classes(y)), y.literal()
        assert count == len(deep_levels[n - 1].parents[i]), y.literal()


def test_build_levels_errors():
    with pytest.raises(GrowthError):
        build_levels(0)
    with pytest.raises(GrowthError) as e:
        build_levels(4, max_causets=10)
    assert e.value.level == 3


def test_build_levels_resumes(levels):
    resumed = build_levels(4, start=levels[:2])
    assert [len(level.causets) for level in resumed] == [1, 2, 5, 16]
    assert resumed[3].transitions == levels[3].transitions


def test_paths_of_length_three(space):
    assert space.paths(3).tolist() == [[0, 0, 0], [0, 0, 1], [0, 0, 2], [0, 1, 2], [0, 1, 3], [0, 1, 4]]
    assert space.size(2) == 2
    assert space.size(1) == 1
    assert space.parents(3).tolist() == [0, 0, 0, 1, 1, 1]


def test_enumerate_paths(levels):
    assert enumerate_paths(levels, 2) == [(0, 0), (0, 1)]


def test_path_budget(levels):
    with pytest.raises(GrowthError):
        PathSpace(levels, max_paths=3).paths(3)


def test_paths_beyond_the_levels(space):
    with pytest.raises(GrowthError):
        space.paths(9)


def test_one_step(space):
    mask = np.array([True, False])
    assert one_step(space, mask).tolist() == [True, True, True, False, False, False]


def test_paths_through_a_site(space, sites):
    assert np.flatnonzero(paths_through(space, sites["x6"], 3)).tolist() == [2, 3]
    assert paths_through(space, sites["x2"], 3).sum() == 3


def test_site_indicator(space):
    s = site_indicator(space, 3).toarray()
    assert s.shape == (8, 6)
    assert s[0].tolist() == [1] * 6
    assert s[5].tolist() == [0, 0, 1, 1, 0, 0]
    assert (s.sum(axis=0) == 3).all()


def test_comparable(space, sites):
    assert comparable(space, sites["x2"], sites["x6"])
    assert comparable(space, sites["x3"], sites["x6"])
    assert not comparable(space, sites["x2"], sites["x3"])
    assert not comparable(space, sites["x3"], sites["x4"])


def test_parse_path(space):
    assert parse_path("1;|2;|3;0<1", space) == [0, 1, 2]
    with pytest.raises(SetSpecError):
        parse_path("1;|2;|3;0<1,1<2", space)
    with pytest.raises(SetSpecError):
        parse_path("1;|3;", space)


def test_cylinder_sets(space):
    spec = CylOf((parse_causet("1;"), parse_causet("2;0<1")))
    assert np.flatnonzero(approximate(spec, space, 3)).tolist() == [0, 1, 2]
    assert approximate(spec, space, 4).sum() == len(np.flatnonzero(space.paths(4)[:, 1] == 0))


def test_named_paths(space):
    assert NamedPath("chain").entries(space, 4) == [0, 0, 0, 0]
    assert NamedPath("antichain").entries(space, 4) == [0, 1, 4, 15]
    assert NamedPath("prefix", (parse_causet("1;"), parse_causet("2;"))).entries(space, 3) == [0, 1, 2]
    mask = approximate(NamedPath("antichain"), space, 3)
    assert np.flatnonzero(mask).tolist() == [5]


def test_complement_semantics(space):
    spec = Complement(NamedPath("chain"))
    assert approximate(spec, space, 3).sum() == 5
    assert approximate(spec, space, 3, strict=True).sum() == 6
    site = Complement(SiteOf(chain(2)))
    assert approximate(site, space, 3).tolist() == approximate(site, space, 3, strict=True).tolist()


def test_union_and_intersection(space):
    x6 = SiteOf(parse_causet("3;0<1"))
    x3 = SiteOf(antichain(2))
    assert np.flatnonzero(approximate(Union(x6, NamedPath("chain")), space, 3)).tolist() == [0, 2, 3]
    assert np.flatnonzero(approximate(Intersection(x6, x3), space, 3)).tolist() == [3]


def test_event_deeper_than_level(space):
    with pytest.raises(SetSpecError):
        approximate(SiteOf(parse_causet("3;")), space, 2)


def test_parse_setspec():
    spec = parse_setspec("not(site:3;0<1) & (cyl:1;|2; + path:chain)")
    assert isinstance(spec, Intersection)
    assert isinstance(spec.left, Complement)
    assert isinstance(spec.right, Union)
    assert str(parse_setspec("path:antichain")) == "path:antichain"
    assert parse_setspec("site:3;0<1").depth == 3


@pytest.mark.parametrize(
    "text, position",
    [("bogus", 0), ("cyl:1;|2;0<5", 11), ("not(site:3;", 11), ("site:1;|2;", 5), ("site:3; site:3;", 8)],
)
def test_parse_setspec_errors(text, position):
    with pytest.raises(SetSpecError) as e:
        parse_setspec(text)
    assert e.value.position == position


def test_levels_round_trip_through_dict(levels):
    again = levels_from_dict(json.loads(json.dumps(levels_to_dict(levels[:4]))))
    assert [level.causets for level in again] == [level.causets for level in levels[:4]]
    assert again[3].transitions == levels[3].transitions
    assert again[2].kinds == levels[2].kinds


def test_bad_cache_is_ignored(tmp_path):
    path = tmp_path / "levels.json"
    path.write_text('{"levels": [{"n": 2, "causets": ["zz"], "transitions": []}]}', encoding="utf-8")
    assert load_levels_json(str(path)) is None


def test_load_levels_uses_the_json_cache(tmp_path, levels, monkeypatch):
    path = str(tmp_path / "levels.json")
    assert save_levels_json(levels[:3], path)
    monkeypatch.setattr(growth, "USE_DATABASE", False)
    built = load_levels(4, path=path)
    assert len(built) == 4
    assert len(load_levels_json(path)) == 4

    def fail(*args, **kwargs):
        raise AssertionError("levels should come from the cache")

    monkeypatch.setattr(growth, "build_levels", fail)
    assert [len(level.causets) for level in load_levels(3, path=path)] == [1, 2, 5]


def test_load_levels_without_cache(tmp_path):
    path = tmp_path / "levels.json"
    assert len(load_levels(3, use_cache=False, path=str(path))) == 3
    assert not path.exists()
