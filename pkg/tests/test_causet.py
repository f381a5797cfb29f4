import itertools

import pytest

from causet import (
    Causet,
    CausetError,
    OffspringInvariantError,
    OffspringKind,
    antichain,
    antichain_masks,
    antichains,
    canonical_form,
    chain,
    chain_equivalence_classes,
    classify,
    extend,
    maximal_chains,
    offspring,
    parse_causet,
    producers,
    remove_element,
)


def _naturally_labeled_orders(n):
    """Every transitive relation on 0..n-1 in which i precedes j only if i < j."""
    pairs = list(itertools.combinations(range(n), 2))
    for bits in range(1 << len(pairs)):
        down = [0] * n
        for k, (i, j) in enumerate(pairs):
            if bits >> k & 1:
                down[j] |= 1 << i
        if all(down[i] & ~down[j] == 0 for j in range(n) for i in range(n) if down[j] >> i & 1):
            yield down


def _brute_key(n, down):
    relation = [(i, j) for j in range(n) for i in range(n) if down[j] >> i & 1]
    return min(tuple(sorted((p[i], p[j]) for i, j in relation)) for p in itertools.permutations(range(n)))


@pytest.mark.parametrize("n, expected", [(1, 1), (2, 2), (3, 5), (4, 16), (5, 63)])
def test_canonical_codes_match_brute_force_isomorphism(n, expected):
    by_key, by_code = {}, {}
    for down in _naturally_labeled_orders(n):
        key = _brute_key(n, down)
        code = Causet(n, down).canonical_code
        by_key.setdefault(key, set()).add(code)
        by_code.setdefault(code, set()).add(key)
    assert len(by_key) == expected
    assert all(len(codes) == 1 for codes in by_key.values())
    assert all(len(keys) == 1 for keys in by_code.values())


@pytest.mark.parametrize(
    "text, position",
    [
        ("x", 0),
        ("0;", 0),
        ("10;", 0),
        ("3;0<5", 4),
        ("2;0-1", 2),
        ("3;0<1,", 5),
        ("3;0<1;1<2", 5),
        ("3;0<1,1<0", 2),
    ],
)
def test_parse_errors_report_position(text, position):
    with pytest.raises(CausetError) as e:
        parse_causet(text)
    assert e.value.position == position


def test_parse_takes_the_transitive_closure():
    c = parse_causet("3;0<1,1<2")
    assert c.order[0, 2]
    assert not c.cover[0, 2]
    assert c.covers == [(0, 1), (1, 2)]
    assert c == chain(3)


def test_isomorphic_literals_are_equal():
    assert parse_causet("3;0<2") == parse_causet("3;0<1") == parse_causet("3;1<2")
    assert parse_causet("2;1<0") == chain(2)
    assert parse_causet("3;0<1,0<2") != parse_causet("3;0<2,1<2")
    assert hash(parse_causet("3;2<0")) == hash(parse_causet("3;0<1"))


def test_canonical_form_literals():
    assert canonical_form(parse_causet("3;2<0")).literal() == "3;0<1"
    assert canonical_form(parse_causet("3;1<0,2<0")).literal() == "3;0<2,1<2"
    assert canonical_form(antichain(3)).literal() == "3;"


@pytest.mark.parametrize(
    "text, h, w",
    [("1;", 1, 1), ("3;0<1,1<2", 3, 1), ("3;0<1,0<2", 2, 2), ("3;0<1", 2, 2), ("3;", 1, 3), ("4;0<2,1<2,1<3", 2, 2)],
)
def test_height_width_area(text, h, w):
    c = parse_causet(text)
    assert (c.height, c.width, c.area) == (h, w, h * w)


def test_width_of_larger_orders():
    # two chains of three side by side
    c = parse_causet("6;0<1,1<2,3<4,4<5")
    assert (c.height, c.width) == (3, 2)
    assert antichain(7).width == 7
    assert chain(7).height == 7


@pytest.mark.parametrize("n", range(1, 7))
def test_antichain_counts_of_extremes(n):
    assert len(antichain_masks(chain(n))) == n + 1
    assert len(antichain_masks(antichain(n))) == 2**n


def test_antichains_are_sorted_subsets():
    assert antichains(parse_causet("3;0<1")) == [(), (0,), (1,), (2,), (0, 2), (1, 2)]


@pytest.mark.parametrize(
    "text, total",
    [("3;0<1,1<2", 4), ("3;0<1,0<2", 5), ("3;0<1", 6), ("3;0<2,1<2", 5), ("3;", 8)],
)
def test_offspring_with_multiplicity(text, total):
    records = offspring(parse_causet(text))
    assert sum(r.multiplicity for r in records) == total
    assert total == len(antichain_masks(parse_causet(text)))


def test_offspring_of_the_two_antichain():
    records = {r.child.literal(): (r.multiplicity, r.kind) for r in offspring(antichain(2))}
    assert records == {
        "3;0<1": (2, OffspringKind.HEIGHT),
        "3;0<2,1<2": (1, OffspringKind.HEIGHT),
        "3;": (1, OffspringKind.WIDTH),
    }


def test_offspring_of_the_two_chain():
    records = {r.child.literal(): (r.multiplicity, r.kind) for r in offspring(chain(2))}
    assert records == {
        "3;0<1,1<2": (1, OffspringKind.HEIGHT),
        "3;0<1,0<2": (1, OffspringKind.WIDTH),
        "3;0<1": (1, OffspringKind.WIDTH),
    }


def test_offspring_respects_cap():
    with pytest.raises(CausetError):
        offspring(chain(3), cap=3)


def test_classify_rejects_mixed_changes():
    assert classify(chain(2), chain(3)) == OffspringKind.HEIGHT
    with pytest.raises(OffspringInvariantError):
        classify(chain(2), antichain(3))


def test_extend():
    assert extend(antichain(2), [0, 1]) == parse_causet("3;0<2,1<2")
    assert extend(chain(2), []) == parse_causet("3;0<1")
    with pytest.raises(CausetError):
        extend(chain(2), [0, 1])
    with pytest.raises(CausetError):
        extend(chain(2), [2])


def test_remove_element():
    assert remove_element(parse_causet("3;0<2,1<2"), 2) == antichain(2)
    assert remove_element(parse_causet("3;0<1"), 2) == chain(2)


@pytest.mark.parametrize(
    "text, count",
    [("3;0<1", 2), ("3;0<1,1<2", 1), ("3;0<1,0<2", 1), ("3;0<2,1<2", 1), ("3;", 1), ("2;0<1", 1)],
)
def test_producers_equal_chain_classes(text, count):
    y = parse_causet(text)
    assert len(producers(y)) == count
    assert len(chain_equivalence_classes(y)) == count


def test_maximal_chains():
    assert maximal_chains(parse_causet("3;0<1")) == [(0, 1), (2,)]
    assert maximal_chains(parse_causet("3;0<2,1<2")) == [(0, 2), (1, 2)]


def test_point_has_no_producers():
    with pytest.raises(CausetError):
        producers(chain(1))


def test_record():
    record = parse_causet("3;0<1,0<2").record()
    assert record.size == 3
    assert record.covers == [[0, 1], [0, 2]]
    assert (record.h, record.w, record.area) == (2, 2, 4)
    assert bytes.fromhex(record.canonical) == parse_causet("3;0<1,0<2").canonical_code
