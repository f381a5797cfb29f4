import cmath
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from amplitude import (
    AmplitudeError,
    AmplitudeProcess,
    TransitionAmplitudeTable,
    action_profile,
    action_table,
    classical_table,
    extreme_scan,
    load_table,
    partition_function,
    path_amplitudes,
    random_table,
    rank1_operator,
    root_of_unity,
    singleton_measure,
    site_amplitude,
    verify_ap_characterization,
    z_scan,
)
from causet import antichain, chain, parse_causet
from growth import NamedPath, approximate
from qmeasure import ProbabilityOperator

SITE_AMPLITUDES = [1, 0.5, 0.5, -0.5, 0.5, 1, 0.25, -0.25]


def test_root_of_unity_quarter_turns_are_exact():
    assert root_of_unity(1, 4) == 1j
    assert root_of_unity(2, 4) == -1
    assert root_of_unity(3, 4) == -1j
    assert root_of_unity(5, 4) == 1j
    assert root_of_unity(3, 3) == 1
    assert root_of_unity(1, 3) == pytest.approx(cmath.exp(2j * cmath.pi / 3))


@pytest.mark.parametrize("text, z", [("1;", 2), ("2;0<1", 1), ("2;", 2)])
def test_partition_function_of_small_causets(text, z):
    assert partition_function(parse_causet(text)).z == pytest.approx(z)
    assert action_profile(parse_causet(text)).z == pytest.approx(z)


def test_closed_form_matches_the_defining_sum(levels):
    for level in levels[:4]:
        for x in level.causets:
            profile = action_profile(x)
            pf = partition_function(x)
            assert profile.z_closed == pytest.approx(profile.z)
            assert pf.z == pytest.approx(profile.z)
            assert (pf.height, pf.width, pf.mild) == (profile.height, profile.width, profile.mild)


def test_profile_record():
    record = action_profile(antichain(2)).record()
    assert record["z"] == {"re": pytest.approx(2.0), "im": pytest.approx(0.0)}
    assert (record["h"], record["w"], record["area"]) == (1, 2, 2)
    assert record["H"] + record["W"] + record["M"] == 4


@pytest.mark.parametrize("j", range(2, 9))
def test_extreme_classes(j):
    c, a = partition_function(chain(j)), partition_function(antichain(j))
    assert (c.height, c.width, c.mild) == (1, j, 0)
    assert (a.height, a.width, a.mild) == (2**j - 1, 1, 0)
    assert c.z == pytest.approx(j + root_of_unity(1, j))
    assert a.z == pytest.approx(2**j - 1 + root_of_unity(1, j))


def test_action_transition_amplitudes(levels):
    table = action_table(levels)
    table.validate()
    assert table.value(2, 0, 0) == pytest.approx(0.5)
    assert table.value(2, 0, 1) == pytest.approx(0.5)
    assert [table.value(3, 0, c) for c in (0, 1, 2)] == pytest.approx([-1, 1, 1])
    assert [table.value(3, 1, c) for c in (2, 3, 4)] == pytest.approx([1, 0.5, -0.5])
    assert table.value(3, 0, 3) == 0


def test_action_path_and_site_amplitudes(action, a3):
    assert_allclose(action.amplitudes(3), a3, atol=1e-12)
    assert_allclose(action.site_amplitudes(3), SITE_AMPLITUDES, atol=1e-12)
    assert_allclose(path_amplitudes(action.table, action.space, 3).values, a3, atol=1e-12)


def test_site_amplitude(action, sites):
    assert site_amplitude(action, sites["x6"]) == pytest.approx(1)
    assert site_amplitude(action, sites["x8"]) == pytest.approx(-0.25)


def test_uniform_site_measures(uniform, sites):
    expected = {"x4": 1 / 6, "x5": 1 / 6, "x6": 5 / 12, "x7": 1 / 8, "x8": 1 / 8}
    for name, value in expected.items():
        assert site_amplitude(uniform, sites[name]).real == pytest.approx(value)
    assert uniform.operator(3).kind == "diagonal"
    uniform.operator(4).validate()


def _signed(level, p, c):
    kids = level.children[p]
    if len(kids) == 1:
        return 1.0
    return 2.0 if c == kids[0] else -1.0 / (len(kids) - 1)


def test_classical_table_rejects_negative_entries(levels):
    with pytest.raises(AmplitudeError):
        classical_table(levels[:3], _signed)
    table = classical_table(levels[:3], _signed, strict=False)
    assert table.indefinite
    assert table.name == "classical"


def test_table_records_round_trip(levels, tmp_path):
    table = action_table(levels[:4])
    path = tmp_path / "table.json"
    path.write_text(json.dumps(table.to_records()), encoding="utf-8")
    loaded = load_table(str(path), levels)
    assert loaded.residual(table) < 1e-12
    assert loaded.name == f"file:{path}"


def test_records_must_be_transitions(levels):
    with pytest.raises(AmplitudeError):
        TransitionAmplitudeTable.from_records(levels, [{"parent": "2;0<1", "child": "2;", "re": 1.0}])
    records = action_table(levels[:3]).to_records()
    with pytest.raises(AmplitudeError):
        TransitionAmplitudeTable.from_records(levels, records[1:])


def test_missing_amplitudes(levels):
    table = TransitionAmplitudeTable(levels, {2: {(0, 0): 1 + 0j}})
    with pytest.raises(AmplitudeError):
        table.value(2, 0, 1)
    with pytest.raises(AmplitudeError):
        table.lookup(2, np.array([0]), np.array([1]))
    with pytest.raises(AmplitudeError):
        path_amplitudes(table, None, 3)


def test_random_tables_are_normalized(levels):
    rng = np.random.default_rng(11)
    for _ in range(5):
        table = random_table(levels[:4], rng)
        table.validate()
        assert max(abs(v) for rows in table.entries.values() for v in rows.values()) <= 2 + 1e-12


def test_singleton_measure_matches_the_operator(levels, space, action):
    for name in ("chain", "antichain"):
        for n in range(2, 6):
            path = NamedPath(name)
            expected = action.operator(n).q_measure(approximate(path, space, n))
            assert singleton_measure(levels, space, path, n) == pytest.approx(expected)
    assert singleton_measure(levels, space, NamedPath("chain"), 4) == pytest.approx(0.25 / 7)
    assert singleton_measure(levels, space, NamedPath("antichain"), 3) == pytest.approx(1 / 16)


def test_action_process_has_the_rank_one_form(action, space):
    operators = [action.operator(n) for n in range(1, 5)]
    report = verify_ap_characterization(operators, space, reference=action.table)
    assert report.passed, report.failures()
    assert report.checks[-2].detail["undetermined"] == 0


@pytest.mark.parametrize("seed", (5, 11, 17))
def test_random_processes_have_the_rank_one_form(levels, space, seed):
    rng = np.random.default_rng(seed)
    table = random_table(levels[:4], rng)
    process = AmplitudeProcess(table, space)
    report = verify_ap_characterization([process.operator(n) for n in range(1, 5)], space, reference=table)
    assert report.passed, report.failures()
    names = [check.name for check in report.checks]
    assert "normalized transition amplitudes" in names
    assert "consistent levels" in names


def test_unnormalized_transitions_are_rejected(action, space):
    a = action.amplitudes(3).copy()
    a[2] += 1e-3
    a[5] -= 1e-3
    operators = [action.operator(1), action.operator(2), ProbabilityOperator(3, amplitudes=a)]
    report = verify_ap_characterization(operators, space)
    assert not report.passed
    passed = {check.name: check.passed for check in report.checks}
    assert passed["rank one"] and passed["product rule"]
    assert report.failures()[0].name == "normalized transition amplitudes"
    assert report.failures()[0].residual == pytest.approx(2e-3)
    assert not passed["consistent levels"]


def test_mixtures_are_rejected(action, uniform, space):
    a, u = action.amplitudes(3), uniform.amplitudes(3)
    mixed = ProbabilityOperator(3, 0.5 * np.outer(a.conj(), a) + 0.5 * np.outer(u.conj(), u))
    report = verify_ap_characterization([action.operator(1), action.operator(2), mixed], space)
    assert not report.passed
    assert report.failures()[0].name == "rank one at level 3"


def test_perturbed_products_are_rejected(action, space):
    operators = [action.operator(n) for n in range(1, 4)]
    rank1 = np.outer(operators[2].amplitudes.conj(), operators[2].amplitudes)
    bumped = rank1.copy()
    bumped[3, 3] *= 1.1
    bumped[4, 4] -= rank1[3, 3] * 0.1
    report = verify_ap_characterization(operators[:2] + [ProbabilityOperator(3, bumped)], space)
    assert not report.passed


def test_z_scan(levels):
    rows = z_scan(levels, 3)
    assert [row["n"] for row in rows] == [1, 2, 3]
    assert rows[1]["min_abs_z"] == pytest.approx(1)
    assert rows[1]["argmin"] == "2;0<1"
    assert rows[1]["max_abs_z"] == pytest.approx(2)


def test_extreme_scan():
    for row in extreme_scan(8):
        j = row["j"]
        assert row["chain_abs_z"] >= row["chain_bound"]
        assert row["antichain_abs_z"] >= row["antichain_bound"]
        assert row["chain_closed_residual"] < 1e-9
        assert row["antichain_closed_residual"] < 1e-9
        assert row["chain_H_W_M"] == [1, j, 0]
        assert row["antichain_H_W_M"] == [2**j - 1, 1, 0]


def test_rank1_operator(action, space, a3):
    op = rank1_operator(path_amplitudes(action.table, space, 3))
    assert op.kind == "rank1"
    assert_allclose(op.matrix, np.outer(a3.conj(), a3), atol=1e-12)
