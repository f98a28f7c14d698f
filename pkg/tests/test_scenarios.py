import numpy as np
import pytest
import yaml

from xmpc.scenarios import (HISTORY_VARS, HISTORY_WINDOW, ScenarioError, dump_scenario, greenhouse_suite,
                            history_window, load_scenario, scenario_to_dict, simulate_history, testbed_suite)


def test_suite_shape(suite_scenarios):
    assert len(suite_scenarios) == 20
    ids = [s.id for s in suite_scenarios]
    assert ids == sorted(ids) and len(set(ids)) == 20
    assert all(s.truth is not None and s.truth.true_causal_factors for s in suite_scenarios)
    assert all(s.forecast.shape == (16, 4) for s in suite_scenarios)


def test_suite_is_seeded(suite_scenarios):
    again = greenhouse_suite(0)
    assert [dump_scenario(s) for s in again] == [dump_scenario(s) for s in suite_scenarios]
    other = greenhouse_suite(1)
    assert not np.array_equal(other[0].forecast, suite_scenarios[0].forecast)


@pytest.mark.parametrize("kind, model", [("thermal-zone", "thermal-zone"), ("reactor-chain", "reactor-chain")])
def test_testbed_suites(kind, model):
    suite = testbed_suite(kind, 0)
    assert len(suite) == 10
    assert {s.model for s in suite} == {model}
    with pytest.raises(ValueError):
        testbed_suite("boiler")


def _roundtrip(s):
    back = load_scenario(dump_scenario(s))
    assert back.id == s.id and back.family == s.family and back.model == s.model
    assert back.params == s.params
    np.testing.assert_array_equal(back.forecast, s.forecast)
    assert back.x0 == tuple(s.x0)
    assert back.truth == s.truth
    assert dump_scenario(back) == dump_scenario(s)


def test_greenhouse_roundtrip(suite_scenarios):
    for s in suite_scenarios:
        _roundtrip(s)


def test_testbed_roundtrip():
    _roundtrip(testbed_suite("reactor-chain", 0)[0])


def test_roundtrip_through_file(tmp_path, cold_scenario):
    path = tmp_path / "s.yaml"
    path.write_text(dump_scenario(cold_scenario))
    assert load_scenario(path).id == cold_scenario.id


def _broken(s, edit):
    doc = scenario_to_dict(s)
    edit(doc)
    return yaml.safe_dump(doc)


@pytest.mark.parametrize("edit, fragment", [
    (lambda d: d.pop("header"), "malformed"),
    (lambda d: d["header"].update(model="boiler"), "unsupported model"),
    (lambda d: d["header"].update(disturbances=["a", "b", "c", "d"]), "disturbance columns"),
    (lambda d: d.update(forecast=d["forecast"][:3]), "shape"),
    (lambda d: d["forecast"][0].__setitem__(0, None), "malformed|missing"),
    (lambda d: d.update(x0=[1.0]), "x0"),
])
def test_invalid_documents(cold_scenario, edit, fragment):
    with pytest.raises(ScenarioError, match=fragment):
        load_scenario(_broken(cold_scenario, edit))


def test_not_a_mapping():
    with pytest.raises(ScenarioError, match="mapping"):
        load_scenario("- 1\n- 2\n")
    with pytest.raises(ScenarioError, match="YAML"):
        load_scenario("a: [")


def test_history_process():
    table = simulate_history(300, seed=2)
    assert table.variables == HISTORY_VARS
    assert table.samples.shape == (300, len(HISTORY_VARS))
    assert np.all((table.samples[:, 4:] >= 0) & (table.samples[:, 4:] <= 1))


def test_cold_spell_window():
    w = history_window(5, cold_spell=2.5)
    assert all(len(v) == HISTORY_WINDOW for v in w.values())
    for lag in range(6, 12):
        assert w["T_out"][-1 - lag] == pytest.approx(15.0 - 2.5 * 5.0)
    calm = history_window(5)
    assert min(calm["T_out"]) >= 15.0 - 1.5 * 5.0 - 1e-12
