import json

import numpy as np
import pytest

from netdecode.errors import DisconnectedGraph, InvalidParam, ParseError, ValidationError
from netdecode.network import (
    Kind,
    Network,
    build_flow_structure,
    embedded_case,
    load_network,
    random_connected_network,
    save_network,
    weighted_cycle_residuals,
)

from conftest import triangle_opf, two_node


def test_two_node_flow_structure_is_identity():
    st = build_flow_structure(two_node(2.0))
    np.testing.assert_array_equal(st.cycle_map, [[1.0]])
    np.testing.assert_array_equal(st.reduced_incidence, [[-1.0], [1.0]])
    np.testing.assert_array_equal(st.incidence, st.reduced_incidence)
    np.testing.assert_allclose(st.scaled_cycle_map, [[0.5]])


def test_triangle_opf_cycle_sums_vanish():
    net = triangle_opf()
    st = build_flow_structure(net)
    assert st.cycle_map.shape == (3, 2)
    np.testing.assert_array_equal(st.spanning_tree, [0, 1])
    np.testing.assert_array_equal(st.cycle_map[st.spanning_tree], np.eye(2))
    rng = np.random.default_rng(0)
    for _ in range(20):
        w = rng.standard_normal(2)
        assert np.all(np.abs(weighted_cycle_residuals(st, st.cycle_map @ w)) < 1e-10)
    np.testing.assert_array_equal(st.reduced_incidence, st.incidence @ st.cycle_map)


def test_three_bus_variable_count():
    net = embedded_case("three_bus")
    assert net.variable_count == 5
    assert net.inequality_count == 12
    assert net.active_budget == 2
    np.testing.assert_array_equal(net.cost, [1.0, 1.5, 2.4])


def test_random_network_shape_and_determinism():
    a = random_connected_network(20, 0.7, seed=1)
    b = random_connected_network(20, 0.7, seed=1)
    assert a.m == 19 + 14
    assert a.content_hash() == b.content_hash()
    np.testing.assert_array_equal(a.edges, b.edges)
    st = build_flow_structure(a)
    np.testing.assert_array_equal(st.cycle_map, np.eye(a.m))


def test_random_network_large():
    net = random_connected_network(1000, 0.7, seed=7)
    assert net.n == 1000 and net.m == 999 + 700
    assert 2 * net.n == 2000


def test_random_network_rejects_tiny():
    with pytest.raises(InvalidParam):
        random_connected_network(1)


def test_random_opf_structure_invariants():
    net = random_connected_network(12, 0.7, seed=4, kind=Kind.DC_OPF)
    st = build_flow_structure(net)
    np.testing.assert_array_equal(st.cycle_map[st.spanning_tree], np.eye(net.n - 1))
    np.testing.assert_allclose(st.scaled_cycle_map, st.cycle_map / net.flow_cap_upper[:, None])
    rng = np.random.default_rng(1)
    res = weighted_cycle_residuals(st, st.cycle_map @ rng.standard_normal(net.n - 1))
    assert np.max(np.abs(res)) < 1e-10


def _case(**over):
    d = {"kind": "dc_opf", "nodes": 3, "edges": [[1, 2, 1, 1, 1], [2, 3, 1, 1, 1]],
         "cost": [1, 2, 3], "gen_cap": [1, 1, 1], "nominal_load": [0.1, 0.2, 0.3]}
    d.update(over)
    return d


def test_load_network_roundtrip(tmp_path):
    net = embedded_case("three_bus")
    path = tmp_path / "case.json"
    save_network(net, path)
    back = load_network(path)
    assert back.content_hash() == net.content_hash()
    np.testing.assert_array_equal(back.cost, [1.0, 1.5, 2.4])


def test_load_network_zero_susceptance(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(_case(edges=[[1, 2, 1, 1, 0], [2, 3, 1, 1, 1]])))
    with pytest.raises(ValidationError):
        load_network(path)


def test_load_network_asymmetric_opf_caps(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(_case(edges=[[1, 2, 1, 0.5, 1], [2, 3, 1, 1, 1]])))
    with pytest.raises(ValidationError):
        load_network(path)


def test_load_network_parse_errors(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ParseError):
        load_network(path)
    d = _case()
    del d["cost"]
    path.write_text(json.dumps(d))
    with pytest.raises(ParseError) as exc:
        load_network(path)
    assert exc.value.field == "cost"


def test_disconnected_structure():
    with pytest.raises(ValidationError):
        Network(node_count=4, edges=[[0, 1], [2, 3]], cost=[1] * 4, gen_cap=[1] * 4,
                flow_cap_upper=[1, 1], flow_cap_lower=[1, 1], susceptance=[1, 1], kind=Kind.NETWORK_FLOW)


def test_self_loop_rejected():
    with pytest.raises(ValidationError):
        Network(node_count=2, edges=[[0, 1], [1, 1]], cost=[1, 1], gen_cap=[1, 1],
                flow_cap_upper=[1, 1], flow_cap_lower=[1, 1], susceptance=[1, 1], kind=Kind.NETWORK_FLOW)


def test_disconnected_graph_error_type():
    assert issubclass(DisconnectedGraph, Exception)


def test_embedded_cases_load():
    for name in ("three_bus", "ring6", "triangle_nf", "ieee14_analog"):
        net = embedded_case(name)
        build_flow_structure(net)
        assert net.nominal_load is not None
    with pytest.raises(InvalidParam):
        embedded_case("nope")
