import numpy as np
import pytest

from netdecode.network import Kind, Network, build_flow_structure


def two_node(cap):
    """Two-node network flow: c = (1, 2), x_bar = (2, 2), one edge 1 -> 2 with capacity ``cap``."""
    return Network(node_count=2, edges=[[0, 1]], cost=[1.0, 2.0], gen_cap=[2.0, 2.0],
                   flow_cap_upper=[cap], flow_cap_lower=[cap], susceptance=[1.0],
                   kind=Kind.NETWORK_FLOW, nominal_load=[0.0, 1.0])


@pytest.fixture
def t1():
    net = two_node(2.0)
    return net, build_flow_structure(net), np.array([0.0, 1.0])


@pytest.fixture
def t2():
    net = two_node(0.5)
    return net, build_flow_structure(net), np.array([0.0, 1.0])


def triangle_opf():
    return Network(node_count=3, edges=[[0, 1], [0, 2], [1, 2]], cost=[1.0, 2.0, 3.0],
                   gen_cap=[3.0, 3.0, 3.0], flow_cap_upper=[0.6, 0.6, 0.6], flow_cap_lower=[0.6, 0.6, 0.6],
                   susceptance=[1.0, 1.0, 1.0], kind=Kind.DC_OPF, nominal_load=[0.3, 0.6, 0.9])


# -- acceptance report ---------------------------------------------------------

ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    """Store one acceptance outcome; printed in the terminal summary."""
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"CRITERION {number}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"CRITERION {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
