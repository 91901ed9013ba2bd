import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tdmargin.netmodel import ModelError, load_transmission
from tdmargin.txsolver import (
    ContinuationError,
    ContinuationParams,
    attach_boundary_load,
    power_residual,
    solve_powerflow,
    trace_pv_curve,
)


def test_ieee9_base_case(ieee9):
    sol = solve_powerflow(ieee9)
    assert sol.converged and sol.iterations <= 6
    assert sol.vm("9") == pytest.approx(0.9576, abs=1e-4)
    assert sol.vm("5") == pytest.approx(0.9755, abs=1e-4)
    assert sol.slack_p == pytest.approx(71.95, abs=0.05)
    assert power_residual(ieee9, sol) < 1e-8


@given(st.floats(0.0, 1.6), st.floats(0.0, 1.6), st.floats(0.0, 1.6))
def test_residual_on_every_converged_solve(k5, k7, k9):
    net = load_transmission("ieee9.json")
    inj = {"5": (90 * k5, 30 * k5), "7": (100 * k7, 35 * k7), "9": (125 * k9, 50 * k9)}
    sol = solve_powerflow(net, inj)
    if sol.converged:
        net2 = net
        for b, (p, q) in inj.items():
            net2 = attach_boundary_load(net2, b, p, q)
        assert power_residual(net2, sol) < 1e-8


def test_injections_equal_attached_loads(ieee9):
    a = solve_powerflow(ieee9, {"9": (60.0, 10.0)})
    b = solve_powerflow(attach_boundary_load(ieee9, "9", 60.0, 10.0))
    assert np.allclose(a.complex_v, b.complex_v, atol=1e-12)


def test_boundary_load_needs_pq_bus(ieee9):
    with pytest.raises(ModelError):
        attach_boundary_load(ieee9, "2", 1.0, 0.0)


def test_warm_start(ieee9):
    cold = solve_powerflow(ieee9)
    warm = solve_powerflow(ieee9, warm=cold.complex_v)
    assert warm.iterations <= 1


def test_divergence_reported():
    net = load_transmission("twobus_lossless.json")
    sol = solve_powerflow(net, {"2": (400.0, 0.0)})
    assert not sol.converged


def test_lossless_nose_matches_closed_form():
    net = load_transmission("twobus_lossless.json")
    zero = attach_boundary_load(net, "2", 0.0, 0.0)
    params = ContinuationParams(start=0.0, initial_step=0.05, max_step=0.05)
    tr = trace_pv_curve(zero, {"2": (100.0, 0.0)}, params)
    assert tr.complete
    assert tr.nose_lambda == pytest.approx(1 / (2 * 0.3), rel=1e-3)
    # voltage at the nose of a lossless unity-pf line is 1/sqrt(2)
    nose = [p for p in tr.points if p.marker == "nose"][0]
    assert nose.v_monitored == pytest.approx(2**-0.5, abs=1e-3)
    assert tr.branch_markers.count("lower") >= 10
    for p in tr.points:
        assert power_residual(attach_boundary_load(net, "2", 100 * p.lam, 0.0), p.solution) < 1e-8


def test_cpf_lambda_monotone_on_upper_branch():
    net = attach_boundary_load(load_transmission("twobus.json"), "2", 0.0, 0.0)
    tr = trace_pv_curve(net, {"2": (50.0, 20.0)})
    up = [p.lam for p in tr.points if p.marker == "upper"]
    assert all(b > a for a, b in zip(up, up[1:]))
    lo = [p.v_monitored for p in tr.points if p.marker == "lower"]
    assert all(b < a for a, b in zip(lo, lo[1:]))


def test_cpf_csv_header():
    net = attach_boundary_load(load_transmission("twobus.json"), "2", 0.0, 0.0)
    tr = trace_pv_curve(net, {"2": (50.0, 20.0)})
    assert tr.to_csv().splitlines()[0] == "lambda,v_pu,branch_marker"


def test_degenerate_direction(ieee9):
    with pytest.raises(ContinuationError, match="degenerate"):
        trace_pv_curve(ieee9, {"9": (0.0, 0.0)})


def test_base_case_failure_raises():
    net = load_transmission("twobus_lossless.json")
    with pytest.raises(ContinuationError):
        trace_pv_curve(net, {"2": (100.0, 0.0)}, ContinuationParams(start=5.0))
