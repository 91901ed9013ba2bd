from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tdmargin.cosim import prepare_mode, with_variant
from tdmargin.dxsolver import DxSolution, solve_feeder
from tdmargin.equivalents import (
    augment_network,
    compute_equivalent,
    equivalent_error_profile,
    equivalent_fragment,
    equivalent_loss,
)
from tdmargin.netmodel import ModelError, PhaseImpedanceMatrix
from tdmargin.txsolver import solve_powerflow

# reference balanced 4-node operating point
P_SUB, Q_SUB, P_LOSS, Q_LOSS = 5.81938, 3.4767, 0.41938, 0.8614
BASE_BACK = 0.03 * (P_SUB**2 + Q_SUB**2) / P_LOSS


def synthetic(p_sub, q_sub, p_loss, q_loss):
    return DxSolution({}, {}, np.zeros(3), p_sub, q_sub, (p_sub - p_loss, q_sub - q_loss), (p_loss, q_loss),
                      (0.0, 0.0), True, 1)


def test_reference_operating_point():
    eq = compute_equivalent(synthetic(P_SUB, Q_SUB, P_LOSS, Q_LOSS), 1.0, BASE_BACK)
    assert eq.x_d / eq.r_d == pytest.approx(Q_LOSS / P_LOSS, rel=1e-12)
    assert eq.r_d == pytest.approx(0.03, rel=1e-12)
    assert 0.058 <= eq.x_d <= 0.062


def test_ratio_matches_losses_on_solve(ieee4_bal):
    sol = solve_feeder(ieee4_bal)
    eq = compute_equivalent(sol)
    assert eq.x_d / eq.r_d == pytest.approx(sol.total_loss[1] / sol.total_loss[0], rel=1e-9)
    assert eq.r_d >= 0


@given(st.floats(0.5, 1.2), st.floats(1.0, 1000.0))
def test_ratio_invariant_to_base_and_voltage(v, base):
    sol = synthetic(P_SUB, Q_SUB, P_LOSS, Q_LOSS)
    a = compute_equivalent(sol, 1.0, 100.0)
    b = compute_equivalent(sol, v, base)
    assert b.x_d / b.r_d == pytest.approx(a.x_d / a.r_d, rel=1e-12)


def test_doubling_base_doubles_impedance(ieee4_bal):
    sol = solve_feeder(ieee4_bal)
    a = compute_equivalent(sol, 1.0, 50.0)
    b = compute_equivalent(sol, 1.0, 100.0)
    assert b.r_d == pytest.approx(2 * a.r_d, rel=1e-12)
    assert b.x_d == pytest.approx(2 * a.x_d, rel=1e-12)


def test_zero_load_is_undefined(ieee4_bal):
    sol = solve_feeder(replace(ieee4_bal, loads=()))
    with pytest.raises(ModelError, match="equivalent undefined at zero load"):
        compute_equivalent(sol)


def test_lossless_feeder_gives_zero_impedance(ieee4_bal):
    zero = PhaseImpedanceMatrix(((0, 0, 0),) * 3, 1.0)
    secs = tuple(replace(s, impedance=zero) for s in ieee4_bal.sections)
    sol = solve_feeder(replace(ieee4_bal, sections=secs))
    eq = compute_equivalent(sol)
    assert eq.r_d == 0.0 and eq.x_d == pytest.approx(0.0, abs=1e-12)


def test_calibration_exactness(ieee4_bal):
    sol = solve_feeder(ieee4_bal)
    eq = compute_equivalent(sol, 1.0, 10.0)
    p, q = equivalent_loss(eq, *sol.total_load, 1.0)
    assert p == pytest.approx(sol.total_loss[0], rel=1e-9)
    assert q == pytest.approx(sol.total_loss[1], rel=1e-9)


def test_error_profile(ieee4_bal):
    rows = equivalent_error_profile(ieee4_bal, 1.0, 10.0, (0.0, 1.0, 1.5))
    lam0, lam1, lam15 = rows
    assert lam0[1:] == (0.0, 0.0)
    assert lam1[2] == pytest.approx(lam1[1], rel=1e-9)
    assert abs(lam15[2] - lam15[1]) / lam15[1] > 0


def test_error_grows_away_from_calibration(ieee4_bal):
    rows = equivalent_error_profile(ieee4_bal, 1.0, 10.0, (1.0, 1.3, 1.6))
    err = [abs(e - t) / t for _, t, e in rows]
    assert err[0] < err[1] < err[2]


def test_unbalance_blindness(scenario_94):
    eqs = [prepare_mode(with_variant(scenario_94, v), "eqfeeder").equivalents["9"] for v in ("bal", "unbal")]
    a, b = eqs
    assert a.r_d == pytest.approx(b.r_d, rel=1e-9)
    assert a.x_d == pytest.approx(b.x_d, rel=1e-9)


def test_augment_adds_one_branch_and_solves(ieee9, ieee4_bal):
    eq = compute_equivalent(solve_feeder(ieee4_bal), 1.0, ieee9.s_base)
    net, new = augment_network(ieee9, "9", eq)
    assert len(net.branches) == len(ieee9.branches) + 1
    assert net.bus("9").p_load == 0.0
    assert net.bus(new).p_load == pytest.approx(eq.load[0])
    assert solve_powerflow(net).converged
    with pytest.raises(ModelError):
        augment_network(ieee9, "1", eq)


def test_fragment_shape(ieee4_bal):
    eq = compute_equivalent(solve_feeder(ieee4_bal))
    frag = equivalent_fragment("9", eq)
    assert frag["branches"][0]["from"] == "9"
    assert frag["buses"][0]["id"] == frag["branches"][0]["to"]
