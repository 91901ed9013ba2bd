import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tdmargin.dxsolver import (
    apply_dg_distribution,
    dg_injection,
    dg_phase_totals,
    solve_feeder,
    voltage_profile_csv,
)
from tdmargin.netmodel import (
    DgUnit,
    DistributionFeeder,
    LineSection,
    ModelError,
    PhaseImpedanceMatrix,
    ZipLoad,
    load_feeder,
)


def conservation_residual(sol):
    p = sol.total_load[0] + sol.total_loss[0] - sol.total_dg[0]
    q = sol.total_load[1] + sol.total_loss[1] - sol.total_dg[1]
    return max(abs(sol.p_sub - p), abs(sol.q_sub - q))


def test_ieee4_balanced_losses(ieee4_bal):
    sol = solve_feeder(ieee4_bal)
    assert sol.converged
    assert sol.total_loss[0] == pytest.approx(0.41938, rel=0.01)
    assert sol.total_loss[1] == pytest.approx(0.8614, rel=0.01)
    assert conservation_residual(sol) < 1e-6


def test_stepdown_transformer_matches_documented_profile():
    # balanced step-down, wye-wye: test-feeder node-4 voltages 1918/2061/1981 V
    sol = solve_feeder(load_feeder("ieee4_stepdown_documented.json"))
    assert sol.converged
    v4 = np.abs(sol.node_voltages["4"])
    assert v4 == pytest.approx([1918.0, 2061.0, 1981.0], abs=2.0)


def test_zero_load_is_flat(ieee4_bal):
    f = replace(ieee4_bal, loads=())
    sol = solve_feeder(f)
    assert sol.converged and sol.iterations <= 2
    assert sol.total_loss == pytest.approx((0.0, 0.0), abs=1e-12)
    assert sol.v_pu("4") == pytest.approx([1.0, 1.0, 1.0])


def test_source_angle_rotates_solution(ieee4_bal):
    a = solve_feeder(ieee4_bal, 1.0)
    b = solve_feeder(ieee4_bal, complex(math.cos(0.3), math.sin(0.3)))
    assert b.p_sub == pytest.approx(a.p_sub, rel=1e-9)
    assert np.angle(b.node_voltages["4"][0] / a.node_voltages["4"][0]) == pytest.approx(0.3, abs=1e-9)


@given(
    st.lists(st.floats(0.0, 3.0), min_size=3, max_size=3),
    st.floats(0.0, 1.0),
    st.floats(0.0, 1.0),
    st.floats(0.9, 1.05),
)
def test_power_conservation_random_zip(p, z, i, vs):
    base = load_feeder("ieee4_unbalanced.json")
    i = min(i, 1.0 - z)
    loads = tuple(ZipLoad("4", ph, pk, 0.5 * pk, z, i, 1 - z - i, z, i, 1 - z - i) for ph, pk in zip("ABC", p))
    f = replace(base, loads=loads)
    sol = solve_feeder(f, vs)
    if sol.converged:
        assert conservation_residual(sol) < 1e-6


def test_power_conservation_with_dg_both_modes():
    f = apply_dg_distribution(load_feeder("ieee4_unbal_x22.json"), (40, 10, 60), "VVC")
    for mode in ("UPF", "VVC"):
        sol = solve_feeder(f, 1.0, 1.5, dg_mode=mode)
        assert sol.converged
        assert conservation_residual(sol) < 1e-6


def test_ieee13_solves():
    sol = solve_feeder(load_feeder("ieee13.json"))
    assert sol.converged
    assert 0.8 < sol.min_v_pu() < 1.0
    assert conservation_residual(sol) < 1e-6


def test_upf_dg_reduces_substation_power():
    f = load_feeder("ieee4_unbal_x22.json")
    g = apply_dg_distribution(f, (30, 30, 30), "UPF")
    a, b = solve_feeder(f), solve_feeder(g)
    assert b.total_dg[0] == pytest.approx(0.3 * sum(f.phase_loads()))
    assert b.total_dg[1] == 0.0
    assert b.p_sub < a.p_sub - 0.9 * b.total_dg[0]


def test_vvc_absorbs_at_high_voltage_and_injects_at_low():
    dg = DgUnit("n", "A", 0.5, 1.0, "VVC")
    assert dg_injection(dg, 1.0) == (0.5, 0.0)
    assert dg_injection(dg, 0.95)[1] == pytest.approx(0.22)
    assert dg_injection(dg, 1.05)[1] == pytest.approx(-0.22)
    assert dg_injection(dg, 0.80)[1] == pytest.approx(0.44)


@given(st.floats(0.0, 1.0), st.floats(0.7, 1.2))
def test_vvc_respects_rating(p, v):
    dg = DgUnit("n", "A", p, 1.0, "VVC")
    pp, q = dg_injection(dg, v)
    assert pp == p
    assert pp * pp + q * q <= 1.0 + 1e-12


def test_vvc_raises_feeder_voltage_vs_upf():
    f = apply_dg_distribution(load_feeder("ieee4_unbal_x22.json"), (40, 40, 40), "UPF")
    upf = solve_feeder(f, 1.0, 1.5)
    vvc = solve_feeder(f, 1.0, 1.5, dg_mode="VVC")
    assert vvc.converged and upf.converged
    assert vvc.min_v_pu() > upf.min_v_pu()
    assert all(q > 0 for _, q in vvc.dg_output)


def test_dg_distribution_proportional_and_errors():
    f = load_feeder("ieee4_nlu_x22.json")
    pct = (10, 20, 30)
    g = apply_dg_distribution(f, pct)
    assert g.phase_dg() == pytest.approx(dg_phase_totals(f, pct))
    one_phase = replace(f, loads=tuple(ld for ld in f.loads if ld.phase == "A"))
    with pytest.raises(ModelError, match="no load"):
        apply_dg_distribution(one_phase, (10, 10, 0))
    with pytest.raises(ModelError):
        apply_dg_distribution(f, (10, -1, 0))
    assert apply_dg_distribution(f, (0, 0, 0)) is f


def test_collapse_reports_non_convergence():
    sol = solve_feeder(load_feeder("ieee4_unbal_x22.json"), 1.0, 6.0)
    assert not sol.converged
    assert sol.status in ("max_iter", "diverged", "low-voltage non-physical")


def test_negative_lambda_rejected(ieee4_bal):
    with pytest.raises(ValueError):
        solve_feeder(ieee4_bal, 1.0, -1.0)


def test_warm_start_agrees(ieee4_bal):
    a = solve_feeder(ieee4_bal, 1.0, 1.2)
    b = solve_feeder(ieee4_bal, 1.0, 1.2, initial=solve_feeder(ieee4_bal, 1.0, 1.0))
    assert b.p_sub == pytest.approx(a.p_sub, rel=1e-6)
    assert b.iterations <= a.iterations


def test_profile_csv(ieee4_bal):
    text = voltage_profile_csv(solve_feeder(ieee4_bal))
    lines = text.splitlines()
    assert lines[0] == "node,phase,v_pu,angle_deg"
    assert len(lines) == 1 + 4 * 3


def test_single_phase_lateral():
    base = load_feeder("ieee4_balanced.json")
    z = base.sections[0].impedance
    lat = LineSection("4", "5", PhaseImpedanceMatrix(z.z, 0.3, "B"))
    f = DistributionFeeder(base.root, base.nominal_kv, base.sections + (lat,), base.transformers,
                           base.loads + (ZipLoad("5", "B", 0.2, 0.1),))
    sol = solve_feeder(f)
    assert sol.converged
    assert sol.phases["5"] == "B"
    assert sol.node_voltages["5"][0] == 0
    assert conservation_residual(sol) < 1e-6
