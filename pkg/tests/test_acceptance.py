"""Acceptance criteria at their stated tolerances.

Every test prints one ``PASS``/``FAIL`` line (with the measured values and
runtime) before asserting, so ``pytest -v`` output doubles as a scorecard.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from tdmargin.analysis import compute_nlu, dg_sweep, find_margin, net_phase_load, verify_bracket
from tdmargin.cli import main
from tdmargin.cosim import fold_balanced_feeder, solve_cosim
from tdmargin.dxsolver import solve_feeder
from tdmargin.equivalents import compute_equivalent
from tdmargin.netmodel import (
    DistributionFeeder,
    LambdaSchedule,
    Scenario,
    ZipLoad,
    iter_bundled_cases,
    load_case,
    load_feeder,
    load_scenario,
    load_transmission,
    parse_case,
    serialize,
    zip_power,
)
from tdmargin.txsolver import ContinuationParams, attach_boundary_load, power_residual, solve_powerflow, trace_pv_curve

P_LOSS, Q_LOSS = 0.41938, 0.8614
P_SUB, Q_SUB = 5.81938, 3.4767
# MVA base at which the reference operating point gives r_d = 0.03 pu
BASE_BACK = 0.03 * (P_SUB**2 + Q_SUB**2) / P_LOSS


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail, seconds, limit):
        ok = ok and seconds < limit
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail} ({seconds:.2f} s, limit {limit:g} s)")
        return ok
    return emit


def _loss_solve():
    t = time.perf_counter()
    sol = solve_feeder(load_feeder("ieee4_balanced.json"))
    return sol, time.perf_counter() - t


def test_criterion_1_feeder_loss(verdict):
    sol, dt = _loss_solve()
    p, q = sol.total_loss
    ok = sol.converged and abs(p / P_LOSS - 1) <= 0.01 and abs(q / Q_LOSS - 1) <= 0.01
    assert verdict(1, ok, f"loss {p:.6f} MW / {q:.6f} MVAr vs {P_LOSS} / {Q_LOSS} (+-1%)", dt, 1.0)


def test_criterion_2_equivalent_ratio(verdict):
    t = time.perf_counter()
    sol, _ = _loss_solve()
    eq = compute_equivalent(sol, 1.0, BASE_BACK)
    dt = time.perf_counter() - t
    ratio = eq.x_d / eq.r_d
    target = Q_LOSS / P_LOSS
    identity = abs(ratio - sol.total_loss[1] / sol.total_loss[0]) <= 1e-9 * ratio
    literal = abs(ratio - target) <= 1e-6
    ranges = 0.029 <= eq.r_d <= 0.031 and 0.058 <= eq.x_d <= 0.062
    detail = (f"x_d/r_d {ratio:.6f} vs {target:.6f} (|diff| {abs(ratio - target):.2e}, tol 1e-6); "
              f"ratio = own Q_loss/P_loss: {identity}; r_d {eq.r_d:.5f} x_d {eq.x_d:.5f} at {BASE_BACK:.3f} MVA")
    assert verdict(2, identity and literal and ranges, detail, dt, 1.0)


def test_criterion_3_lossless_nose(verdict):
    t = time.perf_counter()
    net = attach_boundary_load(load_transmission("twobus_lossless.json"), "2", 0.0, 0.0)
    tr = trace_pv_curve(net, {"2": (100.0, 0.0)}, ContinuationParams(start=0.0, initial_step=0.05, max_step=0.05))
    dt = time.perf_counter() - t
    p_max = 1 / (2 * 0.3)
    lower = tr.branch_markers.count("lower")
    sc = load_scenario("scenario_twobus.json")
    nod = find_margin(sc, "nod", use_cpf=True)
    eqf = find_margin(sc, "eqfeeder")
    ok = abs(tr.nose_lambda / p_max - 1) <= 1e-3 and lower >= 10 and nod.lambda_max > eqf.lambda_max
    detail = (f"nose {tr.nose_lambda:.5f} pu vs {p_max:.5f}, {lower} lower-branch points; "
              f"2-bus lambda_max NoD {nod.lambda_max:.3f} > EqFeeder {eqf.lambda_max:.3f}")
    assert verdict(3, ok, detail, dt, 1.0)


def test_criterion_4_mss_oracle(verdict):
    t = time.perf_counter()
    net = load_transmission("ieee9.json")
    feeder = load_feeder("ieee4_transposed_x22.json")
    res = solve_cosim(net, {"9": feeder})
    dt = time.perf_counter() - t
    folded = fold_balanced_feeder(net, "9", feeder)
    mono = solve_powerflow(folded)
    dv = abs(res.boundary["9"].v_down - mono.phasor("9"))
    k = [j for j, br in enumerate(folded.branches) if br.from_bus == "9" and br.to_bus.startswith("9/")]
    dp = abs(res.boundary["9"].s_up[0] - sum(mono.p_flow[j] for j in k))
    ok = res.converged and dv < 1e-4 and dp < 1e-3 and res.outer_iterations <= 10
    detail = f"|dV| {dv:.2e} pu, |dP| {dp:.2e} MW, {res.outer_iterations} outer iterations"
    assert verdict(4, ok, detail, dt, 5.0)


@pytest.fixture(scope="module")
def fig7_margins():
    sc = load_scenario("scenario_ieee9_4bus.json")
    t = time.perf_counter()
    out = {(m, v): find_margin(sc, m, variant=v) for m in ("cosim", "eqfeeder") for v in ("bal", "unbal")}
    return sc, out, time.perf_counter() - t


def test_criterion_5_unbalance_penalty(verdict, fig7_margins):
    _, m, dt = fig7_margins
    co_b, co_u = m["cosim", "bal"].lambda_max, m["cosim", "unbal"].lambda_max
    eq_b, eq_u = m["eqfeeder", "bal"].lambda_max, m["eqfeeder", "unbal"].lambda_max
    ok = co_u < co_b and eq_b == eq_u
    detail = f"CoSim unbal {co_u:.4f} < bal {co_b:.4f}; EqFeeder bal {eq_b:.4f} == unbal {eq_u:.4f}"
    assert verdict(5, ok, detail, dt, 120.0)


def test_criterion_6_aggregation_masking(verdict, fig7_margins):
    sc, m, _ = fig7_margins
    t = time.perf_counter()
    three = find_margin(sc, "cosim", variant="3feeder").lambda_max
    dt = time.perf_counter() - t
    single, bal = m["cosim", "unbal"].lambda_max, m["cosim", "bal"].lambda_max
    rel = abs(three - single) / single
    ok = rel <= 0.02 and three < bal
    detail = f"3-feeder {three:.4f} vs single unbalanced {single:.4f} ({100 * rel:.2f}% <= 2%), below balanced {bal:.4f}"
    assert verdict(6, ok, detail, dt, 180.0)


@pytest.fixture(scope="module")
def sweeps():
    t = time.perf_counter()
    out = {}
    for name in ("scenario_dg_table1.json", "scenario_dg_nlu.json"):
        sc = load_scenario(name)
        no_dg = find_margin(sc, "cosim").vsm_mw
        blocks = {label: dg_sweep(sc, dists, label=label) for label, dists in sc.dg_sweep}
        out[name] = (no_dg, blocks)
    return out, time.perf_counter() - t


def test_criterion_7_vvc_dominance(verdict, sweeps):
    data, dt = sweeps
    rows = [r for _, blocks in data.values() for rs in blocks.values() for r in rs]
    bad = [r.pct for r in rows if r.failed or r.vsm["VVC"] < r.vsm["UPF"]]
    ok = len(rows) >= 8 and not bad
    detail = f"{len(rows)} rows, VVC >= UPF in {len(rows) - len(bad)}" + (f"; violations {bad}" if bad else "")
    assert verdict(7, ok, detail, dt, 600.0)


def test_criterion_8_dg_benefit_and_nlu_trend(verdict, sweeps):
    data, dt = sweeps
    below = []
    for no_dg, blocks in data.values():
        for rs in blocks.values():
            for r in rs:
                below += [(r.pct, m) for m in ("VVC", "UPF") if any(r.pct) and not (r.vsm[m] or 0) > no_dg]
    block = data["scenario_dg_nlu.json"][1]["40%"]
    trend = {}
    for m in ("VVC", "UPF"):
        v = [r.vsm[m] for r in block]
        trend[m] = all(b <= a for a, b in zip(v, v[1:]))
    ok = not below and all(trend.values())
    fmt = {m: "/".join(f"{r.vsm[m]:.2f}" for r in block) for m in trend}
    detail = (f"40% block by NLU {'/'.join(f'{r.nlu_percent:.1f}' for r in block)}%: "
              f"VVC {fmt['VVC']} non-increasing={trend['VVC']}, UPF {fmt['UPF']} non-increasing={trend['UPF']}; "
              f"DG rows at or below no-DG: {below or 'none'}")
    assert verdict(8, ok, detail, dt, 600.0)


def _property_suite(tmp_path):
    rng = np.random.default_rng(7)
    fails = []

    for _ in range(200):
        fr = rng.dirichlet((1, 1, 1))
        frq = rng.dirichlet((1, 1, 1))
        ld = ZipLoad("n", "A", rng.uniform(0.01, 5), rng.uniform(-2, 2), *fr, *frq, v0=rng.uniform(0.9, 1.1))
        p, q = zip_power(ld, ld.v0)
        if abs(p - ld.p0) > 1e-9 * max(1, abs(ld.p0)) or abs(q - ld.q0) > 1e-9 * max(1, abs(ld.q0)):
            fails.append("zip identity")
            break

    for _ in range(200):
        p = rng.uniform(0.01, 1e4, 3)
        k = rng.uniform(1e-3, 1e3)
        if not math.isclose(compute_nlu(k * p).nlu_percent, compute_nlu(p).nlu_percent, rel_tol=1e-9, abs_tol=1e-9):
            fails.append("nlu scale")
            break
    sc = load_scenario("scenario_dg_nlu.json")
    base = compute_nlu(net_phase_load(sc, (0, 0, 0))).nlu_percent
    for pct in rng.uniform(0, 95, 20):
        if not math.isclose(compute_nlu(net_phase_load(sc, (pct,) * 3)).nlu_percent, base, rel_tol=1e-9):
            fails.append("proportional dg")
            break

    worst_dx = 0.0
    worst_tx = 0.0
    for path in iter_bundled_cases():
        obj = load_case(path)
        text = serialize(obj)
        if parse_case(text) != obj or serialize(parse_case(text)) != text:
            fails.append(f"round trip {path.name}")
        if isinstance(obj, DistributionFeeder):
            for lam in (0.5, 1.0, 1.5):
                s = solve_feeder(obj, 1.0, lam)
                if s.converged:
                    worst_dx = max(worst_dx, abs(s.p_sub - (s.total_load[0] + s.total_loss[0] - s.total_dg[0])),
                                   abs(s.q_sub - (s.total_load[1] + s.total_loss[1] - s.total_dg[1])))
        else:
            s = solve_powerflow(obj)
            if s.converged:
                worst_tx = max(worst_tx, power_residual(obj, s))
    net = load_transmission("ieee9.json")
    for k in rng.uniform(0, 1.6, (20, 3)):
        loaded = net
        for b, (p, q), f in zip(("5", "7", "9"), ((90, 30), (100, 35), (125, 50)), k):
            loaded = attach_boundary_load(loaded, b, p * f, q * f)
        s = solve_powerflow(loaded)
        if s.converged:
            worst_tx = max(worst_tx, power_residual(loaded, s))
    if worst_dx >= 1e-6:
        fails.append(f"conservation {worst_dx:.1e}")
    if worst_tx >= 1e-8:
        fails.append(f"powerflow residual {worst_tx:.1e}")

    lossless = Scenario("nod", load_transmission("twobus_lossless.json"), study_buses=("2",))
    coarse = replace(load_scenario("scenario_ieee9_4bus.json"), lambda_schedule=LambdaSchedule(1.0, 10.0, 0.2, 0.01))
    for s, mode, variant in ((lossless, "nod", None), (coarse, "eqfeeder", "unbal"), (coarse, "cosim", "unbal")):
        rep = find_margin(s, mode, variant=variant)
        if verify_bracket(s, rep, variant=variant) != (True, True):
            fails.append(f"bracketing {mode}")

    argv = ["margin", "--scenario", "scenario_ieee9_4bus.json", "--modes", "nod,cosim-unbal",
            "--set", "lambda.min_step=0.01", "--set", "lambda.initial_step=0.2"]
    a, b = tmp_path / "seq", tmp_path / "par"
    main([*argv, "--output-dir", str(a)])
    main([*argv, "--output-dir", str(b), "--parallel", "2"])
    if any(f.read_bytes() != (b / f.name).read_bytes() for f in a.iterdir()) or not any(a.iterdir()):
        fails.append("cli determinism")
    return fails, worst_dx, worst_tx


def test_criterion_9_property_suites(verdict, tmp_path, capsys):
    t = time.perf_counter()
    fails, dx, tx = _property_suite(tmp_path)
    capsys.readouterr()
    dt = time.perf_counter() - t
    detail = (f"zip, nlu, conservation (worst {dx:.1e} MW), powerflow residual (worst {tx:.1e} pu), "
              f"bracketing, round trip, cli determinism" + (f"; failed: {fails}" if fails else ""))
    assert verdict(9, not fails, detail, dt, 120.0)
