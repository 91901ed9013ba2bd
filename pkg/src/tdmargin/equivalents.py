"""Lumped equivalent feeder (series R_D + jX_D) calibrated on one operating point."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .dxsolver import DxSolution, solve_feeder
from .netmodel import Branch, Bus, DistributionFeeder, ModelError, TransmissionNetwork


@dataclass(frozen=True)
class EquivalentFeeder:
    r_d: float  # pu on s_base_mva
    x_d: float
    s_base_mva: float
    computed_at: tuple[float, float]  # (substation voltage pu, lambda)
    source_loss: tuple[float, float]  # MW, MVAr
    load: tuple[float, float]  # MW, MVAr consumed behind the equivalent

    @property
    def current_pu(self) -> float:
        return math.hypot(self.load[0] + self.source_loss[0], self.load[1] + self.source_loss[1]) / (
            self.s_base_mva * self.computed_at[0]
        )


def compute_equivalent(sol: DxSolution, v_load: float = 1.0, s_base_mva: float = 100.0) -> EquivalentFeeder:
    """Equivalent series impedance from a solved feeder.

    The substation apparent power and the load-bus voltage give the current
    ``I_L = S_sub / V_L``; dividing the feeder losses by ``I_L**2`` gives
    ``R_D`` and ``X_D``.
    """
    if not sol.converged:
        raise ModelError("equivalent needs a converged feeder solution")
    if not v_load > 0:
        raise ModelError("load-bus voltage must be positive")
    s_pu = sol.s_sub / s_base_mva
    i_l = s_pu / v_load
    if i_l == 0:
        raise ModelError("equivalent undefined at zero load")
    p_loss, q_loss = sol.total_loss
    p_loss = max(p_loss, 0.0)
    return EquivalentFeeder(
        r_d=(p_loss / s_base_mva) / i_l**2,
        x_d=(q_loss / s_base_mva) / i_l**2,
        s_base_mva=s_base_mva,
        computed_at=(v_load, sol.lam),
        source_loss=(p_loss, q_loss),
        load=(sol.p_sub - p_loss, sol.q_sub - q_loss),
    )


def equivalent_loss(eq: EquivalentFeeder, p_load: float, q_load: float, v_load: float) -> tuple[float, float]:
    """Loss (MW, MVAr) of the lumped model carrying ``p_load + j q_load`` behind it.

    Solves ``I**2 (R + jX) = S_sub - S_load`` with ``|S_sub| = V I``; the
    equivalent's own loss adds to the current it must carry.
    """
    z = complex(eq.r_d, eq.x_d)
    sb = eq.s_base_mva
    s_load = complex(p_load, q_load) / sb
    # |S_load + I^2 z|^2 = (V I)^2  ->  quadratic in u = I^2
    a = abs(z) ** 2
    b = 2 * (s_load.real * z.real + s_load.imag * z.imag) - v_load**2
    c = abs(s_load) ** 2
    if a == 0:
        return 0.0, 0.0
    disc = b * b - 4 * a * c
    if disc < 0:
        raise ModelError("lumped equivalent has no solution at this load")
    u = (-b - math.sqrt(disc)) / (2 * a)
    loss = u * z * sb
    return loss.real, loss.imag


def equivalent_error_profile(
    feeder: DistributionFeeder,
    v_load: float = 1.0,
    s_base_mva: float = 100.0,
    lambdas=(0.5, 1.0, 1.5),
    calibrate_at: float = 1.0,
) -> list[tuple[float, float | None, float | None]]:
    """True versus lumped-model loss (MW) over a range of load scales.

    The equivalent is calibrated once at ``calibrate_at``; at each lambda the
    lumped model carries the feeder's consumed load from a fresh solve.
    Entries whose feeder solve diverges are ``None``.
    """
    base = solve_feeder(feeder, v_load, calibrate_at)
    eq = compute_equivalent(base, v_load, s_base_mva)
    rows = []
    for lam in lambdas:
        if lam == 0:
            rows.append((lam, 0.0, 0.0))
            continue
        sol = solve_feeder(feeder, v_load, lam)
        if not sol.converged:
            rows.append((lam, None, None))
            continue
        p_ld, q_ld = sol.total_load
        try:
            eq_loss = equivalent_loss(eq, p_ld, q_ld, v_load)[0]
        except ModelError:
            eq_loss = None
        rows.append((lam, sol.total_loss[0], eq_loss))
    return rows


def augment_network(
    net: TransmissionNetwork, bus_id: str, eq: EquivalentFeeder, p_load: float | None = None,
    q_load: float | None = None, suffix: str = "_eqf",
) -> tuple[TransmissionNetwork, str]:
    """Insert the equivalent as a branch to a new load bus behind ``bus_id``.

    The original bus keeps no load; the new bus carries the feeder's
    consumed load (default: the calibration load). Returns the network and
    the new bus id.
    """
    if net.bus(bus_id).type != "PQ":
        raise ModelError(f"bus {bus_id!r} is not a PQ bus")
    if eq.s_base_mva != net.s_base:
        eq = replace(eq, r_d=eq.r_d * net.s_base / eq.s_base_mva, x_d=eq.x_d * net.s_base / eq.s_base_mva,
                     s_base_mva=net.s_base)
    new_id = bus_id + suffix
    p = eq.load[0] if p_load is None else p_load
    q = eq.load[1] if q_load is None else q_load
    buses = tuple(replace(b, p_load=0.0, q_load=0.0) if b.id == bus_id else b for b in net.buses)
    buses += (Bus(new_id, "PQ", 1.0, p, q),)
    r, x = eq.r_d, eq.x_d
    if r == 0 and x == 0:
        x = 1e-9  # keep the branch admittance finite for a lossless equivalent
    branches = net.branches + (Branch(bus_id, new_id, r, x),)
    return replace(net, buses=buses, branches=branches), new_id


def equivalent_fragment(bus_id: str, eq: EquivalentFeeder, suffix: str = "_eqf") -> dict:
    """Transmission casefile fragment (one branch, one load bus) for the equivalent."""
    new_id = bus_id + suffix
    return {
        "buses": [{"id": new_id, "type": "PQ", "v_set": 1.0, "p_load_mw": eq.load[0], "q_load_mvar": eq.load[1]}],
        "branches": [{"from": bus_id, "to": new_id, "r": eq.r_d, "x": eq.x_d, "b": 0.0, "rating_mva": 0.0}],
        "s_base_mva": eq.s_base_mva,
    }
