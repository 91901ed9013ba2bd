"""Master-slave splitting between the transmission power flow and feeder sweeps.

Also hosts the four representation modes used for side-by-side margin
studies: ``nod`` (feeder folded into a lumped load), ``eqfeeder`` (lumped
series equivalent), ``donly`` (feeder behind a stiff source) and ``cosim``.
"""

from __future__ import annotations

import cmath
import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping

from .dxsolver import DxSolution, solve_feeder
from .equivalents import EquivalentFeeder, augment_network, compute_equivalent
from .netmodel import (
    Branch,
    Bus,
    DistributionFeeder,
    ModelError,
    Scenario,
    TransformerBranch,
    TransmissionNetwork,
    balanced_counterpart,
    feeder_topology,
)
from .txsolver import TxSolution, solve_powerflow

EQ_SUFFIX = "_eq"


@dataclass(frozen=True)
class CosimOptions:
    eps_v: float = 1e-4  # pu
    eps_s: float = 1e-4  # pu on the transmission base
    max_outer: int = 50
    damping: float = 1.0  # 1.0 is plain Gauss-Seidel
    workers: int = 1
    dg_mode: str | None = None
    feeder_tol: float = 1e-6
    feeder_max_iter: int = 500
    max_backtracks: int = 12
    ramp_steps: int = 20  # cold-start fallback; below 2 disables it

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ModelError("damping must lie in (0, 1]")
        if self.workers < 1:
            raise ModelError("workers must be at least 1")


@dataclass
class BoundaryState:
    bus_id: str
    v_down: complex  # pu phasor sent to the feeder
    s_up: tuple[float, float]  # MW, MVAr sent to transmission
    iteration: int

    @property
    def v_pu(self) -> float:
        return abs(self.v_down)

    @property
    def theta_deg(self) -> float:
        return math.degrees(cmath.phase(self.v_down))


@dataclass
class CosimResult:
    tx: TxSolution | None
    feeders: dict[str, DxSolution]
    boundary: dict[str, BoundaryState]
    converged: bool
    outer_iterations: int
    message: str = ""
    log: list[BoundaryState] = field(default_factory=list)

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "bus", "v_pu", "theta_deg", "p_mw", "q_mvar"])
        for b in self.log:
            w.writerow([b.iteration, b.bus_id, f"{b.v_pu:.8f}", f"{b.theta_deg:.6f}", f"{b.s_up[0]:.6f}",
                        f"{b.s_up[1]:.6f}"])
        return buf.getvalue()


def _solve_all(attachments, voltages, lam, opts: CosimOptions, warm) -> dict[str, DxSolution]:
    buses = sorted(attachments)

    def one(bus):
        return solve_feeder(
            attachments[bus], voltages[bus], lam, tol=opts.feeder_tol, max_iter=opts.feeder_max_iter,
            dg_mode=opts.dg_mode, initial=warm.get(bus),
        )

    if opts.workers > 1 and len(buses) > 1:
        with ThreadPoolExecutor(max_workers=min(opts.workers, len(buses))) as pool:
            sols = list(pool.map(one, buses))
    else:
        sols = [one(b) for b in buses]
    return dict(zip(buses, sols))


def solve_cosim(
    net: TransmissionNetwork,
    attachments: Mapping[str, DistributionFeeder],
    lam: float = 1.0,
    opts: CosimOptions = CosimOptions(),
    *,
    warm: CosimResult | None = None,
) -> CosimResult:
    """Fixed-point exchange of boundary voltage (down) and substation power (up).

    Each attached feeder replaces the lumped load of its bus. Feeder loads are
    scaled by ``lam``; the transmission lumped loads are taken as given.

    A cold start that fails is retried by ramping the feeder loads up to
    ``lam`` in warm-started sub-steps, so near the nose the result does not
    depend on whether a warm start was supplied.
    """
    for bus in attachments:
        if net.bus(bus).type != "PQ":
            raise ModelError(f"attachment bus {bus!r} is not a PQ bus")
    res = _mss(net, attachments, lam, opts, warm)
    if res.converged or warm is not None or opts.ramp_steps < 2:
        return res
    n = opts.ramp_steps
    prev = None
    for k in range(1, n + 1):
        # quadratic schedule: fine steps close to the target where the nose may be
        prev = _mss(net, attachments, lam * (1.0 - (1.0 - k / n) ** 2), opts, prev)
        if not prev.converged:
            return res
    return prev


def _mss(net, attachments, lam, opts: CosimOptions, warm: CosimResult | None) -> CosimResult:
    buses = sorted(attachments)
    sb = net.s_base

    if warm is not None and warm.feeders:
        fsols = dict(warm.feeders)
        s_up = {b: (fsols[b].p_sub, fsols[b].q_sub) for b in buses}
        tx_warm = warm.tx.complex_v if warm.tx is not None else None
    else:
        fsols = _solve_all(attachments, {b: 1.0 for b in buses}, lam, opts, {})
        s_up = {b: (fsols[b].p_sub, fsols[b].q_sub) for b in buses}
        if not all(s.converged for s in fsols.values()):
            fsols = {}
            s_up = {b: tuple(lam * x for x in attachments[b].total_load()) for b in buses}
        tx_warm = None

    v_prev: dict[str, complex] = {}
    log: list[BoundaryState] = []
    tx = None
    s_good = None  # last s_up whose exchange produced solvable subsystems
    backtracks = 0
    for it in range(1, opts.max_outer + 1):
        tx_try = solve_powerflow(net, s_up, warm=tx_warm)
        fs_try = None
        if tx_try.converged:
            v_try = {b: tx_try.phasor(b) for b in buses}
            fs_try = _solve_all(attachments, v_try, lam, opts, fsols)
        failed = fs_try is None or any(not fs_try[b].converged for b in buses)
        if failed:
            if s_good is not None and backtracks < opts.max_backtracks:
                # overshoot past the feasible region: retreat toward the last good exchange
                backtracks += 1
                s_up = {b: tuple(0.5 * (g + x) for g, x in zip(s_good[b], s_up[b])) for b in buses}
                continue
            if fs_try is None:
                return CosimResult(tx_try, fsols, _states(buses, v_prev, s_up, it), False, it,
                                   "transmission power flow diverged", log)
            bad = [b for b in buses if not fs_try[b].converged]
            return CosimResult(tx_try, fs_try, _states(buses, v_try, s_up, it), False, it,
                               "feeder sweep failed at bus " + ",".join(f"{b} ({fs_try[b].status})" for b in bad),
                               log)
        tx, fsols, v_down = tx_try, fs_try, v_try
        tx_warm = tx.complex_v
        s_good = s_up
        dv = max(abs(v_down[b] - v_prev[b]) for b in buses) if v_prev else math.inf
        ds = 0.0
        new_up = {}
        for b in buses:
            p, q = fsols[b].p_sub, fsols[b].q_sub
            ds = max(ds, math.hypot(p - s_up[b][0], q - s_up[b][1]) / sb)
            a = opts.damping
            new_up[b] = (s_up[b][0] + a * (p - s_up[b][0]), s_up[b][1] + a * (q - s_up[b][1]))
        for b in buses:
            log.append(BoundaryState(b, v_down[b], new_up[b], it))
        v_prev = v_down
        if dv < opts.eps_v and ds < opts.eps_s:
            return CosimResult(tx, fsols, _states(buses, v_down, s_up, it), True, it, "", log)
        s_up = new_up
    return CosimResult(tx, fsols, _states(buses, v_prev, s_up, opts.max_outer), False, opts.max_outer,
                       "outer loop did not converge", log)


def _states(buses, v, s_up, it) -> dict[str, BoundaryState]:
    return {b: BoundaryState(b, v.get(b, complex("nan")), tuple(s_up[b]), it) for b in buses}


# ---------------------------------------------------------------------------
# Representation modes
# ---------------------------------------------------------------------------


def scale_loads(net: TransmissionNetwork, buses, lam: float) -> TransmissionNetwork:
    """Multiply the lumped loads of ``buses`` by ``lam``."""
    chosen = set(buses)
    return replace(net, buses=tuple(
        replace(b, p_load=lam * b.p_load, q_load=lam * b.q_load) if b.id in chosen else b for b in net.buses
    ))


def with_variant(scenario: Scenario, variant: str | None) -> Scenario:
    if variant is None:
        return scenario
    if variant not in scenario.variants:
        raise ModelError(f"unknown variant {variant!r}")
    return replace(scenario, attachments=dict(scenario.variants[variant]))


def effective_feeders(scenario: Scenario, dg_pct=None, dg_mode: str | None = None) -> dict[str, DistributionFeeder]:
    """Attached feeders with the scenario DG (or ``dg_pct``) applied."""
    from .dxsolver import apply_dg_distribution

    spec = scenario.dg
    pct = dg_pct if dg_pct is not None else (spec.percentages if spec else None)
    mode = dg_mode or scenario.dg_mode_override or (spec.mode if spec else "UPF")
    out = {}
    for b, f in scenario.attachments.items():
        if pct is not None and any(pct):
            f = apply_dg_distribution(f, pct, mode)
        out[b] = f
    return out


@dataclass
class ModeRecord:
    """One solved point in any representation mode."""

    mode: str
    lam: float
    converged: bool
    v_monitored: float  # pu
    monitor: str
    boundary_v: dict[str, float] = field(default_factory=dict)
    boundary_s: dict[str, tuple[float, float]] = field(default_factory=dict)
    tx: TxSolution | None = None
    feeders: dict[str, DxSolution] = field(default_factory=dict)
    message: str = ""
    outer_iterations: int = 0
    network: TransmissionNetwork | None = None


@dataclass
class PreparedMode:
    """Lambda-independent setup for repeated solves of one scenario in one mode."""

    mode: str
    scenario: Scenario
    feeders: dict[str, DistributionFeeder]
    base_net: TransmissionNetwork | None
    scaled: tuple[str, ...]  # transmission buses whose lumped load scales with lambda
    monitor: str
    scalable_p0: float
    equivalents: dict[str, EquivalentFeeder] = field(default_factory=dict)
    dg_mode: str | None = None


def prepare_mode(
    scenario: Scenario, mode: str | None = None, *, dg_pct=None, dg_mode: str | None = None,
    s_base_eq: float | None = None,
) -> PreparedMode:
    """Convert a scenario into a concrete study in ``mode``.

    ``nod`` folds each feeder into its bus as the substation power at nominal
    voltage and lambda 1. ``eqfeeder`` calibrates a series equivalent on the
    balanced counterpart of each feeder and hangs the consumed load behind
    it on a new bus.
    """
    mode = (mode or scenario.mode).lower()
    if mode not in ("nod", "eqfeeder", "donly", "cosim"):
        raise ModelError(f"unknown mode {mode!r}")
    feeders = effective_feeders(scenario, dg_pct, dg_mode)
    dmode = dg_mode or scenario.dg_mode_override
    net = scenario.transmission
    tx_scaled = (
        [b.id for b in net.buses if b.type == "PQ" and (b.p_load or b.q_load) and b.id not in feeders]
        if net is not None and scenario.scale_scope == "all" else [b for b in scenario.study_buses if b not in feeders]
    )
    tx_p0 = sum(net.bus(b).p_load for b in tx_scaled) if net is not None else 0.0
    feeder_p0 = sum(f.total_load()[0] for f in feeders.values())

    if mode == "donly":
        if len(feeders) != 1:
            raise ModelError("donly mode needs exactly one attached feeder")
        (bus,) = feeders
        return PreparedMode(mode, scenario, feeders, None, (), bus, feeder_p0, dg_mode=dmode)
    if net is None:
        raise ModelError(f"mode {mode} needs a transmission case")
    monitor = scenario.monitor_bus
    if mode == "cosim":
        if not feeders:
            raise ModelError("cosim mode needs at least one attachment")
        return PreparedMode(mode, scenario, feeders, net, tuple(tx_scaled), monitor, tx_p0 + feeder_p0, dg_mode=dmode)
    if mode == "nod":
        folded = net
        p0 = tx_p0
        for bus, f in sorted(feeders.items()):
            sol = solve_feeder(f, 1.0, 1.0, dg_mode=dmode)
            if not sol.converged:
                raise ModelError(f"feeder at bus {bus!r} does not solve at nominal voltage")
            folded = replace(folded, buses=tuple(
                replace(b, p_load=sol.p_sub, q_load=sol.q_sub) if b.id == bus else b for b in folded.buses))
            p0 += sol.p_sub
        return PreparedMode(mode, scenario, {}, folded, tuple(tx_scaled) + tuple(sorted(feeders)), monitor, p0,
                            dg_mode=dmode)
    # eqfeeder
    aug = net
    eqs = {}
    scaled = list(tx_scaled)
    p0 = tx_p0
    for bus, f in sorted(feeders.items()):
        sol = solve_feeder(balanced_counterpart(f), 1.0, 1.0, dg_mode=dmode)
        if not sol.converged:
            raise ModelError(f"feeder at bus {bus!r} does not solve at nominal voltage")
        eq = compute_equivalent(sol, 1.0, s_base_eq or net.s_base)
        aug, new_id = augment_network(aug, bus, eq, suffix=EQ_SUFFIX)
        eqs[bus] = eq
        scaled.append(new_id)
        p0 += eq.load[0]
    return PreparedMode(mode, scenario, {}, aug, tuple(scaled), monitor, p0, eqs, dmode)


def solve_prepared(
    pm: PreparedMode, lam: float, opts: CosimOptions = CosimOptions(), warm: ModeRecord | None = None
) -> ModeRecord:
    if pm.mode == "donly":
        (bus, f), = pm.feeders.items()
        init = warm.feeders.get(bus) if warm is not None else None
        sol = solve_feeder(f, 1.0, lam, tol=opts.feeder_tol, max_iter=opts.feeder_max_iter, dg_mode=pm.dg_mode,
                           initial=init)
        vmin = sol.min_v_pu() if sol.converged else math.nan
        return ModeRecord("donly", lam, sol.converged, vmin, f"{bus}:feeder-min", {bus: 1.0},
                          {bus: (sol.p_sub, sol.q_sub)}, None, {bus: sol}, "" if sol.converged else sol.status)
    net = scale_loads(pm.base_net, pm.scaled, lam)
    if pm.mode == "cosim":
        o = replace(opts, dg_mode=pm.dg_mode)
        wr = None
        if warm is not None and warm.tx is not None and warm.converged:
            wr = CosimResult(warm.tx, warm.feeders, {}, True, 0)
        res = solve_cosim(net, pm.feeders, lam, o, warm=wr)
        ok = res.converged
        bv = {b: st.v_pu for b, st in res.boundary.items()}
        bs = {b: st.s_up for b, st in res.boundary.items()}
        v = res.tx.vm(pm.monitor) if (ok and res.tx is not None) else math.nan
        return ModeRecord("cosim", lam, ok, v, pm.monitor, bv, bs, res.tx, res.feeders, res.message,
                          res.outer_iterations, net)
    w = warm.tx.complex_v if (warm is not None and warm.tx is not None and warm.converged) else None
    tx = solve_powerflow(net, warm=w)
    ok = tx.converged
    buses = sorted(pm.equivalents) if pm.mode == "eqfeeder" else sorted(pm.scenario.attachments)
    bv = {b: tx.vm(b) for b in buses} if ok else {}
    bs = {}
    for b in buses:
        src = net.bus(b + EQ_SUFFIX) if pm.mode == "eqfeeder" else net.bus(b)
        bs[b] = (src.p_load, src.q_load)
    v = tx.vm(pm.monitor) if ok else math.nan
    return ModeRecord(pm.mode, lam, ok, v, pm.monitor, bv, bs, tx, {}, "" if ok else "power flow diverged", 0, net)


def run_mode(scenario: Scenario, lam: float = 1.0, mode: str | None = None, *, variant: str | None = None,
             opts: CosimOptions = CosimOptions()) -> ModeRecord:
    """Solve one scenario point in any representation mode."""
    sc = with_variant(scenario, variant)
    return solve_prepared(prepare_mode(sc, mode), lam, opts)


# ---------------------------------------------------------------------------
# Monolithic oracle
# ---------------------------------------------------------------------------


def fold_balanced_feeder(net: TransmissionNetwork, bus_id: str, feeder: DistributionFeeder) -> TransmissionNetwork:
    """Fold a balanced, transposed, constant-power feeder into the transmission case.

    Every section becomes a positive-sequence branch (``z_self - z_mutual``),
    each feeder node a PQ bus, and the feeder root is merged into ``bus_id``.
    Zero-impedance transformers merge their two nodes. Intended as an oracle
    for the co-simulation loop.
    """
    if net.bus(bus_id).type != "PQ":
        raise ModelError(f"bus {bus_id!r} is not a PQ bus")
    topo = feeder_topology(feeder)
    for ld in feeder.loads:
        if ld.pp != 1.0 or ld.qp != 1.0:
            raise ModelError("monolithic fold needs constant-power loads")
    if feeder.dgs:
        raise ModelError("monolithic fold does not model DG")
    sb = net.s_base
    alias = {feeder.root: bus_id}
    buses = [replace(b, p_load=0.0, q_load=0.0) if b.id == bus_id else b for b in net.buses]
    branches = list(net.branches)
    for node in topo.order[1:]:
        par = alias[topo.parent[node]]
        e = topo.edge[node]
        kv = feeder.nominal_kv[topo.zone[node]]
        if isinstance(e, TransformerBranch):
            if e.tap != 1.0:
                raise ModelError("monolithic fold needs nominal taps")
            z = complex(e.series_r, e.series_x) * sb / e.rating
        else:
            if topo.phases[node] != "ABC":
                raise ModelError("monolithic fold needs three-phase sections")
            zt = e.impedance.total()
            z = (zt[0][0] - zt[0][1]) / (kv**2 / sb)
        if z == 0:
            alias[node] = par
            continue
        nid = f"{bus_id}/{node}"
        alias[node] = nid
        buses.append(Bus(nid, "PQ", 1.0, 0.0, 0.0))
        branches.append(Branch(par, nid, z.real, z.imag))
    load = {}
    for ld in feeder.loads:
        key = alias[ld.node]
        p, q = load.get(key, (0.0, 0.0))
        load[key] = (p + ld.p0, q + ld.q0)
    buses = [replace(b, p_load=b.p_load + load[b.id][0], q_load=b.q_load + load[b.id][1]) if b.id in load else b
             for b in buses]
    return replace(net, buses=tuple(buses), branches=tuple(branches))
