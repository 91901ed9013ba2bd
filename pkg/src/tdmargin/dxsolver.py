"""Three-phase unbalanced power flow for radial feeders (forward-backward sweep).

Voltages and currents are physical (V, A); powers are reported in MW/MVAr.
Per-unit voltages are relative to the line-to-neutral nominal of each
node's voltage zone.
"""

from __future__ import annotations

import cmath
import csv
import io
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .netmodel import (
    PHASE_INDEX,
    PHASES,
    DgUnit,
    DistributionFeeder,
    ModelError,
    TransformerBranch,
    feeder_topology,
)

A_OP = cmath.exp(-2j * math.pi / 3)  # phase B lags A by 120 degrees
BALANCED = np.array([1.0, A_OP, A_OP.conjugate()])

VVC_DAMPING = 0.5


@dataclass
class DxSolution:
    node_voltages: dict[str, np.ndarray]
    section_currents: dict[tuple[str, str], np.ndarray]
    substation_phase_power: np.ndarray  # complex MVA per phase
    p_sub: float
    q_sub: float
    total_load: tuple[float, float]
    total_loss: tuple[float, float]
    total_dg: tuple[float, float]
    converged: bool
    iterations: int
    status: str = "ok"
    v_base: dict[str, float] = field(default_factory=dict)
    phases: dict[str, str] = field(default_factory=dict)
    dg_output: list[tuple[float, float]] = field(default_factory=list)
    lam: float = 1.0

    @property
    def s_sub(self) -> float:
        return math.hypot(self.p_sub, self.q_sub)

    def v_pu(self, node: str) -> np.ndarray:
        return np.abs(self.node_voltages[node]) / self.v_base[node]

    def min_v_pu(self) -> float:
        out = math.inf
        for node, ph in self.phases.items():
            idx = [PHASE_INDEX[p] for p in ph]
            if idx:
                out = min(out, float(np.min(self.v_pu(node)[idx])))
        return out


@dataclass
class _Compiled:
    order: list[str]
    parent: np.ndarray  # int index, -1 for root
    is_xfmr: np.ndarray
    ratio: np.ndarray  # ideal ratio of the edge into each node (1 for lines)
    z: np.ndarray  # (n, 3, 3) ohms of the edge into each node
    mask: np.ndarray  # (n, 3) energized phases
    vbase: np.ndarray  # LN volts
    flat: np.ndarray  # (n, 3) no-load voltage profile for a 1 pu balanced source
    ld_node: np.ndarray
    ld_ph: np.ndarray
    ld_p: np.ndarray  # W
    ld_q: np.ndarray
    ld_pc: np.ndarray  # (m, 3) z/i/p fractions
    ld_qc: np.ndarray
    ld_v0: np.ndarray
    dg_node: np.ndarray
    dg_ph: np.ndarray
    edge_names: list[tuple[str, str]]


@lru_cache(maxsize=64)
def _compile(feeder: DistributionFeeder) -> _Compiled:
    topo = feeder_topology(feeder)
    order = topo.order
    idx = {n: i for i, n in enumerate(order)}
    n = len(order)
    parent = np.full(n, -1)
    is_xfmr = np.zeros(n, bool)
    ratio = np.ones(n)
    z = np.zeros((n, 3, 3), complex)
    mask = np.zeros((n, 3), bool)
    vbase = np.zeros(n)
    edge_names = []
    for i, node in enumerate(order):
        vbase[i] = feeder.nominal_kv[topo.zone[node]] * 1e3 / math.sqrt(3)
        for p in topo.phases[node]:
            mask[i, PHASE_INDEX[p]] = True
        if i == 0:
            continue
        par = topo.parent[node]
        parent[i] = idx[par]
        e = topo.edge[node]
        edge_names.append((par, node))
        if isinstance(e, TransformerBranch):
            kv_hi = feeder.nominal_kv[topo.zone[par]]
            kv_lo = feeder.nominal_kv[e.zone]
            is_xfmr[i] = True
            ratio[i] = kv_hi / kv_lo * e.tap
            z_ohm = complex(e.series_r, e.series_x) * kv_lo**2 / e.rating
            for p in range(3):
                if mask[i, p]:
                    z[i, p, p] = z_ohm
        else:
            z[i] = np.array(e.impedance.total())
    flat = np.zeros((n, 3), complex)
    flat[0] = vbase[0] * BALANCED
    for i in range(1, n):
        flat[i] = flat[parent[i]] / ratio[i] * mask[i]

    lds = feeder.loads
    dgs = feeder.dgs
    return _Compiled(
        order=order,
        parent=parent,
        is_xfmr=is_xfmr,
        ratio=ratio,
        z=z,
        mask=mask,
        vbase=vbase,
        flat=flat,
        ld_node=np.array([idx[ld.node] for ld in lds], int),
        ld_ph=np.array([PHASE_INDEX[ld.phase] for ld in lds], int),
        ld_p=np.array([ld.p0 * 1e6 for ld in lds]),
        ld_q=np.array([ld.q0 * 1e6 for ld in lds]),
        ld_pc=np.array([[ld.pz, ld.pi_, ld.pp] for ld in lds]).reshape(-1, 3),
        ld_qc=np.array([[ld.qz, ld.qi, ld.qp] for ld in lds]).reshape(-1, 3),
        ld_v0=np.array([ld.v0 for ld in lds]),
        dg_node=np.array([idx[dg.node] for dg in dgs], int),
        dg_ph=np.array([PHASE_INDEX[dg.phase] for dg in dgs], int),
        edge_names=edge_names,
    )


def vvc_fraction(curve, v: float) -> float:
    vs = [pt[0] for pt in curve]
    qs = [pt[1] for pt in curve]
    return float(np.interp(v, vs, qs))


def dg_injection(dg: DgUnit, v_node: float) -> tuple[float, float]:
    """Real and reactive output (MW, MVAr) of a DG unit at local voltage ``v_node`` (pu).

    Volt-var units hold rated real power and give up reactive power when the
    apparent-power rating binds.
    """
    p = dg.p_rated
    if dg.mode == "UPF":
        return p, 0.0
    q = dg.s_rated * vvc_fraction(dg.vvc_curve, v_node)
    q_cap = math.sqrt(max(dg.s_rated**2 - p * p, 0.0))
    return p, min(max(q, -q_cap), q_cap)


def source_voltage(feeder: DistributionFeeder, substation_voltage) -> np.ndarray:
    """Per-phase source voltages (V) from a pu phasor or an explicit 3-vector of volts."""
    vb = feeder.nominal_kv[0] * 1e3 / math.sqrt(3)
    arr = np.asarray(substation_voltage, dtype=complex)
    if arr.ndim == 0:
        return complex(arr) * vb * BALANCED
    if arr.shape != (3,):
        raise ValueError("substation voltage must be a phasor or three phase voltages")
    return arr.copy()


def _injections(c: _Compiled, V, lam, dg_p, dg_q):
    """Nodal current drawn per phase (A) and per-load complex power (VA)."""
    n = len(c.order)
    inj = np.zeros((n, 3), complex)
    s_load = np.zeros(0, complex)
    if len(c.ld_node):
        vl = V[c.ld_node, c.ld_ph]
        r = np.abs(vl) / c.vbase[c.ld_node] / c.ld_v0
        poly = np.stack([r * r, r, np.ones_like(r)], axis=1)
        p = lam * c.ld_p * np.sum(c.ld_pc * poly, axis=1)
        q = lam * c.ld_q * np.sum(c.ld_qc * poly, axis=1)
        s_load = p + 1j * q
        np.add.at(inj, (c.ld_node, c.ld_ph), np.conj(s_load / vl))
    if len(c.dg_node):
        vd = V[c.dg_node, c.dg_ph]
        s_dg = (dg_p + 1j * dg_q) * 1e6
        np.add.at(inj, (c.dg_node, c.dg_ph), -np.conj(s_dg / vd))
    return inj, s_load


def _backward(c: _Compiled, inj):
    cur = inj.copy()
    for i in range(len(c.order) - 1, 0, -1):
        p = c.parent[i]
        cur[p] += cur[i] / c.ratio[i]
    return cur


def _forward(c: _Compiled, V, cur):
    out = np.empty_like(V)
    out[0] = V[0]
    for i in range(1, len(c.order)):
        out[i] = (out[c.parent[i]] / c.ratio[i] - c.z[i] @ cur[i]) * c.mask[i]
    return out


def solve_feeder(
    feeder: DistributionFeeder,
    substation_voltage=1.0,
    lam: float = 1.0,
    *,
    tol: float = 1e-6,
    max_iter: int = 100,
    v_floor: float = 0.3,
    dg_mode: str | None = None,
    initial: DxSolution | None = None,
) -> DxSolution:
    """Forward-backward sweep power flow.

    ``substation_voltage`` is either a positive-sequence phasor in pu of the
    root nominal (expanded to a balanced set) or three phase voltages in
    volts. ``lam`` scales every load's base powers; DG output does not scale.
    ``dg_mode`` overrides the mode of every DG unit.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    c = _compile(feeder)
    dgs = list(feeder.dgs)
    if dg_mode is not None:
        dgs = [replace(dg, mode=dg_mode) for dg in dgs]

    v_src = source_voltage(feeder, substation_voltage)
    if not np.all(np.abs(v_src) > 0):
        raise ValueError("substation voltage must be non-zero on every phase")
    if initial is not None and initial.node_voltages:
        V = np.array([initial.node_voltages[nd] for nd in c.order])
        V[0] = v_src
    else:
        # scale the no-load profile to the source; exact for balanced sources
        V = c.flat * (v_src / (c.vbase[0] * BALANCED))[None, :]
        V[0] = v_src

    dg_p = np.array([dg.p_rated for dg in dgs])
    dg_q = np.zeros(len(dgs))
    vvc = [dg.mode == "VVC" for dg in dgs]
    if any(vvc):
        vpu0 = np.abs(V[c.dg_node, c.dg_ph]) / c.vbase[c.dg_node]
        for k, dg in enumerate(dgs):
            dg_q[k] = dg_injection(dg, vpu0[k])[1]

    converged = False
    status = "max_iter"
    it = 0
    for it in range(1, max_iter + 1):
        inj, _ = _injections(c, V, lam, dg_p, dg_q)
        cur = _backward(c, inj)
        V_new = _forward(c, V, cur)
        if not np.all(np.isfinite(V_new)):
            status = "diverged"
            break
        vmag = np.abs(V_new) / c.vbase[:, None]
        if np.any(vmag[c.mask] < v_floor):
            V = V_new
            status = "low-voltage non-physical"
            break
        dv = float(np.max(np.abs(V_new - V) / c.vbase[:, None]))
        dq = 0.0
        if any(vvc):
            vpu = vmag[c.dg_node, c.dg_ph]
            for k, dg in enumerate(dgs):
                if vvc[k]:
                    target = dg_injection(dg, vpu[k])[1]
                    step = VVC_DAMPING * (target - dg_q[k])
                    dg_q[k] += step
                    dq = max(dq, abs(step) / dg.s_rated if dg.s_rated else 0.0)
        V = V_new
        if dv < tol and dq < tol:
            converged = True
            status = "ok"
            break

    # settle currents and powers on the final voltages; KCL is exact here so
    # the power balance below telescopes to machine precision
    inj, s_load = _injections(c, V, lam, dg_p, dg_q)
    cur = _backward(c, inj)
    s_phase = V[0] * np.conj(cur[0]) / 1e6
    loss = 0j
    currents = {}
    for i in range(1, len(c.order)):
        p = c.parent[i]
        i_hi = cur[i] / c.ratio[i]
        loss += np.sum(V[p] * np.conj(i_hi) - V[i] * np.conj(cur[i])) / 1e6
        currents[c.edge_names[i - 1]] = i_hi if c.is_xfmr[i] else cur[i]
    load = complex(np.sum(s_load)) / 1e6
    dg_total = complex(np.sum(dg_p) + 1j * np.sum(dg_q))
    topo_phases = {nd: "".join(PHASES[k] for k in range(3) if c.mask[i, k]) for i, nd in enumerate(c.order)}
    s_sub = complex(np.sum(s_phase))
    return DxSolution(
        node_voltages={nd: V[i].copy() for i, nd in enumerate(c.order)},
        section_currents=currents,
        substation_phase_power=s_phase,
        p_sub=s_sub.real,
        q_sub=s_sub.imag,
        total_load=(load.real, load.imag),
        total_loss=(float(np.real(loss)), float(np.imag(loss))),
        total_dg=(dg_total.real, dg_total.imag),
        converged=converged,
        iterations=it,
        status=status,
        v_base={nd: float(c.vbase[i]) for i, nd in enumerate(c.order)},
        phases=topo_phases,
        dg_output=[(float(p), float(q)) for p, q in zip(dg_p, dg_q)],
        lam=lam,
    )


def apply_dg_distribution(
    feeder: DistributionFeeder,
    phase_percentages,
    mode: str = "UPF",
    s_over_p: float | None = None,
) -> DistributionFeeder:
    """Add DG equal to a percentage of each phase's base load.

    Each phase's DG is spread over that phase's load nodes in proportion to
    their base real load. Existing DG units are kept.
    """
    pct = [float(x) for x in phase_percentages]
    if len(pct) != 3 or any(x < 0 for x in pct):
        raise ModelError("phase percentages must be three non-negative numbers")
    per_node: dict[tuple[str, str], float] = {}
    for ld in feeder.loads:
        if ld.p0 > 0:
            per_node[(ld.node, ld.phase)] = per_node.get((ld.node, ld.phase), 0.0) + ld.p0
    totals = feeder.phase_loads()
    new = []
    for k, ph in enumerate(PHASES):
        if pct[k] == 0:
            continue
        if totals[k] <= 0:
            raise ModelError(f"DG requested on phase {ph} which carries no load")
        for (node, p), p0 in per_node.items():
            if p != ph:
                continue
            mw = pct[k] / 100.0 * p0
            s = None if s_over_p is None else mw * s_over_p
            new.append(DgUnit(node, ph, mw, s, mode))
    if not new:
        return feeder
    return replace(feeder, dgs=feeder.dgs + tuple(new))


def dg_phase_totals(feeder: DistributionFeeder, phase_percentages) -> tuple[float, float, float]:
    loads = feeder.phase_loads()
    return tuple(p / 100.0 * ld for p, ld in zip(phase_percentages, loads))


def voltage_profile_csv(sol: DxSolution) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node", "phase", "v_pu", "angle_deg"])
    for node, v in sol.node_voltages.items():
        for ph in sol.phases[node]:
            k = PHASE_INDEX[ph]
            w.writerow([node, ph, f"{abs(v[k]) / sol.v_base[node]:.6f}", f"{math.degrees(cmath.phase(v[k])):.4f}"])
    return buf.getvalue()
