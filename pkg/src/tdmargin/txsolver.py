"""Balanced (positive-sequence) AC power flow and continuation power flow."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .netmodel import Bus, ModelError, TransmissionNetwork


class ContinuationError(RuntimeError):
    pass


@dataclass
class TxSolution:
    bus_ids: list[str]
    v: np.ndarray  # pu
    theta: np.ndarray  # rad
    p_flow: np.ndarray  # MW, from end
    q_flow: np.ndarray
    slack_p: float  # MW
    slack_q: float
    converged: bool
    iterations: int
    max_mismatch: float  # pu
    s_load: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))  # pu, as solved

    def index(self, bus_id: str) -> int:
        return self.bus_ids.index(bus_id)

    def vm(self, bus_id: str) -> float:
        return float(self.v[self.index(bus_id)])

    def phasor(self, bus_id: str) -> complex:
        k = self.index(bus_id)
        return complex(self.v[k] * np.exp(1j * self.theta[k]))

    @property
    def complex_v(self) -> np.ndarray:
        return self.v * np.exp(1j * self.theta)


@dataclass
class _Net:
    ids: list[str]
    idx: dict[str, int]
    ybus: sp.csr_matrix
    slack: int
    pv: np.ndarray
    pq: np.ndarray
    v_set: np.ndarray
    s_gen: np.ndarray  # pu, real part only (PV/slack scheduled P)
    s_load: np.ndarray  # pu
    yf: sp.csr_matrix
    yt: sp.csr_matrix
    f: np.ndarray
    t: np.ndarray


def _compile(net: TransmissionNetwork, loads: Mapping[str, tuple[float, float]] | None = None) -> _Net:
    ids = [b.id for b in net.buses]
    idx = {b: i for i, b in enumerate(ids)}
    n = len(ids)
    nl = len(net.branches)
    f = np.array([idx[br.from_bus] for br in net.branches], int)
    t = np.array([idx[br.to_bus] for br in net.branches], int)
    y = np.array([1.0 / complex(br.r, br.x) for br in net.branches])
    bsh = np.array([br.b for br in net.branches])
    yff = y + 0.5j * bsh
    yft = -y
    rows = np.arange(nl)
    cf = sp.csr_matrix((np.ones(nl), (rows, f)), shape=(nl, n))
    ct = sp.csr_matrix((np.ones(nl), (rows, t)), shape=(nl, n))
    yf = sp.diags(yff) @ cf + sp.diags(yft) @ ct
    yt = sp.diags(yft) @ cf + sp.diags(yff) @ ct
    ybus = (cf.T @ yf + ct.T @ yt).tocsr()

    s_load = np.array([complex(b.p_load, b.q_load) for b in net.buses]) / net.s_base
    if loads:
        for bus_id, (p, q) in loads.items():
            if bus_id not in idx:
                raise ModelError(f"unknown bus {bus_id!r}")
            s_load[idx[bus_id]] = complex(p, q) / net.s_base
    s_gen = np.zeros(n, complex)
    for g in net.generators:
        s_gen[idx[g.bus]] += g.p / net.s_base
    types = [b.type for b in net.buses]
    return _Net(
        ids=ids,
        idx=idx,
        ybus=ybus,
        slack=types.index("slack"),
        pv=np.array([i for i, ty in enumerate(types) if ty == "PV"], int),
        pq=np.array([i for i, ty in enumerate(types) if ty == "PQ"], int),
        v_set=np.array([b.v_set for b in net.buses]),
        s_gen=s_gen,
        s_load=s_load,
        yf=yf.tocsr(),
        yt=yt.tocsr(),
        f=f,
        t=t,
    )


def _ds_dv(ybus, V):
    """Partial derivatives of bus injections w.r.t. voltage angle and magnitude."""
    ibus = ybus @ V
    dv = sp.diags(V)
    di = sp.diags(ibus)
    dvn = sp.diags(V / np.abs(V))
    ds_dvm = dv @ np.conj(ybus @ dvn) + np.conj(di) @ dvn
    ds_dva = 1j * dv @ np.conj(di - ybus @ dv)
    return ds_dva, ds_dvm


def _jacobian_coo(c: _Net, V):
    """Polar Jacobian as COO triplets (rows: P at pv+pq, Q at pq; cols: angle at pv+pq, magnitude at pq)."""
    ds_dva, ds_dvm = _ds_dv(c.ybus, V)
    n = len(V)
    pvpq = np.r_[c.pv, c.pq]
    npvpq, npq = len(pvpq), len(c.pq)
    pos_a = np.full(n, -1)
    pos_a[pvpq] = np.arange(npvpq)
    pos_m = np.full(n, -1)
    pos_m[c.pq] = np.arange(npq)
    parts = []
    for mat, col_pos, col_off in ((ds_dva.tocoo(), pos_a, 0), (ds_dvm.tocoo(), pos_m, npvpq)):
        cj = col_pos[mat.col]
        for row_pos, row_off, val in ((pos_a, 0, mat.data.real), (pos_m, npvpq, mat.data.imag)):
            ri = row_pos[mat.row]
            keep = (ri >= 0) & (cj >= 0)
            parts.append((val[keep], ri[keep] + row_off, cj[keep] + col_off))
    data, rows, cols = (np.concatenate(x) for x in zip(*parts))
    return data, rows, cols, npvpq + npq


def _jacobian(c: _Net, V):
    data, rows, cols, m = _jacobian_coo(c, V)
    return sp.csc_matrix((data, (rows, cols)), shape=(m, m))


def _mismatch(c: _Net, V, s_spec):
    mis = V * np.conj(c.ybus @ V) - s_spec
    return np.r_[mis[c.pv].real, mis[c.pq].real, mis[c.pq].imag]


def _initial_v(c: _Net, warm) -> np.ndarray:
    if warm is None:
        vm = np.ones(len(c.ids))
        va = np.zeros(len(c.ids))
    elif isinstance(warm, TxSolution):
        vm, va = warm.v.copy(), warm.theta.copy()
    else:
        w = np.asarray(warm, complex)
        vm, va = np.abs(w), np.angle(w)
    vm[c.pv] = c.v_set[c.pv]
    vm[c.slack] = c.v_set[c.slack]
    va[c.slack] = 0.0
    return vm * np.exp(1j * va)


def _newton(c: _Net, V, s_spec, tol, max_iter):
    pvpq = np.r_[c.pv, c.pq]
    npvpq = len(pvpq)
    F = _mismatch(c, V, s_spec)
    err = float(np.max(np.abs(F))) if F.size else 0.0
    it = 0
    while err >= tol and it < max_iter:
        it += 1
        J = _jacobian(c, V)
        dx = spsolve(J, -F)
        if not np.all(np.isfinite(dx)):
            break
        va = np.angle(V)
        vm = np.abs(V)
        va[pvpq] += dx[:npvpq]
        vm[c.pq] += dx[npvpq:]
        V = vm * np.exp(1j * va)
        F = _mismatch(c, V, s_spec)
        err = float(np.max(np.abs(F))) if F.size else 0.0
        if not np.isfinite(err):
            break
    return V, err < tol, it, err


def _solution(net: TransmissionNetwork, c: _Net, V, converged, it, err) -> TxSolution:
    sb = net.s_base
    sf = V[c.f] * np.conj(c.yf @ V) * sb
    s_slack = V[c.slack] * np.conj((c.ybus @ V)[c.slack]) + c.s_load[c.slack]
    return TxSolution(
        bus_ids=list(c.ids),
        v=np.abs(V),
        theta=np.angle(V),
        p_flow=sf.real,
        q_flow=sf.imag,
        slack_p=float(s_slack.real * sb),
        slack_q=float(s_slack.imag * sb),
        converged=bool(converged),
        iterations=it,
        max_mismatch=float(err),
        s_load=c.s_load.copy(),
    )


def solve_powerflow(
    net: TransmissionNetwork,
    injections: Mapping[str, tuple[float, float]] | None = None,
    *,
    warm=None,
    tol: float = 1e-8,
    max_iter: int = 20,
) -> TxSolution:
    """Newton-Raphson power flow in polar coordinates.

    ``injections`` maps bus id to a (P, Q) load in MW/MVAr that replaces the
    bus's lumped load for this solve. Generator reactive limits are not
    enforced. A failed solve comes back with ``converged=False`` and the
    last iterate.
    """
    c = _compile(net, injections)
    V = _initial_v(c, warm)
    s_spec = c.s_gen - c.s_load
    V, ok, it, err = _newton(c, V, s_spec, tol, max_iter)
    return _solution(net, c, V, ok, it, err)


def power_residual(net: TransmissionNetwork, sol: TxSolution) -> float:
    """Nodal power mismatch (pu) re-evaluated from scratch with a dense Ybus."""
    n = len(net.buses)
    idx = {b.id: i for i, b in enumerate(net.buses)}
    Y = np.zeros((n, n), complex)
    for br in net.branches:
        y = 1.0 / complex(br.r, br.x)
        i, j = idx[br.from_bus], idx[br.to_bus]
        Y[i, i] += y + 0.5j * br.b
        Y[j, j] += y + 0.5j * br.b
        Y[i, j] -= y
        Y[j, i] -= y
    V = sol.v * np.exp(1j * sol.theta)
    s_calc = V * np.conj(Y @ V)
    s_gen = np.zeros(n, complex)
    for g in net.generators:
        s_gen[idx[g.bus]] += g.p / net.s_base
    s_spec = s_gen - sol.s_load
    worst = 0.0
    for b in net.buses:
        k = idx[b.id]
        d = s_calc[k] - s_spec[k]
        if b.type == "PQ":
            worst = max(worst, abs(d.real), abs(d.imag))
        elif b.type == "PV":
            worst = max(worst, abs(d.real))
    return worst


def attach_boundary_load(net: TransmissionNetwork, bus_id: str, p: float, q: float) -> TransmissionNetwork:
    """Replace the lumped load at a PQ bus with (p, q) in MW/MVAr."""
    bus = net.bus(bus_id)
    if bus.type != "PQ":
        raise ModelError(f"bus {bus_id!r} is {bus.type}, boundary loads need a PQ bus")
    buses = tuple(replace(b, p_load=p, q_load=q) if b.id == bus_id else b for b in net.buses)
    return replace(net, buses=buses)


# ---------------------------------------------------------------------------
# Continuation power flow
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContinuationParams:
    start: float = 0.0
    initial_step: float = 0.1
    min_step: float = 1e-4
    max_step: float = 0.1
    v_stop: float = 0.4
    max_points: int = 1000
    tol: float = 1e-10
    corrector_iter: int = 20


@dataclass
class ContinuationPoint:
    lam: float
    v_monitored: float
    solution: TxSolution
    marker: str = "upper"


@dataclass
class ContinuationTrace:
    points: list[ContinuationPoint]
    nose_lambda: float
    monitored_bus: str
    complete: bool = True
    message: str = ""

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([p.lam for p in self.points])

    @property
    def voltages(self) -> np.ndarray:
        return np.array([p.v_monitored for p in self.points])

    @property
    def branch_markers(self) -> list[str]:
        return [p.marker for p in self.points]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "v_pu", "branch_marker"])
        for p in self.points:
            w.writerow([f"{p.lam:.8f}", f"{p.v_monitored:.8f}", p.marker])
        return buf.getvalue()


class _Cpf:
    """Extended system G(theta, Vm, lambda) = 0 with one component pinned."""

    def __init__(self, net: TransmissionNetwork, direction, monitor: str):
        self.net = net
        self.c = _compile(net)
        c = self.c
        self.pvpq = np.r_[c.pv, c.pq]
        self.npvpq = len(self.pvpq)
        self.nx = self.npvpq + len(c.pq) + 1
        s_dir = np.zeros(len(c.ids), complex)
        for bus_id, (p, q) in direction.items():
            if bus_id not in c.idx:
                raise ModelError(f"unknown bus {bus_id!r}")
            s_dir[c.idx[bus_id]] += complex(p, q) / net.s_base
        if not np.any(np.abs(s_dir) > 0):
            raise ContinuationError("degenerate continuation direction")
        self.s_dir = s_dir
        self.dg_dlam = np.r_[s_dir[c.pv].real, s_dir[c.pq].real, s_dir[c.pq].imag]
        k = c.idx[monitor]
        where = np.where(c.pq == k)[0]
        if not len(where):
            raise ModelError(f"monitored bus {monitor!r} must be a PQ bus")
        self.k_v = self.npvpq + int(where[0])
        self.k_lam = self.nx - 1
        self.mon = k

    def unpack(self, x):
        c = self.c
        va = np.zeros(len(c.ids))
        vm = c.v_set.copy()
        va[self.pvpq] = x[: self.npvpq]
        vm[c.pq] = x[self.npvpq : -1]
        V = vm * np.exp(1j * va)
        return V, x[-1]

    def pack(self, V, lam):
        c = self.c
        return np.r_[np.angle(V)[self.pvpq], np.abs(V)[c.pq], lam]

    def g(self, x):
        V, lam = self.unpack(x)
        c = self.c
        s_spec = c.s_gen - c.s_load - lam * self.s_dir
        return _mismatch(self.c, V, s_spec)

    def jac(self, x, k):
        V, _ = self.unpack(x)
        data, rows, cols, m = _jacobian_coo(self.c, V)
        nz = np.flatnonzero(self.dg_dlam)
        data = np.r_[data, self.dg_dlam[nz], 1.0]
        rows = np.r_[rows, nz, m]
        cols = np.r_[cols, np.full(len(nz), m), k]
        return sp.csc_matrix((data, (rows, cols)), shape=(self.nx, self.nx))

    def tangent(self, x, k, sign):
        rhs = np.zeros(self.nx)
        rhs[-1] = sign
        t = spsolve(self.jac(x, k), rhs)
        return t / np.linalg.norm(t)

    def correct(self, x, k, value, tol, max_iter):
        x = x.copy()
        x[k] = value
        for _ in range(max_iter):
            F = np.r_[self.g(x), x[k] - value]
            if np.max(np.abs(F)) < tol:
                return x, True
            dx = spsolve(self.jac(x, k), -F)
            if not np.all(np.isfinite(dx)):
                return x, False
            x = x + dx
        F = np.r_[self.g(x), x[k] - value]
        return x, bool(np.max(np.abs(F)) < tol)

    def solution(self, x, tol) -> TxSolution:
        V, lam = self.unpack(x)
        c = self.c
        s_load = c.s_load + lam * self.s_dir
        err = float(np.max(np.abs(self.g(x))))
        c2 = replace(c, s_load=s_load)
        return _solution(self.net, c2, V, err < tol, 0, err)


def trace_pv_curve(
    net: TransmissionNetwork,
    direction: Mapping[str, tuple[float, float]],
    params: ContinuationParams = ContinuationParams(),
    monitor: str | None = None,
) -> ContinuationTrace:
    """Trace the lambda-V curve with a predictor-corrector continuation.

    Bus loads are ``lumped + lambda * direction`` (MW/MVAr per unit lambda).
    The continuation parameter is lambda until the tangent's lambda component
    drops below the monitored voltage component, then the monitored voltage.
    The nose is located by maximising lambda over the monitored voltage once
    the tangent's lambda component changes sign.
    """
    if monitor is None:
        monitor = next(iter(direction))
    cpf = _Cpf(net, direction, monitor)
    c = cpf.c

    base = solve_powerflow(
        net, {b: _add(net.bus(b), cpf.s_dir[c.idx[b]] * net.s_base * params.start) for b in direction}
    )
    if not base.converged:
        raise ContinuationError(f"base case does not converge at lambda={params.start}")
    x = cpf.pack(base.complex_v, params.start)

    def point(xx, marker):
        sol = cpf.solution(xx, params.tol * 10)
        return ContinuationPoint(float(xx[-1]), float(np.abs(cpf.unpack(xx)[0][cpf.mon])), sol, marker)

    pts = [point(x, "upper")]
    k = cpf.k_lam
    t = cpf.tangent(x, k, +1.0)
    step = params.initial_step
    clean = 0
    nose_found = False
    complete = True
    message = ""

    while len(pts) < params.max_points:
        x_pred = x + step * t
        x_new, ok = cpf.correct(x_pred, k, x_pred[k], params.tol, params.corrector_iter)
        if not ok:
            step *= 0.5
            clean = 0
            if step < params.min_step:
                complete = False
                message = "step size collapsed below min_step"
                break
            continue
        clean += 1
        if clean >= 2:
            step = min(step * 1.25, params.max_step)
            clean = 0

        # orient the new tangent along the direction of travel
        k_new = cpf.k_lam if abs(t[cpf.k_lam]) >= abs(t[cpf.k_v]) else cpf.k_v
        t_new = cpf.tangent(x_new, k_new, 1.0)
        if np.dot(t_new, t) < 0:
            t_new = -t_new

        if not nose_found and t[-1] > 0 and t_new[-1] <= 0:
            x_nose = _locate_nose(cpf, x, x_new, params)
            pts.append(point(x_nose, "nose"))
            nose_found = True
        x, t = x_new, t_new
        k = cpf.k_lam if abs(t[cpf.k_lam]) >= abs(t[cpf.k_v]) else cpf.k_v

        v_mon = float(np.abs(cpf.unpack(x)[0][cpf.mon]))
        lam = float(x[-1])
        if nose_found and (v_mon < params.v_stop or lam < params.start):
            break
        pts.append(point(x, "lower" if nose_found else "upper"))

    if not nose_found:
        complete = False
        message = message or "nose not reached"
    nose_lambda = max(p.lam for p in pts)
    return ContinuationTrace(pts, nose_lambda, monitor, complete, message)


def _add(bus: Bus, ds: complex) -> tuple[float, float]:
    return bus.p_load + ds.real, bus.q_load + ds.imag


def _locate_nose(cpf: _Cpf, xa, xb, params: ContinuationParams):
    """Golden-section search for max lambda over the monitored voltage."""
    k = cpf.k_v
    va, vb = xa[k], xb[k]
    lo, hi = min(va, vb), max(va, vb)
    # widen slightly so the maximiser is interior even if the tangent flipped
    # a fraction of a step early
    width = hi - lo
    lo -= 0.5 * width
    hi += 0.5 * width
    guess = [xa if abs(xa[k] - (lo + hi) / 2) < abs(xb[k] - (lo + hi) / 2) else xb]
    cache = {}

    def lam_at(v):
        if v in cache:
            return cache[v]
        xs, ok = cpf.correct(guess[0], k, v, params.tol, params.corrector_iter)
        if ok:
            guess[0] = xs
        val = (xs[-1] if ok else -math.inf, xs)
        cache[v] = val
        return val

    gr = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c1 = b - gr * (b - a)
    c2 = a + gr * (b - a)
    # lambda is flat at the maximiser, so 1e-7 in voltage resolves it to ~1e-14
    while b - a > 1e-7:
        if lam_at(c1)[0] > lam_at(c2)[0]:
            b = c2
        else:
            a = c1
        c1 = b - gr * (b - a)
        c2 = a + gr * (b - a)
    best = max((lam_at(v) for v in (a, b, (a + b) / 2)), key=lambda r: r[0])
    if not math.isfinite(best[0]):
        return xa if xa[-1] >= xb[-1] else xb
    return best[1]
