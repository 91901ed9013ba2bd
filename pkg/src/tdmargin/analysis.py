"""Margin search, net-load unbalance and report export."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .cosim import CosimOptions, ModeRecord, PreparedMode, prepare_mode, solve_prepared, with_variant
from .dxsolver import dg_phase_totals
from .netmodel import LambdaSchedule, ModelError, Scenario
from .txsolver import ContinuationError, ContinuationParams, trace_pv_curve


class MarginError(RuntimeError):
    """The base case of a margin search does not solve."""


@dataclass(frozen=True)
class NluReport:
    p_a: float
    p_b: float
    p_c: float
    p_avg: float
    u: tuple[float, float, float]
    nlu_percent: float


def compute_nlu(p_phases) -> NluReport:
    """Net-load unbalance: largest per-phase deviation from the mean, in percent of the mean."""
    pa, pb, pc = (float(x) for x in p_phases)
    avg = (pa + pb + pc) / 3.0
    if avg == 0:
        raise ModelError("NLU undefined for zero average net load")
    u = tuple((p - avg) / avg for p in (pa, pb, pc))
    return NluReport(pa, pb, pc, avg, u, max(abs(x) for x in u) * 100.0)


@dataclass
class MarginReport:
    lambda_max: float
    vsm_mw: float
    mode: str
    curve: list[tuple[float, float]]
    search_trace: list[tuple[float, bool]]
    lambda_start: float = 1.0
    scalable_p0: float = 0.0
    monitor: str = ""
    degenerate: bool = False
    hit_schedule_max: bool = False
    flags: tuple[str, ...] = ()
    cpf: object | None = None  # ContinuationTrace when delegated
    first_failure: float | None = None


def find_margin(
    scenario: Scenario,
    mode: str | None = None,
    *,
    variant: str | None = None,
    dg_pct=None,
    dg_mode: str | None = None,
    opts: CosimOptions = CosimOptions(),
    schedule: LambdaSchedule | None = None,
    use_cpf: bool = False,
    prepared: PreparedMode | None = None,
) -> MarginReport:
    """Step lambda upward from the schedule start until the solve fails.

    Failed steps halve until ``min_step``; co-simulation failures are retried
    once with halved outer-loop damping before counting as past the nose.
    ``use_cpf`` delegates transmission-only modes to the continuation tracer
    and falls back to stepping (flagged) if it cannot reach the nose.
    """
    sched = schedule or scenario.lambda_schedule
    pm = prepared or prepare_mode(with_variant(scenario, variant), mode, dg_pct=dg_pct, dg_mode=dg_mode)
    flags: list[str] = []
    if use_cpf:
        if pm.mode in ("nod", "eqfeeder"):
            rep = _margin_by_cpf(pm, sched)
            if rep is not None:
                return rep
            flags.append("cpf-fallback")
        else:
            flags.append("cpf-unavailable")

    lam = sched.start
    rec = solve_prepared(pm, lam, opts)
    if not rec.converged:
        raise MarginError(f"base case does not converge at lambda={lam}: {rec.message}")
    curve = [(lam, rec.v_monitored)]
    trace = [(lam, True)]
    step = sched.initial_step
    last = rec
    first_fail = None
    hit_max = False
    while True:
        if lam >= sched.max:
            hit_max = True
            break
        trial = min(_round(lam + step), sched.max)
        r = solve_prepared(pm, trial, opts, warm=last)
        if not r.converged and pm.mode == "cosim":
            r = solve_prepared(pm, trial, replace(opts, damping=opts.damping * 0.5), warm=last)
        trace.append((trial, r.converged))
        if r.converged:
            lam, last = trial, r
            curve.append((lam, r.v_monitored))
            first_fail = None
            continue
        first_fail = trial
        if step <= sched.min_step * (1 + 1e-9):
            break
        step = max(step / 2, sched.min_step)
    vsm = (lam - sched.start) * pm.scalable_p0
    return MarginReport(
        lambda_max=lam,
        vsm_mw=vsm,
        mode=pm.mode,
        curve=curve,
        search_trace=trace,
        lambda_start=sched.start,
        scalable_p0=pm.scalable_p0,
        monitor=rec.monitor,
        degenerate=lam == sched.start,
        hit_schedule_max=hit_max,
        flags=tuple(flags),
        first_failure=first_fail,
    )


def _round(x: float) -> float:
    # keep decimal-looking lambdas so traces and CSVs are stable
    return round(x, 12)


def _margin_by_cpf(pm: PreparedMode, sched: LambdaSchedule) -> MarginReport | None:
    net = pm.base_net
    direction = {b: (net.bus(b).p_load, net.bus(b).q_load) for b in pm.scaled}
    if not any(p or q for p, q in direction.values()):
        return None
    zeroed = replace(net, buses=tuple(
        replace(b, p_load=0.0, q_load=0.0) if b.id in direction else b for b in net.buses))
    params = ContinuationParams(start=sched.start, initial_step=sched.initial_step, max_step=sched.initial_step,
                                min_step=min(sched.min_step, 1e-4))
    try:
        tr = trace_pv_curve(zeroed, direction, params, pm.monitor)
    except ContinuationError:
        return None
    if not tr.complete:
        return None
    upper = [(p.lam, p.v_monitored) for p in tr.points if p.marker in ("upper", "nose")]
    lam_max = tr.nose_lambda
    return MarginReport(
        lambda_max=lam_max,
        vsm_mw=(lam_max - sched.start) * pm.scalable_p0,
        mode=pm.mode,
        curve=upper,
        search_trace=[(p.lam, True) for p in tr.points],
        lambda_start=sched.start,
        scalable_p0=pm.scalable_p0,
        monitor=pm.monitor,
        degenerate=lam_max <= sched.start,
        flags=("cpf",),
        cpf=tr,
    )


def verify_bracket(scenario: Scenario, report: MarginReport, *, variant=None, dg_pct=None, dg_mode=None,
                   opts: CosimOptions = CosimOptions(), min_step: float | None = None) -> tuple[bool, bool]:
    """Re-solve at lambda_max and lambda_max + min_step; returns (converges, fails).

    lambda_max is first tried cold. Near the nose a cold feeder sweep can run
    out of iterations even though a solution exists, so a failed cold try is
    followed by a uniform warm walk in min_step increments from the schedule
    start, a path independent of the one the search took.
    """
    step = min_step or scenario.lambda_schedule.min_step
    pm = prepare_mode(with_variant(scenario, variant), report.mode, dg_pct=dg_pct, dg_mode=dg_mode)
    at = solve_prepared(pm, report.lambda_max, opts)
    if not at.converged:
        start = report.lambda_start
        n = max(1, math.ceil((report.lambda_max - start) / step - 1e-9))
        rec = None
        for k in range(n + 1):
            lam = _round(min(report.lambda_max, start + k * step))
            rec = solve_prepared(pm, lam, opts, warm=rec)
            if not rec.converged:
                break
        at = rec
    above = solve_prepared(pm, _round(report.lambda_max + step), opts, warm=at)
    return at.converged, not above.converged


# ---------------------------------------------------------------------------
# DG sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepRow:
    pct: tuple[float, float, float]
    penetration_mw: float
    nlu: NluReport | None
    vsm: dict[str, float | None] = field(default_factory=dict)
    lambda_max: dict[str, float | None] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)
    label: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.errors)

    @property
    def nlu_percent(self) -> float:
        return math.nan if self.nlu is None else self.nlu.nlu_percent


def net_phase_load(scenario: Scenario, pct) -> tuple[float, float, float]:
    """Per-phase load minus DG (MW) over all attached feeders at base lambda."""
    out = [0.0, 0.0, 0.0]
    for f in scenario.attachments.values():
        dg = dg_phase_totals(f, pct)
        for k, (ld, g, g0) in enumerate(zip(f.phase_loads(), dg, f.phase_dg())):
            out[k] += ld - g - g0
    return tuple(out)


def _sweep_job(args):
    scenario, pct, mode, rep_mode, opts = args
    try:
        r = find_margin(scenario, rep_mode, dg_pct=pct, dg_mode=mode, opts=opts)
        return r.vsm_mw, r.lambda_max, None
    except (MarginError, ModelError) as exc:
        return None, None, str(exc)


def dg_sweep(
    scenario: Scenario,
    distributions,
    modes=("VVC", "UPF"),
    *,
    rep_mode: str = "cosim",
    workers: int = 1,
    opts: CosimOptions = CosimOptions(),
    label: str = "",
) -> list[SweepRow]:
    """One margin search per (distribution, DG mode); rows sorted by NLU."""
    dists = [tuple(float(x) for x in d) for d in distributions]
    if not dists:
        raise ModelError("empty distribution list")
    jobs = [(scenario, d, m, rep_mode, opts) for d in dists for m in modes]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    rows = []
    it = iter(results)
    for d in dists:
        pen = sum(sum(dg_phase_totals(f, d)) for f in scenario.attachments.values())
        try:
            nlu = compute_nlu(net_phase_load(scenario, d))
        except ModelError:
            nlu = None
        row = SweepRow(d, pen, nlu, label=label)
        for m in modes:
            vsm, lam, err = next(it)
            row.vsm[m] = vsm
            row.lambda_max[m] = lam
            if err:
                row.errors[m] = err
        rows.append(row)
    rows.sort(key=lambda r: (math.inf if r.nlu is None else r.nlu.nlu_percent))
    return rows


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def _fmt(x, digits=6) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{x:.{digits}f}"


def margin_csv(report: MarginReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda", "v_pu"])
    for lam, v in report.curve:
        w.writerow([_fmt(lam), _fmt(v)])
    return buf.getvalue()


def sweep_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pct_a", "pct_b", "pct_c", "nlu_pct", "vsm_vvc_mw", "vsm_upf_mw"])
    for r in rows:
        w.writerow([_fmt(r.pct[0], 2), _fmt(r.pct[1], 2), _fmt(r.pct[2], 2), _fmt(r.nlu_percent, 2),
                    _fmt(r.vsm.get("VVC"), 2), _fmt(r.vsm.get("UPF"), 2)])
    return buf.getvalue()


def text_table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines) + "\n"


def sweep_table(rows: list[SweepRow]) -> str:
    body = [
        [f"({r.pct[0]:g},{r.pct[1]:g},{r.pct[2]:g})", _fmt(r.penetration_mw, 2), _fmt(r.nlu_percent, 2),
         _fmt(r.vsm.get("VVC"), 2), _fmt(r.vsm.get("UPF"), 2), "failed" if r.failed else "ok"]
        for r in rows
    ]
    return text_table(["dist_pct", "dg_mw", "nlu_pct", "vsm_vvc_mw", "vsm_upf_mw", "status"], body)


def margin_table(reports: dict[str, MarginReport]) -> str:
    body = [[name, _fmt(r.lambda_max, 4), _fmt(r.vsm_mw, 2), r.monitor, ",".join(r.flags) or "-"]
            for name, r in reports.items()]
    return text_table(["mode", "lambda_max", "vsm_mw", "monitor", "flags"], body)


def export_report(report, path: str | os.PathLike) -> Path:
    """Write a margin curve (CSV), a sweep (CSV, or text table for ``.txt``) or a margin summary."""
    p = Path(path)
    if isinstance(report, MarginReport):
        text = margin_csv(report)
    elif isinstance(report, list):
        text = sweep_table(report) if p.suffix == ".txt" else sweep_csv(report)
    elif isinstance(report, dict):
        text = margin_table(report)
    else:
        raise TypeError(f"cannot export {type(report).__name__}")
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {p}: {exc.strerror or exc}") from exc
    return p
