"""``tdmargin`` command-line front end.

Exit codes: 0 success, 1 validation/model error, 2 I/O or usage error,
3 base case does not converge.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import analysis
from .cosim import CosimOptions, prepare_mode, solve_prepared, with_variant
from .dxsolver import solve_feeder, voltage_profile_csv
from .equivalents import compute_equivalent, equivalent_fragment
from .netmodel import (
    MODES,
    CaseSyntaxError,
    ModelError,
    _load_json,
    load_feeder,
    parse_case,
    parse_scenario,
    resolve_path,
)

EXIT_OK, EXIT_MODEL, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("tdmargin")


@dataclass
class RunConfig:
    scenario_path: Path
    overrides: list[str] = field(default_factory=list)
    output_dir: Path | None = None
    parallelism: int = 1
    log_level: str = "info"

    def __post_init__(self):
        if self.parallelism < 1:
            raise ModelError("--parallel must be at least 1")


class UsageError(Exception):
    pass


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Set dotted-path keys in a scenario document; values parse as JSON when possible."""
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise UsageError(f"override {item!r} is not key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            nxt = node.get(p)
            if not isinstance(nxt, dict):
                nxt = node[p] = {}
            node = nxt
        node[parts[-1]] = value
    return doc


def load_run_scenario(cfg: RunConfig):
    path = resolve_path(cfg.scenario_path)
    text = path.read_text()
    if cfg.overrides:
        doc = _load_json(text, str(path))
        text = json.dumps(apply_overrides(doc, cfg.overrides))
    return parse_scenario(text, path.parent, str(path))


def parse_mode_spec(spec: str) -> tuple[str, str | None]:
    """``cosim-unbal`` -> ("cosim", "unbal"); ``nod`` -> ("nod", None)."""
    mode, _, variant = spec.strip().lower().partition("-")
    if mode not in MODES:
        raise UsageError(f"unknown mode {spec!r} (expected one of {', '.join(MODES)}, optionally -variant)")
    return mode, variant or None


def _output_dir(cfg: RunConfig, scenario) -> Path:
    out = cfg.output_dir or Path(scenario.outputs.get("dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    worst = EXIT_OK
    for name in args.paths:
        try:
            path = resolve_path(name)
            text = path.read_text()
        except OSError as exc:
            print(f"{name}: cannot read ({exc.strerror or exc})")
            worst = max(worst, EXIT_IO)
            continue
        try:
            if _is_scenario(text):
                parse_scenario(text, path.parent, str(path))
            else:
                parse_case(text, str(path))
        except CaseSyntaxError as exc:
            print(f"{path}:{exc.line}:{exc.column}: {exc}")
            worst = max(worst, EXIT_MODEL)
            continue
        except ModelError as exc:
            print(f"{exc.where or path}: {exc}")
            worst = max(worst, EXIT_MODEL)
            continue
        except OSError as exc:
            print(f"{path}: referenced file unreadable ({exc})")
            worst = max(worst, EXIT_IO)
            continue
        print(f"{path}: ok")
    return worst


def _is_scenario(text: str) -> bool:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        return False
    return isinstance(doc, dict) and "kind" not in doc and ("mode" in doc or "attachments" in doc)


def _margin_job(job):
    scenario, mode, variant, use_cpf = job
    try:
        return analysis.find_margin(scenario, mode, variant=variant, use_cpf=use_cpf), None
    except analysis.MarginError as exc:
        return None, str(exc)


def cmd_margin(args) -> int:
    cfg = RunConfig(Path(args.scenario), args.set or [], args.output_dir and Path(args.output_dir), args.parallel)
    scenario = load_run_scenario(cfg)
    specs = [parse_mode_spec(s) for s in (args.modes.split(",") if args.modes else [scenario.mode])]
    jobs = [(scenario, m, v, args.cpf) for m, v in specs]
    for _, m, v, _ in jobs:
        with_variant(scenario, v)  # surface unknown variants before any work
    if cfg.parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.parallelism) as pool:
            results = list(pool.map(_margin_job, jobs))
    else:
        results = [_margin_job(j) for j in jobs]
    out = _output_dir(cfg, scenario)
    reports = {}
    code = EXIT_OK
    for (m, v), (rep, err) in zip(specs, results):
        name = m if v is None else f"{m}-{v}"
        if rep is None:
            print(f"{name}: base case failed: {err}")
            code = EXIT_NUMERIC
            continue
        reports[name] = rep
        analysis.export_report(rep, out / f"curve_{name}.csv")
        if rep.cpf is not None:
            (out / f"cpf_{name}.csv").write_text(rep.cpf.to_csv())
        print(f"{name}: lambda_max={rep.lambda_max:.4f} vsm_mw={rep.vsm_mw:.2f}")
    if reports:
        analysis.export_report(reports, out / "margin_summary.txt")
        (out / "curves.gp").write_text(_gnuplot(reports))
    return code


def _gnuplot(reports) -> str:
    lines = ["set xlabel 'lambda'", "set ylabel 'V (pu)'", "set key bottom left", "plot \\"]
    items = [f"  'curve_{name}.csv' using 1:2 skip 1 with linespoints title '{name}'" for name in reports]
    return "\n".join(lines) + "\n" + ", \\\n".join(items) + "\n"


def _parse_distributions(text: str):
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        vals = [float(x) for x in chunk.split(",")]
        if len(vals) != 3:
            raise UsageError(f"distribution {chunk!r} needs three percentages")
        out.append(tuple(vals))
    return out


def cmd_dgsweep(args) -> int:
    cfg = RunConfig(Path(args.scenario), args.set or [], args.output_dir and Path(args.output_dir), args.parallel)
    scenario = load_run_scenario(cfg)
    if args.distributions is not None:
        blocks = [("custom", _parse_distributions(args.distributions))]
    else:
        blocks = list(scenario.dg_sweep)
    if not blocks or any(not d for _, d in blocks):
        raise UsageError("no DG distributions given")
    modes = tuple(m.strip().upper() for m in args.dg_modes.split(","))
    if any(m not in ("UPF", "VVC") for m in modes):
        raise UsageError("--dg-modes takes UPF and/or VVC")
    mode, _ = parse_mode_spec(args.mode)
    out = _output_dir(cfg, scenario)
    for label, dists in blocks:
        rows = analysis.dg_sweep(scenario, dists, modes, rep_mode=mode, workers=cfg.parallelism, label=label)
        stem = "sweep_" + "".join(c if c.isalnum() else "_" for c in (label or "all"))
        analysis.export_report(rows, out / f"{stem}.csv")
        analysis.export_report(rows, out / f"{stem}.txt")
        print(f"[{label}]")
        print(analysis.sweep_table(rows), end="")
    return EXIT_OK


def cmd_equivalent(args) -> int:
    feeder = load_feeder(args.feeder)
    sol = solve_feeder(feeder, args.v_load, args.lam)
    if not sol.converged:
        print(f"feeder solve failed: {sol.status}")
        return EXIT_NUMERIC
    eq = compute_equivalent(sol, args.v_load, args.s_base)
    ratio = eq.x_d / eq.r_d if eq.r_d else float("nan")
    print(f"p_loss_mw={eq.source_loss[0]:.6f} q_loss_mvar={eq.source_loss[1]:.6f}")
    print(f"r_d_pu={eq.r_d:.6f} x_d_pu={eq.x_d:.6f} x_over_r={ratio:.6f} s_base_mva={eq.s_base_mva:g}")
    if args.fragment:
        Path(args.fragment).write_text(json.dumps(equivalent_fragment(args.bus, eq), indent=1) + "\n")
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = RunConfig(Path(args.scenario), args.set or [], args.output_dir and Path(args.output_dir), 1)
    scenario = load_run_scenario(cfg)
    mode, variant = parse_mode_spec(args.mode or scenario.mode)
    pm = prepare_mode(with_variant(scenario, variant), mode)
    rec = solve_prepared(pm, args.lam, CosimOptions())
    print(f"mode={rec.mode} lambda={rec.lam:g} converged={rec.converged} monitor={rec.monitor} "
          f"v_pu={rec.v_monitored:.6f}")
    for b in sorted(rec.boundary_s):
        p, q = rec.boundary_s[b]
        v = rec.boundary_v.get(b, float("nan"))
        print(f"  bus {b}: v_pu={v:.6f} p_mw={p:.4f} q_mvar={q:.4f}")
    if rec.mode == "cosim":
        print(f"  outer_iterations={rec.outer_iterations}")
    if cfg.output_dir is not None:
        out = _output_dir(cfg, scenario)
        for b, sol in sorted(rec.feeders.items()):
            (out / f"profile_{b}.csv").write_text(voltage_profile_csv(sol))
    if not rec.converged:
        print(f"  {rec.message}")
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tdmargin", description="Voltage stability margins with T&D co-simulation")
    p.add_argument("--log-level", choices=("quiet", "info", "debug"), default="info")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="parse and check casefiles or scenarios")
    v.add_argument("paths", nargs="+")
    v.set_defaults(func=cmd_validate)

    def scenario_opts(sp):
        sp.add_argument("--scenario", required=True)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted-path scenario override")
        sp.add_argument("--output-dir")
        sp.add_argument("--parallel", type=int, default=1)

    m = sub.add_parser("margin", help="margin search per representation mode")
    scenario_opts(m)
    m.add_argument("--modes", help="comma list such as nod,eqfeeder,cosim-bal,cosim-unbal")
    m.add_argument("--cpf", action="store_true", help="use continuation for transmission-only modes")
    m.set_defaults(func=cmd_margin)

    d = sub.add_parser("dgsweep", help="margin versus DG phase distribution")
    scenario_opts(d)
    d.add_argument("--distributions", help="semicolon list of a,b,c percentages; default: scenario sweep blocks")
    d.add_argument("--dg-modes", default="VVC,UPF")
    d.add_argument("--mode", default="cosim")
    d.set_defaults(func=cmd_dgsweep)

    e = sub.add_parser("equivalent", help="equivalent series impedance of a feeder")
    e.add_argument("--feeder", required=True)
    e.add_argument("--v-load", type=float, default=1.0)
    e.add_argument("--s-base", type=float, default=100.0)
    e.add_argument("--lambda", dest="lam", type=float, default=1.0)
    e.add_argument("--bus", default="load")
    e.add_argument("--fragment", help="write a transmission casefile fragment here")
    e.set_defaults(func=cmd_equivalent)

    s = sub.add_parser("solve", help="single-point solve in any mode")
    s.add_argument("--scenario", required=True)
    s.add_argument("--mode", help="mode[-variant]; default: scenario mode")
    s.add_argument("--lambda", dest="lam", type=float, default=1.0)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--output-dir")
    s.set_defaults(func=cmd_solve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}[args.log_level]
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))  # exits 2
    except analysis.MarginError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ModelError as exc:
        where = f"{exc.where}: " if getattr(exc, "where", None) else ""
        print(f"error: {where}{exc}", file=sys.stderr)
        return EXIT_MODEL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
