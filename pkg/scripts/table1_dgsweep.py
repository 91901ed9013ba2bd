"""Table-I style sweep: 60% DG spread over the phases of the unbalanced feeder."""

import sys

from _common import out_dir

from tdmargin.analysis import dg_sweep, export_report, sweep_table
from tdmargin.netmodel import load_scenario

out = out_dir("out/table1")
sc = load_scenario("scenario_dg_table1.json")
for label, dists in sc.dg_sweep:
    rows = dg_sweep(sc, dists, label=label)
    stem = "sweep_" + "".join(c if c.isalnum() else "_" for c in label)
    export_report(rows, out / f"{stem}.csv")
    export_report(rows, out / f"{stem}.txt")
    print(f"[{label}]")
    print(sweep_table(rows))
    sys.stdout.flush()
