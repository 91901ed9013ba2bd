"""IEEE 9-bus with one 4-node feeder: margins under the four representations."""

from _common import out_dir

from tdmargin.analysis import export_report, find_margin, margin_table
from tdmargin.netmodel import load_scenario

out = out_dir("out/fig7")
sc = load_scenario("scenario_ieee9_4bus.json")
runs = {
    "nod": ("nod", None),
    "eqfeeder": ("eqfeeder", "unbal"),
    "cosim-bal": ("cosim", "bal"),
    "cosim-unbal": ("cosim", "unbal"),
    "donly-unbal": ("donly", "unbal"),
}
reports = {}
for name, (mode, variant) in runs.items():
    reports[name] = find_margin(sc, mode, variant=variant)
    export_report(reports[name], out / f"curve_{name}.csv")
export_report(reports, out / "margin_summary.txt")
print(margin_table(reports), end="")
