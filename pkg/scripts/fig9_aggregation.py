"""Three unbalanced feeders with a balanced aggregate versus one feeder."""

from _common import out_dir

from tdmargin.analysis import export_report, find_margin, margin_table
from tdmargin.netmodel import load_scenario

out = out_dir("out/fig9")
sc = load_scenario("scenario_ieee9_4bus.json")
reports = {v: find_margin(sc, "cosim", variant=v) for v in ("bal", "unbal", "3feeder")}
for v, rep in reports.items():
    export_report(rep, out / f"curve_cosim-{v}.csv")
export_report(reports, out / "margin_summary.txt")
print(margin_table(reports), end="")
