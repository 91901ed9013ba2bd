"""P-V curves of the extended 2-bus system with and without the equivalent feeder."""

from _common import out_dir

from tdmargin.analysis import export_report, find_margin, margin_table
from tdmargin.netmodel import load_scenario

out = out_dir("out/fig6")
sc = load_scenario("scenario_twobus.json")
reports = {"nod": find_margin(sc, "nod", use_cpf=True), "eqfeeder": find_margin(sc, "eqfeeder")}
for name, rep in reports.items():
    export_report(rep, out / f"curve_{name}.csv")
    if rep.cpf is not None:
        (out / f"cpf_{name}.csv").write_text(rep.cpf.to_csv())
print(margin_table(reports), end="")
