"""Regenerate the bundled casefiles in src/tdmargin/data.

Line and transformer data come from the IEEE distribution test feeder
documents (4-node and 13-node); the 9-bus system is the standard WSCC case.
Run from the repository root:

    python scripts/make_fixtures.py
"""

import json
import math
from dataclasses import replace
from pathlib import Path

from tdmargin.netmodel import (
    Branch,
    Bus,
    DistributionFeeder,
    Generator,
    LineSection,
    PhaseImpedanceMatrix,
    TransformerBranch,
    TransmissionNetwork,
    ZipLoad,
    serialize,
)

OUT = Path(__file__).resolve().parents[1] / "src" / "tdmargin" / "data"
MILE_KM = 1.609344
FT_KM = 0.0003048
ZIP_STUDY = (0.4, 0.3, 0.3)
CONST_PQ = (0.0, 0.0, 1.0)

# ohm/mile, IEEE 4-node feeder configuration (336,400 26/7 ACSR, spacing 500)
Z400 = [
    [0.4576 + 1.0780j, 0.1560 + 0.5017j, 0.1535 + 0.3849j],
    [0.1560 + 0.5017j, 0.4666 + 1.0482j, 0.1580 + 0.4236j],
    [0.1535 + 0.3849j, 0.1580 + 0.4236j, 0.4615 + 1.0651j],
]

# ohm/mile, IEEE 13-node feeder configurations
Z13 = {
    "601": [
        [0.3465 + 1.0179j, 0.1560 + 0.5017j, 0.1580 + 0.4236j],
        [0.1560 + 0.5017j, 0.3375 + 1.0478j, 0.1535 + 0.3849j],
        [0.1580 + 0.4236j, 0.1535 + 0.3849j, 0.3414 + 1.0348j],
    ],
    "602": [
        [0.7526 + 1.1814j, 0.1580 + 0.4236j, 0.1560 + 0.5017j],
        [0.1580 + 0.4236j, 0.7475 + 1.1983j, 0.1535 + 0.3849j],
        [0.1560 + 0.5017j, 0.1535 + 0.3849j, 0.7436 + 1.2112j],
    ],
    "603": [
        [0, 0, 0],
        [0, 1.3294 + 1.3471j, 0.2066 + 0.4591j],
        [0, 0.2066 + 0.4591j, 1.3238 + 1.3569j],
    ],
    "604": [
        [1.3238 + 1.3569j, 0, 0.2066 + 0.4591j],
        [0, 0, 0],
        [0.2066 + 0.4591j, 0, 1.3294 + 1.3471j],
    ],
    "605": [[0, 0, 0], [0, 0, 0], [0, 0, 1.3292 + 1.3475j]],
    "606": [
        [0.7982 + 0.4463j, 0.3192 + 0.0328j, 0.2849 - 0.0143j],
        [0.3192 + 0.0328j, 0.7891 + 0.4041j, 0.3192 + 0.0328j],
        [0.2849 - 0.0143j, 0.3192 + 0.0328j, 0.7982 + 0.4463j],
    ],
    "607": [[1.3425 + 0.5124j, 0, 0], [0, 0, 0], [0, 0, 0]],
}


def per_km(z, scale=1.0):
    return tuple(tuple(complex(c) / MILE_KM * scale for c in row) for row in z)


def transposed(z):
    """Phase-symmetric version of a matrix: mean self and mean mutual terms."""
    zs = sum(z[i][i] for i in range(3)) / 3
    zm = (z[0][1] + z[0][2] + z[1][2]) / 3
    return [[zs if i == j else zm for j in range(3)] for i in range(3)]


def q_from_pf(p, pf):
    return p * math.tan(math.acos(pf))


def four_node(name, phase_pq, zip_=ZIP_STUDY, scale=1.0, xfmr=(0.0, 0.0), matrix=Z400, prefix="", root=None):
    """IEEE 4-node feeder: 12.47 kV source, 6 MVA step-down to 4.16 kV.

    ``scale`` multiplies loads and divides impedances, i.e. ``scale``
    identical feeders in parallel.
    """
    z = per_km(matrix, 1.0 / scale)
    n = [prefix + s for s in ("1", "2", "3", "4")]
    if root is not None:
        n[0] = root
    sections = [
        LineSection(n[0], n[1], PhaseImpedanceMatrix(z, 2000 * FT_KM), "cfg400"),
        LineSection(n[2], n[3], PhaseImpedanceMatrix(z, 2500 * FT_KM), "cfg400"),
    ]
    xf = [TransformerBranch(n[1], n[2], xfmr[0], xfmr[1], 6.0 * scale, zone=1)]
    loads = [
        ZipLoad(n[3], ph, p * scale, q * scale, *zip_, *zip_)
        for ph, (p, q) in zip("ABC", phase_pq)
    ]
    return DistributionFeeder(n[0], (12.47, 4.16), sections, xf, loads, name=name)


BAL = [(1.8, q_from_pf(1.8, 0.9))] * 3
UNBAL = [(1.275, q_from_pf(1.275, 0.85)), (1.8, q_from_pf(1.8, 0.9)), (2.375, q_from_pf(2.375, 0.95))]
# balanced split with the unbalanced case's three-phase totals
BAL_EQ = [(sum(p for p, _ in UNBAL) / 3, sum(q for _, q in UNBAL) / 3)] * 3
# phase split of the larger feeder in the net-load unbalance study
NLU_SPLIT = [(45.44 / 22, q_from_pf(45.44 / 22, 0.9)), (29.28 / 22, q_from_pf(29.28 / 22, 0.9)),
             (36.96 / 22, q_from_pf(36.96 / 22, 0.9))]
SCALE = 22.0


def rolled(z, k):
    """Impedance matrix of the same line with phase connections rolled by k."""
    perm = [(i - k) % 3 for i in range(3)]
    return [[z[perm[i]][perm[j]] for j in range(3)] for i in range(3)]


def three_feeder_substation(scale):
    """Three copies of the unbalanced 4-node feeder on one substation bus.

    The copies are connected with phases rolled by one and two positions
    (loads and conductor positions together), so the substation sees a
    balanced aggregate while each feeder stays as unbalanced as the original.
    """
    per = scale / 3.0
    parts = []
    for k in range(3):
        split = UNBAL[-k:] + UNBAL[:-k] if k else UNBAL
        parts.append(four_node("", split, ZIP_STUDY, per, matrix=rolled(Z400, k), prefix=f"f{k + 1}_", root="sub"))
    return DistributionFeeder(
        "sub",
        (12.47, 4.16),
        sum((f.sections for f in parts), ()),
        sum((f.transformers for f in parts), ()),
        sum((f.loads for f in parts), ()),
        name="ieee4_3feeder_x22",
    )


def ieee13():
    """IEEE 13-node feeder, wye-equivalent loads, regulator omitted.

    Delta loads are placed line-to-neutral on the leading phase of their
    pair; capacitors are constant-impedance negative reactive loads.
    """
    ft = FT_KM
    sec = [
        ("650", "632", "601", 2000, "ABC"),
        ("632", "633", "602", 500, "ABC"),
        ("632", "645", "603", 500, "BC"),
        ("645", "646", "603", 300, "BC"),
        ("632", "671", "601", 2000, "ABC"),
        ("671", "684", "604", 300, "AC"),
        ("684", "611", "605", 300, "C"),
        ("684", "652", "607", 800, "A"),
        ("671", "680", "601", 1000, "ABC"),
        ("671", "692", "606", 1, "ABC"),  # switch, modelled as a 1 ft cable
        ("692", "675", "606", 500, "ABC"),
    ]
    sections = [
        LineSection(a, b, PhaseImpedanceMatrix(per_km(Z13[cfg]), L * ft, ph), cfg) for a, b, cfg, L, ph in sec
    ]
    xf = [TransformerBranch("633", "634", 0.011, 0.02, 0.5, zone=1)]
    Z, I, P = (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)
    kw = [
        ("634", "A", 160, 110, P), ("634", "B", 120, 90, P), ("634", "C", 120, 90, P),
        ("645", "B", 170, 125, P),
        ("646", "B", 230, 132, Z),
        ("652", "A", 128, 86, Z),
        ("671", "A", 385, 220, P), ("671", "B", 385, 220, P), ("671", "C", 385, 220, P),
        ("675", "A", 485, 190, P), ("675", "B", 68, 60, P), ("675", "C", 290, 212, P),
        ("692", "C", 170, 151, I),
        ("611", "C", 170, 80, I),
        # distributed load 632-671 lumped at 671
        ("671", "A", 17, 10, P), ("671", "B", 66, 38, P), ("671", "C", 117, 68, P),
        # shunt capacitors
        ("675", "A", 0, -200, Z), ("675", "B", 0, -200, Z), ("675", "C", 0, -200, Z),
        ("611", "C", 0, -100, Z),
    ]
    loads = [ZipLoad(n, ph, p / 1e3, q / 1e3, *m, *m) for n, ph, p, q, m in kw]
    return DistributionFeeder("650", (4.16, 0.48), sections, xf, loads, name="ieee13")


def ieee9():
    buses = [
        Bus("1", "slack", 1.0), Bus("2", "PV", 1.0), Bus("3", "PV", 1.0),
        Bus("4", "PQ"), Bus("5", "PQ", 1.0, 90, 30), Bus("6", "PQ"),
        Bus("7", "PQ", 1.0, 100, 35), Bus("8", "PQ"), Bus("9", "PQ", 1.0, 125, 50),
    ]
    branches = [
        Branch("1", "4", 0.0, 0.0576, 0.0, 250), Branch("4", "5", 0.017, 0.092, 0.158, 250),
        Branch("5", "6", 0.039, 0.17, 0.358, 150), Branch("3", "6", 0.0, 0.0586, 0.0, 300),
        Branch("6", "7", 0.0119, 0.1008, 0.209, 150), Branch("7", "8", 0.0085, 0.072, 0.149, 250),
        Branch("8", "2", 0.0, 0.0625, 0.0, 250), Branch("8", "9", 0.032, 0.161, 0.306, 250),
        Branch("9", "4", 0.01, 0.085, 0.176, 250),
    ]
    gens = [Generator("1", 0.0, -300, 300), Generator("2", 163.0, -300, 300), Generator("3", 85.0, -300, 300)]
    return TransmissionNetwork(buses, branches, gens, 100.0, name="ieee9")


def two_bus(name, r, x, p=0.0, q=0.0):
    return TransmissionNetwork(
        [Bus("1", "slack", 1.0), Bus("2", "PQ", 1.0, p, q)], [Branch("1", "2", r, x)], [], 100.0, name=name
    )


def write(obj, fname):
    (OUT / fname).write_text(serialize(obj))


def write_doc(doc, fname):
    (OUT / fname).write_text(json.dumps(doc, indent=1) + "\n")


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    write(ieee9(), "ieee9.json")
    write(two_bus("twobus", 0.05, 0.3), "twobus.json")
    write(two_bus("twobus_lossless", 0.0, 0.3, 100.0, 0.0), "twobus_lossless.json")

    # the reference 4-node losses correspond to an impedance-free step-down
    # transformer and constant-power loads
    write(four_node("ieee4_balanced", BAL, CONST_PQ), "ieee4_balanced.json")
    write(four_node("ieee4_unbalanced", UNBAL, CONST_PQ), "ieee4_unbalanced.json")
    write(four_node("ieee4_stepdown_documented", BAL, CONST_PQ, xfmr=(0.01, 0.06)), "ieee4_stepdown_documented.json")
    write(four_node("ieee4_transposed_x22", BAL_EQ, CONST_PQ, SCALE, matrix=transposed(Z400)),
          "ieee4_transposed_x22.json")
    write(four_node("ieee4_bal_x22", BAL_EQ, ZIP_STUDY, SCALE), "ieee4_bal_x22.json")
    write(four_node("ieee4_unbal_x22", UNBAL, ZIP_STUDY, SCALE), "ieee4_unbal_x22.json")
    write(four_node("ieee4_nlu_x22", NLU_SPLIT, ZIP_STUDY, SCALE), "ieee4_nlu_x22.json")
    write(three_feeder_substation(SCALE), "ieee4_3feeder_x22.json")
    # sized so the lumped-load nose on the 2-bus line sits near lambda 2.4
    write(four_node("ieee4_bal_x6", BAL, CONST_PQ, 6.0), "ieee4_bal_x6.json")
    write(ieee13(), "ieee13.json")

    lam = {"start": 1.0, "max": 10.0, "initial_step": 0.1, "min_step": 0.001}
    write_doc(
        {
            "schema_version": 1,
            "name": "ieee9_4bus",
            "mode": "cosim",
            "transmission": "ieee9.json",
            "attachments": {"9": "ieee4_unbal_x22.json"},
            "variants": {
                "bal": {"9": "ieee4_bal_x22.json"},
                "unbal": {"9": "ieee4_unbal_x22.json"},
                "3feeder": {"9": "ieee4_3feeder_x22.json"},
            },
            "lambda": lam,
            "scale_scope": "feeder",
            "outputs": {"dir": "out/ieee9_4bus"},
        },
        "scenario_ieee9_4bus.json",
    )
    write_doc(
        {
            "schema_version": 1,
            "name": "twobus",
            "mode": "eqfeeder",
            "transmission": "twobus.json",
            "attachments": {"2": "ieee4_bal_x6.json"},
            "lambda": lam,
            "scale_scope": "feeder",
            "outputs": {"dir": "out/twobus"},
        },
        "scenario_twobus.json",
    )
    write_doc(
        {
            "schema_version": 1,
            "name": "dg_table1",
            "mode": "cosim",
            "transmission": "ieee9.json",
            "attachments": {"9": "ieee4_unbal_x22.json"},
            "lambda": lam,
            "scale_scope": "feeder",
            "dg_sweep": [
                {"label": "table1", "distributions": [[0, 0, 0], [60, 60, 60], [10, 75, 75], [84, 10, 85], [99, 98, 10]]}
            ],
            "outputs": {"dir": "out/dg_table1"},
        },
        "scenario_dg_table1.json",
    )
    write_doc(
        {
            "schema_version": 1,
            "name": "dg_nlu",
            "mode": "cosim",
            "transmission": "ieee9.json",
            "attachments": {"9": "ieee4_nlu_x22.json"},
            "lambda": lam,
            "scale_scope": "feeder",
            "dg_sweep": [
                {"label": "40%", "distributions": [[50, 10, 50.3], [40, 40, 40], [55, 55, 10], [10, 62, 61]]},
                {"label": "60%", "distributions": [[60, 60, 60], [72, 25, 72], [77, 77, 25]]},
                {"label": "80%", "distributions": [[25, 85, 85], [90, 50, 90], [80, 80, 80], [95, 95, 50], [52, 100, 100]]},
            ],
            "outputs": {"dir": "out/dg_nlu"},
        },
        "scenario_dg_nlu.json",
    )


if __name__ == "__main__":
    main()
