"""Network data model and JSON casefile I/O.

Two subsystems share this module:

* the balanced transmission network (positive sequence, per unit on
  ``s_base``), and
* radial three-phase distribution feeders, kept in physical units
  (volts, amps, ohms, MW per phase) and converted to per unit only at the
  substation boundary.

All domain objects are frozen dataclasses holding tuples, so they compare
structurally and can be shared between concurrent solver instances.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

SCHEMA_VERSION = 1
PHASES = ("A", "B", "C")
PHASE_INDEX = {"A": 0, "B": 1, "C": 2}
MODES = ("nod", "eqfeeder", "donly", "cosim")

_SUM_TOL = 1e-9
_SYM_TOL = 1e-12


class ModelError(ValueError):
    """A casefile or model object violates a documented invariant."""

    def __init__(self, message: str, where: str | None = None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class CaseSyntaxError(ModelError):
    """Malformed casefile text; carries the line and column of the fault."""

    def __init__(self, message: str, line: int, column: int, source: str | None = None):
        self.line = line
        self.column = column
        loc = f"line {line}, column {column}"
        super().__init__(message, f"{source}:{loc}" if source else loc)


# ---------------------------------------------------------------------------
# Distribution side
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ZipLoad:
    """Single-phase voltage dependent load.

    ``p0``/``q0`` are MW/MVAr on one phase. The Z/I/P fractions of each
    polynomial must sum to one.
    """

    node: str
    phase: str
    p0: float
    q0: float
    pz: float = 0.0
    pi_: float = 0.0
    pp: float = 1.0
    qz: float = 0.0
    qi: float = 0.0
    qp: float = 1.0
    v0: float = 1.0

    def __post_init__(self):
        if self.phase not in PHASE_INDEX:
            raise ModelError(f"unknown phase label {self.phase!r}", f"load at {self.node}")
        for name, fr in (("p", (self.pz, self.pi_, self.pp)), ("q", (self.qz, self.qi, self.qp))):
            if any(f < 0.0 or f > 1.0 for f in fr):
                raise ModelError(f"{name} ZIP fractions must lie in [0, 1]", f"load at {self.node}")
            if abs(sum(fr) - 1.0) > _SUM_TOL:
                raise ModelError(f"{name} ZIP fractions sum to {sum(fr)!r}, not 1", f"load at {self.node}")
        if not self.v0 > 0:
            raise ModelError("v0 must be positive", f"load at {self.node}")

    def scaled(self, factor: float) -> "ZipLoad":
        return replace(self, p0=self.p0 * factor, q0=self.q0 * factor)


def zip_power(load: ZipLoad, v: float) -> tuple[float, float]:
    """Evaluate the ZIP polynomial at voltage magnitude ``v`` (pu).

    Returns ``(p, q)`` in the units of ``load.p0``/``load.q0``. At ``v = 0``
    only the constant-power terms remain.
    """
    if v < 0:
        raise ValueError("voltage magnitude must be non-negative")
    r = v / load.v0
    p = load.p0 * (load.pz * r * r + load.pi_ * r + load.pp)
    q = load.q0 * (load.qz * r * r + load.qi * r + load.qp)
    return p, q


# Default volt-var characteristic as fractions of s_rated; IEEE 1547-2018
# category B defaults.
DEFAULT_VVC_CURVE = ((0.92, 0.44), (0.98, 0.0), (1.02, 0.0), (1.08, -0.44))


@dataclass(frozen=True)
class DgUnit:
    node: str
    phase: str
    p_rated: float
    s_rated: float | None = None
    mode: str = "UPF"
    vvc_curve: tuple[tuple[float, float], ...] = DEFAULT_VVC_CURVE

    def __post_init__(self):
        where = f"dg at {self.node}"
        if self.phase not in PHASE_INDEX:
            raise ModelError(f"unknown phase label {self.phase!r}", where)
        if self.s_rated is None:
            # headroom for reactive support at full real output
            object.__setattr__(self, "s_rated", self.p_rated / 0.9)
        if self.mode not in ("UPF", "VVC"):
            raise ModelError(f"unknown DG mode {self.mode!r}", where)
        if self.p_rated < 0 or self.p_rated > self.s_rated + 1e-12:
            raise ModelError("p_rated must lie in [0, s_rated]", where)
        curve = tuple((float(v), float(q)) for v, q in self.vvc_curve)
        object.__setattr__(self, "vvc_curve", curve)
        vs = [v for v, _ in curve]
        qs = [q for _, q in curve]
        if len(curve) < 2 or any(b <= a for a, b in zip(vs, vs[1:])):
            raise ModelError("volt-var breakpoints must be strictly increasing in voltage", where)
        if any(abs(q) > 1.0 for q in qs) or any(b > a for a, b in zip(qs, qs[1:])):
            raise ModelError("volt-var curve must be non-increasing with |q| <= 1", where)


@dataclass(frozen=True)
class PhaseImpedanceMatrix:
    """Series impedance of a line section.

    ``z`` is ohm/km when ``length_km > 0``, otherwise total ohms. Rows and
    columns of phases not in ``phasing`` are zero.
    """

    z: tuple[tuple[complex, complex, complex], ...]
    length_km: float = 0.0
    phasing: str = "ABC"

    def __post_init__(self):
        z = tuple(tuple(complex(c) for c in row) for row in self.z)
        if len(z) != 3 or any(len(row) != 3 for row in z):
            raise ModelError("phase impedance matrix must be 3x3")
        for p in self.phasing:
            if p not in PHASE_INDEX:
                raise ModelError(f"unknown phase label {p!r}")
        present = {PHASE_INDEX[p] for p in self.phasing}
        z = tuple(
            tuple(z[i][j] if (i in present and j in present) else 0j for j in range(3))
            for i in range(3)
        )
        for i in range(3):
            for j in range(i + 1, 3):
                if abs(z[i][j] - z[j][i]) > _SYM_TOL:
                    raise ModelError("asymmetric impedance matrix")
        if self.length_km < 0:
            raise ModelError("negative section length")
        object.__setattr__(self, "z", z)

    def total(self) -> tuple[tuple[complex, ...], ...]:
        k = self.length_km if self.length_km > 0 else 1.0
        return tuple(tuple(c * k for c in row) for row in self.z)


@dataclass(frozen=True)
class LineSection:
    from_node: str
    to_node: str
    impedance: PhaseImpedanceMatrix
    config: str = ""

    def __post_init__(self):
        if self.from_node == self.to_node:
            raise ModelError("section connects a node to itself", f"section {self.from_node}")

    @property
    def phasing(self) -> str:
        return self.impedance.phasing


@dataclass(frozen=True)
class TransformerBranch:
    """Three-phase transformer; ``zone`` indexes ``nominal_kv`` on the secondary."""

    from_node: str
    to_node: str
    series_r: float
    series_x: float
    rating: float
    zone: int
    tap: float = 1.0
    connection: str = "gwye-gwye"

    def __post_init__(self):
        where = f"transformer {self.from_node}-{self.to_node}"
        if self.from_node == self.to_node:
            raise ModelError("transformer connects a node to itself", where)
        if not self.rating > 0:
            raise ModelError("rating must be positive", where)
        if not 0.9 <= self.tap <= 1.1:
            raise ModelError("tap outside [0.9, 1.1]", where)


@dataclass(frozen=True)
class DistributionFeeder:
    root: str
    nominal_kv: tuple[float, ...]
    sections: tuple[LineSection, ...] = ()
    transformers: tuple[TransformerBranch, ...] = ()
    loads: tuple[ZipLoad, ...] = ()
    dgs: tuple[DgUnit, ...] = ()
    name: str = ""

    def __post_init__(self):
        for attr in ("nominal_kv", "sections", "transformers", "loads", "dgs"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        if not self.nominal_kv or any(kv <= 0 for kv in self.nominal_kv):
            raise ModelError("nominal_kv must list positive zone voltages")
        for t in self.transformers:
            if not 0 <= t.zone < len(self.nominal_kv):
                raise ModelError(f"transformer zone {t.zone} has no nominal_kv entry")
        topo = feeder_topology(self)
        for item in (*self.loads, *self.dgs):
            kind = "load" if isinstance(item, ZipLoad) else "dg"
            if item.node not in topo.parent:
                raise ModelError(f"{kind} node {item.node!r} not in feeder")
            if item.phase not in topo.phases[item.node]:
                raise ModelError(f"{kind} on phase {item.phase} absent at node {item.node!r}")

    @property
    def nodes(self) -> list[str]:
        return feeder_topology(self).order

    def phase_loads(self) -> tuple[float, float, float]:
        """Base real load per phase (MW)."""
        out = [0.0, 0.0, 0.0]
        for ld in self.loads:
            out[PHASE_INDEX[ld.phase]] += ld.p0
        return tuple(out)

    def phase_dg(self) -> tuple[float, float, float]:
        out = [0.0, 0.0, 0.0]
        for dg in self.dgs:
            out[PHASE_INDEX[dg.phase]] += dg.p_rated
        return tuple(out)

    def total_load(self) -> tuple[float, float]:
        return sum(ld.p0 for ld in self.loads), sum(ld.q0 for ld in self.loads)


@dataclass
class FeederTopology:
    order: list[str]  # BFS order from the root
    parent: dict[str, str | None]
    edge: dict[str, LineSection | TransformerBranch]  # edge feeding each non-root node
    zone: dict[str, int]
    phases: dict[str, str]
    children: dict[str, list[str]] = field(default_factory=dict)


def feeder_topology(feeder: DistributionFeeder) -> FeederTopology:
    """Check radiality and return the BFS tree rooted at ``feeder.root``."""
    edges = list(feeder.sections) + list(feeder.transformers)
    adj: dict[str, list[tuple[str, object]]] = {feeder.root: []}
    for e in edges:
        adj.setdefault(e.from_node, []).append((e.to_node, e))
        adj.setdefault(e.to_node, []).append((e.from_node, e))
    n_nodes = len(adj)
    if len(edges) != n_nodes - 1:
        if len(edges) >= n_nodes:
            raise ModelError("non-radial feeder")
        raise ModelError("feeder is disconnected")

    parent: dict[str, str | None] = {feeder.root: None}
    edge: dict[str, object] = {}
    zone = {feeder.root: 0}
    phases = {feeder.root: "ABC"}
    children: dict[str, list[str]] = {n: [] for n in adj}
    order = [feeder.root]
    i = 0
    while i < len(order):
        u = order[i]
        i += 1
        for v, e in adj[u]:
            if v == parent[u] and edge.get(u) is e:
                continue
            if v in parent:
                raise ModelError("non-radial feeder")
            parent[v] = u
            edge[v] = e
            children[u].append(v)
            if isinstance(e, TransformerBranch):
                zone[v] = e.zone
                phases[v] = phases[u]
            else:
                zone[v] = zone[u]
                missing = set(e.phasing) - set(phases[u])
                if missing:
                    raise ModelError(
                        f"section {e.from_node}-{e.to_node} carries phases absent upstream"
                    )
                phases[v] = "".join(p for p in PHASES if p in e.phasing)
            order.append(v)
    if len(order) != n_nodes:
        raise ModelError("feeder is disconnected")
    return FeederTopology(order, parent, edge, zone, phases, children)


def balanced_counterpart(feeder: DistributionFeeder) -> DistributionFeeder:
    """Same feeder with every node's per-phase loads replaced by their mean.

    Preserves the three-phase total load and its ZIP composition at every
    node; this is the only load information an aggregate (substation level)
    model can see.
    """
    by_node: dict[str, list[ZipLoad]] = {}
    for ld in feeder.loads:
        by_node.setdefault(ld.node, []).append(ld)
    loads = []
    for node, group in by_node.items():
        p = sum(ld.p0 for ld in group)
        q = sum(ld.q0 for ld in group)
        tmpl = group[0]
        if p > 0:
            fr = [sum(ld.p0 * getattr(ld, a) for ld in group) / p for a in ("pz", "pi_", "pp")]
        else:
            fr = [tmpl.pz, tmpl.pi_, tmpl.pp]
        if q != 0:
            frq = [sum(ld.q0 * getattr(ld, a) for ld in group) / q for a in ("qz", "qi", "qp")]
        else:
            frq = [tmpl.qz, tmpl.qi, tmpl.qp]
        fr = _renormalize(fr)
        frq = _renormalize(frq)
        for ph in PHASES:
            loads.append(ZipLoad(node, ph, p / 3, q / 3, *fr, *frq, v0=tmpl.v0))
    return replace(feeder, loads=tuple(loads))


def _renormalize(fr: list[float]) -> list[float]:
    fr = [min(max(f, 0.0), 1.0) for f in fr]
    s = sum(fr)
    fr = [f / s for f in fr]
    fr[-1] = 1.0 - fr[0] - fr[1]
    return fr


# ---------------------------------------------------------------------------
# Transmission side
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bus:
    id: str
    type: str  # slack | PV | PQ
    v_set: float = 1.0
    p_load: float = 0.0  # MW
    q_load: float = 0.0  # MVAr


@dataclass(frozen=True)
class Branch:
    from_bus: str
    to_bus: str
    r: float
    x: float
    b: float = 0.0
    rating: float = 0.0


@dataclass(frozen=True)
class Generator:
    bus: str
    p: float  # MW
    q_min: float = -9999.0
    q_max: float = 9999.0


@dataclass(frozen=True)
class TransmissionNetwork:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...] = ()
    s_base: float = 100.0
    name: str = ""

    def __post_init__(self):
        for attr in ("buses", "branches", "generators"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise ModelError("duplicate bus id")
        for b in self.buses:
            if b.type not in ("slack", "PV", "PQ"):
                raise ModelError(f"unknown bus type {b.type!r}", f"bus {b.id}")
            if b.v_set <= 0:
                raise ModelError("v_set must be positive", f"bus {b.id}")
        n_slack = sum(b.type == "slack" for b in self.buses)
        if n_slack != 1:
            raise ModelError("two slack buses" if n_slack > 1 else "no slack bus")
        known = set(ids)
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in known:
                    raise ModelError(f"branch references missing bus {end!r}")
            if br.r == 0 and br.x == 0:
                raise ModelError("zero-impedance branch", f"branch {br.from_bus}-{br.to_bus}")
        for g in self.generators:
            if g.bus not in known:
                raise ModelError(f"generator references missing bus {g.bus!r}")
        if not self.s_base > 0:
            raise ModelError("s_base must be positive")
        # connectivity
        adj: dict[str, set[str]] = {i: set() for i in ids}
        for br in self.branches:
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
        seen = {ids[0]}
        stack = [ids[0]]
        while stack:
            for v in adj[stack.pop()]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        if len(seen) != len(ids):
            raise ModelError("transmission network is not connected")

    def bus(self, bus_id: str) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise ModelError(f"unknown bus {bus_id!r}")

    @property
    def slack(self) -> Bus:
        return next(b for b in self.buses if b.type == "slack")


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LambdaSchedule:
    start: float = 1.0
    max: float = 10.0
    initial_step: float = 0.1
    min_step: float = 1e-3

    def __post_init__(self):
        if not self.min_step > 0:
            raise ModelError("min_step must be positive")
        if self.start < 0:
            raise ModelError("lambda start must be non-negative")
        if self.initial_step < self.min_step:
            raise ModelError("initial_step below min_step")


@dataclass(frozen=True)
class DgSpec:
    """DG added on top of each attached feeder, as a percentage of phase load."""

    percentages: tuple[float, float, float] = (0.0, 0.0, 0.0)
    mode: str = "UPF"


@dataclass(frozen=True)
class Scenario:
    """A margin study: transmission case, attached feeders and lambda schedule.

    ``study_buses`` lists transmission buses whose lumped load counts as the
    study load (scaled by lambda when ``scale_scope == "feeder"``); every
    attachment bus is a study bus implicitly.
    """

    mode: str
    transmission: TransmissionNetwork | None = None
    attachments: Mapping[str, DistributionFeeder] = field(default_factory=dict)
    lambda_schedule: LambdaSchedule = LambdaSchedule()
    scale_scope: str = "feeder"  # feeder | all
    dg_mode_override: str | None = None
    dg: DgSpec | None = None
    monitor_bus: str | None = None
    study_buses: tuple[str, ...] = ()
    outputs: Mapping[str, str] = field(default_factory=dict)
    variants: Mapping[str, Mapping[str, DistributionFeeder]] = field(default_factory=dict)
    dg_sweep: tuple[tuple[str, tuple[tuple[float, float, float], ...]], ...] = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "study_buses", tuple(self.study_buses))
        if self.mode not in MODES:
            raise ModelError(f"unknown mode {self.mode!r}")
        if self.scale_scope not in ("feeder", "all"):
            raise ModelError(f"unknown scale_scope {self.scale_scope!r}")
        if self.dg_mode_override not in (None, "UPF", "VVC"):
            raise ModelError(f"unknown dg_mode_override {self.dg_mode_override!r}")
        if self.mode != "donly" and self.transmission is None:
            raise ModelError(f"mode {self.mode} needs a transmission case")
        if self.mode == "nod" and self.attachments:
            raise ModelError("nod mode takes no feeder attachments")
        if self.mode == "donly" and len(self.attachments) != 1:
            raise ModelError("donly mode needs exactly one attached feeder")
        if self.mode in ("eqfeeder", "cosim") and not self.attachments:
            raise ModelError(f"mode {self.mode} needs at least one attachment")
        if self.transmission is not None:
            for bus_id in (*self.attachments, *self.study_buses):
                if self.transmission.bus(bus_id).type != "PQ":
                    raise ModelError(f"study bus {bus_id!r} is not a PQ bus")
        if self.monitor_bus is None:
            mon = next(iter(self.attachments), None) or next(iter(self.study_buses), None)
            object.__setattr__(self, "monitor_bus", mon)

    @property
    def scaled_buses(self) -> tuple[str, ...]:
        out = list(self.study_buses)
        out += [b for b in self.attachments if b not in out]
        return tuple(out)


# ---------------------------------------------------------------------------
# Parsing / serialization
# ---------------------------------------------------------------------------


def _load_json(text: str, source: str | None = None) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseSyntaxError(exc.msg, exc.lineno, exc.colno, source) from None
    if not isinstance(doc, dict):
        raise CaseSyntaxError("top-level value must be an object", 1, 1, source)
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ModelError(f"unsupported schema_version {version!r}", source)
    return doc


def _req(d: Mapping, key: str, where: str):
    try:
        return d[key]
    except (KeyError, TypeError):
        raise ModelError(f"missing field {key!r}", where) from None


def parse_transmission_case(text: str, source: str | None = None) -> TransmissionNetwork:
    doc = _load_json(text, source)
    s_base = float(doc.get("s_base_mva", 100.0))
    buses = []
    for i, b in enumerate(_req(doc, "buses", "case")):
        where = f"buses[{i}]"
        buses.append(
            Bus(
                id=str(_req(b, "id", where)),
                type=str(_req(b, "type", where)),
                v_set=float(b.get("v_set", 1.0)),
                p_load=float(b.get("p_load_mw", 0.0)),
                q_load=float(b.get("q_load_mvar", 0.0)),
            )
        )
    branches = []
    for i, br in enumerate(doc.get("branches", [])):
        where = f"branches[{i}]"
        branches.append(
            Branch(
                from_bus=str(_req(br, "from", where)),
                to_bus=str(_req(br, "to", where)),
                r=float(_req(br, "r", where)),
                x=float(_req(br, "x", where)),
                b=float(br.get("b", 0.0)),
                rating=float(br.get("rating_mva", 0.0)),
            )
        )
    gens = []
    for i, g in enumerate(doc.get("generators", [])):
        where = f"generators[{i}]"
        gens.append(
            Generator(
                bus=str(_req(g, "bus", where)),
                p=float(g.get("p_mw", 0.0)),
                q_min=float(g.get("q_min_mvar", -9999.0)),
                q_max=float(g.get("q_max_mvar", 9999.0)),
            )
        )
    try:
        return TransmissionNetwork(buses, branches, gens, s_base, name=str(doc.get("name", "")))
    except ModelError as exc:
        if source and exc.where is None:
            raise ModelError(str(exc), source) from None
        raise


def _cplx(pair, where: str) -> complex:
    if isinstance(pair, (int, float)):
        return complex(pair)
    if not isinstance(pair, (list, tuple)) or len(pair) != 2:
        raise ModelError("complex entries are [re, im] pairs", where)
    return complex(float(pair[0]), float(pair[1]))


def _phase_list(spec: str, where: str) -> list[str]:
    spec = str(spec).upper()
    for p in spec:
        if p not in PHASE_INDEX:
            raise ModelError(f"unknown phase label {p!r}", where)
    if not spec:
        raise ModelError("empty phase label", where)
    return [p for p in PHASES if p in spec]


def parse_feeder_case(text: str, source: str | None = None) -> DistributionFeeder:
    doc = _load_json(text, source)
    try:
        return _feeder_from_doc(doc)
    except ModelError as exc:
        if source:
            raise ModelError(str(exc), source) from None
        raise


def _feeder_from_doc(doc: Mapping) -> DistributionFeeder:
    configs: dict[str, tuple] = {}
    for i, cfg in enumerate(doc.get("line_configs", [])):
        where = f"line_configs[{i}]"
        rows = _req(cfg, "z_ohm_per_km", where)
        if len(rows) != 3 or any(len(r) != 3 for r in rows):
            raise ModelError("impedance matrix must be 3x3", where)
        configs[str(_req(cfg, "name", where))] = tuple(
            tuple(_cplx(c, where) for c in row) for row in rows
        )
    sections = []
    for i, s in enumerate(doc.get("sections", [])):
        where = f"sections[{i}]"
        name = str(_req(s, "config", where))
        if name not in configs:
            raise ModelError(f"unknown line config {name!r}", where)
        phasing = "".join(_phase_list(s.get("phases", "ABC"), where))
        try:
            imp = PhaseImpedanceMatrix(configs[name], float(s.get("length_km", 0.0)), phasing)
        except ModelError as exc:
            raise ModelError(str(exc), where) from None
        sections.append(LineSection(str(_req(s, "from", where)), str(_req(s, "to", where)), imp, name))
    transformers = []
    for i, t in enumerate(doc.get("transformers", [])):
        where = f"transformers[{i}]"
        transformers.append(
            TransformerBranch(
                from_node=str(_req(t, "from", where)),
                to_node=str(_req(t, "to", where)),
                series_r=float(_req(t, "r_pu", where)),
                series_x=float(_req(t, "x_pu", where)),
                rating=float(_req(t, "rating_mva", where)),
                zone=int(_req(t, "zone", where)),
                tap=float(t.get("tap", 1.0)),
                connection=str(t.get("connection", "gwye-gwye")),
            )
        )
    loads = []
    for i, ld in enumerate(doc.get("loads", [])):
        where = f"loads[{i}]"
        phases = _phase_list(_req(ld, "phase", where), where)
        zp = ld.get("zip_p", [0.0, 0.0, 1.0])
        zq = ld.get("zip_q", zp)
        if len(zp) != 3 or len(zq) != 3:
            raise ModelError("ZIP profiles have three fractions", where)
        share = 1.0 / len(phases)
        for ph in phases:
            try:
                loads.append(
                    ZipLoad(
                        str(_req(ld, "node", where)), ph,
                        float(_req(ld, "p_mw", where)) * share,
                        float(ld.get("q_mvar", 0.0)) * share,
                        *map(float, zp), *map(float, zq),
                        v0=float(ld.get("v0", 1.0)),
                    )
                )
            except ModelError as exc:
                raise ModelError(str(exc), where) from None
    dgs = []
    for i, dg in enumerate(doc.get("dgs", [])):
        where = f"dgs[{i}]"
        phases = _phase_list(_req(dg, "phase", where), where)
        share = 1.0 / len(phases)
        s_rated = dg.get("s_rated_mva")
        curve = dg.get("vvc_curve")
        for ph in phases:
            kw = {}
            if curve is not None:
                kw["vvc_curve"] = tuple(tuple(pt) for pt in curve)
            dgs.append(
                DgUnit(
                    str(_req(dg, "node", where)), ph,
                    float(_req(dg, "p_mw", where)) * share,
                    None if s_rated is None else float(s_rated) * share,
                    str(dg.get("mode", "UPF")).upper(),
                    **kw,
                )
            )
    return DistributionFeeder(
        root=str(_req(doc, "root", "feeder")),
        nominal_kv=tuple(float(kv) for kv in _req(doc, "nominal_kv", "feeder")),
        sections=sections,
        transformers=transformers,
        loads=loads,
        dgs=dgs,
        name=str(doc.get("name", "")),
    )


def _pair(c: complex) -> list[float]:
    return [c.real, c.imag]


def feeder_to_doc(feeder: DistributionFeeder) -> dict:
    configs: dict[str, tuple] = {}
    sections = []
    for k, s in enumerate(feeder.sections):
        name = s.config or f"cfg{k}"
        z = s.impedance.z
        # phasing masks the stored matrix, so two sections may share a
        # config name but not the same masked matrix; disambiguate
        if name in configs and configs[name] != z:
            name = f"{name}_{s.impedance.phasing}"
            while name in configs and configs[name] != z:
                name += "_"
        configs[name] = z
        sections.append(
            {
                "from": s.from_node,
                "to": s.to_node,
                "config": name,
                "length_km": s.impedance.length_km,
                "phases": s.impedance.phasing,
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "feeder",
        "name": feeder.name,
        "root": feeder.root,
        "nominal_kv": list(feeder.nominal_kv),
        "line_configs": [
            {"name": n, "z_ohm_per_km": [[_pair(c) for c in row] for row in z]}
            for n, z in configs.items()
        ],
        "sections": sections,
        "transformers": [
            {
                "from": t.from_node,
                "to": t.to_node,
                "r_pu": t.series_r,
                "x_pu": t.series_x,
                "rating_mva": t.rating,
                "zone": t.zone,
                "tap": t.tap,
                "connection": t.connection,
            }
            for t in feeder.transformers
        ],
        "loads": [
            {
                "node": ld.node,
                "phase": ld.phase,
                "p_mw": ld.p0,
                "q_mvar": ld.q0,
                "zip_p": [ld.pz, ld.pi_, ld.pp],
                "zip_q": [ld.qz, ld.qi, ld.qp],
                "v0": ld.v0,
            }
            for ld in feeder.loads
        ],
        "dgs": [
            {
                "node": dg.node,
                "phase": dg.phase,
                "p_mw": dg.p_rated,
                "s_rated_mva": dg.s_rated,
                "mode": dg.mode,
                "vvc_curve": [list(pt) for pt in dg.vvc_curve],
            }
            for dg in feeder.dgs
        ],
    }


def transmission_to_doc(net: TransmissionNetwork) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "transmission",
        "name": net.name,
        "s_base_mva": net.s_base,
        "buses": [
            {"id": b.id, "type": b.type, "v_set": b.v_set, "p_load_mw": b.p_load, "q_load_mvar": b.q_load}
            for b in net.buses
        ],
        "branches": [
            {"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x, "b": br.b, "rating_mva": br.rating}
            for br in net.branches
        ],
        "generators": [
            {"bus": g.bus, "p_mw": g.p, "q_min_mvar": g.q_min, "q_max_mvar": g.q_max}
            for g in net.generators
        ],
    }


def serialize(obj: TransmissionNetwork | DistributionFeeder) -> str:
    """Casefile text for a network or feeder; ``parse`` inverts it exactly."""
    if isinstance(obj, TransmissionNetwork):
        doc = transmission_to_doc(obj)
    elif isinstance(obj, DistributionFeeder):
        doc = feeder_to_doc(obj)
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    return json.dumps(doc, indent=1) + "\n"


def parse_case(text: str, source: str | None = None) -> TransmissionNetwork | DistributionFeeder:
    """Parse either casefile kind, telling them apart by their keys."""
    doc = _load_json(text, source)
    kind = doc.get("kind")
    if kind == "feeder" or (kind is None and "root" in doc):
        return parse_feeder_case(text, source)
    if kind == "transmission" or (kind is None and "buses" in doc):
        return parse_transmission_case(text, source)
    raise ModelError("cannot tell casefile kind (expected 'root' or 'buses')", source)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def data_dir() -> Path:
    env = os.environ.get("TDMARGIN_DATA_DIR")
    if env:
        return Path(env)
    return Path(__file__).resolve().parent / "data"


def resolve_path(name: str | os.PathLike, base: Path | None = None) -> Path:
    """Find a casefile: absolute, relative to ``base``, then the data dir."""
    p = Path(name)
    if p.is_absolute():
        return p
    if base is not None and (base / p).exists():
        return base / p
    if p.exists():
        return p
    return data_dir() / p


def load_case(name: str | os.PathLike, base: Path | None = None):
    path = resolve_path(name, base)
    return parse_case(path.read_text(), str(path))


def load_feeder(name: str | os.PathLike, base: Path | None = None) -> DistributionFeeder:
    path = resolve_path(name, base)
    return parse_feeder_case(path.read_text(), str(path))


def load_transmission(name: str | os.PathLike, base: Path | None = None) -> TransmissionNetwork:
    path = resolve_path(name, base)
    return parse_transmission_case(path.read_text(), str(path))


def parse_scenario(text: str, base: Path | None = None, source: str | None = None) -> Scenario:
    """Scenario documents reference casefiles by path relative to ``base``."""
    doc = _load_json(text, source)
    try:
        tx = load_transmission(doc["transmission"], base) if doc.get("transmission") else None
        att = {str(k): load_feeder(v, base) for k, v in doc.get("attachments", {}).items()}
        variants = {
            str(name): {str(k): load_feeder(v, base) for k, v in group.items()}
            for name, group in doc.get("variants", {}).items()
        }
        lam = doc.get("lambda", {})
        sched = LambdaSchedule(
            start=float(lam.get("start", 1.0)),
            max=float(lam.get("max", 10.0)),
            initial_step=float(lam.get("initial_step", 0.1)),
            min_step=float(lam.get("min_step", 1e-3)),
        )
        dg = None
        if doc.get("dg"):
            d = doc["dg"]
            dg = DgSpec(tuple(float(x) for x in d.get("percentages", (0, 0, 0))), str(d.get("mode", "UPF")).upper())
        override = doc.get("dg_mode_override")
        sweeps = tuple(
            (str(block.get("label", "")), tuple(tuple(float(x) for x in d) for d in block["distributions"]))
            for block in doc.get("dg_sweep", [])
        )
        return Scenario(
            mode=str(doc.get("mode", "cosim")).lower(),
            transmission=tx,
            attachments=att,
            lambda_schedule=sched,
            scale_scope=str(doc.get("scale_scope", "feeder")),
            dg_mode_override=None if override is None else str(override).upper(),
            dg=dg,
            monitor_bus=None if doc.get("monitor_bus") is None else str(doc["monitor_bus"]),
            study_buses=tuple(str(b) for b in doc.get("study_buses", [])),
            outputs=dict(doc.get("outputs", {})),
            variants=variants,
            dg_sweep=sweeps,
            name=str(doc.get("name", "")),
        )
    except FileNotFoundError:
        raise
    except ModelError as exc:
        if source and exc.where is None:
            raise ModelError(str(exc), source) from None
        raise


def load_scenario(path: str | os.PathLike) -> Scenario:
    p = resolve_path(path)
    return parse_scenario(p.read_text(), p.parent, str(p))


def iter_bundled_cases() -> Iterable[Path]:
    return sorted(p for p in data_dir().glob("*.json") if not p.name.startswith("scenario_"))

