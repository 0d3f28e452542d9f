"""Case-file ingestion and validation.

A case is one YAML document describing the grid, the connected devices, the
scenario (events, horizon, step) and the output selection.  The schema is
strict: unknown keys anywhere are rejected, and all bus/branch references
must resolve.  ``Case.build()`` constructs fresh model objects, so one parsed
case can drive many independent runs.

Schema (bus ids are 1-based in files, 0-based internally)::

    name: wscc9
    base_mva: 100.0
    f_hz: 60.0
    buses:    [{id, name?, kv?, v0?, theta0?}]
    branches: [{from, to, r?, x, b?, tap?, status?}]
    machines: [{bus, order?, slack?, p_set?, v_set?, h, d?, ra?, xd, xq,
                xd1, xq1, td0?, tq0?, governor? {tg?, kg?}, avr? {ka?, ta?}}]
    cigs:     [{bus, p_set?, v_set?, control?, kp?, tp?, kq?, tq?, kqf?,
                tc?, pll_kp?, pll_ki?, imax?}]
    loads:    [{bus, p, q, kind?, gamma_p?, gamma_q?, status?, id?}]
    scenario: {tend?, dt?, events: [{t, kind, bus?, from?, to?, factor?,
               b_fault?, target?, param?, delta?}]}
    output:   {record?: all | [bus ids], noise_sigma?, seed?}
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .devices import AVR, CIG, Governor, StaticLoad, SynMachine, VoltDepLoad
from .engine import Event
from .network import Branch, Bus, Grid


class CaseError(Exception):
    """Schema violation or unresolvable reference in a case file."""


def _section(data, key, default):
    val = data.pop(key, default)
    if val is None:
        val = default
    return val


class _Block:
    """One mapping block with strict key accounting."""

    def __init__(self, raw, where: str):
        if not isinstance(raw, dict):
            raise CaseError(f"{where}: expected a mapping, got {type(raw).__name__}")
        self.raw = dict(raw)
        self.where = where

    def take(self, key, kind, default=_section):
        if key not in self.raw:
            if default is _section:
                raise CaseError(f"{self.where}: missing required key '{key}'")
            return default
        val = self.raw.pop(key)
        if kind is float and isinstance(val, int):
            val = float(val)
        if kind is not None and not isinstance(val, kind):
            raise CaseError(
                f"{self.where}: key '{key}' must be {kind.__name__}, "
                f"got {type(val).__name__}"
            )
        return val

    def done(self):
        if self.raw:
            first = sorted(self.raw)[0]
            raise CaseError(f"{self.where}: unknown key '{first}'")


@dataclass
class OutputSpec:
    record: list[int] | None = None  # 0-based buses; None = all
    noise_sigma: float = 0.0
    seed: int = 1


@dataclass
class Scenario:
    tend: float = 5.0
    dt: float = 1e-3
    events: list[Event] = field(default_factory=list)


@dataclass
class Case:
    name: str
    grid_spec: dict
    machine_specs: list[dict]
    cig_specs: list[dict]
    load_specs: list[dict]
    scenario: Scenario
    output: OutputSpec

    @property
    def n_bus(self) -> int:
        return len(self.grid_spec["buses"])

    def build(self):
        """Fresh (grid, devices) pair for one run."""
        gs = self.grid_spec
        grid = Grid(
            buses=[Bus(**b) for b in gs["buses"]],
            branches=[Branch(**br) for br in gs["branches"]],
            base_mva=gs["base_mva"],
            f_hz=gs["f_hz"],
        )
        devices: list = []
        for spec in self.machine_specs:
            spec = copy.deepcopy(spec)
            gov = spec.pop("governor")
            avr = spec.pop("avr")
            mach = SynMachine(**spec)
            mach.governor = None if gov is None else Governor(**gov)
            mach.avr = None if avr is None else AVR(**avr)
            devices.append(mach)
        for spec in self.cig_specs:
            devices.append(CIG(**copy.deepcopy(spec)))
        for spec in self.load_specs:
            spec = copy.deepcopy(spec)
            if spec.pop("vdl"):
                devices.append(VoltDepLoad(**spec))
            else:
                devices.append(StaticLoad(**spec))
        return grid, devices

    def build_events(self) -> list[Event]:
        return copy.deepcopy(self.scenario.events)


def _parse_bus_ref(block: _Block, key: str, n: int) -> int:
    raw = block.take(key, int)
    if not 1 <= raw <= n:
        raise CaseError(f"{block.where}: bus {raw} out of range 1..{n}")
    return raw - 1


def parse_event(raw: dict, n_bus: int, where: str) -> Event:
    blk = _Block(raw, where)
    t = blk.take("t", float)
    kind = blk.take("kind", str)
    if kind not in Event.KINDS:
        raise CaseError(f"{where}: unknown event kind '{kind}'")
    ev = Event(t=t, kind=kind)
    if kind in ("load_off", "load_on", "load_scale", "set_step", "fault_on", "fault_off"):
        if "bus" in blk.raw:
            ev.bus = _parse_bus_ref(blk, "bus", n_bus)
        ev.target = blk.take("target", str, None)
        if kind.startswith("load") and ev.bus is None and ev.target is None:
            raise CaseError(f"{where}: load event needs 'bus' or 'target'")
        if kind.startswith("fault") and ev.bus is None:
            raise CaseError(f"{where}: fault event needs 'bus'")
    if kind == "load_scale":
        ev.factor = blk.take("factor", float)
    if kind == "fault_on":
        ev.b_fault = blk.take("b_fault", float, -1000.0)
    if kind in ("line_trip", "line_close"):
        ev.from_bus = _parse_bus_ref(blk, "from", n_bus)
        ev.to_bus = _parse_bus_ref(blk, "to", n_bus)
    if kind == "set_step":
        ev.param = blk.take("param", str)
        ev.delta = blk.take("delta", float)
    blk.done()
    return ev


_EVENT_FLAG_RE = [
    (re.compile(r"^load(\d+)-trip@([\d.eE+-]+)$"), "load_off"),
    (re.compile(r"^load(\d+)-on@([\d.eE+-]+)$"), "load_on"),
    (re.compile(r"^load(\d+)-scale([\d.eE+-]+)@([\d.eE+-]+)$"), "load_scale"),
    (re.compile(r"^line(\d+)-(\d+)-trip@([\d.eE+-]+)$"), "line_trip"),
    (re.compile(r"^line(\d+)-(\d+)-close@([\d.eE+-]+)$"), "line_close"),
    (re.compile(r"^fault(\d+)@([\d.eE+-]+)-([\d.eE+-]+)$"), "fault"),
]


def parse_event_flag(text: str, n_bus: int) -> list[Event]:
    """Parse a command-line event override such as ``load5-trip@1.0``,
    ``load5-scale0.85@1.0``, ``line5-7-trip@1.0`` or ``fault7@1.0-1.083``."""
    for rex, kind in _EVENT_FLAG_RE:
        m = rex.match(text)
        if not m:
            continue
        g = m.groups()
        if kind in ("load_off", "load_on"):
            return [Event(t=float(g[1]), kind=kind, bus=int(g[0]) - 1)]
        if kind == "load_scale":
            return [
                Event(t=float(g[2]), kind=kind, bus=int(g[0]) - 1, factor=float(g[1]))
            ]
        if kind in ("line_trip", "line_close"):
            return [
                Event(
                    t=float(g[2]),
                    kind=kind,
                    from_bus=int(g[0]) - 1,
                    to_bus=int(g[1]) - 1,
                )
            ]
        bus = int(g[0]) - 1
        return [
            Event(t=float(g[1]), kind="fault_on", bus=bus),
            Event(t=float(g[2]), kind="fault_off", bus=bus),
        ]
    raise CaseError(f"cannot parse event flag '{text}'")


def load_case(path: str | Path) -> Case:
    """Parse and validate one case file."""
    path = Path(path)
    if not path.exists():
        raise CaseError(f"case file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise CaseError(f"{path}: not valid YAML ({exc})") from exc
    if not isinstance(data, dict):
        raise CaseError(f"{path}: top level must be a mapping")

    top = _Block(data, path.name)
    name = top.take("name", str, path.stem)
    base_mva = top.take("base_mva", float, 100.0)
    f_hz = top.take("f_hz", float, 60.0)
    if f_hz <= 0 or base_mva <= 0:
        raise CaseError(f"{path.name}: base_mva and f_hz must be positive")

    buses = []
    raw_buses = top.take("buses", list)
    for i, rb in enumerate(raw_buses):
        blk = _Block(rb, f"buses[{i}]")
        idx = blk.take("id", int)
        if idx != i + 1:
            raise CaseError(f"buses[{i}]: ids must be dense 1..n (got {idx})")
        buses.append(
            {
                "index": i,
                "name": blk.take("name", str, f"bus{idx}"),
                "kv": blk.take("kv", float, 1.0),
                "v0": blk.take("v0", float, 1.0),
                "theta0": blk.take("theta0", float, 0.0),
            }
        )
        blk.done()
    n = len(buses)
    if n < 1:
        raise CaseError(f"{path.name}: at least one bus required")

    branches = []
    for i, rb in enumerate(top.take("branches", list, [])):
        blk = _Block(rb, f"branches[{i}]")
        branches.append(
            {
                "from_bus": _parse_bus_ref(blk, "from", n),
                "to_bus": _parse_bus_ref(blk, "to", n),
                "r": blk.take("r", float, 0.0),
                "x": blk.take("x", float, 0.0),
                "b": blk.take("b", float, 0.0),
                "tap": blk.take("tap", float, 1.0),
                "status": bool(blk.take("status", int, 1)),
            }
        )
        blk.done()

    machines = []
    for i, rm in enumerate(top.take("machines", list, [])):
        blk = _Block(rm, f"machines[{i}]")
        spec = {
            "bus": _parse_bus_ref(blk, "bus", n),
            "order": blk.take("order", int, 4),
            "slack": bool(blk.take("slack", bool, False)),
            "p_set": blk.take("p_set", float, 0.0),
            "v_set": blk.take("v_set", float, 1.0),
            "h": blk.take("h", float),
            "d": blk.take("d", float, 0.0),
            "ra": blk.take("ra", float, 0.0),
            "xd": blk.take("xd", float),
            "xq": blk.take("xq", float),
            "xd1": blk.take("xd1", float),
            "xq1": blk.take("xq1", float),
            "td0": blk.take("td0", float, 6.0),
            "tq0": blk.take("tq0", float, 0.6),
            "name": blk.take("name", str, f"mach{i + 1}"),
        }
        gov_raw = blk.take("governor", dict, None)
        if gov_raw is not None:
            gblk = _Block(gov_raw, f"machines[{i}].governor")
            gov = {"tg": gblk.take("tg", float, 0.5), "kg": gblk.take("kg", float, 20.0)}
            gblk.done()
        else:
            gov = None
        avr_raw = blk.take("avr", dict, None)
        if avr_raw is not None:
            ablk = _Block(avr_raw, f"machines[{i}].avr")
            avr = {"ka": ablk.take("ka", float, 20.0), "ta": ablk.take("ta", float, 0.2)}
            ablk.done()
        else:
            avr = None
        spec["governor"] = gov
        spec["avr"] = avr
        machines.append(spec)
        blk.done()

    cigs = []
    for i, rc in enumerate(top.take("cigs", list, [])):
        blk = _Block(rc, f"cigs[{i}]")
        cigs.append(
            {
                "bus": _parse_bus_ref(blk, "bus", n),
                "p_set": blk.take("p_set", float, 0.0),
                "v_set": blk.take("v_set", float, 1.0),
                "control": blk.take("control", int, 1),
                "kp": blk.take("kp", float, 0.053),
                "tp": blk.take("tp", float, 0.1),
                "kq": blk.take("kq", float, 5.0),
                "tq": blk.take("tq", float, 0.1),
                "kqf": blk.take("kqf", float, 0.0),
                "tc": blk.take("tc", float, 0.02),
                "pll_kp": blk.take("pll_kp", float, 92.0),
                "pll_ki": blk.take("pll_ki", float, 4230.0),
                "imax": blk.take("imax", float, 3.0),
                "name": blk.take("name", str, f"cig{i + 1}"),
            }
        )
        blk.done()

    loads = []
    for i, rl in enumerate(top.take("loads", list, [])):
        blk = _Block(rl, f"loads[{i}]")
        kind = blk.take("kind", str, "power")
        spec = {
            "bus": _parse_bus_ref(blk, "bus", n),
            "p0": blk.take("p", float),
            "q0": blk.take("q", float),
            "scale": 1.0 if blk.take("status", int, 1) else 0.0,
            "name": blk.take("id", str, f"load{i + 1}"),
        }
        if kind == "vdl":
            spec["vdl"] = True
            spec["gamma_p"] = blk.take("gamma_p", float)
            spec["gamma_q"] = blk.take("gamma_q", float)
        else:
            if kind not in ("power", "current", "impedance"):
                raise CaseError(f"loads[{i}]: unknown load kind '{kind}'")
            spec["vdl"] = False
            spec["kind"] = kind
        loads.append(spec)
        blk.done()

    raw_scen = top.take("scenario", dict, {})
    sblk = _Block(raw_scen, "scenario")
    scenario = Scenario(
        tend=sblk.take("tend", float, 5.0),
        dt=sblk.take("dt", float, 1e-3),
        events=[
            parse_event(re_, n, f"scenario.events[{j}]")
            for j, re_ in enumerate(sblk.take("events", list, []))
        ],
    )
    if scenario.tend <= 0 or scenario.dt <= 0:
        raise CaseError("scenario: tend and dt must be positive")
    sblk.done()

    raw_out = top.take("output", dict, {})
    oblk = _Block(raw_out, "output")
    rec = oblk.take("record", (list, str), "all")
    if isinstance(rec, str):
        if rec != "all":
            raise CaseError("output.record: must be 'all' or a list of bus ids")
        record = None
    else:
        record = []
        for rid in rec:
            if not isinstance(rid, int) or not 1 <= rid <= n:
                raise CaseError(f"output.record: invalid bus id {rid!r}")
            record.append(rid - 1)
    output = OutputSpec(
        record=record,
        noise_sigma=oblk.take("noise_sigma", float, 0.0),
        seed=oblk.take("seed", int, 1),
    )
    oblk.done()
    top.done()

    gen_buses = [m["bus"] for m in machines] + [c["bus"] for c in cigs]
    if len(set(gen_buses)) != len(gen_buses):
        raise CaseError(f"{path.name}: more than one generator at a bus")
    load_names = [ld["name"] for ld in loads]
    if len(set(load_names)) != len(load_names):
        raise CaseError(f"{path.name}: duplicate load ids")
    for ev in scenario.events:
        if ev.kind in ("line_trip", "line_close"):
            if not any(
                {br["from_bus"], br["to_bus"]} == {ev.from_bus, ev.to_bus}
                for br in branches
            ):
                raise CaseError(
                    f"scenario: no branch {ev.from_bus + 1}-{ev.to_bus + 1}"
                )
        if ev.target is not None and ev.kind.startswith("load"):
            if ev.target not in load_names:
                raise CaseError(f"scenario: unknown load id '{ev.target}'")

    grid_spec = {
        "buses": buses,
        "branches": branches,
        "base_mva": base_mva,
        "f_hz": f_hz,
    }
    return Case(
        name=name,
        grid_spec=grid_spec,
        machine_specs=machines,
        cig_specs=cigs,
        load_specs=loads,
        scenario=scenario,
        output=output,
    )
