"""Shared domain types for the topology-discovery simulator.

Time is integer nanoseconds everywhere.  All types in this module are
immutable value objects; mutable runtime state (port flags, link liveness,
flow tables) lives in the modules that own it.  Scenario files are YAML with
durations written as exact unit-suffixed strings ("1ms", "500us"); parsing
and re-encoding round-trips to the same object.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import Any, Iterable, Optional, Union

import yaml

# ---------------------------------------------------------------------------
# time

SimTime = int  # nanoseconds

NS = 1
US = 1_000
MS = 1_000_000
SEC = 1_000_000_000


def from_us(value: float) -> SimTime:
    return int(round(value * US))


def from_ms(value: float) -> SimTime:
    return int(round(value * MS))


def from_s(value: float) -> SimTime:
    return int(round(value * SEC))


_DURATION_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(ns|us|ms|s)\s*$")
_UNIT_NS = {"ns": NS, "us": US, "ms": MS, "s": SEC}


def parse_duration(text: Union[str, int]) -> SimTime:
    """Parse "1ms" / "500us" / "2s" / bare integer nanoseconds."""
    if isinstance(text, bool):
        raise ValueError(f"not a duration: {text!r}")
    if isinstance(text, int):
        return text
    m = _DURATION_RE.match(str(text))
    if not m:
        raise ValueError(f"not a duration: {text!r}")
    scale = _UNIT_NS[m.group(2)]
    value = float(m.group(1)) * scale
    ns = int(round(value))
    if abs(value - ns) > 1e-6:
        raise ValueError(f"duration {text!r} is not a whole number of ns")
    return ns


def format_duration(t: SimTime) -> str:
    """Render nanoseconds with the largest exact unit (lossless)."""
    for unit, scale in (("s", SEC), ("ms", MS), ("us", US)):
        if t % scale == 0:
            return f"{t // scale}{unit}"
    return f"{t}ns"


# ---------------------------------------------------------------------------
# identifiers

_MAC_RE = re.compile(r"^([0-9a-f]{2}:){5}[0-9a-f]{2}$")


def mac_bytes(mac: str) -> bytes:
    return bytes(int(part, 16) for part in mac.split(":"))


@dataclass(frozen=True, order=True)
class SwitchId:
    """Datapath identity: the DPID the controller tracks and the local MAC
    it is derived from (the value cleartext LLDP would leak)."""

    dpid: int
    local_mac: str

    def __str__(self) -> str:
        return f"s{self.dpid}"


@dataclass(frozen=True, order=True)
class PortRef:
    """(switch, port) reference.  Port numbers start at 1; the OpenFlow
    internal/local port is not modeled as a PortRef and never carries BFD."""

    dpid: int
    port_no: int

    def __str__(self) -> str:
        return f"s{self.dpid}.p{self.port_no}"

    @classmethod
    def parse(cls, text: str) -> "PortRef":
        m = re.fullmatch(r"s(\d+)\.p(\d+)", text)
        if m is None:
            raise ValueError(f"not a port reference: {text!r}")
        return cls(int(m.group(1)), int(m.group(2)))


@dataclass(frozen=True)
class SwitchDecl:
    id: SwitchId
    port_count: int


@dataclass(frozen=True)
class Link:
    """Bidirectional link between two ports with per-direction delays.

    ``alive`` is the declared initial state; runtime liveness is tracked by
    the simulation fabric.  Endpoint order is normalized at construction
    (a < b, delays swapped to match) so a link has one canonical identity.
    """

    a: PortRef
    b: PortRef
    delay_ab: SimTime
    delay_ba: SimTime
    alive: bool = True

    def __post_init__(self):
        if not self.a <= self.b:
            a, b = self.a, self.b
            object.__setattr__(self, "a", b)
            object.__setattr__(self, "b", a)
            d_ab, d_ba = self.delay_ab, self.delay_ba
            object.__setattr__(self, "delay_ab", d_ba)
            object.__setattr__(self, "delay_ba", d_ab)

    def key(self) -> tuple:
        return (self.a, self.b)

    def __str__(self) -> str:
        return f"{self.a}<->{self.b}"


def link_key(a: PortRef, b: PortRef) -> tuple:
    """Canonical unordered key for a port pair."""
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class ControlChannel:
    """Per-switch control connection with asymmetric one-way delays."""

    dpid: int
    delay_to_controller: SimTime
    delay_from_controller: SimTime


@dataclass(frozen=True)
class BfdParams:
    """Liveness detection parameters: transmit interval and the multiplier
    after which a silent peer is declared down."""

    interval: SimTime
    multiplier: int

    @property
    def detection_bound(self) -> SimTime:
        return self.multiplier * self.interval


class Protocol(Enum):
    OFDP = "ofdp"
    OFDPV2 = "ofdpv2"
    SOFTDP = "softdp"


# ---------------------------------------------------------------------------
# frames and control messages

@dataclass(frozen=True)
class LldpFrame:
    """Discovery frame.  Under the baselines chassis/port/description are
    cleartext; the event-driven protocol carries salted digests plus a
    per-window nonce.  ``ingress_window_tag`` is stamped by a switch when a
    window rule (not a baseline default rule) forwarded the frame."""

    chassis_id: bytes
    port_id: bytes
    system_description: bytes
    nonce: bytes = b""
    ingress_window_tag: Optional[bytes] = None


class MsgKind(Enum):
    HELLO = "HELLO"
    FEATURE_REQUEST = "FEATURE_REQUEST"
    FEATURE_REPLY = "FEATURE_REPLY"
    PACKET_OUT = "PACKET_OUT"
    PACKET_IN = "PACKET_IN"
    PORT_STATUS = "PORT_STATUS"
    BFD_STATUS = "BFD_STATUS"
    FLOW_MOD = "FLOW_MOD"
    GROUP_MOD = "GROUP_MOD"


CONTROLLER = "c"

# Message kinds a switch may emit (BFD_STATUS in particular never
# originates at the controller).
SWITCH_EMITTED = {
    MsgKind.HELLO,
    MsgKind.FEATURE_REPLY,
    MsgKind.PACKET_IN,
    MsgKind.PORT_STATUS,
    MsgKind.BFD_STATUS,
}


@dataclass(frozen=True)
class PortStatusBody:
    port: PortRef
    up: bool
    epoch: int


@dataclass(frozen=True)
class BfdStatusBody:
    port: PortRef
    state: str  # "DOWN" is the only state reported today
    epoch: int


@dataclass(frozen=True)
class PacketOutBody:
    egress: Optional[PortRef]  # None = replicate out every admin-up port
    frame: LldpFrame


@dataclass(frozen=True)
class PacketInBody:
    ingress: PortRef
    frame: LldpFrame


@dataclass(frozen=True)
class FeatureReplyBody:
    dpid: int
    local_mac: str
    port_count: int
    ports_up: tuple[int, ...]


@dataclass(frozen=True)
class FlowModBody:
    dpid: int
    priority: int
    match_lldp: bool
    match_ingress: Optional[PortRef]
    action: tuple  # ("to_controller",) | ("drop",) | ("output", PortRef) | ("group", int)
    hard_timeout: Optional[SimTime]


@dataclass(frozen=True)
class GroupBucket:
    watch: PortRef
    out: PortRef


@dataclass(frozen=True)
class GroupModBody:
    dpid: int
    group_id: int
    buckets: tuple[GroupBucket, ...]


@dataclass(frozen=True)
class ControlMessage:
    kind: MsgKind
    src: Union[int, str]  # dpid or CONTROLLER
    dst: Union[int, str]
    body: Any


# ---------------------------------------------------------------------------
# timeline

@dataclass(frozen=True)
class LinkAdd:
    at: SimTime
    a: PortRef
    b: PortRef


@dataclass(frozen=True)
class LinkRemove:
    at: SimTime
    a: PortRef
    b: PortRef


@dataclass(frozen=True)
class SwitchJoin:
    at: SimTime
    dpid: int


@dataclass(frozen=True)
class SwitchLeave:
    at: SimTime
    dpid: int


@dataclass(frozen=True)
class AttackDecl:
    """Protocol-independent attack declaration; the adversary module
    interprets ``kind``/``params``.  Params values are scalars, port pairs
    or durations so the declaration serializes cleanly."""

    kind: str
    params: dict


@dataclass(frozen=True)
class AttackStart:
    at: SimTime
    attack: AttackDecl


TimelineEvent = Union[LinkAdd, LinkRemove, SwitchJoin, SwitchLeave, AttackStart]

TOPOLOGY_EVENTS = (LinkAdd, LinkRemove, SwitchJoin, SwitchLeave)


@dataclass(frozen=True)
class ScenarioSpec:
    switches: tuple[SwitchDecl, ...]
    links: tuple[Link, ...]
    control_channels: tuple[ControlChannel, ...]
    bfd: BfdParams
    protocol: Protocol
    discovery_period: SimTime
    timeline: tuple[TimelineEvent, ...] = ()
    lldp_window: SimTime = 500 * MS
    rng_seed: int = 0

    # -- lookups ----------------------------------------------------------
    def switch(self, dpid: int) -> SwitchDecl:
        for decl in self.switches:
            if decl.id.dpid == dpid:
                return decl
        raise KeyError(f"no switch s{dpid}")

    def channel(self, dpid: int) -> ControlChannel:
        for ch in self.control_channels:
            if ch.dpid == dpid:
                return ch
        raise KeyError(f"no control channel for s{dpid}")

    def link_between(self, a: PortRef, b: PortRef) -> Link:
        want = link_key(a, b)
        for link in self.links:
            if link.key() == want:
                return link
        raise KeyError(f"no link {a}<->{b}")

    def all_ports(self) -> list[PortRef]:
        out = []
        for decl in self.switches:
            out.extend(PortRef(decl.id.dpid, n) for n in range(1, decl.port_count + 1))
        return out

    def linked_ports(self) -> set[PortRef]:
        used = set()
        for link in self.links:
            used.add(link.a)
            used.add(link.b)
        return used

    def host_ports(self) -> list[PortRef]:
        """Declared ports not referenced by any link are host-facing."""
        used = self.linked_ports()
        return [p for p in self.all_ports() if p not in used]

    # -- initial presence (derived, see timeline rules in the README) -----
    def initially_present(self) -> set[int]:
        absent = set()
        seen = set()
        for ev in self.timeline:
            if isinstance(ev, SwitchJoin) and ev.dpid not in seen:
                absent.add(ev.dpid)
            if isinstance(ev, (SwitchJoin, SwitchLeave)):
                seen.add(ev.dpid)
        return {decl.id.dpid for decl in self.switches} - absent

    def initially_alive(self) -> set[tuple]:
        """Canonical keys of links alive at t=0."""
        present = self.initially_present()
        first_added = set()
        seen = set()
        for ev in self.timeline:
            if isinstance(ev, (LinkAdd, LinkRemove)):
                key = link_key(ev.a, ev.b)
                if key not in seen and isinstance(ev, LinkAdd):
                    first_added.add(key)
                seen.add(key)
        out = set()
        for link in self.links:
            if not link.alive:
                continue
            if link.a.dpid not in present or link.b.dpid not in present:
                continue
            if link.key() in first_added:
                continue
            out.add(link.key())
        return out


# ---------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class Violation:
    element: str
    problem: str

    def __str__(self) -> str:
        return f"{self.element}: {self.problem}"


def validate_scenario(spec: ScenarioSpec) -> list[Violation]:
    """Static checks; returns one Violation per offending element."""
    out: list[Violation] = []
    dpids = [d.id.dpid for d in spec.switches]
    macs = [d.id.local_mac for d in spec.switches]
    for dpid in sorted({d for d in dpids if dpids.count(d) > 1}):
        out.append(Violation(f"s{dpid}", "duplicate dpid"))
    for mac in sorted({m for m in macs if macs.count(m) > 1}):
        out.append(Violation(mac, "duplicate local_mac"))
    for decl in spec.switches:
        if decl.port_count < 0:
            out.append(Violation(str(decl.id), "negative port count"))
        if not _MAC_RE.match(decl.id.local_mac):
            out.append(Violation(str(decl.id), f"malformed local_mac {decl.id.local_mac!r}"))

    dpid_set = set(dpids)
    declared = set(spec.all_ports())

    def check_port(p: PortRef, element: str):
        if p.dpid not in dpid_set:
            out.append(Violation(element, f"references unknown switch s{p.dpid}"))
        elif p not in declared:
            out.append(Violation(element, f"references undeclared port {p}"))

    seen_keys = set()
    port_use: dict[PortRef, str] = {}
    for link in spec.links:
        el = str(link)
        check_port(link.a, el)
        check_port(link.b, el)
        if link.a == link.b:
            out.append(Violation(el, "link endpoints are the same port"))
        if link.a.dpid == link.b.dpid and link.a != link.b:
            out.append(Violation(el, "self-loop between ports of one switch"))
        if link.delay_ab < 0 or link.delay_ba < 0:
            out.append(Violation(el, "negative link delay"))
        if link.key() in seen_keys:
            out.append(Violation(el, "duplicate link"))
        seen_keys.add(link.key())
        for p in (link.a, link.b):
            if p in port_use:
                out.append(Violation(str(p), "port used by more than one link"))
            port_use[p] = el

    chan_dpids = [ch.dpid for ch in spec.control_channels]
    for dpid in sorted({d for d in chan_dpids if chan_dpids.count(d) > 1}):
        out.append(Violation(f"s{dpid}", "more than one control channel"))
    for dpid in sorted(dpid_set - set(chan_dpids)):
        out.append(Violation(f"s{dpid}", "no control channel"))
    for dpid in sorted(set(chan_dpids) - dpid_set):
        out.append(Violation(f"s{dpid}", "control channel for unknown switch"))
    for ch in spec.control_channels:
        if ch.delay_to_controller < 0 or ch.delay_from_controller < 0:
            out.append(Violation(f"s{ch.dpid}", "negative control channel delay"))

    if spec.bfd.interval <= 0:
        out.append(Violation("bfd", "interval must be > 0"))
    if spec.bfd.multiplier < 1:
        out.append(Violation("bfd", "multiplier must be >= 1"))
    if spec.lldp_window <= 0:
        out.append(Violation("lldp_window", "must be > 0"))
    if spec.discovery_period <= 0:
        out.append(Violation("discovery_period", "must be > 0"))

    last_at = None
    for idx, ev in enumerate(spec.timeline):
        el = f"timeline[{idx}]"
        if last_at is not None and ev.at < last_at:
            out.append(Violation(el, "timeline not sorted by time"))
        last_at = ev.at
        if ev.at < 0:
            out.append(Violation(el, "negative event time"))
        if isinstance(ev, (LinkAdd, LinkRemove)):
            check_port(ev.a, el)
            check_port(ev.b, el)
            if link_key(ev.a, ev.b) not in seen_keys:
                out.append(Violation(el, f"no declared link {ev.a}<->{ev.b}"))
        elif isinstance(ev, (SwitchJoin, SwitchLeave)):
            if ev.dpid not in dpid_set:
                out.append(Violation(el, f"references unknown switch s{ev.dpid}"))
        elif isinstance(ev, AttackStart):
            if not ev.attack.kind:
                out.append(Violation(el, "empty attack kind"))
    return out


# ---------------------------------------------------------------------------
# serialization (YAML scenario files)

class ScenarioFormatError(ValueError):
    pass


def _port_to_list(p: PortRef) -> list:
    return [p.dpid, p.port_no]


def _port_from_list(v, where: str) -> PortRef:
    if (not isinstance(v, (list, tuple))) or len(v) != 2:
        raise ScenarioFormatError(f"{where}: expected [dpid, port_no], got {v!r}")
    d, n = v
    if not isinstance(d, int) or not isinstance(n, int):
        raise ScenarioFormatError(f"{where}: expected integers in [dpid, port_no]")
    return PortRef(d, n)


def encode_scenario(spec: ScenarioSpec) -> str:
    doc: dict[str, Any] = {
        "protocol": spec.protocol.value,
        "rng_seed": spec.rng_seed,
        "discovery_period": format_duration(spec.discovery_period),
        "lldp_window": format_duration(spec.lldp_window),
        "bfd": {
            "interval": format_duration(spec.bfd.interval),
            "multiplier": spec.bfd.multiplier,
        },
        "switches": [
            {"dpid": d.id.dpid, "local_mac": d.id.local_mac, "ports": d.port_count}
            for d in spec.switches
        ],
        "links": [
            {
                "a": _port_to_list(l.a),
                "b": _port_to_list(l.b),
                "delay_ab": format_duration(l.delay_ab),
                "delay_ba": format_duration(l.delay_ba),
                **({} if l.alive else {"alive": False}),
            }
            for l in spec.links
        ],
        "control_channels": [
            {
                "dpid": ch.dpid,
                "to_controller": format_duration(ch.delay_to_controller),
                "from_controller": format_duration(ch.delay_from_controller),
            }
            for ch in spec.control_channels
        ],
        "timeline": [_encode_event(ev) for ev in spec.timeline],
    }
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)


def _encode_event(ev: TimelineEvent) -> dict:
    at = format_duration(ev.at)
    if isinstance(ev, LinkAdd):
        return {"at": at, "event": "link_add", "a": _port_to_list(ev.a), "b": _port_to_list(ev.b)}
    if isinstance(ev, LinkRemove):
        return {"at": at, "event": "link_remove", "a": _port_to_list(ev.a), "b": _port_to_list(ev.b)}
    if isinstance(ev, SwitchJoin):
        return {"at": at, "event": "switch_join", "dpid": ev.dpid}
    if isinstance(ev, SwitchLeave):
        return {"at": at, "event": "switch_leave", "dpid": ev.dpid}
    if isinstance(ev, AttackStart):
        return {
            "at": at,
            "event": "attack",
            "kind": ev.attack.kind,
            "params": _encode_attack_params(ev.attack.params),
        }
    raise TypeError(f"unknown timeline event {ev!r}")


def _encode_attack_params(params: dict) -> dict:
    out = {}
    for k, v in sorted(params.items()):
        if isinstance(v, PortRef):
            out[k] = _port_to_list(v)
        else:
            out[k] = v
    return out


_PORT_PARAM_KEYS = {"observe", "inject", "observe_b", "inject_b", "port", "victim_port"}


def _decode_attack_params(raw: dict, where: str) -> dict:
    out = {}
    for k, v in raw.items():
        if k in _PORT_PARAM_KEYS:
            out[k] = _port_from_list(v, f"{where}.{k}")
        else:
            out[k] = v
    return out


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ScenarioFormatError(f"{where}: missing required field {key!r}")
    return doc[key]


def decode_scenario(text: str) -> ScenarioSpec:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioFormatError(f"not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioFormatError("scenario file must be a mapping")

    try:
        protocol = Protocol(_require(doc, "protocol", "scenario"))
    except ValueError as exc:
        raise ScenarioFormatError(str(exc)) from exc

    def dur(value, where):
        try:
            return parse_duration(value)
        except ValueError as exc:
            raise ScenarioFormatError(f"{where}: {exc}") from exc

    bfd_doc = _require(doc, "bfd", "scenario")
    bfd = BfdParams(
        interval=dur(_require(bfd_doc, "interval", "bfd"), "bfd.interval"),
        multiplier=int(_require(bfd_doc, "multiplier", "bfd")),
    )

    switches = []
    for i, s in enumerate(_require(doc, "switches", "scenario") or []):
        where = f"switches[{i}]"
        switches.append(
            SwitchDecl(
                id=SwitchId(int(_require(s, "dpid", where)), str(_require(s, "local_mac", where))),
                port_count=int(_require(s, "ports", where)),
            )
        )

    links = []
    for i, l in enumerate(doc.get("links") or []):
        where = f"links[{i}]"
        a = _port_from_list(_require(l, "a", where), where)
        b = _port_from_list(_require(l, "b", where), where)
        delay_ab = dur(_require(l, "delay_ab", where), f"{where}.delay_ab")
        delay_ba = dur(_require(l, "delay_ba", where), f"{where}.delay_ba")
        links.append(Link(a, b, delay_ab, delay_ba, alive=bool(l.get("alive", True))))

    channels = []
    for i, c in enumerate(_require(doc, "control_channels", "scenario") or []):
        where = f"control_channels[{i}]"
        channels.append(
            ControlChannel(
                dpid=int(_require(c, "dpid", where)),
                delay_to_controller=dur(_require(c, "to_controller", where), where),
                delay_from_controller=dur(_require(c, "from_controller", where), where),
            )
        )

    timeline = []
    for i, e in enumerate(doc.get("timeline") or []):
        where = f"timeline[{i}]"
        at = dur(_require(e, "at", where), f"{where}.at")
        kind = _require(e, "event", where)
        if kind == "link_add":
            timeline.append(LinkAdd(at, _port_from_list(_require(e, "a", where), where),
                                    _port_from_list(_require(e, "b", where), where)))
        elif kind == "link_remove":
            timeline.append(LinkRemove(at, _port_from_list(_require(e, "a", where), where),
                                       _port_from_list(_require(e, "b", where), where)))
        elif kind == "switch_join":
            timeline.append(SwitchJoin(at, int(_require(e, "dpid", where))))
        elif kind == "switch_leave":
            timeline.append(SwitchLeave(at, int(_require(e, "dpid", where))))
        elif kind == "attack":
            timeline.append(
                AttackStart(
                    at,
                    AttackDecl(
                        kind=str(_require(e, "kind", where)),
                        params=_decode_attack_params(e.get("params") or {}, where),
                    ),
                )
            )
        else:
            raise ScenarioFormatError(f"{where}: unknown event kind {kind!r}")

    return ScenarioSpec(
        switches=tuple(switches),
        links=tuple(links),
        control_channels=tuple(channels),
        bfd=bfd,
        protocol=protocol,
        discovery_period=dur(_require(doc, "discovery_period", "scenario"), "discovery_period"),
        timeline=tuple(timeline),
        lldp_window=dur(doc.get("lldp_window", 500 * MS), "lldp_window"),
        rng_seed=int(doc.get("rng_seed", 0)),
    )


def load_scenario(path) -> ScenarioSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return decode_scenario(fh.read())


def save_scenario(spec: ScenarioSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(encode_scenario(spec))
