"""Simulated OpenFlow switch: port lifecycle, priority flow table with hard
timeouts, fast-failover group table, BFD session endpoints, and emission of
PORT_STATUS / BFD_STATUS / PACKET_IN.

The agent is a passive state machine: the harness feeds it port events,
frames and control messages, and it emits through the injected services
object (send_control / send_frame / schedule / now).  Nothing here touches
the event queue directly, which keeps the agent unit-testable with a fake
clock.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Callable, Optional

from .core import (
    CONTROLLER,
    BfdParams,
    BfdStatusBody,
    ControlMessage,
    FeatureReplyBody,
    FlowModBody,
    GroupBucket,
    GroupModBody,
    LldpFrame,
    MsgKind,
    PacketInBody,
    PacketOutBody,
    PortRef,
    PortStatusBody,
    Protocol,
    SimTime,
    SwitchDecl,
)

# BFD session states
BFD_INIT = "INIT"
BFD_UP = "UP"
BFD_DOWN = "DOWN"

# Flow table priorities.  Window rules must outrank the default LLDP
# disposition (drop under the event-driven protocol, forward under the
# baselines).
DEFAULT_LLDP_PRIORITY = 10
WINDOW_RULE_PRIORITY = 100


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def bfd_down_time(up_at: SimTime, interval: SimTime, multiplier: int,
                  failed_at: SimTime) -> SimTime:
    """Time at which a session endpoint declares DOWN for a failure at
    ``failed_at``, given ticks every ``interval`` anchored at ``up_at``.

    This is the closed form of stepping the session at every tick with the
    peer's control packets arriving continuously until the failure instant:
    the first countable miss is the first tick whose whole preceding
    interval saw silence, and DOWN lands ``multiplier`` ticks later.  The
    detection delay is therefore in [M*T_i, (M+1)*T_i), hitting M*T_i
    exactly when the failure falls on a tick boundary.
    """
    if failed_at < up_at:
        raise ValueError("failure before session establishment")
    first_tick_at_or_after_failure = up_at + ceil_div(failed_at - up_at, interval) * interval
    return first_tick_at_or_after_failure + multiplier * interval


@dataclass
class BfdSession:
    """Per-port liveness session endpoint.

    state UP requires the three-way handshake to have completed; ``misses``
    resets on every received control packet and the UP->DOWN transition
    happens exactly when misses reaches the multiplier.
    """

    local: PortRef
    remote: PortRef
    interval: SimTime
    multiplier: int
    state: str = BFD_INIT
    misses: int = 0
    up_at: Optional[SimTime] = None
    epoch: int = 0
    _received_since_tick: bool = False
    _down_emitted: bool = False

    def establish(self, up_at: SimTime) -> None:
        self.state = BFD_UP
        self.up_at = up_at
        self.misses = 0
        self._received_since_tick = False
        self._down_emitted = False

    def on_control_packet(self) -> None:
        if self.state == BFD_UP:
            self.misses = 0
            self._received_since_tick = True

    def step(self) -> bool:
        """One tick-boundary evaluation; returns True when this step
        transitions the session to DOWN (exactly once per failure)."""
        if self.state != BFD_UP:
            return False
        if self._received_since_tick:
            self._received_since_tick = False
            return False
        self.misses += 1
        if self.misses >= self.multiplier and not self._down_emitted:
            self.state = BFD_DOWN
            self._down_emitted = True
            return True
        return False


@dataclass
class FlowRule:
    priority: int
    match_kind: str  # "lldp" | "data" | "any"
    match_ingress: Optional[PortRef]
    action: tuple
    hard_timeout: Optional[SimTime]
    installed_at: SimTime
    seq: int
    tag: Optional[bytes] = None  # identity stamped onto frames this rule forwards

    def expires_at(self) -> Optional[SimTime]:
        if self.hard_timeout is None:
            return None
        return self.installed_at + self.hard_timeout

    def matches(self, is_lldp: bool, ingress: PortRef) -> bool:
        if self.match_kind == "lldp" and not is_lldp:
            return False
        if self.match_kind == "data" and is_lldp:
            return False
        if self.match_ingress is not None and self.match_ingress != ingress:
            return False
        return True

    def match_key(self) -> tuple:
        return (self.priority, self.match_kind, self.match_ingress)


@dataclass
class FailoverGroup:
    group_id: int
    buckets: tuple[GroupBucket, ...]


@dataclass
class PortState:
    ref: PortRef
    admin_up: bool = True
    link_up: bool = False
    epoch: int = 0


@dataclass(frozen=True)
class DataFrame:
    """Minimal data-plane probe; hosts and the harness use it to measure
    switchover.  Not an LLDP frame."""

    src_dpid: int
    dst_dpid: int
    probe_id: int


class SwitchAgent:
    """One simulated switch bound to a services object providing now(),
    send_control(msg), send_frame(egress, frame), schedule(delay, kind, fn)
    and record(kind, **detail)."""

    def __init__(self, decl: SwitchDecl, protocol: Protocol, bfd: BfdParams, services):
        self.decl = decl
        self.id = decl.id
        self.protocol = protocol
        self.bfd_params = bfd
        self.services = services
        self.ports: dict[PortRef, PortState] = {
            PortRef(decl.id.dpid, n): PortState(PortRef(decl.id.dpid, n))
            for n in range(1, decl.port_count + 1)
        }
        self.flow_table: list[FlowRule] = []
        self.group_table: dict[int, FailoverGroup] = {}
        self.bfd_sessions: dict[PortRef, BfdSession] = {}
        self.drop_counts: dict[str, int] = {}
        self._rule_seq = 0
        if protocol is Protocol.SOFTDP:
            # The event-driven protocol ships switches with a standing
            # drop-lldp rule; discovery traffic is only forwarded through
            # explicit window rules.
            self._install_rule(priority=DEFAULT_LLDP_PRIORITY, match_kind="lldp",
                               match_ingress=None, action=("drop",), hard_timeout=None)
        else:
            # Baselines forward every LLDP frame to the controller.
            self._install_rule(priority=DEFAULT_LLDP_PRIORITY, match_kind="lldp",
                               match_ingress=None, action=("to_controller",), hard_timeout=None)

    # -- helpers ----------------------------------------------------------
    def _count_drop(self, reason: str) -> None:
        self.drop_counts[reason] = self.drop_counts.get(reason, 0) + 1

    def _send(self, kind: MsgKind, body) -> None:
        self.services.send_control(
            ControlMessage(kind=kind, src=self.id.dpid, dst=CONTROLLER, body=body))

    def port(self, ref: PortRef) -> PortState:
        if ref not in self.ports:
            raise KeyError(f"{ref} does not belong to {self.id}")
        return self.ports[ref]

    # -- join handshake ---------------------------------------------------
    def hello(self) -> None:
        self._send(MsgKind.HELLO, None)

    def feature_reply(self) -> None:
        """Report port inventory and which ports currently have carrier.
        A switch joining mid-run answers before its uplinks are patched in,
        so it naturally reports every port down; the initial roster answers
        with its ports already live."""
        ports_up = tuple(sorted(
            p.ref.port_no for p in self.ports.values()
            if p.link_up and p.admin_up
        ))
        self._send(MsgKind.FEATURE_REPLY,
                   FeatureReplyBody(self.id.dpid, self.id.local_mac,
                                    self.decl.port_count, ports_up))

    def handle_control(self, msg: ControlMessage) -> None:
        if msg.kind is MsgKind.HELLO:
            return
        if msg.kind is MsgKind.FEATURE_REQUEST:
            self.feature_reply()
        elif msg.kind in (MsgKind.FLOW_MOD, MsgKind.GROUP_MOD):
            self.apply_mod(msg)
        elif msg.kind is MsgKind.PACKET_OUT:
            self.handle_packet_out(msg.body)
        else:
            self._count_drop("unexpected_control")

    # -- port lifecycle ---------------------------------------------------
    def boot_port_up(self, port: PortRef, peer: Optional[PortRef] = None) -> None:
        """Carrier present at switch boot, before the control session
        exists: same local actions as a live port-up (window rule, BFD
        session) but no PORT_STATUS."""
        state = self.port(port)
        state.link_up = True
        state.epoch += 1
        self._port_up_actions(state, port, peer)

    def on_port_event(self, port: PortRef, up: bool, peer: Optional[PortRef] = None) -> None:
        """Port change worth telling the controller about: carrier coming
        up, or an administrative shutdown.  Updates flags and emits exactly
        one PORT_STATUS; under the event-driven protocol a port-up also
        arms the transient LLDP-forward rule for the 500 ms window."""
        state = self.port(port)
        if up:
            state.admin_up = True
            state.link_up = True
            state.epoch += 1
            self._port_up_actions(state, port, peer)
        else:
            state.admin_up = False
            state.link_up = False
        self._send(MsgKind.PORT_STATUS, PortStatusBody(port, up, state.epoch))

    def on_carrier_down(self, port: PortRef) -> None:
        """Physical link death.  Flag only: the group table reacts to
        link_up instantly, and the controller hears about it through BFD,
        not PORT_STATUS."""
        self.port(port).link_up = False

    def _port_up_actions(self, state: PortState, port: PortRef,
                         peer: Optional[PortRef]) -> None:
        if self.protocol is not Protocol.SOFTDP:
            return
        self._arm_window_rule(port)
        if peer is not None:
            self.bfd_sessions[port] = BfdSession(
                local=port, remote=peer,
                interval=self.bfd_params.interval,
                multiplier=self.bfd_params.multiplier,
                epoch=state.epoch)

    def _arm_window_rule(self, port: PortRef) -> None:
        tag = hashlib.sha256(
            f"window|{port}|{self.services.now()}".encode()).digest()[:8]
        self._install_rule(priority=WINDOW_RULE_PRIORITY, match_kind="lldp",
                           match_ingress=port, action=("to_controller",),
                           hard_timeout=self._window_timeout(), tag=tag)

    def _window_timeout(self) -> SimTime:
        return getattr(self.services, "lldp_window", 500_000_000)

    # -- BFD --------------------------------------------------------------
    def bfd_session_established(self, port: PortRef, up_at: SimTime) -> None:
        session = self.bfd_sessions.get(port)
        if session is None:
            return
        session.establish(up_at)
        self.services.record("bfd_up", port=str(port), peer=str(session.remote))

    def bfd_detect_down(self, port: PortRef) -> None:
        """Engine-computed detection instant reached: flip the session and
        emit the single DOWN notification."""
        session = self.bfd_sessions.get(port)
        if session is None or session.state != BFD_UP or session._down_emitted:
            return
        session.state = BFD_DOWN
        session._down_emitted = True
        session.misses = session.multiplier
        self.services.record("bfd_down_detected", port=str(port), epoch=session.epoch)
        self._send(MsgKind.BFD_STATUS, BfdStatusBody(port, BFD_DOWN, session.epoch))

    # -- forwarding -------------------------------------------------------
    def forward(self, frame, ingress: PortRef) -> tuple:
        """Apply the highest-priority matching unexpired rule (newest wins
        ties) and return the action taken, e.g. ("to_controller",),
        ("output", port), ("drop", reason)."""
        if ingress not in self.ports:
            raise KeyError(f"{ingress} does not belong to {self.id}")
        now = self.services.now()
        is_lldp = isinstance(frame, LldpFrame)
        best: Optional[FlowRule] = None
        for rule in self.flow_table:
            exp = rule.expires_at()
            if exp is not None and now >= exp:
                continue
            if not rule.matches(is_lldp, ingress):
                continue
            if best is None or (rule.priority, rule.seq) > (best.priority, best.seq):
                best = rule
        if best is None:
            self._count_drop("no_matching_rule")
            return ("drop", "no_matching_rule")
        return self._apply_action(best, frame, ingress, is_lldp)

    def _apply_action(self, rule: FlowRule, frame, ingress: PortRef, is_lldp: bool) -> tuple:
        action = rule.action
        if action[0] == "drop":
            self._count_drop("rule_drop")
            return ("drop", "rule_drop")
        if action[0] == "to_controller":
            if is_lldp and rule.tag is not None:
                frame = replace(frame, ingress_window_tag=rule.tag)
            self._send(MsgKind.PACKET_IN, PacketInBody(ingress, frame))
            return ("to_controller",)
        if action[0] == "output":
            self.services.send_frame(action[1], frame)
            return ("output", action[1])
        if action[0] == "group":
            return self.forward_via_group(action[1], frame)
        raise ValueError(f"unknown action {action!r}")

    def forward_via_group(self, group_id: int, frame) -> tuple:
        """First-live-bucket semantics; bucket liveness is the watch port's
        link_up flag, so data-plane switchover never waits on the
        controller."""
        group = self.group_table.get(group_id)
        if group is None:
            self._count_drop("no_such_group")
            return ("drop", "no_such_group")
        for bucket in group.buckets:
            watch = self.ports.get(bucket.watch)
            if watch is not None and watch.link_up and watch.admin_up:
                self.services.send_frame(bucket.out, frame)
                return ("output", bucket.out)
        self._count_drop("no_live_bucket")
        return ("drop", "no_live_bucket")

    # -- controller-pushed state ------------------------------------------
    def apply_mod(self, msg: ControlMessage) -> None:
        body = msg.body
        if isinstance(body, FlowModBody):
            if body.dpid != self.id.dpid:
                raise KeyError(f"FLOW_MOD for s{body.dpid} delivered to {self.id}")
            self._install_rule(priority=body.priority,
                               match_kind="lldp" if body.match_lldp else "any",
                               match_ingress=body.match_ingress,
                               action=body.action,
                               hard_timeout=body.hard_timeout)
        elif isinstance(body, GroupModBody):
            if body.dpid != self.id.dpid:
                raise KeyError(f"GROUP_MOD for s{body.dpid} delivered to {self.id}")
            # last-writer-wins on duplicate group ids
            self.group_table[body.group_id] = FailoverGroup(body.group_id, body.buckets)
            self.services.record("group_installed", switch=str(self.id),
                                 group_id=body.group_id,
                                 buckets=[f"{b.watch}->{b.out}" for b in body.buckets])
        else:
            raise TypeError(f"not a mod message: {msg.kind}")

    def handle_packet_out(self, body: PacketOutBody) -> None:
        """Emit the controller-supplied frame.  egress=None is the
        replicate-to-all-ports form: the switch rewrites the port identity
        per copy (the OFDPv2 optimization)."""
        if body.egress is not None:
            self.services.send_frame(body.egress, body.frame)
            return
        for ref in sorted(self.ports):
            state = self.ports[ref]
            if not state.admin_up:
                continue
            frame = replace(body.frame, port_id=str(ref).encode())
            self.services.send_frame(ref, frame)

    def _install_rule(self, priority: int, match_kind: str,
                      match_ingress: Optional[PortRef], action: tuple,
                      hard_timeout: Optional[SimTime], tag: Optional[bytes] = None) -> FlowRule:
        now = self.services.now() if hasattr(self.services, "now") else 0
        rule = FlowRule(priority=priority, match_kind=match_kind,
                        match_ingress=match_ingress, action=action,
                        hard_timeout=hard_timeout, installed_at=now,
                        seq=self._rule_seq, tag=tag)
        self._rule_seq += 1
        # same (priority, match) replaces the previous rule
        self.flow_table = [r for r in self.flow_table if r.match_key() != rule.match_key()]
        self.flow_table.append(rule)
        if hard_timeout is not None and hasattr(self.services, "schedule"):
            seq = rule.seq

            def expire():
                before = len(self.flow_table)
                self.flow_table = [r for r in self.flow_table if r.seq != seq]
                if len(self.flow_table) != before:
                    self.services.record("flow_rule_expired", switch=str(self.id),
                                         port=str(match_ingress) if match_ingress else "any")

            self.services.schedule(hard_timeout, "flow_rule_expiry", expire)
        return rule

    # -- state dump -------------------------------------------------------
    def dump(self) -> str:
        lines = [f"switch {self.id} dpid={self.id.dpid} mac={self.id.local_mac}"]
        for ref in sorted(self.ports):
            p = self.ports[ref]
            lines.append(f"  port {ref} admin={'up' if p.admin_up else 'down'} "
                         f"link={'up' if p.link_up else 'down'} epoch={p.epoch}")
        for rule in sorted(self.flow_table, key=lambda r: (-r.priority, r.seq)):
            ing = str(rule.match_ingress) if rule.match_ingress else "any"
            timeout = format(rule.hard_timeout) if rule.hard_timeout is not None else "-"
            lines.append(f"  rule prio={rule.priority} match={rule.match_kind}@{ing} "
                         f"action={rule.action[0]} timeout={timeout}")
        for gid in sorted(self.group_table):
            g = self.group_table[gid]
            buckets = "; ".join(f"watch {b.watch} out {b.out}" for b in g.buckets)
            lines.append(f"  group {gid} type=fast-failover buckets: {buckets}")
        for ref in sorted(self.bfd_sessions):
            s = self.bfd_sessions[ref]
            lines.append(f"  bfd {ref}<->{s.remote} state={s.state} misses={s.misses}")
        return "\n".join(lines)
