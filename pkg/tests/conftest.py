"""Shared test plumbing: a stub services object that lets controller and
switch-agent units run without the full simulation harness."""

from topodisc.core import MS, ControlMessage


class FakeTimer:
    def __init__(self):
        self.cancelled = False

    def cancel(self):
        self.cancelled = True


class StubServices:
    """Collects outbound traffic and scheduled callbacks instead of
    executing them.  Time is advanced by poking ``clock`` directly;
    ``fire_due`` runs callbacks whose deadline has passed, in order."""

    def __init__(self, lldp_window=500 * MS):
        self.clock = 0
        self.lldp_window = lldp_window
        self.sent: list[ControlMessage] = []
        self.frames: list[tuple] = []
        self.scheduled: list[tuple[int, str, object, FakeTimer]] = []
        self.records: list[tuple[str, dict]] = []

    def now(self):
        return self.clock

    def send_control(self, msg):
        self.sent.append(msg)

    def send_frame(self, egress, frame):
        self.frames.append((egress, frame))

    def schedule(self, delay, kind, action):
        timer = FakeTimer()
        self.scheduled.append((self.clock + delay, kind, action, timer))
        return timer

    def record(self, kind, **detail):
        self.records.append((kind, detail))

    def sent_kinds(self):
        return [m.kind.name for m in self.sent]

    def fire_due(self):
        due = [s for s in self.scheduled if s[0] <= self.clock and not s[3].cancelled]
        self.scheduled = [s for s in self.scheduled if s not in due]
        for _, _, action, _ in sorted(due, key=lambda s: s[0]):
            action()
