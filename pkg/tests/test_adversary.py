"""The compromised-host attack suite against both engine families.

The baselines emit plaintext LLDP out of every declared port, hosts
included, so each attack has material to work with.  The event-driven
engine probes inter-switch ports only and drops LLDP everywhere else,
which starves every host-side attack of input; the in-window variants
document that hosts cannot race the pending windows either, because
windows never open on host-facing ports.
"""
import pytest

from topodisc.core import (
    AttackDecl,
    AttackStart,
    Protocol,
    SEC,
    ScenarioSpec,
    from_ms,
)
from topodisc.harness import run_scenario
from topodisc import adversary, scenarios


def run_attack(kind, protocol, in_window=False):
    spec = scenarios.attack_scenario(kind, protocol, in_window=in_window)
    sim = run_scenario(spec)
    assert len(sim.attack_results) == 1
    return sim.attack_results[0], sim


# -- horizon sizing ----------------------------------------------------------

def test_attack_span_duration_form():
    decl = AttackDecl("spoof", {"observe": scenarios.H1, "duration": "3s"})
    assert adversary.attack_span(decl) == 3 * SEC + adversary.VERDICT_SETTLE


def test_attack_span_burst_form():
    decl = AttackDecl("inject", {"count": 3, "spacing": "500ms"})
    assert adversary.attack_span(decl) == SEC + adversary.VERDICT_SETTLE
    single = AttackDecl("inject", {"count": 1, "spacing": "500ms"})
    assert adversary.attack_span(single) == adversary.VERDICT_SETTLE


def test_launch_rejects_unknown_kind():
    sim = run_scenario(scenarios.testbed_chain(Protocol.OFDP), until=1)
    with pytest.raises(ValueError):
        adversary.launch(sim, AttackDecl("mitm", {}))


# -- switch spoofing ---------------------------------------------------------

def test_spoof_succeeds_against_plaintext_discovery():
    v, sim = run_attack("spoof", Protocol.OFDP)
    assert v.succeeded
    assert v.evidence["observed_frames"] > 0
    assert v.evidence["session_accepted"] is True
    # the chassis id read off the wire is s1's own management MAC
    mac = sim.spec.switch(1).id.local_mac
    assert v.evidence["claimed_chassis"] == mac.encode().hex()


def test_spoof_starves_without_host_port_probes():
    v, _ = run_attack("spoof", Protocol.SOFTDP)
    assert not v.succeeded
    assert v.evidence == {"observed_frames": 0, "reason": "no LLDP observed"}


# -- link fabrication by injection -------------------------------------------

def test_inject_fabricates_directed_link_against_baseline():
    v, sim = run_attack("inject", Protocol.OFDP)
    assert v.succeeded
    assert v.evidence["fake_links_in_map"]
    # the forged identity names the far switch's port: a phantom edge
    # touching s3.p2 is now in the map
    assert any("s3.p2" in s for s in v.evidence["fake_links_in_map"])


@pytest.mark.parametrize("in_window", [False, True])
def test_inject_dies_at_the_drop_rule(in_window):
    v, sim = run_attack("inject", Protocol.SOFTDP, in_window=in_window)
    assert not v.succeeded
    assert v.evidence["fake_links_in_map"] == []
    assert v.evidence["fake_links_ever_added"] == 0
    # no window ever opens on a host-facing port, so the frames are
    # dropped in the dataplane and the controller never even sees them
    assert v.evidence["suspicious_delta"] == 0


# -- link fabrication by relay -----------------------------------------------

def test_relay_builds_bidirectional_phantom_link_against_baseline():
    v, _ = run_attack("relay", Protocol.OFDP)
    assert v.succeeded
    assert v.evidence["relayed_frames"] > 0
    assert v.evidence["bidirectional"] is True
    assert "residual_in_window_rate" not in v.evidence


@pytest.mark.parametrize("in_window", [False, True])
def test_relay_has_nothing_to_capture(in_window):
    v, _ = run_attack("relay", Protocol.SOFTDP, in_window=in_window)
    assert not v.succeeded
    assert v.evidence["relayed_frames"] == 0
    assert v.evidence["fake_links_ever_added"] == 0
    # reported as a measurement, not assumed away
    assert v.evidence["residual_in_window_rate"] == 0.0


# -- flooding ----------------------------------------------------------------

def test_flood_swamps_baseline_controller():
    v, _ = run_attack("flood", Protocol.OFDP)
    assert v.succeeded
    assert v.evidence["frames_injected"] == 10_000
    assert v.evidence["forwarded"] >= 10_000
    assert v.evidence["rate_per_sec"] > adversary.FLOOD_THRESHOLD_PER_SEC


@pytest.mark.parametrize("in_window", [False, True])
def test_flood_is_absorbed_in_the_dataplane(in_window):
    v, _ = run_attack("flood", Protocol.SOFTDP, in_window=in_window)
    assert not v.succeeded
    assert v.evidence["forwarded"] == 0
    assert v.evidence["rate_per_sec"] == 0.0


# -- controller fingerprinting -----------------------------------------------

def test_fingerprint_identifies_baseline_by_content_and_cadence():
    v, _ = run_attack("fingerprint", Protocol.OFDP)
    assert v.succeeded
    assert v.evidence["identified"] == "aster-ctl-1s"
    assert v.evidence["identified"] == v.evidence["expected"]
    assert v.evidence["frames"] >= 3
    assert abs(v.evidence["period_ns"] - SEC) <= SEC // 5


def test_fingerprint_sees_nothing_from_event_driven_engine():
    v, _ = run_attack("fingerprint", Protocol.SOFTDP)
    assert not v.succeeded
    assert v.evidence["reason"] == "no periodic LLDP observed"


def test_fingerprint_discriminates_decoy_sharing_content():
    # two database entries share the same system description and differ
    # only in cadence; a 10 s round period must resolve to the slow one
    base = scenarios.testbed_chain(Protocol.OFDP)
    decl = AttackDecl("fingerprint", {"observe": scenarios.H1,
                                      "duration": "25s"})
    spec = ScenarioSpec(**{**base.__dict__,
                           "discovery_period": 10 * SEC,
                           "timeline": (AttackStart(0, decl),)})
    sim = run_scenario(spec)
    v = sim.attack_results[0]
    assert v.succeeded
    assert v.evidence["identified"] == "aster-ctl-10s"


def test_fingerprint_fails_on_unknown_product():
    base = scenarios.attack_scenario("fingerprint", Protocol.OFDP)
    sim = run_scenario(base, product=b"homegrown-ctl/0.1")
    v = sim.attack_results[0]
    assert not v.succeeded
    assert v.evidence["identified"] is None
    assert v.evidence["expected"] is None


def test_replicating_baseline_is_fingerprintable_too():
    v, _ = run_attack("fingerprint", Protocol.OFDPV2)
    assert v.succeeded


# -- cross-cutting -----------------------------------------------------------

def test_full_matrix_headline():
    expected = {
        ("spoof", Protocol.OFDP): True, ("spoof", Protocol.SOFTDP): False,
        ("inject", Protocol.OFDP): True, ("inject", Protocol.SOFTDP): False,
        ("relay", Protocol.OFDP): True, ("relay", Protocol.SOFTDP): False,
        ("flood", Protocol.OFDP): True, ("flood", Protocol.SOFTDP): False,
        ("fingerprint", Protocol.OFDP): True,
        ("fingerprint", Protocol.SOFTDP): False,
    }
    for (kind, proto), want in expected.items():
        v, _ = run_attack(kind, proto)
        assert v.succeeded is want, (kind, proto)
        assert v.kind == kind


def test_verdicts_land_in_trace_and_report():
    v, sim = run_attack("spoof", Protocol.OFDP)
    recs = [r for r in sim.engine.trace.records if r.kind == "attack_verdict"]
    assert len(recs) == 1
    assert dict(recs[0].detail)["succeeded"] is True
    rep = sim.report()
    assert rep["attacks"] == [v.as_dict()]
