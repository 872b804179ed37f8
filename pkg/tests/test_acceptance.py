"""Acceptance suite: one test per criterion, each at its stated tolerance.

Run with `pytest tests/test_acceptance.py -v` for the per-criterion pass/fail
lines; each test also prints an ACCEPTANCE line on success.
"""

import random
import time

import numpy as np
import pytest

from stageverify.angle import estimate_angle, make_reference, oracle_angle, read_pgm, rotate_grid
from stageverify.depthfilter import DepthTrack
from stageverify.fsm import (
    ErrorDetected,
    ErrorKind,
    FusedObservation,
    Phase,
    StageCompleted,
    initial_state,
    step,
)
from stageverify.gesture import NearestTemplateClassifier, build_default_templates
from stageverify.model import (
    ActionConfidence,
    ActionLabel,
    Detection,
    DetectionFrame,
    PartClass,
    ThresholdConfig,
    circ_diff,
)
from stageverify.plan import AssemblyPlan, Region, StageKind, StageSpec
from stageverify.replayio import HolesRecord, read_replay, write_replay
from stageverify.screwlink import (
    Hello,
    HoleState,
    HoleStatus,
    Holes,
    LinkOutcomeKind,
    LinkSession,
    ProtocolError,
    ProtocolErrorKind,
    decode_message,
    encode_message,
)
from stageverify.session import ReplayRunner, run_replay
from stageverify.simulate import simulate_scenario

import os
import sys

sys.path.insert(0, os.path.dirname(__file__))
from test_replayio import _random_records  # noqa: E402
from test_screwlink import _random_message  # noqa: E402

CFG = ThresholdConfig()
FIXTURE_PGM = os.path.join(os.path.dirname(__file__), "..", "src", "stageverify", "data", "angle_ref.pgm")


def _ok(name: str, detail: str = "") -> None:
    print(f"ACCEPTANCE {name}: PASS" + (f" ({detail})" if detail else ""))


# --- 1. happy-path end to end -----------------------------------------------------------

def test_acceptance_happy_path_end_to_end(plan):
    started = time.monotonic()
    records = simulate_scenario(plan, "happy", seed=1)
    data = write_replay(records)
    report, log = run_replay(data, plan)
    wall = time.monotonic() - started

    assert report.outcome == "Complete"
    completed = [e for e in log if isinstance(e.event, StageCompleted)]
    assert len(completed) == 21
    assert report.stages_completed == 21
    assert report.error_count == 0
    assert 190_000 <= report.total_ms <= 230_000, f"duration {report.total_ms} ms outside 210 +/- 20 s"
    assert wall < 10.0, f"simulate+verify took {wall:.1f} s"
    _ok("happy-path", f"{report.total_ms / 1000:.1f} s simulated, {wall:.1f} s wall")


# --- 2. cheating robustness -------------------------------------------------------------

def test_acceptance_cheat_screw_scenario(plan, cfg):
    records = simulate_scenario(plan, "cheat-screw", seed=1)
    data = write_replay(records)

    # replay with full visibility of the machine state
    runner = ReplayRunner(plan, cfg)
    phases_seen = set()
    log = []
    t = 0
    for result in runner.run(read_replay(data)):
        phases_seen.add(result.state.phase)
        t = result.t_ms
        for e in result.events:
            log.append((result.t_ms, e))

    errors = [e for _, e in log if isinstance(e, ErrorDetected)]
    assert any(e.kind is ErrorKind.SCREW_NOT_TIGHTENED for e in errors)
    assert Phase.SCREW_ASSEMBLY_CORRECTION in phases_seen
    assert runner.complete

    # no screw stage completed before every one of its holes had reported assembled
    first_assembled: dict[str, int] = {}
    for record in read_replay(data):
        if isinstance(record, HolesRecord):
            for rep in record.reports:
                if rep.state is HoleState.ASSEMBLED and rep.hole_id not in first_assembled:
                    first_assembled[rep.hole_id] = record.t_ms
    screw_stages = {s.ordinal: s for s in plan.stages if s.kind is StageKind.SCREW_FASTENING}
    for t_ms, e in log:
        if isinstance(e, StageCompleted) and e.ordinal in screw_stages:
            for hole in screw_stages[e.ordinal].holes:
                assert hole in first_assembled and first_assembled[hole] <= t_ms, (
                    f"stage {e.ordinal} completed at {t_ms} before {hole} reported assembled"
                )
    _ok("cheat-screw scenario", f"{len(errors)} error(s), correction phase visited")


def _screw_only_plan() -> AssemblyPlan:
    return AssemblyPlan(
        plan_id="fuzz-screw",
        version=1,
        stages=(
            StageSpec(id="fasten", ordinal=1, kind=StageKind.SCREW_FASTENING, holes=("H1", "H2")),
            StageSpec(id="done", ordinal=2, kind=StageKind.COMPLETION),
        ),
        holes={"H1": Region(0.3, 0.3, 0.1, 0.1), "H2": Region(0.6, 0.3, 0.1, 0.1)},
    )


def test_acceptance_cheating_never_completes_fuzz():
    """10,000 random observation sequences in which no hole ever reports
    Assembled: the screw stage must never complete."""
    plan = _screw_only_plan()
    non_assembled = (HoleState.EMPTY, HoleState.IN_PROCESS, HoleState.UNKNOWN)
    completions = 0
    for seed in range(10_000):
        rng = random.Random(seed)
        state = initial_state(plan)
        t = 0
        for _ in range(25):
            t += CFG.tick_ms
            holes = {
                h: HoleStatus(state=rng.choice(non_assembled), last_update_ms=t, support_count=1)
                for h in ("H1", "H2")
            }
            acf = None
            if rng.random() < 0.8:
                acf = ActionConfidence(t_ms=t, catch_big=rng.random(), catch_small=rng.random(),
                                       tightening=rng.random(), done=rng.random())
            state, events = step(
                state, FusedObservation(tick_ms=t, acf=acf, holes=holes), plan, CFG
            )
            completions += sum(
                1 for e in events if isinstance(e, StageCompleted) and e.ordinal == 1
            )
    assert completions == 0
    _ok("cheating-never-advances fuzz", "0 of 10,000 sequences completed a screw stage")


# --- 3. no-skip property ------------------------------------------------------------------

def _fuzz_plan() -> AssemblyPlan:
    return AssemblyPlan(
        plan_id="fuzz",
        version=1,
        stages=(
            StageSpec(id="place", ordinal=1, kind=StageKind.PART_PLACEMENT,
                      part=PartClass.PLATTER, grasp=ActionLabel.CATCH_BIG,
                      target=Region(0.5, 0.5, 0.3, 0.3)),
            StageSpec(id="fasten", ordinal=2, kind=StageKind.SCREW_FASTENING, holes=("H1",)),
            StageSpec(id="check", ordinal=3, kind=StageKind.VERIFICATION,
                      verify_parts=(PartClass.PLATTER,)),
            StageSpec(id="done", ordinal=4, kind=StageKind.COMPLETION),
        ),
        holes={"H1": Region(0.3, 0.3, 0.1, 0.1)},
    )


def test_acceptance_no_skip_fuzz():
    plan = _fuzz_plan()
    parts = list(PartClass)
    hole_states = list(HoleState)
    for seed in range(10_000):
        rng = random.Random(100_000 + seed)
        state = initial_state(plan)
        prev = state.stage_ordinal
        completed: set[int] = set()
        reached: set[int] = {1}
        t = 0
        for _ in range(30):
            t += CFG.tick_ms
            kw = {}
            if rng.random() < 0.8:
                part = rng.choice(parts)
                kw["detections"] = DetectionFrame(t_ms=t, detections=(
                    Detection(part=part, cx=rng.random(), cy=rng.random(),
                              w=0.1, h=0.1, conf=rng.random()),
                ))
            if rng.random() < 0.8:
                kw["acf"] = ActionConfidence(t_ms=t, catch_big=rng.random(), catch_small=rng.random(),
                                             tightening=rng.random(), done=rng.random())
            if rng.random() < 0.5:
                kw["wrist"] = (rng.random(), rng.random())
            kw["holes"] = {"H1": HoleStatus(state=rng.choice(hole_states), last_update_ms=t,
                                            support_count=1)}
            state, events = step(state, FusedObservation(tick_ms=t, **kw), plan, CFG)
            assert state.stage_ordinal >= prev, "ordinal decreased"
            assert state.stage_ordinal - prev <= 1, "ordinal jumped by more than one"
            for e in events:
                if isinstance(e, StageCompleted):
                    completed.add(e.ordinal)
            reached.add(state.stage_ordinal)
            prev = state.stage_ordinal
        for ordinal in reached:
            assert set(range(1, ordinal)) <= completed, f"reached {ordinal} with incomplete prefix"
    _ok("no-skip fuzz", "10,000 sequences monotone and skip-free")


# --- 4. angle accuracy --------------------------------------------------------------------

def test_acceptance_angle_accuracy():
    started = time.monotonic()
    img = read_pgm(FIXTURE_PGM)
    ref = make_reference(img)
    rng = np.random.default_rng(1)
    errors = []
    oracle_gaps = []
    for _ in range(100):
        theta = float(rng.uniform(0.0, 360.0))
        rotated = rotate_grid(img, theta)
        est = estimate_angle(rotated, ref)
        errors.append(circ_diff(est.degrees, theta))
        oracle_gaps.append(circ_diff(est.degrees, oracle_angle(rotated, ref)))
    wall = time.monotonic() - started
    mean_err = float(np.mean(errors))
    max_err = float(np.max(errors))
    max_gap = float(np.max(oracle_gaps))
    assert mean_err <= 2.0, f"mean circular error {mean_err:.2f} deg"
    assert max_err <= 5.0, f"max circular error {max_err:.2f} deg"
    assert max_gap <= 1.0, f"estimator strays {max_gap:.2f} deg from the brute-force oracle"
    assert wall < 30.0, f"angle experiment took {wall:.1f} s"
    _ok("angle accuracy", f"mean {mean_err:.2f} deg, max {max_err:.2f} deg, oracle gap {max_gap:.2f} deg, {wall:.1f} s")


# --- 5. depth filter ----------------------------------------------------------------------

def test_acceptance_depth_filter():
    rng = random.Random(2024)
    checked = 0
    # alpha=1 output equals the sort-based median oracle on 10,000 random windows
    for _ in range(10_000):
        n = rng.randint(1, 7)
        track = DepthTrack(n_window=n, alpha=1.0)
        window: list[float] = []
        out = None
        for _ in range(rng.randint(1, 12)):
            sample = rng.uniform(1.0, 2000.0)
            window.append(sample)
            window = window[-n:]
            out = track.push(sample)
        assert out == sorted(window)[(len(window) - 1) // 2]
        checked += 1

    # a single +/-500 mm spike in a constant-100 stream shifts the output by 0
    for spike in (600.0, -400.0):
        track = DepthTrack(n_window=5, alpha=1.0)
        outputs = []
        for sample in (100.0, 100.0, 100.0, spike, 100.0, 100.0):
            outputs.append(track.push(sample))
        assert outputs[-1] == 100.0
        assert outputs[-2] == 100.0
    _ok("depth filter", f"{checked} random windows matched the median oracle")


# --- 6. wire protocol ---------------------------------------------------------------------

def test_acceptance_wire_protocol():
    rng = random.Random(31337)
    for _ in range(10_000):
        msg = _random_message(rng)
        assert decode_message(encode_message(msg).rstrip(b"\n")) == msg

    # BadSequence: holes before hello
    session = LinkSession(send=lambda b: None, sink=lambda t, r: None, now_ms=0)
    session.on_bytes(encode_message(Holes(t_ms=1, reports=())), 1)
    assert session.outcome.kind is LinkOutcomeKind.PROTOCOL
    assert "BadSequence" in session.outcome.detail

    # FieldRange: state outside the wire vocabulary
    with pytest.raises(ProtocolError) as err:
        decode_message(b'{"type":"holes","t":1,"reports":[{"hole":"H1","state":"full","conf":0.5}]}')
    assert err.value.kind is ProtocolErrorKind.FIELD_RANGE

    # heartbeat timeout on a mock clock: detected within (3000, 3100]
    session = LinkSession(send=lambda b: None, sink=lambda t, r: None, now_ms=0)
    session.on_bytes(encode_message(Hello(role="cam", session="s")), 0)
    detected_at = None
    for now in range(0, 3501, 10):
        session.on_tick(now)
        if session.outcome is not None:
            detected_at = now
            break
    assert detected_at is not None
    assert session.outcome.kind is LinkOutcomeKind.HEARTBEAT_TIMEOUT
    assert 3000 < detected_at <= 3100, f"detected at {detected_at} ms"
    _ok("wire protocol", f"10,000 round-trips, timeout at {detected_at} ms")


# --- 7. gesture baseline ------------------------------------------------------------------

def test_acceptance_gesture_baseline():
    templates = build_default_templates()
    classifier = NearestTemplateClassifier(templates)
    rng = np.random.default_rng(7)
    correct = 0
    total = 0
    for tmpl in templates:
        for _ in range(50):
            noisy = tmpl.features + rng.normal(0.0, 0.05, tmpl.features.shape)
            scores = classifier.scores(noisy)
            correct += max(scores, key=scores.get) is tmpl.label
            total += 1
    accuracy = correct / total
    assert total == 200
    assert accuracy >= 0.90, f"noisy-template accuracy {accuracy:.2%}"

    # the three pose examples for the done heuristic
    from test_gesture import TestDoneHeuristic

    checks = TestDoneHeuristic()
    checks.test_contact_pinch_with_extended_fingers()
    checks.test_open_flat_hand_is_not_done()
    checks.test_closed_fist_is_not_done_even_with_touching_tips()
    _ok("gesture baseline", f"argmax accuracy {accuracy:.1%} on 200 noisy windows")


# --- 8. replay determinism ----------------------------------------------------------------

def test_acceptance_replay_determinism(plan, happy_replay_bytes):
    r1, _ = run_replay(happy_replay_bytes, plan)
    r2, _ = run_replay(happy_replay_bytes, plan)
    assert r1.dumps().encode() == r2.dumps().encode()

    rng = random.Random(55)
    for _ in range(20):
        records = _random_records(rng, 200)
        data = write_replay(records)
        assert list(read_replay(data)) == records
        assert write_replay(list(read_replay(data))) == data
    _ok("replay determinism", "byte-identical reports and round-trip identity")
