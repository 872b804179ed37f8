import random

import numpy as np
import pytest

from stageverify.gesture import (
    ACTION_POSES,
    DegenerateHand,
    FeatureLengthMismatch,
    GestureConfig,
    GestureWindow,
    HandFrame,
    INDEX_TIP,
    NEUTRAL_POSE,
    NearestTemplateClassifier,
    NoTemplates,
    NotReady,
    THUMB_TIP,
    WRIST,
    build_default_templates,
    classify_window,
    done_heuristic,
    load_templates,
    normalize_hand,
    pose_window_features,
    save_templates,
)
from stageverify.model import ActionLabel


def _random_hand(rng: random.Random, t_ms: int = 0, k: int = 21) -> HandFrame:
    pts = [(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-0.5, 0.5)) for _ in range(k)]
    pts[0] = (rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-0.5, 0.5))
    return HandFrame(t_ms=t_ms, points=tuple(pts))


def _pose_frame(pose, t_ms=0, offset=(0.0, 0.0, 0.0), scale=1.0) -> HandFrame:
    pts = tuple(
        (x * scale + offset[0], y * scale + offset[1], z * scale + offset[2]) for x, y, z in pose
    )
    return HandFrame(t_ms=t_ms, points=pts)


class TestNormalizeHand:
    def test_unit_hand_is_fixed_point(self):
        frame = normalize_hand(_pose_frame(NEUTRAL_POSE))
        again = normalize_hand(frame)
        assert np.allclose(again.as_array(), frame.as_array())

    def test_max_norm_is_one(self):
        rng = random.Random(1)
        for _ in range(50):
            frame = normalize_hand(_random_hand(rng))
            pts = frame.as_array()
            assert pts[WRIST] == pytest.approx((0, 0, 0))
            assert float(np.linalg.norm(pts, axis=1).max()) == pytest.approx(1.0)

    def test_translation_and_scale_invariance(self):
        rng = random.Random(2)
        for _ in range(50):
            base = _random_hand(rng)
            a = rng.uniform(0.1, 5.0)
            b = (rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3))
            moved = HandFrame(
                t_ms=base.t_ms,
                points=tuple((x * a + b[0], y * a + b[1], z * a + b[2]) for x, y, z in base.points),
            )
            assert np.allclose(
                normalize_hand(moved).as_array(), normalize_hand(base).as_array(), atol=1e-9
            )

    def test_degenerate_hand(self):
        frame = HandFrame(t_ms=0, points=tuple((0.3, 0.4, 0.5) for _ in range(21)))
        with pytest.raises(DegenerateHand):
            normalize_hand(frame)


class TestDoneHeuristic:
    def test_contact_pinch_with_extended_fingers(self):
        pose = list(NEUTRAL_POSE)
        pose[THUMB_TIP] = (0.55, -0.35, 0.0)
        pose[INDEX_TIP] = (0.55, -0.35, 0.0)  # coincident tips
        frame = normalize_hand(HandFrame(t_ms=0, points=tuple(pose)))
        is_done, conf = done_heuristic(frame)
        assert is_done
        assert conf == pytest.approx(1.0, abs=1e-9)

    def test_open_flat_hand_is_not_done(self):
        frame = normalize_hand(_pose_frame(NEUTRAL_POSE))
        is_done, conf = done_heuristic(frame)
        assert not is_done and conf == 0.0

    def test_closed_fist_is_not_done_even_with_touching_tips(self):
        # all fingertips pulled near the wrist, thumb and index touching
        fist = [(0.0, 0.0, 0.0)] + [(0.12, 0.02 * i, 0.05) for i in range(1, 21)]
        fist[THUMB_TIP] = (0.10, 0.02, 0.05)
        fist[INDEX_TIP] = (0.10, 0.02, 0.05)
        fist[5] = (0.9, 0.0, 0.0)  # one knuckle far out so the scale is defined
        frame = normalize_hand(HandFrame(t_ms=0, points=tuple(fist)))
        is_done, conf = done_heuristic(frame)
        assert not is_done and conf == 0.0

    def test_invariant_under_translation_and_scale(self):
        pose = ACTION_POSES[ActionLabel.DONE]
        base = done_heuristic(normalize_hand(_pose_frame(pose)))
        moved = done_heuristic(normalize_hand(_pose_frame(pose, offset=(0.3, -0.2, 0.1), scale=2.7)))
        assert moved[0] == base[0]
        assert moved[1] == pytest.approx(base[1], abs=1e-9)


class TestGestureWindow:
    def test_readiness_at_thirty_frames(self):
        window = GestureWindow()
        for i in range(29):
            assert window.push(normalize_hand(_pose_frame(NEUTRAL_POSE, t_ms=i * 33))) is False
        assert window.push(normalize_hand(_pose_frame(NEUTRAL_POSE, t_ms=29 * 33))) is True

    def test_ring_buffer_evicts_oldest(self):
        window = GestureWindow()
        for i in range(31):
            window.push(normalize_hand(_pose_frame(NEUTRAL_POSE, t_ms=i * 33)))
        assert len(window._times) == 30
        assert window._times[0] == 33

    def test_feature_vector_length_is_1200(self):
        feats = pose_window_features(NEUTRAL_POSE)
        assert feats.shape == (30 * 40,)

    def test_features_before_ready(self):
        window = GestureWindow()
        window.push(normalize_hand(_pose_frame(NEUTRAL_POSE)))
        with pytest.raises(NotReady):
            window.features()

    def test_keypoint_count_mismatch(self):
        window = GestureWindow(GestureConfig(keypoint_count=21))
        frame = HandFrame(t_ms=0, points=tuple((0.1 * i, 0.0, 0.0) for i in range(20)))
        with pytest.raises(FeatureLengthMismatch):
            window.push(frame)

    def test_window_determinism(self):
        def build():
            window = GestureWindow()
            for i in range(30):
                window.push(normalize_hand(_pose_frame(ACTION_POSES[ActionLabel.CATCH_BIG], t_ms=i * 33)))
            return classify_window(window, NearestTemplateClassifier(build_default_templates()))

        assert build() == build()


@pytest.fixture(scope="module")
def templates():
    return build_default_templates()


@pytest.fixture(scope="module")
def classifier(templates):
    return NearestTemplateClassifier(templates)


class TestClassifier:
    def test_exact_template_window_scores_one_and_wins(self, classifier):
        window = GestureWindow()
        for i in range(30):
            window.push(normalize_hand(_pose_frame(ACTION_POSES[ActionLabel.CATCH_BIG], t_ms=i * 33)))
        acf = classify_window(window, classifier)
        assert acf.catch_big == pytest.approx(1.0, abs=1e-9)
        assert acf.catch_big > acf.catch_small
        assert acf.catch_big > acf.tightening
        assert acf.catch_big > acf.done

    def test_cross_action_confidence_stays_below_default_threshold(self, classifier):
        # the verifier gates on catch/tightening confidences while the idle,
        # catch, and tightening poses are on screen; leakage between those
        # must stay clear of tau_act (the done pose never co-occurs with a
        # gated phase, so it is exempt)
        fsm_labels = (ActionLabel.CATCH_BIG, ActionLabel.CATCH_SMALL, ActionLabel.TIGHTENING)
        windows = {label: ACTION_POSES[label] for label in fsm_labels}
        windows["neutral"] = NEUTRAL_POSE
        for name, pose in windows.items():
            scores = classifier.scores(pose_window_features(pose))
            for label in fsm_labels:
                if label is not name:
                    assert scores[label] < 0.78, f"{name} leaks into {label}"

    def test_empty_template_set(self):
        clf = NearestTemplateClassifier([])
        with pytest.raises(NoTemplates):
            clf.scores(np.zeros(1200))

    def test_template_order_does_not_matter(self, templates):
        feats = pose_window_features(ACTION_POSES[ActionLabel.TIGHTENING])
        a = NearestTemplateClassifier(templates).scores(feats)
        b = NearestTemplateClassifier(list(reversed(templates))).scores(feats)
        assert a == b

    def test_done_component_honors_heuristic(self, classifier):
        window = GestureWindow()
        for i in range(30):
            window.push(normalize_hand(_pose_frame(ACTION_POSES[ActionLabel.DONE], t_ms=i * 33)))
        acf = classify_window(window, classifier)
        assert acf.done >= window.last_done_conf

    def test_noisy_variants_classified_correctly(self, templates, classifier):
        rng = np.random.default_rng(99)
        correct = 0
        trials = 0
        for tmpl in templates:
            for _ in range(50):
                noisy = tmpl.features + rng.normal(0.0, 0.05, tmpl.features.shape)
                scores = classifier.scores(noisy)
                got = max(scores, key=scores.get)
                correct += got is tmpl.label
                trials += 1
        assert correct / trials >= 0.9

    def test_template_file_round_trip(self, templates, tmp_path):
        path = str(tmp_path / "templates.json")
        save_templates(templates, path)
        again = load_templates(path)
        assert [t.label for t in again] == [t.label for t in templates]
        for a, b in zip(again, templates):
            assert np.allclose(a.features, b.features, atol=1e-8)

    def test_bundled_template_file_matches_generator(self):
        from importlib import resources

        text = resources.files("stageverify.data").joinpath("gesture_templates.json").read_text()
        import json

        payload = json.loads(text)
        computed = build_default_templates()
        assert [p["label"] for p in payload] == [t.label.value for t in computed]
        for p, t in zip(payload, computed):
            assert np.allclose(np.asarray(p["features"]), t.features, atol=1e-8)
