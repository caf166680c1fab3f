import math

import numpy as np
import pytest
import yaml

from gespot import ConfigError, GestureTemplate, NonGestureModel, SynthConfig
from gespot.synth import (build_hand, generate_corpus, generate_sequence,
                          trajectory_point, _FINGER_SCALE, _SEGMENTS)


def fit_circle(xy):
    """Least-squares circle fit (Kasa): returns (center, radius, rms residual)."""
    x, y = xy[:, 0], xy[:, 1]
    a = np.column_stack([2 * x, 2 * y, np.ones_like(x)])
    b = x * x + y * y
    (cx, cy, c), *_ = np.linalg.lstsq(a, b, rcond=None)
    r = math.sqrt(c + cx * cx + cy * cy)
    resid = np.sqrt((x - cx) ** 2 + (y - cy) ** 2) - r
    return np.array([cx, cy]), r, float(np.sqrt(np.mean(resid ** 2)))


def test_build_hand_geometry():
    flat = build_hand(0.0)
    assert flat.shape == (26, 3)
    assert np.allclose(flat[0], 0.0)
    # curl 0 keeps every joint in the palm plane
    assert np.abs(flat[:, 2]).max() < 1e-12
    # segment lengths survive any curl
    fist = build_hand(1.0)
    for hand in (flat, fist):
        for f in range(5):
            base = 1 + 5 * f
            for s in range(4):
                seg = np.linalg.norm(hand[base + s + 1] - hand[base + s])
                assert seg == pytest.approx(_SEGMENTS[s] * _FINGER_SCALE[f])
    # curling pulls the fingertips in toward the wrist
    for f in range(5):
        tip = 5 + 5 * f
        assert np.linalg.norm(fist[tip]) < np.linalg.norm(flat[tip])


def test_build_hand_per_finger_curl():
    half = build_hand([1.0, 0.0, 0.0, 0.0, 0.0])
    open_hand = build_hand(0.0)
    assert np.allclose(half[6:], open_hand[6:])
    assert not np.allclose(half[1:6], open_hand[1:6])


def test_trajectory_endpoints():
    for shape in ("circle", "square", "x_mark", "line", "v_mark", "caret"):
        assert np.allclose(trajectory_point(shape, 0.0, 0.2), 0.0)
    # closed paths return to the start
    assert np.allclose(trajectory_point("circle", 1.0, 0.2), 0.0, atol=1e-12)
    assert np.allclose(trajectory_point("square", 1.0, 0.2), 0.0, atol=1e-12)
    assert np.allclose(trajectory_point("line", 1.0, 0.2), [0.2, 0, 0])
    assert np.allclose(trajectory_point("line", 0.5, 0.2), [0.1, 0, 0])
    # u is clamped
    assert np.allclose(trajectory_point("line", 1.7, 0.2),
                       trajectory_point("line", 1.0, 0.2))


def test_generate_sequence_deterministic():
    cfg = SynthConfig.six_class(seed=5)
    a = generate_sequence(cfg, 3)
    b = generate_sequence(cfg, 3)
    assert np.array_equal(a.positions, b.positions)
    assert a.annotations == b.annotations
    c = generate_sequence(cfg, 4)
    assert not np.array_equal(a.positions[: len(c)], c.positions[: len(a)])


def test_layout_respects_margins_and_gaps():
    cfg = SynthConfig.six_class(seed=9)
    for i in range(12):
        seq = generate_sequence(cfg, i)
        spans = sorted(seq.annotations, key=lambda x: x.start_frame)
        assert spans[0].start_frame >= cfg.margin
        assert spans[-1].end_frame <= len(seq) - 1 - cfg.margin
        for prev, nxt in zip(spans, spans[1:]):
            assert nxt.start_frame - prev.end_frame - 1 >= cfg.min_gap
        for s in spans:
            lo, hi = cfg.template_for(s.label).duration
            assert lo <= s.end_frame - s.start_frame + 1 <= hi


def test_annotation_categories_follow_templates():
    cfg = SynthConfig.six_class(seed=2)
    by_label = {t.label: t.annotation_category for t in cfg.templates}
    seq = generate_sequence(cfg, 0, labels=[1, 3, 6])
    got = {a.label: a.category for a in seq.annotations}
    assert got == {1: "static", 3: "dynamic_coarse", 6: "periodic"}
    assert all(by_label[l] == c for l, c in got.items())


def test_corpus_class_balance():
    cfg = SynthConfig.six_class(seed=7)
    corpus = generate_corpus(cfg, 20)
    assert len(corpus) == 20
    counts = np.zeros(cfg.num_classes, dtype=int)
    for seq in corpus:
        for a in seq.annotations:
            counts[a.label] += 1
    present = counts[1:]
    assert present.min() >= 1
    assert present.max() - present.min() <= 1
    # index_offset shifts the stream without reusing sequence ids
    more = generate_corpus(cfg, 3, index_offset=20)
    assert more[0].source_id == "synth_0020"


def test_static_span_is_stiller_than_filler():
    # frozen anchor + tiny jitter vs. an OU walk: centroid speed separates them
    cfg = SynthConfig(
        templates=[GestureTemplate(1, "fist", "static", (40, 50), curl=0.9)],
        sequence_length=(240, 280),
        gestures_per_sequence=(1, 2),
        nongesture=NonGestureModel(pause_prob=0.0),
        seed=13,
    ).validate()
    inside, outside = [], []
    for i in range(6):
        seq = generate_sequence(cfg, i)
        cent = seq.positions.mean(axis=1)
        speed = np.linalg.norm(np.diff(cent, axis=0), axis=1)
        mask = np.zeros(len(seq), dtype=bool)
        for a in seq.annotations:
            mask[a.start_frame + cfg.blend_frames: a.end_frame + 1] = True
        inside.extend(speed[mask[1:] & mask[:-1]])
        outside.extend(speed[~mask[1:] & ~mask[:-1]])
    assert np.median(inside) < 0.2 * np.median(outside)


def test_circle_gesture_fits_a_circle():
    # wrist path during a jitter-free circle gesture must be that circle
    tpl = GestureTemplate(3, "circle", "dynamic", (60, 60), shape="circle",
                          amplitude=0.11, jitter_std=0.0)
    cfg = SynthConfig.six_class(seed=4)
    cfg = SynthConfig(templates=cfg.templates[:2] + [tpl] + cfg.templates[3:],
                      seed=4).validate()
    seq = generate_sequence(cfg, 0, labels=[3])
    a = seq.annotations[0]
    wrist = seq.positions[a.start_frame: a.end_frame + 1, 0, :]
    center, radius, rms = fit_circle(wrist[:, :2])
    assert radius == pytest.approx(0.11, abs=1e-9)
    assert rms < 1e-9
    assert np.ptp(wrist[:, 2]) < 1e-12
    # path starts and ends at the anchor
    assert np.allclose(wrist[0], wrist[-1], atol=1e-12)


def test_periodic_gesture_returns_to_anchor():
    cfg = SynthConfig.six_class(seed=8)
    seq = generate_sequence(cfg, 1, labels=[6])
    a = seq.annotations[0]
    tpl = cfg.template_for(6)
    wrist = seq.positions[a.start_frame: a.end_frame + 1, 0, :]
    tol = 6 * tpl.jitter_std
    assert np.linalg.norm(wrist[-1] - wrist[0]) < tol
    # the sweep actually moves about cycles times out and back
    span = np.ptp(wrist[:, 0])
    assert span == pytest.approx(tpl.amplitude, rel=0.2)


def test_config_validation_errors():
    tpl = GestureTemplate(1, "g", "static", (30, 40))
    with pytest.raises(ConfigError):
        SynthConfig(templates=[tpl], j=21).validate()
    with pytest.raises(ConfigError):
        SynthConfig(templates=[]).validate()
    with pytest.raises(ConfigError):
        SynthConfig(templates=[GestureTemplate(2, "g", "static", (30, 40))]).validate()
    with pytest.raises(ConfigError):
        GestureTemplate(1, "g", "static", (40, 30)).validate()
    with pytest.raises(ConfigError):
        GestureTemplate(1, "g", "static", (30, 40), shape="line").validate()
    with pytest.raises(ConfigError):
        GestureTemplate(1, "g", "dynamic", (30, 40), shape=None).validate()
    with pytest.raises(ConfigError):
        GestureTemplate(1, "g", "wiggle", (30, 40)).validate()
    with pytest.raises(ConfigError):
        SynthConfig(templates=[GestureTemplate(1, "g", "static", (200, 300))],
                    sequence_length=(320, 400),
                    gestures_per_sequence=(2, 3)).validate()


def test_yaml_round_trip():
    cfg = SynthConfig.six_class(seed=21)
    text = cfg.to_yaml()
    back = SynthConfig.from_yaml(text, is_text=True)
    assert back.to_yaml() == text
    assert np.array_equal(generate_sequence(cfg, 2).positions,
                          generate_sequence(back, 2).positions)
    with pytest.raises(ConfigError):
        SynthConfig.from_yaml("- not\n- a\n- mapping\n", is_text=True)
    with pytest.raises(ConfigError):
        SynthConfig.from_yaml(yaml.safe_dump({"templates": [{"label": 1}]}),
                              is_text=True)


def test_dictionary_export():
    cfg = SynthConfig.six_class()
    d = cfg.dictionary()
    assert d.num_classes == 7
    assert d.names[0] == "non_gesture"
    assert d.names[3] == "circle"
    assert d.categories[6] == "periodic"
    assert d.to_mapping() == type(d).from_mapping(d.to_mapping()).to_mapping()
