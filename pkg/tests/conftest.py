import numpy as np
import pytest

from gespot import (GestureAnnotation, GestureTemplate, NonGestureModel,
                    PoseSequence, SynthConfig)


def make_sequence(n_frames=64, n_joints=5, annotations=None, seed=0,
                  num_classes=4, fps=60.0, source_id="seq"):
    """Small random-walk sequence with optional annotations."""
    rng = np.random.default_rng(seed)
    steps = rng.normal(scale=0.01, size=(n_frames, n_joints, 3))
    positions = np.cumsum(steps, axis=0) + rng.normal(size=(1, n_joints, 3))
    return PoseSequence(
        positions=positions,
        annotations=annotations or [],
        fps=fps,
        source_id=source_id,
        num_classes=num_classes,
    ).validate()


def ann(label, start, end, category="dynamic_coarse"):
    return GestureAnnotation(label, start, end, category)


def build_two_class_cfg():
    """One static gesture vs non-gesture; separable by construction.

    The filler's curl wander is kept small so it cannot drift into a fist.
    """
    return SynthConfig(
        templates=[GestureTemplate(1, "fist", "static", (36, 48), curl=0.95)],
        sequence_length=(176, 210),
        gestures_per_sequence=(1, 2),
        nongesture=NonGestureModel(curl_walk_std=0.005, pause_prob=0.006),
        seed=11,
    ).validate()


@pytest.fixture
def two_class_cfg():
    return build_two_class_cfg()
